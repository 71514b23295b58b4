use relqa::data::{build_lexicon, parse_canonical_tsv_from, Dataset, Split};
use relqa::eval::FilterPolicy;
use relqa::model::{Block, HyperParams, ModelParams, RelationalMode};
use relqa::synthetic::{filler_embeddings, generate_dataset, FixtureConfig};
use relqa::text::{embeddings_from_word2vec, EmbeddingTable, Stopwords, TokenizerOptions};
use relqa::train::{
    dataset_map, train, train_observed, Event, StopReason, TrainConfig, TrainError,
};

fn setup(questions: usize, seed: u64) -> (Dataset, Dataset, EmbeddingTable) {
    let train_cfg = FixtureConfig {
        questions,
        seed,
        ..FixtureConfig::default()
    };
    let dev_cfg = FixtureConfig {
        questions: 10,
        first_question: 500,
        seed: seed + 1,
        ..FixtureConfig::default()
    };
    let mut tr = generate_dataset(&train_cfg, Split::Train).unwrap();
    let mut dev = generate_dataset(&dev_cfg, Split::Dev).unwrap();
    let w2v = filler_embeddings(&train_cfg, 8, seed);
    let lex = build_lexicon(
        &[&tr, &dev],
        |v| Ok(embeddings_from_word2vec(&w2v, v).table),
        0.25,
        1,
        Stopwords::english(),
        TokenizerOptions::default(),
    )
    .unwrap();
    lex.prepare(&mut tr);
    lex.prepare(&mut dev);
    (tr, dev, lex.embeddings)
}

fn params(table: &EmbeddingTable, mode: RelationalMode) -> ModelParams {
    let hyper = HyperParams {
        word_dim: 8,
        filters: 6,
        width: 3,
        relational_mode: mode,
        ..HyperParams::default()
    };
    ModelParams::init(hyper, table.clone(), 3).unwrap()
}

fn config(mode: RelationalMode) -> TrainConfig {
    TrainConfig {
        relational_mode: mode,
        batch_size: 7,
        max_epochs: 4,
        eval_interval: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn repeated_runs_are_bit_identical() {
    let (tr, dev, table) = setup(8, 0);
    for mode in RelationalMode::ALL {
        let a = train(&tr, &dev, params(&table, mode), &config(mode)).unwrap();
        let b = train(&tr, &dev, params(&table, mode), &config(mode)).unwrap();
        assert_eq!(a.history, b.history);
        for block in Block::ALL {
            let same = a
                .params
                .block(block)
                .iter()
                .zip(b.params.block(block))
                .all(|(x, y)| x.to_bits() == y.to_bits());
            assert!(same, "{mode}: block {} differs", block.name());
        }
        assert_eq!(a.optimizer, b.optimizer);
    }
}

#[test]
fn returns_first_best_dev_snapshot() {
    let (tr, dev, table) = setup(10, 1);
    let out = train(
        &tr,
        &dev,
        params(&table, RelationalMode::Emb),
        &config(RelationalMode::Emb),
    )
    .unwrap();
    let h = &out.history;
    let maps = h.dev_maps();
    let best = maps.iter().cloned().fold(f64::MIN, f64::max);
    assert_eq!(h.best_dev_map, Some(best));
    let first_best_step = h
        .events
        .iter()
        .find_map(|e| match e {
            Event::Eval { step, dev_map, .. } if *dev_map == best => Some(*step),
            _ => None,
        })
        .unwrap();
    assert_eq!(h.best_step, first_best_step);
    let restored = dataset_map(&out.params, &dev, FilterPolicy::AllPositiveOrAllNegative).unwrap();
    assert_eq!(restored.to_bits(), best.to_bits());
}

#[test]
fn evaluation_schedule() {
    let (tr, dev, table) = setup(8, 2);
    // 40 pairs in batches of 7: 6 steps per epoch, the last one partial.
    let cfg = config(RelationalMode::None);
    let mut seen = Vec::new();
    let out = train_observed(&tr, &dev, params(&table, RelationalMode::None), &cfg, |e| {
        seen.push(*e)
    })
    .unwrap();
    assert_eq!(seen, out.history.events);
    let batches = out.history.batch_losses().len();
    assert_eq!(batches, 6 * out.history.epochs_run);
    let eval_steps: Vec<usize> = seen
        .iter()
        .filter_map(|e| match e {
            Event::Eval { step, .. } => Some(*step),
            _ => None,
        })
        .collect();
    let mut expected: Vec<usize> = (1..=batches).filter(|s| s % 3 == 0 || s % 6 == 0).collect();
    expected.dedup();
    assert_eq!(eval_steps, expected);
}

#[test]
fn patience_stops_after_stale_epochs() {
    let (tr, dev, table) = setup(6, 3);
    let cfg = TrainConfig {
        max_epochs: 60,
        patience: 2,
        ..config(RelationalMode::Emb)
    };
    let out = train(&tr, &dev, params(&table, RelationalMode::Emb), &cfg).unwrap();
    let h = &out.history;
    if h.stop_reason == Some(StopReason::Patience) {
        assert!(h.epochs_run < 60);
        assert_eq!(h.best_epoch + 2, h.epochs_run);
    } else {
        assert_eq!(h.epochs_run, 60);
    }
}

#[test]
fn rejects_unusable_inputs() {
    let (tr, dev, table) = setup(4, 4);
    let mode = RelationalMode::Emb;
    let empty = Dataset::default();
    assert!(matches!(
        train(&empty, &dev, params(&table, mode), &config(mode)),
        Err(TrainError::EmptyTrainSet)
    ));
    let mut degenerate = parse_canonical_tsv_from(
        "d\t0\txaaa\txaab\nd\t0\txaaa\txaac\n",
        "d",
        Split::Dev,
        TokenizerOptions::default(),
    )
    .unwrap();
    degenerate.index(table.vocab());
    assert!(matches!(
        train(&tr, &degenerate, params(&table, mode), &config(mode)),
        Err(TrainError::DegenerateDev)
    ));
    assert!(matches!(
        train(
            &tr,
            &dev,
            params(&table, mode),
            &config(RelationalMode::Fvec)
        ),
        Err(TrainError::InvalidConfig(_))
    ));
    let mut broken = params(&table, mode);
    broken.block_mut(Block::OutputWeights)[0] = f64::NAN;
    assert!(matches!(
        train(&tr, &dev, broken, &config(mode)),
        Err(TrainError::NonFiniteGradient { .. })
    ));
}
