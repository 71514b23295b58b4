use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use relqa::checkpoint::Checkpoint;
use relqa::data::{
    build_lexicon, convert_trec_xml, dataset_stats, load_lexicon, load_preprocessed,
    parse_canonical_tsv, parse_wikiqa_tsv, save_lexicon, save_preprocessed, Dataset, Judgement,
    Split, DATASET_FORMAT,
};
use relqa::eval::{self, filter_qrels, write_qrels, write_trec_run, FilterPolicy};
use relqa::model::{check_network_gradients, Block, GradCheckConfig, ModelParams, RelationalMode};
use relqa::numeric::ConvMode;
use relqa::synthetic::{filler_embeddings, generate_tsv, FixtureConfig};
use relqa::text::{
    annotate_overlap, load_word_embeddings, overlap_count_features, tokenize_with, write_word2vec,
    AnnotatedSentence, EmbeddingFormat, EmbeddingTable, Provenance, Stopwords, TokenizerOptions,
};
use relqa::train::{rank_dataset, train_observed, Event, StopReason, TrainError};

use crate::config::{InputFormat, RunConfig};
use crate::error::{code, CliError};

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn io_err(path: &Path) -> impl Fn(io::Error) -> CliError + '_ {
    move |e| CliError::io(path, e)
}

fn train_error(e: TrainError) -> CliError {
    let code = match e {
        TrainError::EmptyTrainSet | TrainError::DegenerateDev => code::DATA,
        TrainError::InvalidConfig(_) => code::USAGE,
        _ => code::FAILURE,
    };
    CliError::new(code, e.to_string())
}

fn tokenizer(cfg: &RunConfig) -> TokenizerOptions {
    TokenizerOptions {
        collapse_digit_runs: cfg.data.collapse_digit_runs,
    }
}

fn parse_split(cfg: &RunConfig, path: &Path, split: Split) -> Result<Dataset, CliError> {
    let opts = tokenizer(cfg);
    let ds = match cfg.data.format {
        InputFormat::Canonical => parse_canonical_tsv(path, split, opts)?,
        InputFormat::Wikiqa => parse_wikiqa_tsv(path, split, opts)?,
    };
    Ok(ds)
}

fn split_path(cfg: &RunConfig, split: Split) -> PathBuf {
    cfg.data.preprocessed_dir.join(format!("{split}.bin"))
}

fn lexicon_path(cfg: &RunConfig) -> PathBuf {
    cfg.data.preprocessed_dir.join("lexicon.bin")
}

pub fn preprocess(cfg: &RunConfig) -> Result<(), CliError> {
    let Some(train_path) = &cfg.data.train else {
        return Err(CliError::usage(
            "no training file configured (data.train or --train)",
        ));
    };
    if let Some(path) = &cfg.data.embeddings {
        if !path.exists() {
            return Err(CliError::new(
                code::MISSING_FILE,
                format!("embeddings file {} not found", path.display()),
            ));
        }
    }
    let mut train = parse_split(cfg, train_path, Split::Train)?;
    if cfg.data.automatic_judgements {
        train.metadata.judgement = Judgement::Automatic;
    }
    let mut splits = vec![train];
    for (path, split) in [(&cfg.data.dev, Split::Dev), (&cfg.data.test, Split::Test)] {
        if let Some(path) = path {
            splits.push(parse_split(cfg, path, split)?);
        }
    }
    let stopwords = match &cfg.data.stopwords {
        Some(path) => Stopwords::load(path).map_err(io_err(path))?,
        None => Stopwords::english(),
    };

    let refs: Vec<&Dataset> = splits.iter().collect();
    let lexicon = build_lexicon(
        &refs,
        |vocab| match &cfg.data.embeddings {
            Some(path) => Ok(load_word_embeddings(path, cfg.data.embedding_format, vocab)?.table),
            None => Ok(EmbeddingTable::random(vocab, cfg.model.word_dim)),
        },
        cfg.data.oov_range,
        cfg.data.oov_seed,
        stopwords,
        tokenizer(cfg),
    )?;

    let dir = &cfg.data.preprocessed_dir;
    create_dir(dir)?;
    save_lexicon(&lexicon, lexicon_path(cfg))?;
    let mut vocab_txt = String::new();
    for t in lexicon.embeddings.vocab().tokens() {
        vocab_txt.push_str(t);
        vocab_txt.push('\n');
    }
    write_text(&dir.join("vocab.txt"), &vocab_txt)?;
    for ds in &mut splits {
        lexicon.prepare(ds);
        save_preprocessed(ds, split_path(cfg, ds.split))?;
        println!("{}: {}", ds.split, dataset_stats(ds));
    }

    let table = &lexicon.embeddings;
    let vocab = table.vocab();
    let (mut covered, mut total) = (0usize, 0usize);
    for s in splits[0].sentences() {
        for t in s {
            total += 1;
            if vocab
                .get(t)
                .is_some_and(|i| table.provenance()[i] == Provenance::Pretrained)
            {
                covered += 1;
            }
        }
    }
    println!(
        "vocabulary: {} entries, dimension {}",
        vocab.len(),
        table.dim()
    );
    println!("embedding coverage (vocabulary): {:.4}", table.coverage());
    println!(
        "embedding coverage (train tokens): {:.4}",
        covered as f64 / total.max(1) as f64
    );
    Ok(())
}

fn check_vocab(ds: &Dataset, expected: &str, what: &str) -> Result<(), CliError> {
    match ds.metadata.vocab_hash.as_deref() {
        Some(h) if h == expected => Ok(()),
        Some(h) => Err(CliError::new(
            code::MISMATCH,
            format!("{what} was indexed with vocabulary {h}, expected {expected}"),
        )),
        None => Err(CliError::new(
            code::MISMATCH,
            format!("{what} carries no vocabulary hash"),
        )),
    }
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let lexicon = load_lexicon(lexicon_path(cfg))?;
    let train = load_preprocessed(split_path(cfg, Split::Train))?;
    let dev = load_preprocessed(split_path(cfg, Split::Dev))?;
    let hash = lexicon.embeddings.vocab().hash();
    check_vocab(&train, &hash, "training split")?;
    check_vocab(&dev, &hash, "dev split")?;

    let hyper = cfg.hyper_params();
    if hyper.word_dim != lexicon.embeddings.dim() {
        return Err(CliError::data(format!(
            "model.word_dim is {} but the preprocessed embeddings have dimension {}",
            hyper.word_dim,
            lexicon.embeddings.dim()
        )));
    }
    let params = ModelParams::init(hyper, lexicon.embeddings.clone(), cfg.model.init_seed)
        .map_err(|e| CliError::usage(e.to_string()))?;
    let outcome = train_observed(&train, &dev, params, &cfg.train_config(), |e| {
        if let Event::Eval {
            step,
            epoch,
            dev_map,
            best,
        } = e
        {
            eprintln!(
                "epoch {epoch} step {step}: dev MAP {dev_map:.4}{}",
                if *best { " (best)" } else { "" }
            );
        }
    })
    .map_err(train_error)?;

    let out = &cfg.output_dir;
    create_dir(out)?;
    let log_path = out.join("train.log");
    let mut log = create(&log_path)?;
    outcome
        .history
        .write_log(&mut log)
        .and_then(|()| log.flush())
        .map_err(io_err(&log_path))?;
    write_text(&out.join("config.toml"), &cfg.to_toml())?;

    let run = rank_dataset(&outcome.params, &dev, "dev").map_err(train_error)?;
    let metrics = eval::evaluate(&run, &dev.qrels(), cfg.eval.policy)
        .map_err(|e| CliError::data(e.to_string()))?;
    let h = &outcome.history;
    let ck = Checkpoint {
        params: outcome.params,
        optimizer: Some(outcome.optimizer),
        history: Some(outcome.history.clone()),
        stopwords: lexicon.stopwords,
        tokenizer: lexicon.tokenizer,
        idf: Some(lexicon.idf),
    };
    ck.save(out.join("checkpoint.bin"))?;
    let reason = match h.stop_reason {
        Some(StopReason::Patience) => "dev MAP stopped improving",
        _ => "epoch limit reached",
    };
    println!("stopped after {} epochs: {reason}", h.epochs_run);
    println!(
        "best checkpoint from step {} (epoch {})",
        h.best_step, h.best_epoch
    );
    println!("dev {metrics}");
    Ok(())
}

pub struct EvaluateOptions {
    pub checkpoint: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub run_file: Option<PathBuf>,
    pub qrels_file: Option<PathBuf>,
    pub run_name: String,
}

fn is_container(path: &Path) -> Result<bool, CliError> {
    let mut magic = [0u8; 6];
    let mut f = File::open(path).map_err(io_err(path))?;
    let n = f.read(&mut magic).map_err(io_err(path))?;
    Ok(n == magic.len() && &magic == DATASET_FORMAT.magic)
}

/// Loads a preprocessed split, or parses raw TSV with the checkpoint's
/// text settings.
fn load_eval_data(cfg: &RunConfig, ck: &Checkpoint, path: &Path) -> Result<Dataset, CliError> {
    let vocab = ck.params.vocab();
    if is_container(path)? {
        let ds = load_preprocessed(path)?;
        check_vocab(&ds, &vocab.hash(), &path.display().to_string())?;
        return Ok(ds);
    }
    let cfg = RunConfig {
        data: crate::config::DataSection {
            collapse_digit_runs: ck.tokenizer.collapse_digit_runs,
            ..cfg.data.clone()
        },
        ..cfg.clone()
    };
    let mut ds = parse_split(&cfg, path, Split::Test)?;
    ds.index(vocab);
    ds.annotate(&ck.stopwords);
    if ck.params.hyper().relational_mode.uses_features() {
        let idf = ck.idf.as_ref().ok_or_else(|| {
            CliError::data("checkpoint has no idf table to compute overlap features")
        })?;
        ds.attach_features(idf);
    }
    Ok(ds)
}

pub fn evaluate(cfg: &RunConfig, opts: &EvaluateOptions) -> Result<(), CliError> {
    let ck_path = opts
        .checkpoint
        .clone()
        .unwrap_or_else(|| cfg.output_dir.join("checkpoint.bin"));
    let ck = Checkpoint::load(&ck_path)?;
    let data_path = opts
        .data
        .clone()
        .unwrap_or_else(|| split_path(cfg, Split::Test));
    let ds = load_eval_data(cfg, &ck, &data_path)?;

    let run = rank_dataset(&ck.params, &ds, &opts.run_name).map_err(train_error)?;
    let qrels = ds.qrels();
    let policy = cfg.eval.policy;
    let (_, report) = filter_qrels(&qrels, policy);
    println!(
        "filter {policy}: kept {} of {} questions",
        report.kept,
        qrels.questions().count()
    );
    for (id, reason) in &report.removed {
        println!("removed {id}: {reason}");
    }
    let metrics =
        eval::evaluate(&run, &qrels, policy).map_err(|e| CliError::data(e.to_string()))?;
    println!("{metrics}");
    if let Some(path) = &opts.run_file {
        let mut w = create(path)?;
        write_trec_run(&run, &mut w)
            .and_then(|()| w.flush())
            .map_err(io_err(path))?;
    }
    if let Some(path) = &opts.qrels_file {
        let mut w = create(path)?;
        write_qrels(&qrels, &mut w)
            .and_then(|()| w.flush())
            .map_err(io_err(path))?;
    }
    Ok(())
}

pub fn rerank(
    checkpoint: &Path,
    question: Option<String>,
    candidates: Option<&Path>,
) -> Result<(), CliError> {
    let ck = Checkpoint::load(checkpoint)?;
    let mut lines: Vec<String> = match candidates {
        Some(path) => BufReader::new(File::open(path).map_err(io_err(path))?)
            .lines()
            .collect::<Result<_, _>>()
            .map_err(io_err(path))?,
        None => io::stdin()
            .lock()
            .lines()
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::new(code::FAILURE, format!("reading standard input: {e}")))?,
    };
    lines.retain(|l| !l.trim().is_empty());
    let question = match question {
        Some(q) => q,
        None if lines.is_empty() => return Err(CliError::data("no question given")),
        None => lines.remove(0),
    };
    if lines.is_empty() {
        return Err(CliError::data("no candidate answers given"));
    }

    let tokens = |text: &str, what: &str| {
        let t = tokenize_with(text, ck.tokenizer);
        if t.is_empty() {
            Err(CliError::data(format!("{what} has no tokens")))
        } else {
            Ok(t)
        }
    };
    let q_tokens = tokens(&question, "question")?;
    let params = &ck.params;
    let uses_features = params.hyper().relational_mode.uses_features();
    let idf = match (&ck.idf, uses_features) {
        (None, true) => {
            return Err(CliError::data(
                "checkpoint has no idf table to compute overlap features",
            ))
        }
        (idf, _) => idf.as_ref(),
    };

    let mut scored = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        let mut q = AnnotatedSentence::new(q_tokens.clone());
        let mut a = AnnotatedSentence::new(tokens(line, &format!("candidate {}", i + 1))?);
        annotate_overlap(&mut q, &mut a, &ck.stopwords);
        q.index_with(params.vocab());
        a.index_with(params.vocab());
        let features = idf
            .filter(|_| uses_features)
            .map(|idf| overlap_count_features(&q, &a, idf));
        let s = params
            .score(&q, &a, features.as_deref())
            .map_err(|e| CliError::data(e.to_string()))?;
        scored.push((s, line.as_str()));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let stdout = io::stdout();
    let mut out = stdout.lock();
    for (s, line) in scored {
        writeln!(out, "{s:.6}\t{line}").map_err(|e| CliError::new(code::FAILURE, e.to_string()))?;
    }
    Ok(())
}

pub fn gradcheck(
    modes: &[RelationalMode],
    conv_mode: ConvMode,
    seed: u64,
    epsilon: f64,
    tolerance: f64,
    corrupt: Option<Block>,
) -> Result<(), CliError> {
    let mut failed = Vec::new();
    for &mode in modes {
        let cfg = GradCheckConfig {
            mode,
            conv_mode,
            seed,
            epsilon,
            tolerance,
            corrupt,
            ..GradCheckConfig::default()
        };
        let report = check_network_gradients(&cfg).map_err(|e| match e {
            relqa::Error::GradCheck(e) => CliError::usage(e.to_string()),
            other => other.into(),
        })?;
        println!("mode {mode}, {conv_mode:?} convolution, seed {seed}");
        println!("{report}\n");
        if !report.passed {
            failed.push(mode.to_string());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::new(
            code::CHECK_FAILED,
            format!("gradient check failed for mode {}", failed.join(", ")),
        ))
    }
}

pub fn convert_trec(input: &Path, output: &Path) -> Result<(), CliError> {
    let reader = BufReader::new(File::open(input).map_err(io_err(input))?);
    let mut w = create(output)?;
    let rows = convert_trec_xml(reader, &mut w, input)?;
    w.flush().map_err(io_err(output))?;
    println!("wrote {rows} rows to {}", output.display());
    Ok(())
}

pub struct FixtureOptions {
    pub out: PathBuf,
    pub train_questions: usize,
    pub dev_questions: usize,
    pub test_questions: usize,
    pub candidates: usize,
    pub seed: u64,
    pub dim: usize,
    pub filters: usize,
}

pub fn generate_fixture(opts: &FixtureOptions) -> Result<(), CliError> {
    if opts.candidates < 2 || opts.dim == 0 {
        return Err(CliError::usage(
            "need at least 2 candidates and a positive dimension",
        ));
    }
    create_dir(&opts.out)?;
    let base = FixtureConfig {
        candidates: opts.candidates,
        seed: opts.seed,
        ..FixtureConfig::default()
    };
    let mut first = 0;
    for (i, (split, questions)) in [
        (Split::Train, opts.train_questions),
        (Split::Dev, opts.dev_questions),
        (Split::Test, opts.test_questions),
    ]
    .into_iter()
    .enumerate()
    {
        let cfg = FixtureConfig {
            questions,
            first_question: first,
            seed: opts.seed.wrapping_add(100 * i as u64),
            ..base.clone()
        };
        first += questions;
        write_text(&opts.out.join(format!("{split}.tsv")), &generate_tsv(&cfg))?;
    }
    let emb_path = opts.out.join("embeddings.txt");
    let mut w = create(&emb_path)?;
    let w2v = filler_embeddings(&base, opts.dim, opts.seed);
    write_word2vec(&mut w, EmbeddingFormat::Text, &w2v.words, &w2v.vectors)
        .and_then(|()| w.flush())
        .map_err(io_err(&emb_path))?;

    let mut cfg = RunConfig::default();
    cfg.data.train = Some("train.tsv".into());
    cfg.data.dev = Some("dev.tsv".into());
    cfg.data.test = Some("test.tsv".into());
    cfg.data.embeddings = Some("embeddings.txt".into());
    cfg.model.word_dim = opts.dim;
    cfg.model.filters = opts.filters;
    cfg.eval.policy = FilterPolicy::default();
    write_text(&opts.out.join("config.toml"), &cfg.to_toml())?;
    println!("wrote fixture to {}", opts.out.display());
    Ok(())
}
