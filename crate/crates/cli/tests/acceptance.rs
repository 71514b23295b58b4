//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.

use std::cmp::Ordering;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relqa::checkpoint::Checkpoint;
use relqa::container::ContainerError;
use relqa::data::{build_lexicon, Dataset, Split};
use relqa::encoder::build_sentence_matrix;
use relqa::eval::{
    average_precision, evaluate, filter_qrels, reciprocal_rank, write_trec_run, FilterPolicy,
    Metrics, Qrels, RankedRun,
};
use relqa::model::{
    check_network_gradients, Block, GradCheckConfig, HyperParams, ModelParams, RelationalMode,
};
use relqa::numeric::{
    affine, bilinear, conv1d_forward, maxpool_rows, ConvMode, DenseMatrix, FilterBank,
};
use relqa::synthetic::{filler_embeddings, generate_dataset, FixtureConfig};
use relqa::text::{embeddings_from_word2vec, Stopwords, TokenizerOptions, DEFAULT_OOV_RANGE};
use relqa::train::{
    adadelta_update, dataset_map, rank_dataset, train, AdadeltaConfig, TrainConfig,
};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {{
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    }};
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        ("gradient fidelity", gradient_fidelity),
        ("kernel oracle equivalence", kernel_oracles),
        ("adadelta closed form", adadelta_closed_form),
        ("tiny overfit", tiny_overfit),
        ("relational information ordering", relational_ordering),
        ("determinism", determinism),
        ("checkpoint integrity", checkpoint_integrity),
        ("metric protocol", metric_protocol),
        ("invariances", invariances),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(format!("panic: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {} PASS  {name}: {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} FAIL  {name}: {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
    println!("all {} criteria passed", criteria.len());
}

fn within(start: Instant, limit: Duration, what: &str) -> Result<(), String> {
    let took = start.elapsed();
    if took > limit {
        return Err(format!("{what} took {took:?}, limit {limit:?}"));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// 1

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut runs = 0;
    for mode in RelationalMode::ALL {
        for conv_mode in [ConvMode::Wide, ConvMode::Narrow] {
            for seed in 0..4 {
                let cfg = GradCheckConfig {
                    mode,
                    conv_mode,
                    seed,
                    ..GradCheckConfig::default()
                };
                ensure!(
                    (
                        cfg.word_dim,
                        cfg.overlap_dim,
                        cfg.filters,
                        cfg.width,
                        cfg.min_len,
                        cfg.max_len
                    ) == (6, 2, 4, 3, 4, 9),
                    "unexpected probe dimensions"
                );
                let report = check_network_gradients(&cfg).map_err(|e| e.to_string())?;
                ensure!(
                    report.passed && report.max_relative_error < 1e-4,
                    "{mode} {conv_mode:?} seed {seed}: max rel err {:.3e}, failing {:?}",
                    report.max_relative_error,
                    report.failing_blocks()
                );
                let checked: Vec<&str> = report
                    .blocks
                    .iter()
                    .filter(|b| b.max_relative_error.is_some())
                    .map(|b| b.name.as_str())
                    .collect();
                ensure!(
                    checked.contains(&"features") == mode.uses_features(),
                    "{mode}: feature inputs checked = {}",
                    checked.contains(&"features")
                );
                ensure!(
                    checked.contains(&"overlap_embeddings") == mode.uses_overlap_embeddings(),
                    "{mode}: overlap table checked = {}",
                    checked.contains(&"overlap_embeddings")
                );
                ensure!(
                    checked.len() >= 10,
                    "{mode}: only {} blocks checked",
                    checked.len()
                );
                worst = worst.max(report.max_relative_error);
                runs += 1;
            }
        }
    }
    let corrupted = check_network_gradients(&GradCheckConfig {
        corrupt: Some(Block::Similarity),
        ..GradCheckConfig::default()
    })
    .map_err(|e| e.to_string())?;
    ensure!(!corrupted.passed, "a corrupted gradient went unnoticed");
    within(start, Duration::from_secs(60), "gradient checks")?;
    Ok(format!("{runs} checks over 4 modes x 2 conv modes, worst rel err {worst:.3e}; corrupted block detected"))
}

// ---------------------------------------------------------------------------
// 2

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Explicitly zero-pads the input and takes dot products window by window.
fn conv_oracle(
    s: &[Vec<f64>],
    w: &[f64],
    b: &[f64],
    n: usize,
    m: usize,
    wide: bool,
) -> Vec<Vec<f64>> {
    let d = s.len();
    let pad = if wide { m - 1 } else { 0 };
    let padded: Vec<Vec<f64>> = s
        .iter()
        .map(|row| {
            let mut p = vec![0.0; pad];
            p.extend_from_slice(row);
            p.extend(std::iter::repeat_n(0.0, pad));
            p
        })
        .collect();
    let out_len = padded[0].len() + 1 - m;
    (0..n)
        .map(|i| {
            (0..out_len)
                .map(|p| {
                    let mut acc = b[i];
                    for k in 0..d {
                        for j in 0..m {
                            acc += w[i * d * m + k * m + j] * padded[k][p + j];
                        }
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

fn matrix(rows: &[Vec<f64>]) -> DenseMatrix {
    DenseMatrix::from_rows(rows).unwrap()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn check_conv(rng: &mut ChaCha8Rng, mode: ConvMode, instances: usize) -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let (n, d, m) = (
            rng.gen_range(1..6),
            rng.gen_range(1..7),
            rng.gen_range(1..6),
        );
        let len = match mode {
            ConvMode::Wide => rng.gen_range(1..12),
            ConvMode::Narrow => rng.gen_range(m..m + 10),
        };
        let s: Vec<Vec<f64>> = (0..d).map(|_| uniform(rng, len)).collect();
        let w = uniform(rng, n * d * m);
        let b = uniform(rng, n);
        let fb = FilterBank::new(n, d, m, w.clone(), b.clone()).unwrap();
        let got = conv1d_forward(&matrix(&s), &fb, mode).map_err(|e| e.to_string())?;
        let want = conv_oracle(&s, &w, &b, n, m, mode == ConvMode::Wide);
        ensure!(
            got.shape() == (n, want[0].len()),
            "conv {mode:?} shape {:?}, expected {}x{}",
            got.shape(),
            n,
            want[0].len()
        );
        for (i, row) in want.iter().enumerate() {
            worst = worst.max(max_abs_diff(got.row(i), row));
        }
    }
    ensure!(
        worst <= 1e-12,
        "conv {mode:?} differs from the oracle by {worst:e}"
    );
    Ok(worst)
}

/// Brute-force ranking metrics written from the definitions.
struct MetricOracle;

impl MetricOracle {
    fn id_order(a: &str, b: &str) -> Ordering {
        let num = |s: &str| s.parse::<u64>().ok();
        match (num(a), num(b)) {
            (Some(x), Some(y)) if x != y => x.cmp(&y),
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            _ => a.cmp(b),
        }
    }

    /// Relevance in rank order: scored candidates by position (each placed
    /// after everything that beats it), then judged but unscored ones by id.
    fn ranked(scored: &[(String, f64)], judged: &[(String, bool)]) -> Vec<bool> {
        let rel = |c: &str| judged.iter().any(|(j, r)| j == c && *r);
        let mut slots: Vec<Option<bool>> = vec![None; scored.len()];
        for (c, s) in scored {
            let beaten_by = scored
                .iter()
                .filter(|(o, t)| t > s || (t == s && Self::id_order(o, c) == Ordering::Less))
                .count();
            slots[beaten_by] = Some(rel(c));
        }
        let mut out: Vec<bool> = slots.into_iter().map(Option::unwrap).collect();
        let mut missing: Vec<&(String, bool)> = judged
            .iter()
            .filter(|(c, _)| !scored.iter().any(|(s, _)| s == c))
            .collect();
        missing.sort_by(|a, b| Self::id_order(&a.0, &b.0));
        out.extend(missing.iter().map(|(_, r)| *r));
        out
    }

    fn ap(ranked: &[bool]) -> f64 {
        let relevant = ranked.iter().filter(|&&r| r).count();
        if relevant == 0 {
            return 0.0;
        }
        let mut sum = 0.0;
        for k in 0..ranked.len() {
            if ranked[k] {
                let hits_so_far = ranked[..=k].iter().filter(|&&r| r).count();
                sum += hits_so_far as f64 / (k + 1) as f64;
            }
        }
        sum / relevant as f64
    }

    fn rr(ranked: &[bool]) -> f64 {
        for (k, &r) in ranked.iter().enumerate() {
            if r {
                return 1.0 / (k + 1) as f64;
            }
        }
        0.0
    }

    /// Questions with every judged candidate relevant or none relevant are
    /// skipped.
    fn evaluate(questions: &[RandomQuestion]) -> Option<Metrics> {
        let kept: Vec<&RandomQuestion> = questions
            .iter()
            .filter(|q| {
                let pos = q.judged.iter().filter(|(_, r)| *r).count();
                pos > 0 && pos < q.judged.len()
            })
            .collect();
        if kept.is_empty() {
            return None;
        }
        let (mut map, mut mrr, mut p1) = (0.0, 0.0, 0.0);
        for q in &kept {
            let ranked = Self::ranked(&q.scored, &q.judged);
            map += Self::ap(&ranked);
            mrr += Self::rr(&ranked);
            p1 += if ranked[0] { 1.0 } else { 0.0 };
        }
        let n = kept.len() as f64;
        Some(Metrics {
            map: map / n,
            mrr: mrr / n,
            p_at_1: p1 / n,
            questions: kept.len(),
        })
    }
}

struct RandomQuestion {
    id: String,
    scored: Vec<(String, f64)>,
    judged: Vec<(String, bool)>,
}

/// Random questions with ties, unjudged and unscored candidates, and mixed
/// numeric and textual ids.
fn random_questions(rng: &mut ChaCha8Rng) -> Vec<RandomQuestion> {
    let count = rng.gen_range(1..6);
    (0..count)
        .map(|qi| {
            let k = rng.gen_range(1..8);
            let ids: Vec<String> = (0..k)
                .map(|c| match rng.gen_range(0..3) {
                    0 => format!("c{c}"),
                    _ => format!("{}", c * 7 % 11 + rng.gen_range(0..2) * 20),
                })
                .collect();
            let mut ids_unique: Vec<String> = Vec::new();
            for id in ids {
                if !ids_unique.contains(&id) {
                    ids_unique.push(id);
                }
            }
            let mut scored = Vec::new();
            let mut judged = Vec::new();
            for id in &ids_unique {
                let in_run = rng.gen_bool(0.9);
                let in_qrels = rng.gen_bool(0.9) || !in_run;
                if in_run {
                    scored.push((id.clone(), f64::from(rng.gen_range(0..5)) * 0.25));
                }
                if in_qrels {
                    judged.push((id.clone(), rng.gen_bool(0.4)));
                }
            }
            RandomQuestion {
                id: format!("q{qi}"),
                scored,
                judged,
            }
        })
        .collect()
}

fn to_run_and_qrels(
    questions: &[RandomQuestion],
    transform: impl Fn(f64) -> f64,
) -> (RankedRun, Qrels) {
    let mut run = RankedRun::new("oracle");
    let mut qrels = Qrels::new();
    for q in questions {
        for (c, s) in &q.scored {
            run.insert(&q.id, c, transform(*s)).unwrap();
        }
        for (c, r) in &q.judged {
            qrels.insert(&q.id, c, *r);
        }
    }
    (run, qrels)
}

fn check_metrics(rng: &mut ChaCha8Rng, instances: usize) -> Result<usize, String> {
    let mut compared = 0;
    while compared < instances {
        let questions = random_questions(rng);
        let (run, qrels) = to_run_and_qrels(&questions, |s| s);
        let want = MetricOracle::evaluate(&questions);
        let got = evaluate(&run, &qrels, FilterPolicy::AllPositiveOrAllNegative).ok();
        let (Some(want), Some(got)) = (want, got) else {
            ensure!(
                want.is_none() && got.is_none(),
                "evaluator and oracle disagree on emptiness"
            );
            continue;
        };
        ensure!(
            got.map.to_bits() == want.map.to_bits()
                && got.mrr.to_bits() == want.mrr.to_bits()
                && got.p_at_1.to_bits() == want.p_at_1.to_bits()
                && got.questions == want.questions,
            "metrics {got:?} differ from oracle {want:?}"
        );
        for q in &questions {
            let ranked = MetricOracle::ranked(&q.scored, &q.judged);
            if ranked.iter().any(|&r| r) {
                ensure!(
                    average_precision(&ranked).unwrap().to_bits()
                        == MetricOracle::ap(&ranked).to_bits(),
                    "AP of {ranked:?}"
                );
            }
            ensure!(
                reciprocal_rank(&ranked).to_bits() == MetricOracle::rr(&ranked).to_bits(),
                "RR of {ranked:?}"
            );
        }
        compared += 1;
    }
    Ok(compared)
}

fn kernel_oracles() -> Outcome {
    const N: usize = 500;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let wide = check_conv(&mut rng, ConvMode::Wide, N)?;
    let narrow = check_conv(&mut rng, ConvMode::Narrow, N)?;

    let mut bil: f64 = 0.0;
    for _ in 0..N {
        let (p, q) = (rng.gen_range(1..9), rng.gen_range(1..9));
        let xq = uniform(&mut rng, p);
        let xa = uniform(&mut rng, q);
        let m: Vec<Vec<f64>> = (0..p).map(|_| uniform(&mut rng, q)).collect();
        let mut want = 0.0;
        for i in 0..p {
            for j in 0..q {
                want += xq[i] * m[i][j] * xa[j];
            }
        }
        let got = bilinear(&xq, &matrix(&m), &xa).map_err(|e| e.to_string())?;
        bil = bil.max((got - want).abs());
    }
    ensure!(bil <= 1e-12, "bilinear differs by {bil:e}");

    let mut aff: f64 = 0.0;
    for _ in 0..N {
        let (r, c) = (rng.gen_range(1..9), rng.gen_range(1..9));
        let w: Vec<Vec<f64>> = (0..r).map(|_| uniform(&mut rng, c)).collect();
        let x = uniform(&mut rng, c);
        let b = uniform(&mut rng, r);
        let want: Vec<f64> = (0..r)
            .map(|i| b[i] + (0..c).rev().map(|j| w[i][j] * x[j]).sum::<f64>())
            .collect();
        let got = affine(&matrix(&w), &x, &b).map_err(|e| e.to_string())?;
        aff = aff.max(max_abs_diff(&got, &want));
    }
    ensure!(aff <= 1e-12, "affine differs by {aff:e}");

    for t in 0..N {
        let (r, c) = (rng.gen_range(1..6), rng.gen_range(1..11));
        let rows: Vec<Vec<f64>> = (0..r)
            .map(|_| {
                (0..c)
                    .map(|_| {
                        if t % 2 == 0 {
                            f64::from(rng.gen_range(-2..3))
                        } else {
                            rng.gen_range(-1.0..1.0)
                        }
                    })
                    .collect()
            })
            .collect();
        let (values, argmax) = maxpool_rows(&matrix(&rows)).map_err(|e| e.to_string())?;
        for (i, row) in rows.iter().enumerate() {
            let best = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let first = row.iter().position(|&v| v == best).unwrap();
            ensure!(
                values[i].to_bits() == best.to_bits() && argmax[i] == first,
                "maxpool of {row:?}: got ({}, {}), expected ({best}, {first})",
                values[i],
                argmax[i]
            );
        }
    }

    let metrics = check_metrics(&mut rng, N)?;
    within(start, Duration::from_secs(60), "kernel oracles")?;
    Ok(format!(
        "{N} instances each; max abs diff conv wide {wide:.1e}, narrow {narrow:.1e}, bilinear {bil:.1e}, affine {aff:.1e}; maxpool and {metrics} metric runs exact"
    ))
}

// ---------------------------------------------------------------------------
// 3

fn adadelta_closed_form() -> Outcome {
    let cfg = AdadeltaConfig::default();
    ensure!(
        cfg.rho == 0.95 && cfg.epsilon == 1e-6,
        "unexpected defaults {cfg:?}"
    );
    let (mut x, mut eg, mut ed) = ([0.0], [0.0], [0.0]);
    adadelta_update(&mut x, &[1.0], &mut eg, &mut ed, cfg).unwrap();
    let closed = -(1e-6f64).sqrt() / (0.05f64 + 1e-6).sqrt();
    ensure!(
        (x[0] - closed).abs() <= 1e-15,
        "first step {} vs closed form {closed}",
        x[0]
    );
    let five_sig = format!("{:.4e}", x[0]);
    ensure!(
        five_sig == "-4.4721e-3",
        "first step {} rounds to {five_sig}",
        x[0]
    );
    ensure!(
        ((x[0] - -0.0044721) / 0.0044721).abs() < 5e-6,
        "first step {} not within rounding of -0.0044721",
        x[0]
    );

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let n = rng.gen_range(1..40);
        let block = uniform(&mut rng, n);
        let mut after = block.clone();
        let mut eg: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..2.0)).collect();
        let mut ed: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..2.0)).collect();
        adadelta_update(&mut after, &vec![0.0; n], &mut eg, &mut ed, cfg).unwrap();
        ensure!(
            block
                .iter()
                .zip(&after)
                .all(|(a, b)| a.to_bits() == b.to_bits()),
            "zero gradient moved the parameters"
        );
    }
    Ok(format!("first step {:.7} (closed form {closed:.7}); zero gradient is a fixed point on 200 random blocks", x[0]))
}

// ---------------------------------------------------------------------------
// 4 and 5

fn prepared(
    train_cfg: &FixtureConfig,
    dev_cfg: &FixtureConfig,
    dim: usize,
) -> (Dataset, Dataset, relqa::text::EmbeddingTable) {
    let mut train_ds = generate_dataset(train_cfg, Split::Train).unwrap();
    let mut dev_ds = generate_dataset(dev_cfg, Split::Dev).unwrap();
    let w2v = filler_embeddings(train_cfg, dim, train_cfg.seed);
    let lex = build_lexicon(
        &[&train_ds, &dev_ds],
        |vocab| Ok(embeddings_from_word2vec(&w2v, vocab).table),
        DEFAULT_OOV_RANGE,
        1,
        Stopwords::english(),
        TokenizerOptions::default(),
    )
    .unwrap();
    lex.prepare(&mut train_ds);
    lex.prepare(&mut dev_ds);
    (train_ds, dev_ds, lex.embeddings)
}

fn small_hyper(mode: RelationalMode) -> HyperParams {
    HyperParams {
        word_dim: 16,
        filters: 16,
        relational_mode: mode,
        ..HyperParams::default()
    }
}

fn tiny_overfit() -> Outcome {
    let start = Instant::now();
    let fixture = FixtureConfig::default();
    ensure!(
        (fixture.questions, fixture.candidates, fixture.planted) == (20, 5, 2),
        "fixture is {fixture:?}"
    );
    let (train_ds, _, table) = prepared(&fixture, &fixture, 16);
    let params = ModelParams::init(small_hyper(RelationalMode::Emb), table, 0).unwrap();
    let config = TrainConfig::default();
    let out = train(&train_ds, &train_ds, params, &config).map_err(|e| e.to_string())?;
    let map = dataset_map(
        &out.params,
        &train_ds,
        FilterPolicy::AllPositiveOrAllNegative,
    )
    .unwrap();
    ensure!(
        map == 1.0,
        "train MAP {map} after {} epochs",
        out.history.epochs_run
    );
    let run = rank_dataset(&out.params, &train_ds, "overfit").unwrap();
    for q in &train_ds.questions {
        let top = &run.ranking(&q.id).unwrap()[0].0;
        let correct = q.pairs.iter().find(|p| p.label == 1).unwrap();
        ensure!(
            *top == correct.candidate_id,
            "question {} ranks {top} first",
            q.id
        );
    }
    let first_perfect = out
        .history
        .events
        .iter()
        .find_map(|e| match e {
            relqa::train::Event::Eval { epoch, dev_map, .. } if *dev_map == 1.0 => Some(*epoch),
            _ => None,
        })
        .unwrap_or(0);
    ensure!(
        (1..=25).contains(&first_perfect),
        "MAP 1.0 first reached in epoch {first_perfect}"
    );
    within(start, Duration::from_secs(120), "tiny overfit")?;
    Ok(format!(
        "train MAP 1.0 first reached in epoch {first_perfect} (n=16, d_w=16, seed 0)"
    ))
}

fn relational_ordering() -> Outcome {
    let mut emb = Vec::new();
    let mut none = Vec::new();
    for seed in 0..3u64 {
        let train_cfg = FixtureConfig {
            questions: 60,
            seed,
            ..FixtureConfig::default()
        };
        let dev_cfg = FixtureConfig {
            questions: 40,
            first_question: 1000,
            seed: seed + 100,
            ..FixtureConfig::default()
        };
        let (train_ds, dev_ds, table) = prepared(&train_cfg, &dev_cfg, 16);
        for (mode, sink) in [
            (RelationalMode::Emb, &mut emb),
            (RelationalMode::None, &mut none),
        ] {
            let params = ModelParams::init(small_hyper(mode), table.clone(), seed).unwrap();
            let config = TrainConfig {
                relational_mode: mode,
                seed,
                ..TrainConfig::default()
            };
            let out = train(&train_ds, &dev_ds, params, &config).map_err(|e| e.to_string())?;
            sink.push(
                dataset_map(&out.params, &dev_ds, FilterPolicy::AllPositiveOrAllNegative).unwrap(),
            );
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (e, n) = (mean(&emb), mean(&none));
    let fmt = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{x:.3}"))
            .collect::<Vec<_>>()
            .join("/")
    };
    ensure!(
        e >= n,
        "mean dev MAP emb {e:.4} < none {n:.4} (emb {}, none {})",
        fmt(&emb),
        fmt(&none)
    );
    Ok(format!(
        "mean dev MAP emb {e:.4} >= none {n:.4} (emb {}, none {})",
        fmt(&emb),
        fmt(&none)
    ))
}

// ---------------------------------------------------------------------------
// 6

fn relqa(args: &[&str]) -> Result<std::process::Output, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_relqa"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(
        out.status.success(),
        "relqa {} failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    Ok(out)
}

fn read(path: &Path) -> Result<Vec<u8>, String> {
    std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let s = |p: &Path| p.to_str().unwrap().to_string();
    relqa(&["generate-fixture", "--out", &s(d), "--seed", "5"])?;
    let config = s(&d.join("config.toml"));
    relqa(&["preprocess", "-c", &config])?;
    let mut reports = Vec::new();
    for run in ["a", "b"] {
        let out = relqa(&[
            "train",
            "-c",
            &config,
            "--seed",
            "7",
            "--max-epochs",
            "6",
            "--output-dir",
            &s(&d.join(run)),
        ])?;
        reports.push(out.stdout);
    }
    let (log_a, log_b) = (read(&d.join("a/train.log"))?, read(&d.join("b/train.log"))?);
    let (ck_a, ck_b) = (
        read(&d.join("a/checkpoint.bin"))?,
        read(&d.join("b/checkpoint.bin"))?,
    );
    ensure!(!log_a.is_empty(), "empty training log");
    ensure!(log_a == log_b, "training logs differ");
    ensure!(ck_a == ck_b, "checkpoints differ");
    ensure!(reports[0] == reports[1], "printed reports differ");
    let a = Checkpoint::from_bytes(&ck_a).map_err(|e| e.to_string())?;
    let b = Checkpoint::from_bytes(&ck_b).map_err(|e| e.to_string())?;
    for block in Block::ALL {
        ensure!(
            a.params
                .block(block)
                .iter()
                .zip(b.params.block(block))
                .all(|(x, y)| x.to_bits() == y.to_bits()),
            "block {} differs",
            block.name()
        );
    }
    Ok(format!(
        "two CLI runs with seed 7: identical logs ({} lines) and checkpoints ({} bytes)",
        log_a.iter().filter(|&&c| c == b'\n').count(),
        ck_a.len()
    ))
}

// ---------------------------------------------------------------------------
// 7

fn checkpoint_integrity() -> Outcome {
    let fixture = FixtureConfig {
        questions: 6,
        ..FixtureConfig::default()
    };
    let (ds, _, table) = prepared(&fixture, &fixture, 16);
    let params = ModelParams::init(small_hyper(RelationalMode::Both), table, 9).unwrap();
    let config = TrainConfig {
        relational_mode: RelationalMode::Both,
        max_epochs: 2,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let out = train(&ds, &ds, params, &config).map_err(|e| e.to_string())?;
    let ck = Checkpoint {
        params: out.params,
        optimizer: Some(out.optimizer),
        history: Some(out.history),
        stopwords: Stopwords::english(),
        tokenizer: TokenizerOptions::default(),
        idf: None,
    };
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("model.bin");
    ck.save(&path).map_err(|e| e.to_string())?;
    let first = read(&path)?;
    let loaded = Checkpoint::load(&path).map_err(|e| e.to_string())?;
    let before = rank_dataset(&ck.params, &ds, "x").unwrap();
    let after = rank_dataset(&loaded.params, &ds, "x").unwrap();
    let mut scores = 0;
    for ((q1, r1), (q2, r2)) in before.questions().zip(after.questions()) {
        ensure!(q1 == q2 && r1.len() == r2.len(), "rankings differ in shape");
        for ((c1, s1), (c2, s2)) in r1.iter().zip(r2) {
            ensure!(
                c1 == c2 && s1.to_bits() == s2.to_bits(),
                "score of {q1}/{c1} changed"
            );
            scores += 1;
        }
    }
    let path2 = dir.path().join("again.bin");
    loaded.save(&path2).map_err(|e| e.to_string())?;
    ensure!(
        read(&path2)? == first,
        "save-load-save is not byte-identical"
    );

    let mut wrong = first.clone();
    wrong[..6].copy_from_slice(b"NOTQA1");
    let magic = Checkpoint::from_bytes(&wrong);
    let truncated = Checkpoint::from_bytes(&first[..first.len() / 2]);
    ensure!(
        matches!(magic, Err(ContainerError::BadMagic { .. })),
        "wrong magic gave {magic:?}"
    );
    ensure!(
        matches!(truncated, Err(ContainerError::Truncated(_))),
        "truncation gave {truncated:?}"
    );
    let (m, t) = (
        magic.unwrap_err().to_string(),
        truncated.unwrap_err().to_string(),
    );
    ensure!(m != t, "errors are indistinguishable");
    Ok(format!("{scores} scores bit-identical after reload, resave byte-identical ({} bytes), bad magic and truncation rejected distinctly", first.len()))
}

// ---------------------------------------------------------------------------
// 8

fn qrels_from(labels: &[(&str, &[u8])]) -> Qrels {
    let mut q = Qrels::new();
    for (qid, ls) in labels {
        for (i, &l) in ls.iter().enumerate() {
            q.insert(qid, &i.to_string(), l == 1);
        }
    }
    q
}

/// Checks the fields a trec_eval run file needs: six whitespace-separated
/// columns, literal `Q0`, ranks counting from 1, non-increasing scores.
fn validate_run_file(text: &str) -> Result<usize, String> {
    let mut last: Option<(String, usize, f64)> = None;
    let mut lines = 0;
    for (n, line) in text.lines().enumerate() {
        let f: Vec<&str> = line.split_whitespace().collect();
        ensure!(f.len() == 6, "line {}: {} fields", n + 1, f.len());
        ensure!(f[1] == "Q0", "line {}: second field {}", n + 1, f[1]);
        let rank: usize = f[3]
            .parse()
            .map_err(|_| format!("line {}: rank {}", n + 1, f[3]))?;
        let score: f64 = f[4]
            .parse()
            .map_err(|_| format!("line {}: score {}", n + 1, f[4]))?;
        ensure!(score.is_finite(), "line {}: non-finite score", n + 1);
        match &last {
            Some((q, r, s)) if q == f[0] => {
                ensure!(rank == r + 1, "line {}: rank {rank} after {r}", n + 1);
                ensure!(score <= *s, "line {}: score rises", n + 1);
            }
            _ => ensure!(rank == 1, "line {}: first rank {rank}", n + 1),
        }
        last = Some((f[0].to_string(), rank, score));
        lines += 1;
    }
    Ok(lines)
}

fn metric_protocol() -> Outcome {
    let six = qrels_from(&[
        ("q1", &[1, 1]),
        ("q2", &[0, 0, 0]),
        ("q3", &[1, 0]),
        ("q4", &[0, 1, 0]),
        ("q5", &[1]),
        ("q6", &[0]),
    ]);
    let (_, report) = filter_qrels(&six, FilterPolicy::AllPositiveOrAllNegative);
    ensure!(
        report.removed_ids() == ["q1", "q2", "q5", "q6"],
        "removed {:?}",
        report.removed_ids()
    );
    let (_, report) = filter_qrels(&six, FilterPolicy::NoPositive);
    ensure!(
        report.removed_ids() == ["q2", "q6"],
        "no-positive removed {:?}",
        report.removed_ids()
    );
    let (_, report) = filter_qrels(&six, FilterPolicy::None);
    ensure!(
        report.removed_ids().is_empty(),
        "policy none removed {:?}",
        report.removed_ids()
    );

    // Ranked relevance [1,0,1], [0,1,0] and [0,0,1,1].
    let three = qrels_from(&[("a", &[1, 0, 1]), ("b", &[0, 1, 0]), ("c", &[0, 0, 1, 1])]);
    let mut run = RankedRun::new("hand");
    for (q, k) in [("a", 3), ("b", 3), ("c", 4)] {
        for i in 0..k {
            run.insert(q, &i.to_string(), 1.0 - 0.1 * i as f64).unwrap();
        }
    }
    let m = evaluate(&run, &three, FilterPolicy::AllPositiveOrAllNegative)
        .map_err(|e| e.to_string())?;
    let aps = [
        average_precision(&[true, false, true]).unwrap(),
        average_precision(&[false, true, false]).unwrap(),
        average_precision(&[false, false, true, true]).unwrap(),
    ];
    let hand_ap = [0.833333, 0.5, 0.416667];
    for (got, want) in aps.iter().zip(hand_ap) {
        ensure!((got - want).abs() < 1e-6, "AP {got} vs hand value {want}");
    }
    ensure!((m.map - 0.583333).abs() < 1e-6, "MAP {}", m.map);
    ensure!((m.mrr - 0.611111).abs() < 1e-6, "MRR {}", m.mrr);
    ensure!((m.p_at_1 - 0.333333).abs() < 1e-6, "P@1 {}", m.p_at_1);
    ensure!(m.questions == 3, "{} questions", m.questions);
    let oracle_questions: Vec<RandomQuestion> = [
        ("a", [1u8, 0, 1].as_slice()),
        ("b", &[0, 1, 0]),
        ("c", &[0, 0, 1, 1]),
    ]
    .iter()
    .map(|(q, ls)| RandomQuestion {
        id: q.to_string(),
        scored: (0..ls.len())
            .map(|i| (i.to_string(), 1.0 - 0.1 * i as f64))
            .collect(),
        judged: ls
            .iter()
            .enumerate()
            .map(|(i, &l)| (i.to_string(), l == 1))
            .collect(),
    })
    .collect();
    let oracle = MetricOracle::evaluate(&oracle_questions).unwrap();
    ensure!(oracle == m, "oracle {oracle:?} vs evaluator {m:?}");

    let mut buf = Vec::new();
    write_trec_run(&run, &mut buf).map_err(|e| e.to_string())?;
    let text = String::from_utf8(buf).map_err(|e| e.to_string())?;
    let lines = validate_run_file(&text)?;
    ensure!(lines == 10, "{lines} run lines");
    let external = match Command::new("trec_eval").arg("-h").output() {
        Ok(_) => {
            let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            let (rp, qp) = (dir.path().join("run"), dir.path().join("qrels"));
            std::fs::write(&rp, &text).map_err(|e| e.to_string())?;
            let mut qbuf = Vec::new();
            relqa::eval::write_qrels(&three, &mut qbuf).map_err(|e| e.to_string())?;
            std::fs::write(&qp, qbuf).map_err(|e| e.to_string())?;
            let out = Command::new("trec_eval")
                .arg(&qp)
                .arg(&rp)
                .output()
                .map_err(|e| e.to_string())?;
            ensure!(out.status.success(), "trec_eval rejected the run file");
            "; accepted by trec_eval"
        }
        Err(_) => "; trec_eval not installed, format checked by a strict parser",
    };
    Ok(format!(
        "filter removes q1,q2,q5,q6; MAP {:.6} MRR {:.6} P@1 {:.6} match hand values and oracle{external}",
        m.map, m.mrr, m.p_at_1
    ))
}

// ---------------------------------------------------------------------------
// 9

fn invariances() -> Outcome {
    // Ranking metrics under a strictly increasing transform.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut compared = 0;
    for _ in 0..300 {
        let questions = random_questions(&mut rng);
        let (run, qrels) = to_run_and_qrels(&questions, |s| s);
        let (run_t, _) = to_run_and_qrels(&questions, |s| (3.0 * s).exp() - 7.0);
        for policy in FilterPolicy::ALL {
            match (
                evaluate(&run, &qrels, policy),
                evaluate(&run_t, &qrels, policy),
            ) {
                (Ok(a), Ok(b)) => {
                    ensure!(a == b, "transform changed {a:?} into {b:?}");
                    compared += 1;
                }
                (Err(_), Err(_)) => {}
                _ => return Err("transform changed evaluability".into()),
            }
        }
    }

    // Sentence encodings in fvec mode equal those of a none-mode model with
    // the same encoder weights, and ignore the overlap flags.
    let fixture = FixtureConfig {
        questions: 4,
        ..FixtureConfig::default()
    };
    let (ds, _, table) = prepared(&fixture, &fixture, 16);
    let fvec = ModelParams::init(small_hyper(RelationalMode::Fvec), table.clone(), 4).unwrap();
    let none_hyper = small_hyper(RelationalMode::None);
    let none_template = ModelParams::init(none_hyper.clone(), table.clone(), 5).unwrap();
    let blocks: Vec<Vec<f64>> = Block::ALL
        .iter()
        .map(|&b| match b {
            Block::HiddenWeights | Block::HiddenBias | Block::OutputWeights | Block::OutputBias => {
                none_template.block(b).to_vec()
            }
            _ => fvec.block(b).to_vec(),
        })
        .collect();
    let none = ModelParams::from_blocks(none_hyper, fvec.vocab().clone(), true, blocks).unwrap();
    let mut pairs = 0;
    for p in ds.pairs() {
        let f = fvec
            .forward(&p.question, &p.answer, p.features.as_deref())
            .unwrap();
        let n = none.forward(&p.question, &p.answer, None).unwrap();
        let mut q_flipped = p.question.clone();
        q_flipped
            .set_overlap(p.question.overlap().iter().map(|&o| 1 - o).collect())
            .unwrap();
        let g = fvec
            .forward(&q_flipped, &p.answer, p.features.as_deref())
            .unwrap();
        for (a, b) in [
            (&f.question.pooled, &n.question.pooled),
            (&f.answer.pooled, &n.answer.pooled),
            (&f.question.pooled, &g.question.pooled),
        ] {
            ensure!(
                a.iter()
                    .zip(b.iter())
                    .all(|(x, y)| x.to_bits() == y.to_bits()),
                "encodings differ between none and fvec"
            );
        }
        pairs += 1;
    }

    // Flipping one overlap flag changes exactly d_o entries, all in one column.
    let emb = ModelParams::init(small_hyper(RelationalMode::Emb), table.clone(), 6).unwrap();
    let d_w = emb.hyper().word_dim;
    let d_o = emb.hyper().overlap_dim;
    let words = DenseMatrix::from_vec(
        emb.vocab().len(),
        d_w,
        emb.block(Block::WordEmbeddings).to_vec(),
    )
    .unwrap();
    let mut flips = 0;
    for p in ds.pairs().take(10) {
        let s = build_sentence_matrix(&p.answer, &words, emb.overlap()).unwrap();
        for t in 0..p.answer.len() {
            let mut flipped = p.answer.clone();
            let mut flags = p.answer.overlap().to_vec();
            flags[t] = 1 - flags[t];
            flipped.set_overlap(flags).unwrap();
            let s2 = build_sentence_matrix(&flipped, &words, emb.overlap()).unwrap();
            let mut changed = Vec::new();
            for r in 0..s.rows() {
                for c in 0..s.cols() {
                    if s.get(r, c).to_bits() != s2.get(r, c).to_bits() {
                        changed.push((r, c));
                    }
                }
            }
            ensure!(
                changed.len() == d_o,
                "flip changed {} entries",
                changed.len()
            );
            ensure!(
                changed.iter().all(|&(r, c)| c == t && r >= d_w),
                "flip changed entries outside the overlap rows of column {t}: {changed:?}"
            );
            flips += 1;
        }
    }

    // Frozen word vectors are bit-identical after training; unfrozen ones move.
    let mut moved = false;
    for freeze in [true, false] {
        let params = ModelParams::init(small_hyper(RelationalMode::Emb), table.clone(), 7).unwrap();
        let before = params.block(Block::WordEmbeddings).to_vec();
        let config = TrainConfig {
            max_epochs: 2,
            batch_size: 5,
            freeze_embeddings: freeze,
            ..TrainConfig::default()
        };
        let out = train(&ds, &ds, params, &config).map_err(|e| e.to_string())?;
        let after = out.params.block(Block::WordEmbeddings);
        let same = before
            .iter()
            .zip(after)
            .all(|(x, y)| x.to_bits() == y.to_bits());
        if freeze {
            ensure!(same, "frozen word vectors changed during training");
            ensure!(
                out.optimizer.sq_grad[Block::WordEmbeddings.index()]
                    .iter()
                    .all(|&v| v == 0.0),
                "frozen word vectors accumulated gradient"
            );
        } else {
            moved = !same;
        }
    }
    ensure!(moved, "unfrozen word vectors did not move");
    Ok(format!(
        "monotone transform on {compared} evaluations, none=fvec encodings on {pairs} pairs, {flips} flag flips local, frozen W bit-identical"
    ))
}
