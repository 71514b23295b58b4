//! Ranking metrics (MAP, MRR, P@1), question filtering, and TREC run/qrels
//! files.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("no questions left to evaluate")]
    NoQuestions,
    #[error("average precision is undefined without a relevant candidate")]
    NoRelevant,
    #[error("score of candidate {candidate:?} for question {question:?} is not finite")]
    NonFiniteScore { question: String, candidate: String },
    #[error("candidate {candidate:?} appears twice for question {question:?}")]
    DuplicateCandidate { question: String, candidate: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Orders identifiers numerically when both parse as integers, otherwise
/// lexicographically, with numeric identifiers first.
pub fn compare_ids(a: &str, b: &str) -> Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

/// Descending score, ties by ascending candidate id.
fn rank_order(a: &(String, f64), b: &(String, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| compare_ids(&a.0, &b.0))
}

/// Question ids in first-insertion order, each with a vector of entries.
#[derive(Debug, Clone, Default, PartialEq)]
struct Grouped<T> {
    groups: Vec<(String, Vec<T>)>,
    index: HashMap<String, usize>,
}

impl<T> Grouped<T> {
    fn group_mut(&mut self, qid: &str) -> &mut Vec<T> {
        let next = self.groups.len();
        let i = *self.index.entry(qid.to_string()).or_insert(next);
        if i == next {
            self.groups.push((qid.to_string(), Vec::new()));
        }
        &mut self.groups[i].1
    }

    fn get(&self, qid: &str) -> Option<&[T]> {
        self.index.get(qid).map(|&i| self.groups[i].1.as_slice())
    }
}

/// Scored candidates per question, each list kept in rank order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RankedRun {
    name: String,
    questions: Grouped<(String, f64)>,
}

impl RankedRun {
    pub fn new(name: impl Into<String>) -> Self {
        RankedRun {
            name: name.into(),
            questions: Grouped::default(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn insert(&mut self, question: &str, candidate: &str, score: f64) -> Result<(), EvalError> {
        if !score.is_finite() {
            return Err(EvalError::NonFiniteScore {
                question: question.into(),
                candidate: candidate.into(),
            });
        }
        let list = self.questions.group_mut(question);
        if list.iter().any(|(c, _)| c == candidate) {
            return Err(EvalError::DuplicateCandidate {
                question: question.into(),
                candidate: candidate.into(),
            });
        }
        let entry = (candidate.to_string(), score);
        let pos = list.partition_point(|e| rank_order(e, &entry) == Ordering::Less);
        list.insert(pos, entry);
        Ok(())
    }

    /// Candidates of `question` from rank 1 downwards.
    pub fn ranking(&self, question: &str) -> Option<&[(String, f64)]> {
        self.questions.get(question)
    }

    pub fn questions(&self) -> impl Iterator<Item = (&str, &[(String, f64)])> {
        self.questions
            .groups
            .iter()
            .map(|(q, c)| (q.as_str(), c.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.questions.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.groups.is_empty()
    }
}

/// Binary relevance judgements per question, in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Qrels {
    questions: Grouped<(String, u8)>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a judgement; a repeated candidate overwrites the earlier label.
    pub fn insert(&mut self, question: &str, candidate: &str, relevant: bool) {
        let list = self.questions.group_mut(question);
        let label = u8::from(relevant);
        match list.iter_mut().find(|(c, _)| c == candidate) {
            Some(entry) => entry.1 = label,
            None => list.push((candidate.to_string(), label)),
        }
    }

    pub fn judgements(&self, question: &str) -> Option<&[(String, u8)]> {
        self.questions.get(question)
    }

    pub fn relevance(&self, question: &str, candidate: &str) -> Option<bool> {
        self.judgements(question)?
            .iter()
            .find(|(c, _)| c == candidate)
            .map(|&(_, r)| r == 1)
    }

    pub fn questions(&self) -> impl Iterator<Item = (&str, &[(String, u8)])> {
        self.questions
            .groups
            .iter()
            .map(|(q, c)| (q.as_str(), c.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.questions.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.groups.is_empty()
    }
}

/// Which questions take part in metric aggregation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterPolicy {
    /// Drop questions whose candidates are all relevant or all non-relevant.
    #[default]
    AllPositiveOrAllNegative,
    /// Drop questions without a relevant candidate.
    NoPositive,
    None,
}

impl FilterPolicy {
    pub const ALL: [FilterPolicy; 3] = [
        FilterPolicy::AllPositiveOrAllNegative,
        FilterPolicy::NoPositive,
        FilterPolicy::None,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FilterPolicy::AllPositiveOrAllNegative => "all-positive-or-all-negative",
            FilterPolicy::NoPositive => "no-positive",
            FilterPolicy::None => "none",
        }
    }

    /// Reason to drop a question with these labels, if any.
    pub fn violation(self, labels: impl IntoIterator<Item = u8>) -> Option<RemovalReason> {
        let (mut pos, mut neg) = (0usize, 0usize);
        for l in labels {
            if l == 1 {
                pos += 1;
            } else {
                neg += 1;
            }
        }
        match self {
            FilterPolicy::None => None,
            FilterPolicy::NoPositive if pos == 0 => Some(RemovalReason::NoPositive),
            FilterPolicy::NoPositive => None,
            FilterPolicy::AllPositiveOrAllNegative if pos == 0 => Some(RemovalReason::AllNegative),
            FilterPolicy::AllPositiveOrAllNegative if neg == 0 => Some(RemovalReason::AllPositive),
            FilterPolicy::AllPositiveOrAllNegative => None,
        }
    }
}

impl fmt::Display for FilterPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FilterPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FilterPolicy::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| {
                format!("unknown filter policy {s:?} (expected all-positive-or-all-negative, no-positive or none)")
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RemovalReason {
    AllPositive,
    AllNegative,
    NoPositive,
}

impl fmt::Display for RemovalReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RemovalReason::AllPositive => "all candidates relevant",
            RemovalReason::AllNegative => "no candidate relevant",
            RemovalReason::NoPositive => "no relevant candidate",
        })
    }
}

/// Questions excluded by a filter, in input order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FilterReport {
    pub policy: FilterPolicy,
    pub removed: Vec<(String, RemovalReason)>,
    pub kept: usize,
}

impl FilterReport {
    pub fn removed_ids(&self) -> Vec<&str> {
        self.removed.iter().map(|(q, _)| q.as_str()).collect()
    }
}

/// Keeps the questions of `qrels` that satisfy `policy`.
pub fn filter_qrels(qrels: &Qrels, policy: FilterPolicy) -> (Qrels, FilterReport) {
    let mut kept = Qrels::new();
    let mut report = FilterReport {
        policy,
        ..FilterReport::default()
    };
    for (q, judgements) in qrels.questions() {
        match policy.violation(judgements.iter().map(|&(_, r)| r)) {
            Some(reason) => report.removed.push((q.to_string(), reason)),
            None => {
                for (c, r) in judgements {
                    kept.insert(q, c, *r == 1);
                }
                report.kept += 1;
            }
        }
    }
    (kept, report)
}

/// `(1/R) Σ_{k : rel(k)} precision@k` over a ranked relevance list.
pub fn average_precision(ranked: &[bool]) -> Result<f64, EvalError> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &rel) in ranked.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    if hits == 0 {
        return Err(EvalError::NoRelevant);
    }
    Ok(sum / hits as f64)
}

/// `1 / rank` of the first relevant entry, 0 if there is none.
pub fn reciprocal_rank(ranked: &[bool]) -> f64 {
    ranked
        .iter()
        .position(|&r| r)
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub map: f64,
    pub mrr: f64,
    pub p_at_1: f64,
    pub questions: usize,
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "MAP {:.4}  MRR {:.4}  P@1 {:.4}  ({} questions)",
            self.map, self.mrr, self.p_at_1, self.questions
        )
    }
}

/// Relevance of `question`'s candidates in final rank order: the run's
/// ranking (unjudged candidates count as non-relevant) followed by judged
/// candidates the run omitted, ordered by id.
pub fn ranked_relevance(run: &RankedRun, qrels: &Qrels, question: &str) -> Vec<bool> {
    let judged = qrels.judgements(question).unwrap_or(&[]);
    let ranking = run.ranking(question).unwrap_or(&[]);
    let mut out: Vec<bool> = ranking
        .iter()
        .map(|(c, _)| qrels.relevance(question, c).unwrap_or(false))
        .collect();
    let mut missing: Vec<&(String, u8)> = judged
        .iter()
        .filter(|(c, _)| !ranking.iter().any(|(rc, _)| rc == c))
        .collect();
    missing.sort_by(|a, b| compare_ids(&a.0, &b.0));
    out.extend(missing.into_iter().map(|&(_, r)| r == 1));
    out
}

/// MAP, MRR and P@1 over the questions of `qrels` kept by `policy`.
/// Questions present only in the run are ignored. Under a policy that keeps
/// questions without relevant candidates, those contribute 0 to every metric.
pub fn evaluate(
    run: &RankedRun,
    qrels: &Qrels,
    policy: FilterPolicy,
) -> Result<Metrics, EvalError> {
    let (kept, _) = filter_qrels(qrels, policy);
    if kept.is_empty() {
        return Err(EvalError::NoQuestions);
    }
    let (mut map, mut mrr, mut p1) = (0.0, 0.0, 0.0);
    for (q, _) in kept.questions() {
        let ranked = ranked_relevance(run, &kept, q);
        map += average_precision(&ranked).unwrap_or(0.0);
        mrr += reciprocal_rank(&ranked);
        p1 += f64::from(u8::from(ranked.first() == Some(&true)));
    }
    let n = kept.len() as f64;
    Ok(Metrics {
        map: map / n,
        mrr: mrr / n,
        p_at_1: p1 / n,
        questions: kept.len(),
    })
}

/// `qid Q0 candidate rank score name`, ranks from 1.
pub fn write_trec_run<W: Write>(run: &RankedRun, mut w: W) -> io::Result<()> {
    let name = if run.name.is_empty() {
        "run"
    } else {
        &run.name
    };
    for (q, ranking) in run.questions() {
        for (rank, (c, score)) in ranking.iter().enumerate() {
            writeln!(w, "{q} Q0 {c} {} {score} {name}", rank + 1)?;
        }
    }
    w.flush()
}

fn malformed(line: usize, message: impl Into<String>) -> EvalError {
    EvalError::Malformed {
        line,
        message: message.into(),
    }
}

/// Parses a six-column run file. Ranks are ignored in favour of scores.
pub fn read_trec_run<R: BufRead>(r: R) -> Result<RankedRun, EvalError> {
    let mut run = RankedRun::default();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let [q, _, c, rank, score, name] = fields[..] else {
            return Err(malformed(
                i + 1,
                format!("expected 6 fields, found {}", fields.len()),
            ));
        };
        rank.parse::<usize>()
            .map_err(|_| malformed(i + 1, format!("bad rank {rank:?}")))?;
        let score: f64 = score
            .parse()
            .map_err(|_| malformed(i + 1, format!("bad score {score:?}")))?;
        run.name = name.to_string();
        run.insert(q, c, score)
            .map_err(|e| malformed(i + 1, e.to_string()))?;
    }
    Ok(run)
}

/// `qid 0 candidate relevance`.
pub fn write_qrels<W: Write>(qrels: &Qrels, mut w: W) -> io::Result<()> {
    for (q, judgements) in qrels.questions() {
        for (c, r) in judgements {
            writeln!(w, "{q} 0 {c} {r}")?;
        }
    }
    w.flush()
}

/// Parses a four-column qrels file with binary relevance.
pub fn read_qrels<R: BufRead>(r: R) -> Result<Qrels, EvalError> {
    let mut qrels = Qrels::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let [q, _, c, rel] = fields[..] else {
            return Err(malformed(
                i + 1,
                format!("expected 4 fields, found {}", fields.len()),
            ));
        };
        let relevant = match rel {
            "0" => false,
            "1" => true,
            other => {
                return Err(malformed(
                    i + 1,
                    format!("relevance {other:?} is not 0 or 1"),
                ))
            }
        };
        qrels.insert(q, c, relevant);
    }
    Ok(qrels)
}
