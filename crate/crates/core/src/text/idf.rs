use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

/// Inverse document frequencies, `ln((1 + N) / (1 + df)) + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdfTable {
    weights: BTreeMap<String, f64>,
    /// Weight of tokens never seen: the largest observed weight, or 1 for an
    /// empty corpus.
    default_weight: f64,
}

impl IdfTable {
    pub fn from_weights(weights: BTreeMap<String, f64>, default_weight: f64) -> Self {
        IdfTable {
            weights,
            default_weight,
        }
    }

    pub fn weight(&self, token: &str) -> f64 {
        self.weights
            .get(token)
            .copied()
            .unwrap_or(self.default_weight)
    }

    pub fn default_weight(&self) -> f64 {
        self.default_weight
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Each item of `documents` is one document (a sentence's tokens).
pub fn build_idf<'a, I, S>(documents: I) -> IdfTable
where
    I: IntoIterator<Item = &'a [S]>,
    S: AsRef<str> + 'a,
{
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    let mut n = 0usize;
    for doc in documents {
        n += 1;
        let distinct: BTreeSet<&str> = doc.iter().map(AsRef::as_ref).collect();
        for t in distinct {
            *df.entry(t.to_string()).or_default() += 1;
        }
    }
    let weights: BTreeMap<String, f64> = df
        .into_iter()
        .map(|(t, d)| (t, ((1 + n) as f64 / (1 + d) as f64).ln() + 1.0))
        .collect();
    let default_weight = weights
        .values()
        .copied()
        .fold(None, |m: Option<f64>, w| Some(m.map_or(w, |m| m.max(w))));
    IdfTable {
        weights,
        default_weight: default_weight.unwrap_or(1.0),
    }
}
