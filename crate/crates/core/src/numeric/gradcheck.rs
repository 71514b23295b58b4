//! Central finite-difference verification of analytic gradients.

use std::fmt;

use thiserror::Error;

/// Named, mutable parameter storage that can be perturbed one scalar at a time.
pub trait ParameterBlocks {
    fn block_count(&self) -> usize;
    fn block_name(&self, index: usize) -> String;
    fn block_values_mut(&mut self, index: usize) -> &mut [f64];
}

impl ParameterBlocks for Vec<(String, Vec<f64>)> {
    fn block_count(&self) -> usize {
        self.len()
    }

    fn block_name(&self, index: usize) -> String {
        self[index].0.clone()
    }

    fn block_values_mut(&mut self, index: usize) -> &mut [f64] {
        &mut self[index].1
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GradCheckError {
    #[error("finite-difference step {0} outside [1e-6, 1e-4]")]
    EpsilonOutOfRange(f64),
    #[error("expected {expected} analytic gradient blocks, got {actual}")]
    BlockCount { expected: usize, actual: usize },
    #[error("block `{block}` has {expected} parameters but its gradient has {actual}")]
    BlockLength {
        block: String,
        expected: usize,
        actual: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockReport {
    pub name: String,
    /// `None` when the block has no analytic gradient (frozen) and was skipped.
    pub max_relative_error: Option<f64>,
    pub worst_index: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub checked: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockReport>,
    pub max_relative_error: f64,
    pub tolerance: f64,
    /// Block in which a perturbed loss came out non-finite.
    pub non_finite_block: Option<String>,
    pub passed: bool,
}

impl GradCheckReport {
    /// Names of blocks whose error reaches the tolerance.
    pub fn failing_blocks(&self) -> Vec<&str> {
        self.blocks
            .iter()
            .filter(|b| b.max_relative_error.is_some_and(|e| e >= self.tolerance))
            .map(|b| b.name.as_str())
            .chain(self.non_finite_block.as_deref())
            .collect()
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.blocks {
            match b.max_relative_error {
                Some(e) => writeln!(
                    f,
                    "{:<20} {:>6} params  max rel err {:.3e}",
                    b.name, b.checked, e
                )?,
                None => writeln!(f, "{:<20} frozen", b.name)?,
            }
        }
        if let Some(block) = &self.non_finite_block {
            writeln!(f, "non-finite loss while perturbing `{block}`")?;
        }
        write!(
            f,
            "global max rel err {:.3e} (tolerance {:.0e}): {}",
            self.max_relative_error,
            self.tolerance,
            if self.passed { "PASS" } else { "FAIL" }
        )
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `analytic[b]` against `(f(p + ε) - f(p - ε)) / 2ε` for every
/// scalar of every block `b`. Blocks whose analytic gradient is `None` are
/// reported as frozen and not perturbed.
///
/// Every perturbed value is restored bit-exactly before moving on.
pub fn gradient_check<P, F>(
    params: &mut P,
    analytic: &[Option<Vec<f64>>],
    mut loss: F,
    epsilon: f64,
    tolerance: f64,
) -> Result<GradCheckReport, GradCheckError>
where
    P: ParameterBlocks,
    F: FnMut(&P) -> f64,
{
    if !(1e-6..=1e-4).contains(&epsilon) {
        return Err(GradCheckError::EpsilonOutOfRange(epsilon));
    }
    if analytic.len() != params.block_count() {
        return Err(GradCheckError::BlockCount {
            expected: params.block_count(),
            actual: analytic.len(),
        });
    }
    let mut blocks = Vec::with_capacity(analytic.len());
    let mut global = 0.0f64;
    let mut non_finite_block = None;
    for (b, grad) in analytic.iter().enumerate() {
        let name = params.block_name(b);
        let Some(grad) = grad else {
            blocks.push(BlockReport {
                name,
                max_relative_error: None,
                worst_index: 0,
                analytic_at_worst: 0.0,
                numeric_at_worst: 0.0,
                checked: 0,
            });
            continue;
        };
        let len = params.block_values_mut(b).len();
        if grad.len() != len {
            return Err(GradCheckError::BlockLength {
                block: name,
                expected: len,
                actual: grad.len(),
            });
        }
        let mut report = BlockReport {
            name,
            max_relative_error: Some(0.0),
            worst_index: 0,
            analytic_at_worst: 0.0,
            numeric_at_worst: 0.0,
            checked: len,
        };
        for (i, &g) in grad.iter().enumerate() {
            let original = params.block_values_mut(b)[i];
            params.block_values_mut(b)[i] = original + epsilon;
            let plus = loss(params);
            params.block_values_mut(b)[i] = original - epsilon;
            let minus = loss(params);
            params.block_values_mut(b)[i] = original;
            if !plus.is_finite() || !minus.is_finite() {
                non_finite_block.get_or_insert_with(|| report.name.clone());
                continue;
            }
            let numeric = (plus - minus) / (2.0 * epsilon);
            let err = relative_error(g, numeric);
            if err > report.max_relative_error.unwrap_or(0.0) {
                report.max_relative_error = Some(err);
                report.worst_index = i;
                report.analytic_at_worst = g;
                report.numeric_at_worst = numeric;
            }
        }
        global = global.max(report.max_relative_error.unwrap_or(0.0));
        blocks.push(report);
    }
    Ok(GradCheckReport {
        passed: non_finite_block.is_none() && global < tolerance,
        blocks,
        max_relative_error: global,
        tolerance,
        non_finite_block,
    })
}
