use serde::{Deserialize, Serialize};

use super::{DenseMatrix, ShapeError};

/// Output-length convention for the 1-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvMode {
    /// Implicit zero padding of `m - 1` columns on both sides: `L + m - 1` outputs.
    #[default]
    Wide,
    /// Only fully overlapping windows: `L - m + 1` outputs.
    Narrow,
}

impl ConvMode {
    pub fn output_len(self, len: usize, width: usize) -> Option<usize> {
        match self {
            ConvMode::Wide => Some(len + width - 1),
            ConvMode::Narrow => (len >= width).then(|| len - width + 1),
        }
    }

    fn offset(self, width: usize) -> usize {
        match self {
            ConvMode::Wide => width - 1,
            ConvMode::Narrow => 0,
        }
    }
}

impl std::str::FromStr for ConvMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "wide" => Ok(ConvMode::Wide),
            "narrow" => Ok(ConvMode::Narrow),
            other => Err(format!("unknown convolution mode `{other}`")),
        }
    }
}

/// `n` filters of shape `depth x width` plus one bias per filter.
///
/// Weights are stored filter-major, each filter a row-major `depth x width`
/// matrix: element `(i, k, j)` lives at `(i * depth + k) * width + j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterBank {
    n: usize,
    depth: usize,
    width: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl FilterBank {
    pub fn zeros(n: usize, depth: usize, width: usize) -> Result<Self, ShapeError> {
        Self::new(n, depth, width, vec![0.0; n * depth * width], vec![0.0; n])
    }

    pub fn new(
        n: usize,
        depth: usize,
        width: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self, ShapeError> {
        if n == 0 || depth == 0 || width == 0 {
            return Err(ShapeError::Empty {
                op: "FilterBank::new",
            });
        }
        if weights.len() != n * depth * width {
            return Err(ShapeError::mismatch(
                "FilterBank::new",
                n * depth * width,
                weights.len(),
            ));
        }
        if bias.len() != n {
            return Err(ShapeError::mismatch("FilterBank::new bias", n, bias.len()));
        }
        Ok(FilterBank {
            n,
            depth,
            width,
            weights,
            bias,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn weight(&self, i: usize, k: usize, j: usize) -> f64 {
        self.weights[(i * self.depth + k) * self.width + j]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }
}

/// Gradients of a convolution with respect to its input and filter bank.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub input: DenseMatrix,
    /// Same layout as [`FilterBank::weights`].
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Range of output positions `p` for which `p + j - offset` hits a real column.
#[inline]
fn valid_outputs(j: usize, offset: usize, len: usize, out_len: usize) -> (usize, usize) {
    let lo = offset.saturating_sub(j);
    let hi = (len + offset).saturating_sub(j).min(out_len);
    (lo, hi.max(lo))
}

fn check_input(
    op: &'static str,
    s: &DenseMatrix,
    fb: &FilterBank,
    mode: ConvMode,
) -> Result<usize, ShapeError> {
    if s.rows() != fb.depth {
        return Err(ShapeError::mismatch(
            op,
            format!("input depth {}", fb.depth),
            s.rows(),
        ));
    }
    if s.cols() == 0 {
        return Err(ShapeError::Empty { op });
    }
    mode.output_len(s.cols(), fb.width)
        .ok_or(ShapeError::TooShort {
            op,
            len: s.cols(),
            width: fb.width,
        })
}

/// Convolves every filter of `fb` along the columns of `s` and adds the bias.
///
/// Output entry `(i, p)` is `bias[i] + Σ_{k,j} F_i[k, j] · S[k, p + j - off]`
/// where `off = m - 1` in wide mode (out-of-range columns read as zero) and
/// `0` in narrow mode.
pub fn conv1d_forward(
    s: &DenseMatrix,
    fb: &FilterBank,
    mode: ConvMode,
) -> Result<DenseMatrix, ShapeError> {
    let out_len = check_input("conv1d_forward", s, fb, mode)?;
    let len = s.cols();
    let offset = mode.offset(fb.width);
    let mut out = DenseMatrix::zeros(fb.n, out_len);
    for i in 0..fb.n {
        let row = out.row_mut(i);
        row.fill(fb.bias[i]);
        for k in 0..fb.depth {
            let input = s.row(k);
            for j in 0..fb.width {
                let w = fb.weight(i, k, j);
                if w == 0.0 {
                    continue;
                }
                let (lo, hi) = valid_outputs(j, offset, len, out_len);
                let src = &input[lo + j - offset..hi + j - offset];
                for (o, &x) in row[lo..hi].iter_mut().zip(src) {
                    *o += w * x;
                }
            }
        }
    }
    Ok(out)
}

/// Exact gradients of [`conv1d_forward`] given the upstream gradient `d_out`.
pub fn conv1d_backward(
    s: &DenseMatrix,
    fb: &FilterBank,
    mode: ConvMode,
    d_out: &DenseMatrix,
) -> Result<ConvGrads, ShapeError> {
    let out_len = check_input("conv1d_backward", s, fb, mode)?;
    if d_out.shape() != (fb.n, out_len) {
        return Err(ShapeError::mismatch(
            "conv1d_backward upstream",
            format!("{}x{}", fb.n, out_len),
            format!("{}x{}", d_out.rows(), d_out.cols()),
        ));
    }
    let len = s.cols();
    let offset = mode.offset(fb.width);
    let mut d_input = DenseMatrix::zeros(fb.depth, len);
    let mut d_weights = vec![0.0; fb.weights.len()];
    let mut d_bias = vec![0.0; fb.n];
    for (i, db) in d_bias.iter_mut().enumerate() {
        let up = d_out.row(i);
        *db = up.iter().sum();
        for k in 0..fb.depth {
            let input = s.row(k);
            for j in 0..fb.width {
                let (lo, hi) = valid_outputs(j, offset, len, out_len);
                let cols = lo + j - offset..hi + j - offset;
                let idx = (i * fb.depth + k) * fb.width + j;
                d_weights[idx] = up[lo..hi]
                    .iter()
                    .zip(&input[cols.clone()])
                    .map(|(g, x)| g * x)
                    .sum();
                let w = fb.weights[idx];
                if w != 0.0 {
                    for (d, &g) in d_input.row_mut(k)[cols].iter_mut().zip(&up[lo..hi]) {
                        *d += w * g;
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        input: d_input,
        weights: d_weights,
        bias: d_bias,
    })
}
