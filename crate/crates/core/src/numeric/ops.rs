use super::matrix::dot;
use super::{DenseMatrix, ShapeError};

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

/// Passes `upstream` through where `x > 0`; the subgradient at zero is 0.
pub fn relu_grad(x: &[f64], upstream: &[f64]) -> Result<Vec<f64>, ShapeError> {
    if x.len() != upstream.len() {
        return Err(ShapeError::mismatch("relu_grad", x.len(), upstream.len()));
    }
    Ok(x.iter()
        .zip(upstream)
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect())
}

/// Row-wise maximum with the column of the first maximum.
pub fn maxpool_rows(c: &DenseMatrix) -> Result<(Vec<f64>, Vec<usize>), ShapeError> {
    if c.cols() == 0 {
        return Err(ShapeError::Empty { op: "maxpool_rows" });
    }
    let mut values = Vec::with_capacity(c.rows());
    let mut argmax = Vec::with_capacity(c.rows());
    for r in 0..c.rows() {
        let row = c.row(r);
        let mut best = 0;
        for (j, &v) in row.iter().enumerate().skip(1) {
            if v > row[best] {
                best = j;
            }
        }
        values.push(row[best]);
        argmax.push(best);
    }
    Ok((values, argmax))
}

/// Routes each upstream component to its recorded argmax column.
pub fn maxpool_backward(
    argmax: &[usize],
    upstream: &[f64],
    cols: usize,
) -> Result<DenseMatrix, ShapeError> {
    if argmax.len() != upstream.len() {
        return Err(ShapeError::mismatch(
            "maxpool_backward",
            argmax.len(),
            upstream.len(),
        ));
    }
    let mut d = DenseMatrix::zeros(argmax.len(), cols);
    for (r, (&j, &g)) in argmax.iter().zip(upstream).enumerate() {
        if j >= cols {
            return Err(ShapeError::mismatch(
                "maxpool_backward column",
                format!("< {cols}"),
                j,
            ));
        }
        d.set(r, j, g);
    }
    Ok(d)
}

fn check_bilinear(xq: &[f64], m: &DenseMatrix, xa: &[f64]) -> Result<(), ShapeError> {
    if m.rows() != xq.len() || m.cols() != xa.len() {
        return Err(ShapeError::mismatch(
            "bilinear",
            format!("{}x{}", xq.len(), xa.len()),
            format!("{}x{}", m.rows(), m.cols()),
        ));
    }
    Ok(())
}

/// `xqᵀ M xa`.
pub fn bilinear(xq: &[f64], m: &DenseMatrix, xa: &[f64]) -> Result<f64, ShapeError> {
    check_bilinear(xq, m, xa)?;
    Ok(dot(xq, &m.matvec(xa)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BilinearGrads {
    pub xq: Vec<f64>,
    pub m: DenseMatrix,
    pub xa: Vec<f64>,
}

/// Gradients of `upstream * xqᵀ M xa`.
pub fn bilinear_backward(
    xq: &[f64],
    m: &DenseMatrix,
    xa: &[f64],
    upstream: f64,
) -> Result<BilinearGrads, ShapeError> {
    check_bilinear(xq, m, xa)?;
    let scale = |v: Vec<f64>| v.into_iter().map(|x| x * upstream).collect::<Vec<_>>();
    let scaled_q: Vec<f64> = xq.iter().map(|v| v * upstream).collect();
    Ok(BilinearGrads {
        xq: scale(m.matvec(xa)?),
        m: DenseMatrix::outer(&scaled_q, xa),
        xa: m.matvec_transposed(&scaled_q)?,
    })
}

/// `W x + b`.
pub fn affine(w: &DenseMatrix, x: &[f64], b: &[f64]) -> Result<Vec<f64>, ShapeError> {
    if b.len() != w.rows() {
        return Err(ShapeError::mismatch("affine bias", w.rows(), b.len()));
    }
    let mut y = w.matvec(x)?;
    for (yi, bi) in y.iter_mut().zip(b) {
        *yi += bi;
    }
    Ok(y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffineGrads {
    pub w: DenseMatrix,
    pub x: Vec<f64>,
    pub b: Vec<f64>,
}

pub fn affine_backward(
    w: &DenseMatrix,
    x: &[f64],
    upstream: &[f64],
) -> Result<AffineGrads, ShapeError> {
    if x.len() != w.cols() || upstream.len() != w.rows() {
        return Err(ShapeError::mismatch(
            "affine_backward",
            format!("x: {}, upstream: {}", w.cols(), w.rows()),
            format!("x: {}, upstream: {}", x.len(), upstream.len()),
        ));
    }
    Ok(AffineGrads {
        w: DenseMatrix::outer(upstream, x),
        x: w.matvec_transposed(upstream)?,
        b: upstream.to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxNll {
    pub probs: Vec<f64>,
    pub loss: f64,
    pub d_logits: Vec<f64>,
}

/// Max-shifted softmax, `-ln p[label]` and its gradient `p - onehot(label)`.
///
/// # Panics
///
/// If `label` is out of range for `logits`.
pub fn softmax_nll(logits: &[f64], label: usize) -> SoftmaxNll {
    assert!(label < logits.len(), "label {label} out of range");
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = logits.iter().map(|&z| z - max).collect();
    let exps: Vec<f64> = shifted.iter().map(|z| z.exp()).collect();
    let total: f64 = exps.iter().sum();
    let probs: Vec<f64> = exps.iter().map(|e| e / total).collect();
    // log-sum-exp form keeps the loss finite when p[label] underflows
    let loss = total.ln() - shifted[label];
    let mut d_logits = probs.clone();
    d_logits[label] -= 1.0;
    SoftmaxNll {
        probs,
        loss,
        d_logits,
    }
}
