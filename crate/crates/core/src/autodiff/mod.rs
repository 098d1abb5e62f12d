//! Dense `f64` tensors with tape-based reverse-mode differentiation,
//! Glorot initialization and the Adam optimizer.

pub mod gradcheck;
mod graph;
pub mod kernels;
mod params;
mod tensor;

pub use graph::{bce_scalar, Gradients, Graph, Group, Var, BCE_CLAMP};
pub use params::{glorot_bound, glorot_init, Adam, Bound, Moments, ParamStore};
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// `out(s) = Σ_k filter(k) · r(s - d·k)` with zero reads before the start.
pub fn dilated_causal_conv1d(r: &[f64], filter: &[f64], dilation: usize) -> Result<Vec<f64>> {
    if dilation == 0 {
        return Err(Error::Parameter("dilation must be at least 1".into()));
    }
    if filter.is_empty() {
        return Err(Error::Parameter("filter must have at least one tap".into()));
    }
    let mut out = vec![0.0; r.len()];
    if r.is_empty() {
        return Ok(out);
    }
    kernels::causal_conv_forward(
        r,
        filter,
        &mut out,
        kernels::ConvGeometry {
            batch: 1,
            seq_len: r.len(),
            c_in: 1,
            c_out: 1,
            kernel: filter.len(),
            dilation,
        },
    );
    Ok(out)
}

/// Row-wise softmax of a `rows x cols` matrix given in row-major order.
pub fn softmax_rows(data: &[f64], cols: usize) -> Vec<f64> {
    let mut out = data.to_vec();
    kernels::softmax_rows_inplace(&mut out, cols);
    out
}

/// Summed binary cross-entropy over paired probabilities and labels.
pub fn bce_loss(probs: &[f64], labels: &[f64]) -> f64 {
    probs.iter().zip(labels).map(|(&p, &y)| bce_scalar(p, y)).sum()
}

/// `‖mean(treated) − mean(control)‖²`; zero when either set is empty.
pub fn mmd_linear_sq(treated: &[Vec<f64>], control: &[Vec<f64>]) -> Result<f64> {
    if treated.is_empty() || control.is_empty() {
        return Ok(0.0);
    }
    let d = treated[0].len();
    if treated.iter().chain(control).any(|v| v.len() != d) {
        return Err(Error::Parameter("vectors of unequal dimension".into()));
    }
    let mean = |set: &[Vec<f64>]| {
        let mut m = vec![0.0; d];
        for v in set {
            for (a, b) in m.iter_mut().zip(v) {
                *a += b;
            }
        }
        m.iter_mut().for_each(|a| *a /= set.len() as f64);
        m
    };
    let (m1, m0) = (mean(treated), mean(control));
    Ok(m1.iter().zip(&m0).map(|(a, b)| (a - b) * (a - b)).sum())
}
