use rand::RngCore;

use crate::autodiff::{glorot_init, Bound, Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

/// ITE-driven feature gating: `x̃ = FFN(x) ⊙ σ(f_τ(τ̂)) + x`, with one gate
/// vector per sample shared by all steps of its window.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReweightModule {
    event_types: usize,
    window: usize,
}

impl ReweightModule {
    pub fn new(event_types: usize, window: usize) -> Self {
        Self { event_types, window }
    }

    /// The output layer of the FFN starts at zero, so the module begins as the
    /// identity on `x` and only departs from it as training finds use for it.
    pub fn init(&self, store: &mut ParamStore, rng: &mut dyn RngCore) {
        let e = self.event_types;
        store.insert("reweight.tau.w", glorot_init(&[e, e], rng));
        store.insert("reweight.tau.b", Tensor::zeros([e]));
        store.insert("reweight.ffn0.w", glorot_init(&[e, e], rng));
        store.insert("reweight.ffn0.b", Tensor::zeros([e]));
        store.insert("reweight.ffn1.w", Tensor::zeros([e, e]));
        store.insert("reweight.ffn1.b", Tensor::zeros([e]));
    }

    /// `ρ = σ(τ̂ W_τ + b_τ)` for an `n × E` effect matrix.
    pub fn causal_gates(&self, g: &mut Graph, p: &Bound, tau: Var) -> Result<Var> {
        if g.value(tau).cols() != self.event_types {
            return Err(Error::dim("causal_gates", g.value(tau).shape(), &[self.event_types]));
        }
        let y = g.matmul(tau, p.var("reweight.tau.w")?)?;
        let y = g.add_row_bias(y, p.var("reweight.tau.b")?)?;
        Ok(g.sigmoid(y))
    }

    /// Applies per-sample gates `rho` (`n × E`) to covariates `x`
    /// (`(n·window) × E`).
    pub fn reweight_features(&self, g: &mut Graph, p: &Bound, x: Var, rho: Var) -> Result<Var> {
        let (xr, rr) = (g.value(x).rows(), g.value(rho).rows());
        if xr != rr * self.window {
            return Err(Error::dim(
                "reweight_features",
                g.value(x).shape(),
                g.value(rho).shape(),
            ));
        }
        let h = g.matmul(x, p.var("reweight.ffn0.w")?)?;
        let h = g.add_row_bias(h, p.var("reweight.ffn0.b")?)?;
        let h = g.relu(h);
        let f = g.matmul(h, p.var("reweight.ffn1.w")?)?;
        let f = g.add_row_bias(f, p.var("reweight.ffn1.b")?)?;
        let gates = g.repeat_rows(rho, self.window)?;
        let gated = g.hadamard(f, gates)?;
        g.add(gated, x)
    }
}
