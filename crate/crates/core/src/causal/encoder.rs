//! Spatio-temporal encoder shared by the causal model and the baseline
//! event predictor: a gated dilated TCN per location followed by graph
//! convolutions over a learned adjacency.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::autodiff::{glorot_init, Bound, Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

/// Elementwise transform applied to raw counts before the encoder.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputTransform {
    Identity,
    #[default]
    Log1p,
}

impl InputTransform {
    pub fn apply(self, x: &mut Tensor) {
        if self == InputTransform::Log1p {
            x.data_mut().iter_mut().for_each(|v| *v = v.ln_1p());
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub locations: usize,
    pub event_types: usize,
    pub window: usize,
    pub hidden: usize,
    pub embed_dim: usize,
    pub kernel: usize,
    pub dilations: Vec<usize>,
    pub gcn_layers: usize,
    pub input_transform: InputTransform,
}

impl EncoderConfig {
    /// Number of past steps the TCN can see from its last position.
    pub fn receptive_field(&self) -> usize {
        1 + (self.kernel - 1) * self.dilations.iter().sum::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("locations", self.locations),
            ("event_types", self.event_types),
            ("window", self.window),
            ("hidden", self.hidden),
            ("embed_dim", self.embed_dim),
            ("kernel", self.kernel),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.dilations.is_empty() || self.dilations.contains(&0) {
            return Err(Error::Config(
                "dilations must be a non-empty list of positive values".into(),
            ));
        }
        // The receptive field counts the current step, so a window of
        // (K-1)·Σd already covers every tap that reads real data.
        let reach = (self.kernel - 1) * self.dilations.iter().sum::<usize>();
        if self.window < reach {
            return Err(Error::Config(format!(
                "window {} shorter than the TCN reach {reach}",
                self.window
            )));
        }
        Ok(())
    }
}

/// Encoder with its parameters stored under `prefix`.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    prefix: String,
}

impl Encoder {
    pub fn new(config: EncoderConfig, prefix: impl Into<String>) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            prefix: prefix.into(),
        })
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{part}", self.prefix)
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        let c = &self.config;
        let (e, h, k) = (c.event_types, c.hidden, c.kernel);
        store.insert(self.name("input.w"), glorot_init(&[e, h], rng));
        store.insert(self.name("input.b"), Tensor::zeros([h]));
        for l in 0..c.dilations.len() {
            for gate in ["filter", "gate"] {
                store.insert(self.name(&format!("tcn{l}.{gate}.w")), glorot_init(&[k * h, h], rng));
                store.insert(self.name(&format!("tcn{l}.{gate}.b")), Tensor::zeros([h]));
            }
            store.insert(self.name(&format!("tcn{l}.residual.w")), glorot_init(&[h, h], rng));
            store.insert(self.name(&format!("tcn{l}.residual.b")), Tensor::zeros([h]));
            store.insert(self.name(&format!("tcn{l}.skip.w")), glorot_init(&[h, h], rng));
            store.insert(self.name(&format!("tcn{l}.skip.b")), Tensor::zeros([h]));
        }
        store.insert(self.name("adj.source"), glorot_init(&[c.locations, c.embed_dim], rng));
        store.insert(self.name("adj.target"), glorot_init(&[c.embed_dim, c.locations], rng));
        for l in 0..c.gcn_layers {
            store.insert(self.name(&format!("gcn{l}.w")), glorot_init(&[h, h], rng));
        }
    }

    /// Learned row-stochastic adjacency `softmax(relu(E₁E₂))`.
    pub fn adaptive_adjacency(&self, g: &mut Graph, p: &Bound) -> Result<Var> {
        let product = g.matmul(p.var(&self.name("adj.source"))?, p.var(&self.name("adj.target"))?)?;
        let rectified = g.relu(product);
        Ok(g.softmax_rows(rectified))
    }

    /// Gated TCN over `x` (`(n·window) × event_types`, time-major per
    /// sample). Returns one `hidden`-wide row per sample.
    pub fn encode_temporal(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let c = &self.config;
        let rows = g.value(x).rows();
        if g.value(x).cols() != c.event_types || !rows.is_multiple_of(c.window) {
            return Err(Error::dim(
                "encode_temporal",
                g.value(x).shape(),
                &[c.window, c.event_types],
            ));
        }
        let n = rows / c.window;
        let last: Vec<usize> = (0..n).map(|s| s * c.window + c.window - 1).collect();
        let proj = g.matmul(x, p.var(&self.name("input.w"))?)?;
        let mut r = g.add_row_bias(proj, p.var(&self.name("input.b"))?)?;
        let mut skip: Option<Var> = None;
        for (l, &d) in c.dilations.iter().enumerate() {
            let conv = |g: &mut Graph, gate: &str| -> Result<Var> {
                let w = p.var(&self.name(&format!("tcn{l}.{gate}.w")))?;
                let b = p.var(&self.name(&format!("tcn{l}.{gate}.b")))?;
                let out = g.causal_conv(r, w, c.window, d)?;
                g.add_row_bias(out, b)
            };
            let filter = conv(g, "filter")?;
            let gate = conv(g, "gate")?;
            let filter = g.tanh(filter);
            let gate = g.sigmoid(gate);
            let h = g.hadamard(filter, gate)?;

            let tail = g.gather_rows(h, last.clone())?;
            let s = self.affine(g, p, &format!("tcn{l}.skip"), tail)?;
            skip = Some(match skip {
                Some(acc) => g.add(acc, s)?,
                None => s,
            });

            let res = self.affine(g, p, &format!("tcn{l}.residual"), h)?;
            r = g.add(res, r)?;
        }
        Ok(g.relu(skip.expect("at least one dilation")))
    }

    fn affine(&self, g: &mut Graph, p: &Bound, layer: &str, x: Var) -> Result<Var> {
        let y = g.matmul(x, p.var(&self.name(&format!("{layer}.w")))?)?;
        g.add_row_bias(y, p.var(&self.name(&format!("{layer}.b")))?)
    }

    /// Graph convolutions `relu(A′ H W)` applied to each frame of
    /// `locations` consecutive rows.
    pub fn encode_spatial(&self, g: &mut Graph, p: &Bound, h: Var, adjacency: Var) -> Result<Var> {
        let mut h = h;
        for l in 0..self.config.gcn_layers {
            let mixed = g.graph_propagate(adjacency, h)?;
            let y = g.matmul(mixed, p.var(&self.name(&format!("gcn{l}.w")))?)?;
            h = g.relu(y);
        }
        Ok(h)
    }

    /// Full encoder: temporal then spatial, with optional dropout between
    /// the two stages.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var, dropout: Option<(f64, &mut dyn RngCore)>) -> Result<Var> {
        let mut h = self.encode_temporal(g, p, x)?;
        if let Some((rate, rng)) = dropout {
            h = g.dropout(h, rate, rng)?;
        }
        let adjacency = self.adaptive_adjacency(g, p)?;
        self.encode_spatial(g, p, h, adjacency)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn config() -> EncoderConfig {
        EncoderConfig {
            locations: 3,
            event_types: 2,
            window: 7,
            hidden: 4,
            embed_dim: 3,
            kernel: 2,
            dilations: vec![1, 2, 4],
            gcn_layers: 2,
            input_transform: InputTransform::Identity,
        }
    }

    #[test]
    fn window_must_cover_tcn_reach() {
        let mut c = config();
        assert!(c.validate().is_ok());
        c.window = 6;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn adjacency_rows_sum_to_one_and_output_shape() {
        let enc = Encoder::new(config(), "enc").unwrap();
        let mut store = ParamStore::new();
        enc.init(&mut store, &mut ChaCha8Rng::seed_from_u64(0));
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let a = enc.adaptive_adjacency(&mut g, &p).unwrap();
        for r in 0..3 {
            let s: f64 = g.value(a).row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let x = g.constant(Tensor::full([2 * 3 * 7, 2], 1.0));
        let out = enc.forward(&mut g, &p, x, None).unwrap();
        assert_eq!(g.value(out).shape(), &[6, 4]);
    }

    #[test]
    fn temporal_encoding_is_per_sample() {
        // Perturbing a sample's window only changes that sample's encoding.
        let enc = Encoder::new(config(), "enc").unwrap();
        let mut store = ParamStore::new();
        enc.init(&mut store, &mut ChaCha8Rng::seed_from_u64(1));
        let run = |x: Tensor| {
            let mut g = Graph::new();
            let p = store.bind_frozen(&mut g);
            let x = g.constant(x);
            let h = enc.encode_temporal(&mut g, &p, x).unwrap();
            g.value(h).clone()
        };
        let base = Tensor::new([14, 2], (0..28).map(|v| v as f64 * 0.1).collect()).unwrap();
        let mut changed = base.clone();
        changed.data_mut()[0] += 1.0;
        let (a, b) = (run(base), run(changed));
        assert_ne!(a.row(0), b.row(0));
        assert_eq!(a.row(1), b.row(1));
    }
}
