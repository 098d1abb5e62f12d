//! Hidden-confounder encoder with per-treatment potential-outcome heads.

pub mod encoder;
mod train;

pub use encoder::{Encoder, EncoderConfig, InputTransform};
pub use train::{train_causal, CausalObserver, EpochRecord, TrainedCausal};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{glorot_init, Bound, Graph, Group, ParamStore, Tensor, Var};
use crate::data::{frame_inputs, frame_rows, frames, Frame, SampleWindow};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CausalConfig {
    /// Width `d_s` of every hidden layer.
    pub hidden: usize,
    /// Node-embedding width of the learned adjacency.
    pub embed_dim: usize,
    pub kernel: usize,
    pub dilations: Vec<usize>,
    pub gcn_layers: usize,
    pub head_layers: usize,
    pub input_transform: InputTransform,
    /// Imbalance penalty on the representation discrepancy.
    pub imbalance: f64,
    pub weight_decay: f64,
    pub learning_rate: f64,
    /// Time steps per batch; each carries every location.
    pub batch_frames: usize,
    pub dropout: f64,
    pub max_epochs: usize,
    pub patience: usize,
    /// Balance each treatment's representations separately instead of
    /// pooling every (sample, treatment) pair.
    pub per_treatment_balance: bool,
    pub seed: u64,
}

impl Default for CausalConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            embed_dim: 10,
            kernel: 2,
            dilations: vec![1, 2, 4],
            gcn_layers: 2,
            head_layers: 2,
            input_transform: InputTransform::Log1p,
            imbalance: 1e-2,
            weight_decay: 1e-5,
            learning_rate: 1e-3,
            batch_frames: 64,
            dropout: 0.5,
            max_epochs: 100,
            patience: 10,
            per_treatment_balance: false,
            seed: 0,
        }
    }
}

impl CausalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.head_layers == 0 || self.batch_frames == 0 || self.max_epochs == 0 {
            return Err(Error::Config(
                "head_layers, batch_frames and max_epochs must be positive".into(),
            ));
        }
        for (name, v) in [
            ("imbalance", self.imbalance),
            ("weight_decay", self.weight_decay),
            ("learning_rate", self.learning_rate),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and ≥ 0, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Data-dependent sizes of a model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub locations: usize,
    pub event_types: usize,
    pub window: usize,
}

impl Dims {
    pub fn of(samples: &[SampleWindow], locations: usize) -> Result<Self> {
        let first = samples.first().ok_or_else(|| Error::Config("no samples".into()))?;
        Ok(Self {
            locations,
            event_types: first.event_types(),
            window: first.window,
        })
    }
}

/// Potential-outcome probabilities of one sample under each treatment.
#[derive(Clone, Debug, PartialEq)]
pub struct PotentialOutcomes {
    pub treated: Vec<f64>,
    pub control: Vec<f64>,
}

impl PotentialOutcomes {
    pub fn ite(&self, treatment: usize) -> f64 {
        self.treated[treatment] - self.control[treatment]
    }

    pub fn ites(&self) -> Vec<f64> {
        (0..self.treated.len()).map(|j| self.ite(j)).collect()
    }

    /// Smallest and largest of all `2E` potential outcomes.
    pub fn range(&self) -> (f64, f64) {
        self.treated
            .iter()
            .chain(&self.control)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// Graph nodes produced by one forward pass over `n` rows.
#[derive(Clone, Debug)]
pub struct CausalForward {
    /// Confounder representation per treatment, each `n × 2d_s`.
    pub reprs: Vec<Var>,
    /// `n × 1` probabilities under treatment, per treatment.
    pub treated: Vec<Var>,
    pub control: Vec<Var>,
}

/// Observed quantities aligned with the rows of a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchTargets {
    pub outcomes: Vec<f64>,
    pub treatments: Vec<Vec<bool>>,
    /// Rows that contribute to the loss.
    pub mask: Vec<bool>,
}

impl BatchTargets {
    pub fn gather(samples: &[SampleWindow], rows: &[usize], include: impl Fn(usize) -> bool) -> Self {
        Self {
            outcomes: rows.iter().map(|&k| f64::from(u8::from(samples[k].outcome))).collect(),
            treatments: rows.iter().map(|&k| samples[k].treatments.clone()).collect(),
            mask: rows.iter().map(|&k| include(k)).collect(),
        }
    }

    pub fn active(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    fn groups(&self, j: usize) -> Vec<Group> {
        self.mask
            .iter()
            .zip(&self.treatments)
            .map(|(&m, c)| match (m, c[j]) {
                (false, _) => Group::Excluded,
                (true, true) => Group::Treated,
                (true, false) => Group::Control,
            })
            .collect()
    }
}

/// Whether a forward pass samples dropout masks.
pub enum Mode<'a> {
    Train(&'a mut dyn RngCore),
    Eval,
}

impl Mode<'_> {
    /// Dropout rate and mask source in training mode, `None` otherwise.
    pub fn dropout(&mut self, rate: f64) -> Option<(f64, &mut dyn RngCore)> {
        match self {
            Mode::Train(rng) if rate > 0.0 => Some((rate, &mut **rng)),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CausalModel {
    pub config: CausalConfig,
    pub dims: Dims,
    encoder: Encoder,
}

const TREATMENT_EMBEDDING: &str = "treatment_embedding";

fn head_name(j: usize, arm: &str, layer: usize, part: &str) -> String {
    format!("head{j}.{arm}.l{layer}.{part}")
}

impl CausalModel {
    pub fn new(config: CausalConfig, dims: Dims) -> Result<Self> {
        config.validate()?;
        let encoder = Encoder::new(Self::encoder_config(&config, dims), "encoder")?;
        Ok(Self { config, dims, encoder })
    }

    pub fn encoder_config(config: &CausalConfig, dims: Dims) -> EncoderConfig {
        EncoderConfig {
            locations: dims.locations,
            event_types: dims.event_types,
            window: dims.window,
            hidden: config.hidden,
            embed_dim: config.embed_dim,
            kernel: config.kernel,
            dilations: config.dilations.clone(),
            gcn_layers: config.gcn_layers,
            input_transform: config.input_transform,
        }
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    /// Glorot-initialized parameters (biases zero), seeded by `config.seed`.
    pub fn init_params(&self) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let mut store = ParamStore::new();
        self.init_into(&mut store, &mut rng);
        store
    }

    fn init_into<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        let h = self.config.hidden;
        self.encoder.init(store, rng);
        store.insert(TREATMENT_EMBEDDING, glorot_init(&[self.dims.event_types, h], rng));
        for j in 0..self.dims.event_types {
            for arm in ["treated", "control"] {
                let mut fan_in = 2 * h;
                for l in 0..self.config.head_layers {
                    store.insert(head_name(j, arm, l, "w"), glorot_init(&[fan_in, h], rng));
                    store.insert(head_name(j, arm, l, "b"), Tensor::zeros([h]));
                    fan_in = h;
                }
                let out = self.config.head_layers;
                store.insert(head_name(j, arm, out, "w"), glorot_init(&[h, 1], rng));
                store.insert(head_name(j, arm, out, "b"), Tensor::zeros([1]));
            }
        }
    }

    /// Names and shapes of every parameter, in store order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.init_params()
            .iter()
            .map(|(k, v)| (k.to_string(), v.shape().to_vec()))
            .collect()
    }

    /// Builds the encoder input for whole frames, with the configured count
    /// transform applied.
    pub fn inputs(&self, samples: &[SampleWindow], frames: &[&Frame]) -> Tensor {
        let mut x = frame_inputs(samples, frames);
        self.config.input_transform.apply(&mut x);
        x
    }

    /// `g ⊕ v_j` for every row of `g`.
    pub fn confounder_repr(&self, graph: &mut Graph, p: &Bound, g: Var, j: usize) -> Result<Var> {
        if j >= self.dims.event_types {
            return Err(Error::Bounds(format!("treatment {j} of {}", self.dims.event_types)));
        }
        let v = graph.gather_rows(p.var(TREATMENT_EMBEDDING)?, vec![j])?;
        let rows = graph.value(g).rows();
        let v = graph.broadcast_rows(v, rows)?;
        graph.concat_cols(g, v)
    }

    fn head(&self, graph: &mut Graph, p: &Bound, z: Var, j: usize, arm: &str, mode: &mut Mode) -> Result<Var> {
        let mut h = z;
        for l in 0..=self.config.head_layers {
            let y = graph.matmul(h, p.var(&head_name(j, arm, l, "w"))?)?;
            let y = graph.add_row_bias(y, p.var(&head_name(j, arm, l, "b"))?)?;
            if l == self.config.head_layers {
                return Ok(graph.sigmoid(y));
            }
            h = graph.relu(y);
            if let Some((rate, rng)) = mode.dropout(self.config.dropout) {
                h = graph.dropout(h, rate, rng)?;
            }
        }
        unreachable!("loop returns on the output layer")
    }

    /// `(Φ¹_j(z), Φ⁰_j(z))`, each `n × 1`.
    pub fn predict_potential_outcomes(
        &self,
        graph: &mut Graph,
        p: &Bound,
        z: Var,
        j: usize,
        mode: &mut Mode,
    ) -> Result<(Var, Var)> {
        if j >= self.dims.event_types {
            return Err(Error::Bounds(format!("treatment {j} of {}", self.dims.event_types)));
        }
        let treated = self.head(graph, p, z, j, "treated", mode)?;
        let control = self.head(graph, p, z, j, "control", mode)?;
        Ok((treated, control))
    }

    /// Forward pass over `x`, which holds whole frames of samples.
    pub fn forward(&self, graph: &mut Graph, p: &Bound, x: Tensor, mode: &mut Mode) -> Result<CausalForward> {
        let x = graph.constant(x);
        let rate = self.config.dropout;
        let g = self.encoder.forward(graph, p, x, mode.dropout(rate))?;
        let mut out = CausalForward {
            reprs: Vec::new(),
            treated: Vec::new(),
            control: Vec::new(),
        };
        for j in 0..self.dims.event_types {
            let z = self.confounder_repr(graph, p, g, j)?;
            let (y1, y0) = self.predict_potential_outcomes(graph, p, z, j, mode)?;
            out.reprs.push(z);
            out.treated.push(y1);
            out.control.push(y0);
        }
        Ok(out)
    }

    /// Summed cross-entropy of each treatment's factual head over the masked
    /// rows, plus `η‖Θ‖²` over the parameters bound in `p`.
    pub fn factual_loss(&self, graph: &mut Graph, p: &Bound, fwd: &CausalForward, t: &BatchTargets) -> Result<Var> {
        let mut total: Option<Var> = None;
        for j in 0..self.dims.event_types {
            let treated_w: Vec<f64> = t
                .mask
                .iter()
                .zip(&t.treatments)
                .map(|(&m, c)| f64::from(u8::from(m && c[j])))
                .collect();
            let control_w = t
                .mask
                .iter()
                .zip(&t.treatments)
                .map(|(&m, c)| f64::from(u8::from(m && !c[j])))
                .collect();
            let l1 = graph.bce(fwd.treated[j], t.outcomes.clone(), treated_w)?;
            let l0 = graph.bce(fwd.control[j], t.outcomes.clone(), control_w)?;
            let l = graph.add(l1, l0)?;
            total = Some(match total {
                Some(acc) => graph.add(acc, l)?,
                None => l,
            });
        }
        let mut total = total.expect("at least one event type");
        if self.config.weight_decay > 0.0 {
            let vars: Vec<Var> = p.vars().map(|(_, v)| v).collect();
            for v in vars {
                let sq = graph.sum_squares(v);
                let sq = graph.scale(sq, self.config.weight_decay);
                total = graph.add(total, sq)?;
            }
        }
        Ok(total)
    }

    /// `α · MMD²` between treated and control representations of the masked
    /// rows, pooled across treatments unless per-treatment balancing is set.
    pub fn ipm_loss(&self, graph: &mut Graph, fwd: &CausalForward, t: &BatchTargets) -> Result<Var> {
        let alpha = self.config.imbalance;
        if self.config.per_treatment_balance {
            let mut total: Option<Var> = None;
            for (j, &z) in fwd.reprs.iter().enumerate() {
                let m = graph.mmd_linear_sq(z, t.groups(j))?;
                total = Some(match total {
                    Some(acc) => graph.add(acc, m)?,
                    None => m,
                });
            }
            Ok(graph.scale(total.expect("at least one event type"), alpha))
        } else {
            let pooled = graph.vstack(&fwd.reprs)?;
            let groups = (0..fwd.reprs.len()).flat_map(|j| t.groups(j)).collect();
            let m = graph.mmd_linear_sq(pooled, groups)?;
            Ok(graph.scale(m, alpha))
        }
    }

    /// Factual plus balancing loss.
    pub fn loss(&self, graph: &mut Graph, p: &Bound, fwd: &CausalForward, t: &BatchTargets) -> Result<Var> {
        let fact = self.factual_loss(graph, p, fwd, t)?;
        let disc = self.ipm_loss(graph, fwd, t)?;
        graph.add(fact, disc)
    }

    /// Eval-mode potential outcomes for every sample. Samples must form
    /// complete frames.
    pub fn predict(&self, params: &ParamStore, samples: &[SampleWindow]) -> Result<Vec<PotentialOutcomes>> {
        let all = frames(samples, self.dims.locations)?;
        let mut out = vec![None; samples.len()];
        let refs: Vec<&Frame> = all.iter().collect();
        for chunk in refs.chunks(self.config.batch_frames) {
            let mut graph = Graph::new();
            let p = params.bind_frozen(&mut graph);
            let fwd = self.forward(&mut graph, &p, self.inputs(samples, chunk), &mut Mode::Eval)?;
            for (r, k) in frame_rows(chunk).into_iter().enumerate() {
                let pick = |vars: &[Var]| vars.iter().map(|&v| graph.value(v).data()[r]).collect();
                out[k] = Some(PotentialOutcomes {
                    treated: pick(&fwd.treated),
                    control: pick(&fwd.control),
                });
            }
        }
        Ok(out
            .into_iter()
            .map(|o| o.expect("every sample lies in a frame"))
            .collect())
    }
}

#[cfg(test)]
mod tests;
