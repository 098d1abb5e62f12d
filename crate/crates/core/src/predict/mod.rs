//! Event forecasting guided by a frozen causal model: ITE-gated feature
//! reweighting, the potential-outcome range constraint and a pluggable
//! predictor.

mod reweight;
mod train;

pub use reweight::ReweightModule;
pub use train::{train_predictor, PredictEpoch, TrainedPredictor};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{glorot_init, Bound, Graph, ParamStore, Tensor, Var};
use crate::causal::{Dims, Encoder, EncoderConfig, InputTransform, Mode, PotentialOutcomes};
use crate::data::{frame_inputs, frame_rows, frames, Frame, SampleWindow};
use crate::error::{Error, Result};

/// `τ̂_j = ŷ_j(1) − ŷ_j(0)` for every treatment.
pub fn estimate_ite(pairs: &PotentialOutcomes) -> Result<Vec<f64>> {
    if pairs.treated.len() != pairs.control.len() {
        return Err(Error::Consistency(format!(
            "{} treated outcomes but {} control outcomes",
            pairs.treated.len(),
            pairs.control.len()
        )));
    }
    Ok(pairs.ites())
}

/// `(min, max)` over all potential outcomes of a sample.
pub fn bounds(pairs: &PotentialOutcomes) -> (f64, f64) {
    pairs.range()
}

/// `Σ relu(l − ŷ) + relu(ŷ − u)`.
pub fn constraint_loss(predictions: &[f64], lower: &[f64], upper: &[f64]) -> f64 {
    predictions
        .iter()
        .zip(lower.iter().zip(upper))
        .map(|(&y, (&l, &u))| (l - y).max(0.0) + (y - u).max(0.0))
        .sum()
}

/// What the frozen causal model contributes to one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Guidance {
    pub ite: Vec<f64>,
    pub lower: f64,
    pub upper: f64,
}

impl Guidance {
    pub fn from_outcomes(pairs: &PotentialOutcomes) -> Result<Self> {
        let (lower, upper) = bounds(pairs);
        Ok(Self {
            ite: estimate_ite(pairs)?,
            lower,
            upper,
        })
    }

    pub fn for_all(outcomes: &[PotentialOutcomes]) -> Result<Vec<Self>> {
        outcomes.iter().map(Self::from_outcomes).collect()
    }
}

/// A forecaster mapping (possibly reweighted) covariates of whole frames to
/// per-sample event probabilities.
pub trait EventPredictor: Send + Sync {
    fn init(&self, store: &mut ParamStore, rng: &mut dyn RngCore);

    /// `x` is `(n·window) × event_types`, time-major per sample, with `n` a
    /// multiple of the location count. Returns `n × 1` probabilities.
    fn forward(&self, g: &mut Graph, p: &Bound, x: Var, mode: &mut Mode) -> Result<Var>;

    /// Summed, weighted cross-entropy unless the predictor defines its own.
    fn loss(&self, g: &mut Graph, probabilities: Var, labels: Vec<f64>, weights: Vec<f64>) -> Result<Var> {
        g.bce(probabilities, labels, weights)
    }
}

/// Gated TCN and graph layers (the causal encoder's blocks) with a
/// linear-sigmoid output.
pub struct BaselinePredictor {
    encoder: Encoder,
    dropout: f64,
}

impl BaselinePredictor {
    pub fn new(config: EncoderConfig, dropout: f64) -> Result<Self> {
        Ok(Self {
            encoder: Encoder::new(config, "predictor.encoder")?,
            dropout,
        })
    }
}

impl EventPredictor for BaselinePredictor {
    fn init(&self, store: &mut ParamStore, rng: &mut dyn RngCore) {
        self.encoder.init(store, rng);
        store.insert("predictor.out.w", glorot_init(&[self.encoder.config.hidden, 1], rng));
        store.insert("predictor.out.b", Tensor::zeros([1]));
    }

    fn forward(&self, g: &mut Graph, p: &Bound, x: Var, mode: &mut Mode) -> Result<Var> {
        let h = self.encoder.forward(g, p, x, mode.dropout(self.dropout))?;
        let y = g.matmul(h, p.var("predictor.out.w")?)?;
        let y = g.add_row_bias(y, p.var("predictor.out.b")?)?;
        Ok(g.sigmoid(y))
    }
}

/// Logistic regression on the flattened window; a minimal stand-in for an
/// externally supplied forecaster.
pub struct LinearPredictor {
    dims: Dims,
}

impl EventPredictor for LinearPredictor {
    fn init(&self, store: &mut ParamStore, rng: &mut dyn RngCore) {
        let width = self.dims.window * self.dims.event_types;
        store.insert("predictor.linear.w", glorot_init(&[width, 1], rng));
        store.insert("predictor.linear.b", Tensor::zeros([1]));
    }

    fn forward(&self, g: &mut Graph, p: &Bound, x: Var, _mode: &mut Mode) -> Result<Var> {
        let width = self.dims.window * self.dims.event_types;
        let n = g.value(x).len() / width;
        let flat = g.reshape(x, vec![n, width])?;
        let y = g.matmul(flat, p.var("predictor.linear.w")?)?;
        let y = g.add_row_bias(y, p.var("predictor.linear.b")?)?;
        Ok(g.sigmoid(y))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictorKind {
    #[default]
    Baseline,
    ExternalStub,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictorConfig {
    pub kind: PredictorKind,
    pub hidden: usize,
    pub embed_dim: usize,
    pub kernel: usize,
    pub dilations: Vec<usize>,
    pub gcn_layers: usize,
    pub input_transform: InputTransform,
    pub dropout: f64,
    pub learning_rate: f64,
    pub batch_frames: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Gate covariates by the estimated effects.
    pub use_reweight: bool,
    /// Penalize predictions outside the potential-outcome range.
    pub use_constraint: bool,
    /// Weight of the range penalty.
    pub mu: f64,
    pub seed: u64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            kind: PredictorKind::Baseline,
            hidden: 16,
            embed_dim: 10,
            kernel: 2,
            dilations: vec![1, 2, 4],
            gcn_layers: 2,
            input_transform: InputTransform::Log1p,
            dropout: 0.5,
            learning_rate: 1e-3,
            batch_frames: 64,
            max_epochs: 100,
            patience: 10,
            use_reweight: false,
            use_constraint: false,
            mu: 1e-2,
            seed: 0,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_frames == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_frames and max_epochs must be positive".into()));
        }
        if !(self.mu.is_finite() && self.mu >= 0.0) {
            return Err(Error::Config(format!("mu must be finite and ≥ 0, got {}", self.mu)));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!("learning rate {} invalid", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Whether the constraint term enters the loss at all.
    pub fn constraint_active(&self) -> bool {
        self.use_constraint && self.mu != 0.0
    }

    /// Whether the model reads causal guidance.
    pub fn needs_guidance(&self) -> bool {
        self.use_reweight || self.constraint_active()
    }

    /// Short label of the enabled modules: `none`, `F`, `L` or `F+L`.
    pub fn flags_label(&self) -> &'static str {
        match (self.use_reweight, self.use_constraint) {
            (false, false) => "none",
            (true, false) => "F",
            (false, true) => "L",
            (true, true) => "F+L",
        }
    }
}

/// Stage-2 model: an optional reweighting module in front of a predictor.
pub struct PredictorModel {
    pub config: PredictorConfig,
    pub dims: Dims,
    predictor: Box<dyn EventPredictor>,
    reweight: Option<ReweightModule>,
}

impl std::fmt::Debug for PredictorModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PredictorModel")
            .field("config", &self.config)
            .field("dims", &self.dims)
            .finish_non_exhaustive()
    }
}

impl PredictorModel {
    pub fn new(config: PredictorConfig, dims: Dims) -> Result<Self> {
        config.validate()?;
        let predictor: Box<dyn EventPredictor> = match config.kind {
            PredictorKind::Baseline => {
                let enc = EncoderConfig {
                    locations: dims.locations,
                    event_types: dims.event_types,
                    window: dims.window,
                    hidden: config.hidden,
                    embed_dim: config.embed_dim,
                    kernel: config.kernel,
                    dilations: config.dilations.clone(),
                    gcn_layers: config.gcn_layers,
                    input_transform: config.input_transform,
                };
                Box::new(BaselinePredictor::new(enc, config.dropout)?)
            }
            PredictorKind::ExternalStub => Box::new(LinearPredictor { dims }),
        };
        Self::with_predictor(config, dims, predictor)
    }

    /// Wraps a caller-supplied predictor.
    pub fn with_predictor(config: PredictorConfig, dims: Dims, predictor: Box<dyn EventPredictor>) -> Result<Self> {
        config.validate()?;
        let reweight = config
            .use_reweight
            .then(|| ReweightModule::new(dims.event_types, dims.window));
        Ok(Self {
            config,
            dims,
            predictor,
            reweight,
        })
    }

    /// Predictor parameters come from `seed` and reweighting parameters from
    /// a separate stream, so enabling reweighting never shifts the
    /// predictor's initialization.
    pub fn init_params(&self) -> ParamStore {
        let mut store = ParamStore::new();
        self.predictor
            .init(&mut store, &mut ChaCha8Rng::seed_from_u64(self.config.seed));
        if let Some(r) = &self.reweight {
            r.init(
                &mut store,
                &mut ChaCha8Rng::seed_from_u64(self.config.seed.wrapping_add(1)),
            );
        }
        store
    }

    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.init_params()
            .iter()
            .map(|(k, v)| (k.to_string(), v.shape().to_vec()))
            .collect()
    }

    fn check_guidance(&self, guidance: Option<&[Guidance]>, n: usize) -> Result<()> {
        match guidance {
            None if self.config.needs_guidance() => Err(Error::Config(
                "reweighting or the constraint term needs a causal model".into(),
            )),
            Some(g) if g.len() != n => Err(Error::Consistency(format!(
                "{} guidance records for {n} samples",
                g.len()
            ))),
            _ => Ok(()),
        }
    }

    /// Forward pass over whole frames. Returns `n × 1` probabilities.
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        samples: &[SampleWindow],
        frames: &[&Frame],
        guidance: Option<&[Guidance]>,
        mode: &mut Mode,
    ) -> Result<Var> {
        let mut x = frame_inputs(samples, frames);
        self.config.input_transform.apply(&mut x);
        let mut x = g.constant(x);
        if let Some(r) = &self.reweight {
            let guidance = guidance.ok_or_else(|| Error::Config("reweighting needs causal guidance".into()))?;
            let rows = frame_rows(frames);
            let tau: Vec<f64> = rows.iter().flat_map(|&k| guidance[k].ite.iter().copied()).collect();
            let tau = g.constant(Tensor::new([rows.len(), self.dims.event_types], tau)?);
            let rho = r.causal_gates(g, p, tau)?;
            x = r.reweight_features(g, p, x, rho)?;
        }
        self.predictor.forward(g, p, x, mode)
    }

    /// Predictor loss over the masked rows plus, when active, `μ` times the
    /// range penalty.
    pub fn loss(
        &self,
        g: &mut Graph,
        probabilities: Var,
        samples: &[SampleWindow],
        rows: &[usize],
        mask: &[bool],
        guidance: Option<&[Guidance]>,
    ) -> Result<Var> {
        let labels = rows.iter().map(|&k| f64::from(u8::from(samples[k].outcome))).collect();
        let weights: Vec<f64> = mask.iter().map(|&m| f64::from(u8::from(m))).collect();
        let base = self.predictor.loss(g, probabilities, labels, weights.clone())?;
        if !self.config.constraint_active() {
            return Ok(base);
        }
        let guidance = guidance.ok_or_else(|| Error::Config("the constraint term needs causal guidance".into()))?;
        let lower = rows.iter().map(|&k| guidance[k].lower).collect();
        let upper = rows.iter().map(|&k| guidance[k].upper).collect();
        let hinge = g.range_hinge(probabilities, lower, upper, weights)?;
        let hinge = g.scale(hinge, self.config.mu);
        g.add(base, hinge)
    }

    /// Eval-mode event probability of every sample.
    pub fn predict(
        &self,
        params: &ParamStore,
        samples: &[SampleWindow],
        guidance: Option<&[Guidance]>,
    ) -> Result<Vec<f64>> {
        self.check_guidance(guidance, samples.len())?;
        let all = frames(samples, self.dims.locations)?;
        let refs: Vec<&Frame> = all.iter().collect();
        let mut out = vec![f64::NAN; samples.len()];
        for chunk in refs.chunks(self.config.batch_frames) {
            let probs = self.predict_frames(params, samples, chunk, guidance)?;
            for (k, p) in frame_rows(chunk).into_iter().zip(probs) {
                out[k] = p;
            }
        }
        Ok(out)
    }

    /// Eval-mode probabilities for the given frames, in row order.
    pub fn predict_frames(
        &self,
        params: &ParamStore,
        samples: &[SampleWindow],
        frames: &[&Frame],
        guidance: Option<&[Guidance]>,
    ) -> Result<Vec<f64>> {
        self.check_guidance(guidance, samples.len())?;
        let mut g = Graph::new();
        let p = params.bind_frozen(&mut g);
        let y = self.forward(&mut g, &p, samples, frames, guidance, &mut Mode::Eval)?;
        Ok(g.value(y).data().to_vec())
    }
}
