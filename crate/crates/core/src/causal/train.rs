use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{BatchTargets, CausalModel, Mode, PotentialOutcomes};
use crate::autodiff::{Adam, Graph, ParamStore};
use crate::data::{frame_rows, frames, DatasetSplit, Frame, Role, SampleWindow};
use crate::error::{Error, Result};

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Objective per training sample.
    pub train_loss: f64,
    /// Eval-mode objective per validation sample.
    pub val_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub att_error_val: Option<f64>,
}

/// Hooks into the training loop. Both methods default to no-ops.
pub trait CausalObserver {
    /// Whether [`Self::validation_att_error`] should be called each epoch.
    fn tracks_att_error(&self) -> bool {
        false
    }

    /// ATT error of the current parameters on the validation split, when a
    /// reference is available.
    fn validation_att_error(&mut self, _predictions: &[PotentialOutcomes], _split: &DatasetSplit) -> Option<f64> {
        None
    }

    fn epoch(&mut self, _record: &EpochRecord) {}
}

impl CausalObserver for () {}

#[derive(Clone, Debug)]
pub struct TrainedCausal {
    pub model: CausalModel,
    /// Parameters of the best validation epoch.
    pub params: ParamStore,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Frames holding at least one sample of `role`.
fn frames_with(all: &[Frame], roles: &[Role], role: Role) -> Vec<usize> {
    (0..all.len())
        .filter(|&f| all[f].samples.iter().any(|&k| roles[k] == role))
        .collect()
}

/// Sums the unscaled objective over `frames` in eval mode.
fn evaluate(
    model: &CausalModel,
    params: &ParamStore,
    samples: &[SampleWindow],
    all: &[Frame],
    selected: &[usize],
    roles: &[Role],
    role: Role,
) -> Result<f64> {
    let mut total = 0.0;
    for chunk in selected.chunks(model.config.batch_frames) {
        let refs: Vec<&Frame> = chunk.iter().map(|&f| &all[f]).collect();
        let mut graph = Graph::new();
        let p = params.bind_frozen(&mut graph);
        let fwd = model.forward(&mut graph, &p, model.inputs(samples, &refs), &mut Mode::Eval)?;
        let targets = BatchTargets::gather(samples, &frame_rows(&refs), |k| roles[k] == role);
        let loss = model.loss(&mut graph, &p, &fwd, &targets)?;
        total += graph.value(loss).item();
    }
    Ok(total)
}

/// Trains a freshly initialized model with Adam and early stopping on the
/// validation objective, returning the best parameters.
pub fn train_causal(
    model: &CausalModel,
    samples: &[SampleWindow],
    split: &DatasetSplit,
    observer: &mut dyn CausalObserver,
) -> Result<TrainedCausal> {
    let cfg = &model.config;
    let all = frames(samples, model.dims.locations)?;
    let roles = split.roles(samples.len());
    let train_frames = frames_with(&all, &roles, Role::Train);
    let val_frames = frames_with(&all, &roles, Role::Validation);
    if train_frames.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let n_train = split.train.len() as f64;
    let n_val = split.validation.len().max(1) as f64;

    let mut params = model.init_params();
    let adam = Adam::new(cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order = train_frames.clone();
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut history = Vec::new();
    let mut stale = 0;

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut train_total = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_frames).enumerate() {
            let refs: Vec<&Frame> = chunk.iter().map(|&f| &all[f]).collect();
            let targets = BatchTargets::gather(samples, &frame_rows(&refs), |k| roles[k] == Role::Train);
            let mut graph = Graph::new();
            let p = params.bind(&mut graph);
            let fwd = model.forward(&mut graph, &p, model.inputs(samples, &refs), &mut Mode::Train(&mut rng))?;
            let loss = model.loss(&mut graph, &p, &fwd, &targets)?;
            let value = graph.value(loss).item();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    norms: params.norm_summary(),
                });
            }
            train_total += value;
            let scaled = graph.scale(loss, 1.0 / targets.active().max(1) as f64);
            let mut grads = graph.backward(scaled);
            let grads = p.collect(&mut grads, &params);
            adam.step(&mut params, &grads)?;
        }

        let val_loss = if val_frames.is_empty() {
            train_total / n_train
        } else {
            evaluate(model, &params, samples, &all, &val_frames, &roles, Role::Validation)? / n_val
        };
        let att_error_val = match split.validation.is_empty() || !observer.tracks_att_error() {
            true => None,
            false => {
                let predictions = model.predict(&params, samples)?;
                observer.validation_att_error(&predictions, split)
            }
        };
        let record = EpochRecord {
            epoch,
            train_loss: train_total / n_train,
            val_loss,
            att_error_val,
        };
        log::debug!(
            "causal epoch {epoch}: train {:.6} val {:.6}",
            record.train_loss,
            record.val_loss
        );
        observer.epoch(&record);
        history.push(record);

        if best.as_ref().is_none_or(|(v, _, _)| val_loss < *v) {
            best = Some((val_loss, epoch, params.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    let (_, best_epoch, params) = best.expect("at least one epoch");
    Ok(TrainedCausal {
        model: model.clone(),
        params,
        history,
        best_epoch,
    })
}
