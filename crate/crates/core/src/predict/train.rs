use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{Guidance, PredictorModel};
use crate::autodiff::{Adam, Graph, ParamStore};
use crate::causal::Mode;
use crate::data::{frame_rows, frames, DatasetSplit, Frame, Role, SampleWindow};
use crate::error::{Error, Result};
use crate::evaluation::bacc;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PredictEpoch {
    pub epoch: usize,
    /// Objective per training sample.
    pub train_loss: f64,
    /// Eval-mode objective per validation sample, used for early stopping.
    pub val_loss: f64,
    /// `None` when the validation split is empty.
    pub val_bacc: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainedPredictor {
    pub params: ParamStore,
    pub history: Vec<PredictEpoch>,
    pub best_epoch: usize,
}

/// Stage-2 training. `guidance` holds one record per sample from the frozen
/// causal model and may be omitted when neither module is enabled.
pub fn train_predictor(
    model: &PredictorModel,
    samples: &[SampleWindow],
    split: &DatasetSplit,
    guidance: Option<&[Guidance]>,
    on_epoch: &mut dyn FnMut(&PredictEpoch),
) -> Result<TrainedPredictor> {
    model.check_guidance(guidance, samples.len())?;
    let cfg = &model.config;
    let all = frames(samples, model.dims.locations)?;
    let roles = split.roles(samples.len());
    let with_role = |role: Role| -> Vec<usize> {
        (0..all.len())
            .filter(|&f| all[f].samples.iter().any(|&k| roles[k] == role))
            .collect()
    };
    let mut order = with_role(Role::Train);
    let val_frames = with_role(Role::Validation);
    if order.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let n_train = split.train.len() as f64;

    let mut params = model.init_params();
    let adam = Adam::new(cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut history = Vec::new();
    let mut stale = 0;

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut train_total = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_frames).enumerate() {
            let refs: Vec<&Frame> = chunk.iter().map(|&f| &all[f]).collect();
            let rows = frame_rows(&refs);
            let mask: Vec<bool> = rows.iter().map(|&k| roles[k] == Role::Train).collect();
            let active = mask.iter().filter(|&&m| m).count();
            let mut g = Graph::new();
            let p = params.bind(&mut g);
            let probs = model.forward(&mut g, &p, samples, &refs, guidance, &mut Mode::Train(&mut rng))?;
            let loss = model.loss(&mut g, probs, samples, &rows, &mask, guidance)?;
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    norms: params.norm_summary(),
                });
            }
            train_total += value;
            let scaled = g.scale(loss, 1.0 / active.max(1) as f64);
            let mut grads = g.backward(scaled);
            let grads = p.collect(&mut grads, &params);
            adam.step(&mut params, &grads)?;
        }

        let (val_loss, val_bacc) = if val_frames.is_empty() {
            (train_total / n_train, None)
        } else {
            let mut total = 0.0;
            let (mut probs, mut labels) = (Vec::new(), Vec::new());
            for chunk in val_frames.chunks(cfg.batch_frames) {
                let refs: Vec<&Frame> = chunk.iter().map(|&f| &all[f]).collect();
                let rows = frame_rows(&refs);
                let mask: Vec<bool> = rows.iter().map(|&k| roles[k] == Role::Validation).collect();
                let mut g = Graph::new();
                let p = params.bind_frozen(&mut g);
                let y = model.forward(&mut g, &p, samples, &refs, guidance, &mut Mode::Eval)?;
                for (r, &k) in rows.iter().enumerate() {
                    if mask[r] {
                        probs.push(g.value(y).data()[r]);
                        labels.push(samples[k].outcome);
                    }
                }
                let loss = model.loss(&mut g, y, samples, &rows, &mask, guidance)?;
                total += g.value(loss).item();
            }
            (
                total / split.validation.len() as f64,
                Some(bacc(&probs, &labels)?.value),
            )
        };
        let record = PredictEpoch {
            epoch,
            train_loss: train_total / n_train,
            val_loss,
            val_bacc,
        };
        log::debug!(
            "predictor epoch {epoch}: train {:.6} val {:.6}",
            record.train_loss,
            record.val_loss
        );
        on_epoch(&record);
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
    Ok(TrainedPredictor {
        params,
        history,
        best_epoch,
    })
}
