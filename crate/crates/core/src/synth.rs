//! Confounded spatiotemporal event generator with known potential outcomes.
//!
//! A latent confounder `u[i,t] ∈ R^D` per location follows an AR(1) process
//! mixed with its two ring-graph neighbours. Every non-target event type
//! counts as Poisson with log-rate affine in `u` and is multiplied by
//! `surge_gain` while a latent surge is active; surge onsets are logistic in
//! the window mean of `u`. Treatments are never drawn directly: they are
//! re-derived from the emitted counts with the 50% window rule, so the data
//! and the treatment definition always agree. The target event at `t + δ`
//! occurs with probability `σ(logit(base) + β·ū[i,t] + Σ_j effect_j·c_j)`,
//! and both potential outcomes of every treatment are evaluated under forced
//! values of that treatment with the same uniform draw.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::kernels::sigmoid;
use crate::data::{derive_treatments, sample_times, EventCube};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub locations: usize,
    pub event_types: usize,
    pub time_steps: usize,
    pub window: usize,
    pub lead: usize,
    pub confounder_dim: usize,
    /// AR(1) coefficient of the latent confounder, `|φ| < 1`.
    pub ar_coef: f64,
    /// Weight of the neighbour average in the AR update, in `[0, 1)`.
    pub neighbor_mixing: f64,
    /// Strength of the confounder's pull on surges and counts; 0 removes
    /// every path from `u` to the treatments.
    pub sharpness: f64,
    /// Logit-scale effect of each treatment on the target event.
    pub effects: Vec<f64>,
    /// Target-event probability at `u = 0` with no treatment, in `(0, 1)`.
    pub outcome_base_rate: f64,
    /// Logit-scale weight of the confounder window mean on the outcome.
    pub outcome_confounding: f64,
    pub base_count_rate: f64,
    pub count_loading: f64,
    pub surge_gain: f64,
    pub surge_persistence: f64,
    pub surge_offset: f64,
    pub target_type: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            locations: 6,
            event_types: 4,
            time_steps: 3000,
            window: 7,
            lead: 1,
            confounder_dim: 1,
            ar_coef: 0.9,
            neighbor_mixing: 0.3,
            sharpness: 1.5,
            effects: vec![1.0, 0.0, 0.0, 0.0],
            outcome_base_rate: 0.3,
            outcome_confounding: 1.5,
            base_count_rate: 3.0,
            count_loading: 0.5,
            surge_gain: 3.0,
            surge_persistence: 0.8,
            surge_offset: -2.5,
            target_type: 3,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.locations == 0
            || self.event_types == 0
            || self.window == 0
            || self.lead == 0
            || self.confounder_dim == 0
        {
            return fail("dimensional fields must be positive".into());
        }
        sample_times(self.time_steps, self.window, self.lead)?;
        if self.ar_coef.abs() >= 1.0 {
            return fail(format!("AR coefficient {} must satisfy |φ| < 1", self.ar_coef));
        }
        if !(0.0..1.0).contains(&self.neighbor_mixing) {
            return fail(format!("neighbor mixing {} must be in [0, 1)", self.neighbor_mixing));
        }
        if self.sharpness < 0.0 {
            return fail("sharpness must be nonnegative".into());
        }
        if self.effects.len() != self.event_types {
            return fail(format!(
                "{} effects for {} event types",
                self.effects.len(),
                self.event_types
            ));
        }
        if !(self.outcome_base_rate > 0.0 && self.outcome_base_rate < 1.0) {
            return fail("outcome base rate must be in (0, 1)".into());
        }
        if !(0.0..1.0).contains(&self.surge_persistence) || self.surge_gain <= 0.0 || self.base_count_rate <= 0.0 {
            return fail("surge persistence in [0,1), positive surge gain and base rate required".into());
        }
        if self.target_type >= self.event_types {
            return fail(format!(
                "target type {} outside {} types",
                self.target_type, self.event_types
            ));
        }
        if self.effects.iter().all(|&e| e == 0.0) && self.sharpness == 0.0 {
            log::warn!("degenerate synthetic config: no treatment effects and no confounding");
        }
        Ok(())
    }

    fn confounder_index(&self, event_type: usize) -> usize {
        event_type % self.confounder_dim
    }
}

/// Ground truth of one sample.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TruthRecord {
    pub location: usize,
    pub time: usize,
    pub treatments: Vec<bool>,
    /// `P[y(1)]` per treatment.
    pub y1_prob: Vec<f64>,
    /// `P[y(0)]` per treatment.
    pub y0_prob: Vec<f64>,
    pub y1: Vec<bool>,
    pub y0: Vec<bool>,
    pub factual_prob: f64,
    pub factual: bool,
}

impl TruthRecord {
    pub fn ite(&self, treatment: usize) -> f64 {
        self.y1_prob[treatment] - self.y0_prob[treatment]
    }
}

/// Synthetic-only verification oracle, with records ordered like
/// [`crate::data::build_samples`] output.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub records: Vec<TruthRecord>,
    pub event_types: usize,
}

impl GroundTruth {
    /// Mean true ITE of `treatment` over the treated records among `indices`.
    pub fn att_over(&self, treatment: usize, indices: impl IntoIterator<Item = usize>) -> Result<f64> {
        if treatment >= self.event_types {
            return Err(Error::Bounds(format!("treatment {treatment} of {}", self.event_types)));
        }
        let (mut sum, mut n) = (0.0, 0usize);
        for i in indices {
            let r = &self.records[i];
            if r.treatments[treatment] {
                sum += r.ite(treatment);
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::UndefinedMetric(format!(
                "no treated samples for treatment {treatment}"
            )));
        }
        Ok(sum / n as f64)
    }

    /// Population confounding bias of the difference-in-means estimator:
    /// `E[p | c=1] − E[p | c=0] − ATT`, using outcome probabilities.
    pub fn confounding_bias(&self, treatment: usize) -> Result<f64> {
        let att = true_att(self, treatment)?;
        let (mut s1, mut n1, mut s0, mut n0) = (0.0, 0usize, 0.0, 0usize);
        for r in &self.records {
            if r.treatments[treatment] {
                s1 += r.factual_prob;
                n1 += 1;
            } else {
                s0 += r.factual_prob;
                n0 += 1;
            }
        }
        if n0 == 0 {
            return Err(Error::UndefinedMetric(format!(
                "no control samples for treatment {treatment}"
            )));
        }
        Ok(s1 / n1 as f64 - s0 / n0 as f64 - att)
    }

    pub fn to_json(&self, location_ids: &[String]) -> serde_json::Value {
        let samples: serde_json::Map<String, serde_json::Value> = self
            .records
            .iter()
            .map(|r| {
                let key = format!("{}@{}", location_ids[r.location], r.time);
                let ite: Vec<f64> = (0..self.event_types).map(|j| r.ite(j)).collect();
                (
                    key,
                    serde_json::json!({"y1_prob": r.y1_prob, "y0_prob": r.y0_prob, "ite": ite}),
                )
            })
            .collect();
        let att: BTreeMap<String, Option<f64>> = (0..self.event_types)
            .map(|j| (j.to_string(), true_att(self, j).ok()))
            .collect();
        serde_json::json!({"samples": samples, "att": att})
    }

    pub fn write_json(&self, path: &Path, location_ids: &[String]) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_json(location_ids))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// True average treatment effect on the treated for `treatment`.
pub fn true_att(gt: &GroundTruth, treatment: usize) -> Result<f64> {
    gt.att_over(treatment, 0..gt.records.len())
}

/// Latent confounder trajectory, laid out `[t][i][d]`.
pub fn simulate_latent<R: Rng + ?Sized>(config: &SyntheticConfig, rng: &mut R) -> Vec<f64> {
    let (m, d, t_max) = (config.locations, config.confounder_dim, config.time_steps);
    let phi = config.ar_coef;
    let w = config.neighbor_mixing;
    let innovation = (1.0 - phi * phi).sqrt();
    let mut u = vec![0.0; t_max * m * d];
    for v in u.iter_mut().take(m * d) {
        *v = rng.sample(StandardNormal);
    }
    for t in 1..t_max {
        let (prev, cur) = u.split_at_mut(t * m * d);
        let prev = &prev[(t - 1) * m * d..];
        for i in 0..m {
            let left = (i + m - 1) % m;
            let right = (i + 1) % m;
            for k in 0..d {
                let own = prev[i * d + k];
                let neigh = 0.5 * (prev[left * d + k] + prev[right * d + k]);
                let eps: f64 = rng.sample(StandardNormal);
                cur[i * d + k] = phi * ((1.0 - w) * own + w * neigh) + innovation * eps;
            }
        }
    }
    u
}

/// Row-major `m × m` adjacency of the ring the confounder diffuses over.
pub fn ring_adjacency(m: usize) -> Vec<f64> {
    let mut a = vec![0.0; m * m];
    for i in 0..m {
        for n in [(i + m - 1) % m, (i + 1) % m] {
            if n != i {
                a[i * m + n] = 1.0;
            }
        }
    }
    a
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn poisson<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> u32 {
    if rate <= 0.0 {
        return 0;
    }
    Poisson::new(rate).map_or(0, |p: Poisson<f64>| p.sample(rng) as u32)
}

/// Generates an event cube and its ground truth. Deterministic per `config.seed`.
pub fn generate(config: &SyntheticConfig) -> Result<(EventCube, GroundTruth)> {
    config.validate()?;
    let (m, e, d) = (config.locations, config.event_types, config.confounder_dim);
    let (t_max, window, lead) = (config.time_steps, config.window, config.lead);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let u = simulate_latent(config, &mut rng);
    let u_at = |t: usize, i: usize, k: usize| u[(t * m + i) * d + k];
    // Mean of u over the window ending at t (truncated at the start).
    let u_bar = |t: usize, i: usize, k: usize| {
        let start = (t + 1).saturating_sub(window);
        (start..=t).map(|s| u_at(s, i, k)).sum::<f64>() / (t + 1 - start) as f64
    };
    let outcome_signal = |t: usize, i: usize| (0..d).map(|k| u_bar(t, i, k)).sum::<f64>() / (d as f64).sqrt();

    let base_logit = logit(config.outcome_base_rate);
    let first_sample = 2 * window - 1;
    let last_sample = t_max - 1 - lead;

    let mut cube = EventCube::zeros(m, e, t_max);
    let mut surge = vec![false; m * e];
    let mut records = Vec::with_capacity(m * (last_sample + 1 - first_sample));
    // Outcome draws are made when t + lead is generated; keep them per (t, i).
    let mut pending: Vec<Option<(TruthRecord, bool)>> = vec![None; m * (lead + 1)];

    for t in 0..t_max {
        for i in 0..m {
            for j in 0..e {
                if j == config.target_type {
                    continue;
                }
                let k = config.confounder_index(j);
                let s = &mut surge[i * e + j];
                *s = if *s {
                    rng.random::<f64>() < config.surge_persistence
                } else {
                    let onset = sigmoid(config.sharpness * u_bar(t, i, k) + config.surge_offset);
                    rng.random::<f64>() < onset
                };
                let mut rate = config.base_count_rate * (config.sharpness * config.count_loading * u_at(t, i, k)).exp();
                if *s {
                    rate *= config.surge_gain;
                }
                let c = poisson(rate, &mut rng);
                cube.set(i, j, t, c);
            }
        }
        // Target counts at t realize the outcomes drawn at t - lead.
        for i in 0..m {
            let factual = if t >= lead {
                let slot = ((t - lead) % (lead + 1)) * m + i;
                let (record, factual) = pending[slot].take().expect("outcome drawn lead steps earlier");
                if (first_sample..=last_sample).contains(&record.time) {
                    records.push(record);
                }
                factual
            } else {
                rng.random::<f64>() < sigmoid(base_logit + config.outcome_confounding * outcome_signal(t, i))
            };
            let count = if factual { 1 + poisson(1.0, &mut rng) } else { 0 };
            cube.set(i, config.target_type, t, count);
        }
        if t + lead >= t_max {
            continue;
        }
        // Outcomes of the samples at t, observed at t + lead.
        for i in 0..m {
            let signal = config.outcome_confounding * outcome_signal(t, i);
            let treatments = if t >= first_sample {
                derive_treatments(&cube, window, t, i)?
            } else {
                vec![false; e]
            };
            let effect_sum: f64 = treatments
                .iter()
                .zip(&config.effects)
                .map(|(&c, &b)| if c { b } else { 0.0 })
                .sum();
            let draw: f64 = rng.random();
            let factual_prob = sigmoid(base_logit + signal + effect_sum);
            let factual = draw < factual_prob;
            let mut y1_prob = Vec::with_capacity(e);
            let mut y0_prob = Vec::with_capacity(e);
            for (j, &c) in treatments.iter().enumerate() {
                let without = effect_sum - if c { config.effects[j] } else { 0.0 };
                y1_prob.push(sigmoid(base_logit + signal + without + config.effects[j]));
                y0_prob.push(sigmoid(base_logit + signal + without));
            }
            let record = TruthRecord {
                location: i,
                time: t,
                y1: y1_prob.iter().map(|&p| draw < p).collect(),
                y0: y0_prob.iter().map(|&p| draw < p).collect(),
                treatments,
                y1_prob,
                y0_prob,
                factual_prob,
                factual,
            };
            pending[(t % (lead + 1)) * m + i] = Some((record, factual));
        }
    }
    cube.set_adjacency(ring_adjacency(m))?;
    Ok((
        cube,
        GroundTruth {
            records,
            event_types: e,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::build_samples;

    fn small() -> SyntheticConfig {
        SyntheticConfig {
            time_steps: 600,
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate(&SyntheticConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn records_align_with_samples_and_are_consistent() {
        let cfg = small();
        let (cube, gt) = generate(&cfg).unwrap();
        let samples = build_samples(&cube, cfg.window, cfg.lead, cfg.target_type).unwrap();
        assert_eq!(samples.len(), gt.records.len());
        for (s, r) in samples.iter().zip(&gt.records) {
            assert_eq!((s.location, s.time), (r.location, r.time));
            assert_eq!(s.treatments, r.treatments);
            assert_eq!(s.outcome, r.factual);
            for j in 0..cfg.event_types {
                let potential = if r.treatments[j] { r.y1[j] } else { r.y0[j] };
                assert_eq!(potential, r.factual);
                assert!((0.0..=1.0).contains(&r.y1_prob[j]));
            }
        }
    }

    #[test]
    fn null_effects_give_zero_ite() {
        let cfg = SyntheticConfig {
            effects: vec![0.0; 4],
            ..small()
        };
        let (_, gt) = generate(&cfg).unwrap();
        assert!(gt.records.iter().all(|r| (0..4).all(|j| r.ite(j) == 0.0)));
        assert_eq!(true_att(&gt, 0).unwrap(), 0.0);
    }

    #[test]
    fn att_of_single_treated_record() {
        let gt = GroundTruth {
            event_types: 1,
            records: vec![
                TruthRecord {
                    location: 0,
                    time: 0,
                    treatments: vec![true],
                    y1_prob: vec![0.8],
                    y0_prob: vec![0.3],
                    y1: vec![true],
                    y0: vec![false],
                    factual_prob: 0.8,
                    factual: true,
                },
                TruthRecord {
                    location: 1,
                    time: 0,
                    treatments: vec![false],
                    y1_prob: vec![0.9],
                    y0_prob: vec![0.1],
                    y1: vec![true],
                    y0: vec![false],
                    factual_prob: 0.1,
                    factual: false,
                },
            ],
        };
        assert!((true_att(&gt, 0).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn no_treated_samples_is_undefined() {
        let gt = GroundTruth {
            event_types: 1,
            records: vec![],
        };
        assert!(matches!(true_att(&gt, 0), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn rejects_invalid_configs() {
        assert!(SyntheticConfig {
            ar_coef: 1.0,
            ..small()
        }
        .validate()
        .is_err());
        assert!(SyntheticConfig {
            effects: vec![0.0],
            ..small()
        }
        .validate()
        .is_err());
        assert!(SyntheticConfig {
            time_steps: 10,
            ..small()
        }
        .validate()
        .is_err());
    }
}
