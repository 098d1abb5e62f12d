use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::SampleWindow;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    /// Sample index of the treated instance.
    pub treated: usize,
    pub control: usize,
    pub distance: f64,
}

/// Result of per-location 1-NN matching without replacement.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchedSet {
    pub treatment: usize,
    pub pairs: Vec<MatchPair>,
    /// Treated samples left over after their location ran out of controls.
    pub unmatched: usize,
    /// Locations skipped because they had treated samples but no controls.
    pub excluded_locations: Vec<usize>,
}

/// Per-feature z-scoring over `indices`; constant features keep scale 1.
fn standardizer(samples: &[SampleWindow], indices: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let dim = samples[indices[0]].covariates.len();
    let n = indices.len() as f64;
    let mut mean = vec![0.0; dim];
    for &i in indices {
        for (m, x) in mean.iter_mut().zip(&samples[i].covariates) {
            *m += x / n;
        }
    }
    let mut scale = vec![0.0; dim];
    for &i in indices {
        for ((s, m), x) in scale.iter_mut().zip(&mean).zip(&samples[i].covariates) {
            *s += (x - m) * (x - m) / n;
        }
    }
    for s in &mut scale {
        *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
    }
    (mean, scale)
}

/// Greedy 1-NN matching of treated to control samples for `treatment`,
/// separately per location. Treated samples are visited in ascending
/// (time, location) order and each takes its nearest remaining control by
/// Euclidean distance over the flattened covariates; ties go to the control
/// with the smallest (time, location) key.
pub fn nn_match(
    samples: &[SampleWindow],
    indices: &[usize],
    treatment: usize,
    standardize: bool,
) -> Result<MatchedSet> {
    if let Some(&i) = indices.iter().find(|&&i| treatment >= samples[i].event_types()) {
        return Err(Error::Bounds(format!(
            "treatment {treatment} of {}",
            samples[i].event_types()
        )));
    }
    let mut set = MatchedSet {
        treatment,
        ..MatchedSet::default()
    };
    if indices.is_empty() {
        return Ok(set);
    }
    let (mean, scale) = if standardize {
        standardizer(samples, indices)
    } else {
        let dim = samples[indices[0]].covariates.len();
        (vec![0.0; dim], vec![1.0; dim])
    };
    let features = |i: usize| -> Vec<f64> {
        samples[i]
            .covariates
            .iter()
            .zip(&mean)
            .zip(&scale)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    };

    let mut by_location: BTreeMap<usize, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for &i in indices {
        let entry = by_location.entry(samples[i].location).or_default();
        if samples[i].treatments[treatment] {
            entry.0.push(i);
        } else {
            entry.1.push(i);
        }
    }
    for (location, (mut treated, mut controls)) in by_location {
        if treated.is_empty() {
            continue;
        }
        if controls.is_empty() {
            log::warn!("location {location} has no controls for treatment {treatment}; excluded from matching");
            set.excluded_locations.push(location);
            set.unmatched += treated.len();
            continue;
        }
        treated.sort_by_key(|&i| samples[i].key());
        controls.sort_by_key(|&i| samples[i].key());
        let control_features: Vec<Vec<f64>> = controls.iter().map(|&c| features(c)).collect();
        let mut used = vec![false; controls.len()];
        let mut matched_here = 0;
        for &t in &treated {
            let ft = features(t);
            let mut best: Option<(f64, usize)> = None;
            for (k, fc) in control_features.iter().enumerate() {
                if used[k] {
                    continue;
                }
                let d2: f64 = ft.iter().zip(fc).map(|(a, b)| (a - b) * (a - b)).sum();
                if best.is_none_or(|(bd, _)| d2 < bd) {
                    best = Some((d2, k));
                }
            }
            let Some((d2, k)) = best else { break };
            used[k] = true;
            matched_here += 1;
            set.pairs.push(MatchPair {
                treated: t,
                control: controls[k],
                distance: d2.sqrt(),
            });
        }
        let left = treated.len() - matched_here;
        if left > 0 {
            log::warn!("location {location}: {left} treated samples unmatched for treatment {treatment}");
            set.unmatched += left;
        }
    }
    Ok(set)
}

/// Factual ATT over the matched subset: mean treated outcome minus mean
/// matched-control outcome.
pub fn matched_att(samples: &[SampleWindow], matched: &MatchedSet) -> Result<f64> {
    if matched.pairs.is_empty() {
        return Err(Error::UndefinedMetric(format!(
            "no matched pairs for treatment {}",
            matched.treatment
        )));
    }
    let n = matched.pairs.len() as f64;
    let y = |i: usize| f64::from(u8::from(samples[i].outcome));
    let treated: f64 = matched.pairs.iter().map(|p| y(p.treated)).sum();
    let control: f64 = matched.pairs.iter().map(|p| y(p.control)).sum();
    Ok((treated - control) / n)
}

/// `|ATT − mean τ̂|` with the ATT taken from matched factual outcomes and the
/// estimate averaged over the matched treated samples. `effects` is indexed
/// by sample.
pub fn att_error(samples: &[SampleWindow], matched: &MatchedSet, effects: &[f64]) -> Result<f64> {
    let att = matched_att(samples, matched)?;
    let estimate = matched.pairs.iter().map(|p| effects[p.treated]).sum::<f64>() / matched.pairs.len() as f64;
    Ok((att - estimate).abs())
}
