//! Event ingestion, treatment and sample derivation, splits and noise.

mod cube;
mod frames;
mod samples;
mod split;

pub use cube::{load_adjacency_csv, load_event_csv, read_event_csv, write_adjacency_csv, CubeDims, EventCube};
pub use frames::{frame_inputs, frame_rows, frames, Frame};
pub use samples::{build_samples, derive_treatments, is_treated, sample_times, SampleWindow, TREATMENT_RATIO};
pub use split::{split, DatasetSplit, Role, SplitMode, DEFAULT_RATIOS};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::Serialize;

use crate::error::{Error, Result};

/// Returns perturbed copies: every covariate gains an independent
/// `Poisson(rate)` draw. The inputs are not modified.
pub fn inject_poisson_noise(samples: &[SampleWindow], rate: f64, seed: u64) -> Result<Vec<SampleWindow>> {
    if !(rate.is_finite() && rate >= 0.0) {
        return Err(Error::Parameter(format!(
            "Poisson rate must be a finite value ≥ 0, got {rate}"
        )));
    }
    let mut out = samples.to_vec();
    if rate == 0.0 {
        return Ok(out);
    }
    let dist = Poisson::new(rate).map_err(|e| Error::Parameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for s in &mut out {
        for x in &mut s.covariates {
            *x += dist.sample(&mut rng);
        }
    }
    Ok(out)
}

/// Applies [`inject_poisson_noise`] to the samples whose role is in `roles`,
/// returning a full-length copy of `samples`.
pub fn perturb_roles(
    samples: &[SampleWindow],
    split: &DatasetSplit,
    roles: &[Role],
    rate: f64,
    seed: u64,
) -> Result<Vec<SampleWindow>> {
    let mut out = samples.to_vec();
    for (k, role) in roles.iter().enumerate() {
        let idx = split.indices(*role);
        let chosen: Vec<SampleWindow> = idx.iter().map(|&i| samples[i].clone()).collect();
        let noisy = inject_poisson_noise(&chosen, rate, seed.wrapping_add(k as u64))?;
        for (&i, s) in idx.iter().zip(noisy) {
            out[i] = s;
        }
    }
    Ok(out)
}

/// Treated fraction of one treatment over a sample subset.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PositivityEntry {
    pub treatment: usize,
    pub treated_fraction: f64,
    /// True when the fraction is exactly 0 or 1.
    pub violated: bool,
}

/// Reports, per treatment, the treated fraction over `indices` and logs a
/// warning when a treatment is never or always assigned.
pub fn positivity(samples: &[SampleWindow], indices: &[usize]) -> Vec<PositivityEntry> {
    let Some(&first) = indices.first() else {
        return Vec::new();
    };
    (0..samples[first].event_types())
        .map(|j| {
            let treated = indices.iter().filter(|&&i| samples[i].treatments[j]).count();
            let fraction = treated as f64 / indices.len() as f64;
            let violated = treated == 0 || treated == indices.len();
            if violated {
                log::warn!("positivity violated for treatment {j}: treated fraction {fraction}");
            }
            PositivityEntry {
                treatment: j,
                treated_fraction: fraction,
                violated,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(values: Vec<f64>) -> SampleWindow {
        SampleWindow {
            location: 0,
            time: 0,
            window: values.len(),
            covariates: values,
            treatments: vec![true, false],
            outcome: false,
            lead: 1,
        }
    }

    #[test]
    fn zero_rate_is_identity() {
        let s = vec![sample(vec![1.0, 2.0, 3.0])];
        assert_eq!(inject_poisson_noise(&s, 0.0, 1).unwrap(), s);
    }

    #[test]
    fn negative_rate_is_rejected() {
        assert!(matches!(inject_poisson_noise(&[], -1.0, 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn noise_is_seeded_and_copy_on_write() {
        let s = vec![sample(vec![1.0; 50])];
        let a = inject_poisson_noise(&s, 3.0, 9).unwrap();
        let b = inject_poisson_noise(&s, 3.0, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(s[0].covariates, vec![1.0; 50]);
        assert!(a[0].covariates.iter().all(|&x| x >= 1.0));
    }

    #[test]
    fn noise_mean_matches_rate() {
        let s = vec![sample(vec![0.0; 1_000_000])];
        let noisy = inject_poisson_noise(&s, 5.0, 11).unwrap();
        let mean = noisy[0].covariates.iter().sum::<f64>() / 1e6;
        assert!((mean - 5.0).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn positivity_flags_degenerate_treatments() {
        let s = vec![sample(vec![0.0]), sample(vec![0.0])];
        let p = positivity(&s, &[0, 1]);
        assert!(p[0].violated && p[1].violated);
        assert_eq!(p[0].treated_fraction, 1.0);
    }
}
