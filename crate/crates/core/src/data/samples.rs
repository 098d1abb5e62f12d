use super::cube::EventCube;
use crate::error::{Error, Result};

/// Relative increase of the current window mean over the previous one that
/// marks a treatment.
pub const TREATMENT_RATIO: f64 = 1.5;

/// One (location, time) instance.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleWindow {
    pub location: usize,
    pub time: usize,
    /// `event_types x window` row-major: `covariates[e * window + s]` is the
    /// count of type `e` at step `time - window + 1 + s`.
    pub covariates: Vec<f64>,
    pub treatments: Vec<bool>,
    pub outcome: bool,
    pub lead: usize,
    pub window: usize,
}

impl SampleWindow {
    pub fn event_types(&self) -> usize {
        self.treatments.len()
    }

    pub fn covariate(&self, event_type: usize, step: usize) -> f64 {
        self.covariates[event_type * self.window + step]
    }

    /// Covariates transposed to `window x event_types` (one row per step).
    pub fn time_major(&self) -> Vec<f64> {
        let e = self.event_types();
        let mut out = vec![0.0; self.covariates.len()];
        for j in 0..e {
            for s in 0..self.window {
                out[s * e + j] = self.covariates[j * self.window + s];
            }
        }
        out
    }

    /// Sort key used wherever a canonical sample order is needed.
    pub fn key(&self) -> (usize, usize) {
        (self.time, self.location)
    }
}

/// Treatment vector at (`location`, `time`): type `j` is treated iff its mean
/// over `[t-Δ+1, t]` is at least 1.5× its mean over `[t-2Δ+1, t-Δ]`. With a
/// zero previous mean, any positive current mean counts as treated.
pub fn derive_treatments(cube: &EventCube, window: usize, time: usize, location: usize) -> Result<Vec<bool>> {
    if window == 0 {
        return Err(Error::Parameter("window must be positive".into()));
    }
    if time + 1 < 2 * window || time >= cube.time_steps() {
        return Err(Error::Bounds(format!(
            "comparison windows for t={time}, window={window} fall outside [0, {})",
            cube.time_steps()
        )));
    }
    if location >= cube.locations() {
        return Err(Error::Bounds(format!("location {location} of {}", cube.locations())));
    }
    Ok((0..cube.event_types())
        .map(|j| {
            let series = cube.series(location, j);
            let sum = |range: std::ops::Range<usize>| series[range].iter().map(|&c| c as f64).sum::<f64>();
            let current = sum(time + 1 - window..time + 1) / window as f64;
            let previous = sum(time + 1 - 2 * window..time + 1 - window) / window as f64;
            is_treated(previous, current)
        })
        .collect())
}

pub fn is_treated(previous_mean: f64, current_mean: f64) -> bool {
    if previous_mean == 0.0 {
        current_mean > 0.0
    } else {
        current_mean >= TREATMENT_RATIO * previous_mean
    }
}

/// Range of valid sample times `[2Δ-1, T-1-δ]`.
pub fn sample_times(time_steps: usize, window: usize, lead: usize) -> Result<std::ops::RangeInclusive<usize>> {
    if window == 0 || lead == 0 {
        return Err(Error::Config("window and lead must be positive".into()));
    }
    if time_steps < 2 * window + lead {
        return Err(Error::Config(format!(
            "T={time_steps} too small for window {window} and lead {lead} (need T ≥ 2Δ+δ)"
        )));
    }
    Ok(2 * window - 1..=time_steps - 1 - lead)
}

/// One sample per (location, time) with `t ∈ [2Δ-1, T-1-δ]`, ordered by
/// ascending (time, location).
pub fn build_samples(cube: &EventCube, window: usize, lead: usize, target_type: usize) -> Result<Vec<SampleWindow>> {
    if target_type >= cube.event_types() {
        return Err(Error::Config(format!(
            "target type {target_type} outside {} event types",
            cube.event_types()
        )));
    }
    let times = sample_times(cube.time_steps(), window, lead)?;
    let e = cube.event_types();
    let mut out = Vec::with_capacity(cube.locations() * (times.end() - times.start() + 1));
    for t in times {
        for i in 0..cube.locations() {
            let mut covariates = Vec::with_capacity(e * window);
            for j in 0..e {
                covariates.extend(cube.series(i, j)[t + 1 - window..=t].iter().map(|&c| c as f64));
            }
            out.push(SampleWindow {
                location: i,
                time: t,
                covariates,
                treatments: derive_treatments(cube, window, t, i)?,
                outcome: cube.count(i, target_type, t + lead) > 0,
                lead,
                window,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube_from_series(series: &[&[u32]]) -> EventCube {
        let t = series[0].len();
        let mut cube = EventCube::zeros(1, series.len(), t);
        for (j, s) in series.iter().enumerate() {
            for (k, &c) in s.iter().enumerate() {
                cube.set(0, j, k, c);
            }
        }
        cube
    }

    #[test]
    fn fifty_percent_rule() {
        // previous mean 2.0, current mean 10/3 ≥ 3.0
        let cube = cube_from_series(&[&[2, 2, 2, 3, 3, 4]]);
        assert_eq!(derive_treatments(&cube, 3, 5, 0).unwrap(), vec![true]);
        // previous mean 20, current mean 29 < 30
        let cube = cube_from_series(&[&[20, 20, 20, 29, 29, 29]]);
        assert_eq!(derive_treatments(&cube, 3, 5, 0).unwrap(), vec![false]);
    }

    #[test]
    fn exact_ratio_counts_as_treated() {
        let cube = cube_from_series(&[&[2, 2, 3, 3]]);
        assert_eq!(derive_treatments(&cube, 2, 3, 0).unwrap(), vec![true]);
    }

    #[test]
    fn zero_baseline_rule() {
        let cube = cube_from_series(&[&[0, 0, 0, 0], &[0, 0, 0, 1]]);
        assert_eq!(derive_treatments(&cube, 2, 3, 0).unwrap(), vec![false, true]);
    }

    #[test]
    fn out_of_range_window_is_a_bounds_error() {
        let cube = cube_from_series(&[&[1, 1, 1, 1]]);
        assert!(matches!(derive_treatments(&cube, 3, 4, 0), Err(Error::Bounds(_))));
        assert!(matches!(derive_treatments(&cube, 2, 2, 0), Err(Error::Bounds(_))));
    }

    #[test]
    fn minimal_horizon_yields_one_sample_per_location() {
        let cube = EventCube::zeros(3, 2, 2 * 4 + 1);
        let s = build_samples(&cube, 4, 1, 1).unwrap();
        assert_eq!(s.len(), 3);
        assert!(s.iter().all(|w| !w.outcome && w.time == 7));
    }

    #[test]
    fn too_short_horizon_is_a_config_error() {
        let cube = EventCube::zeros(1, 1, 8);
        assert!(matches!(build_samples(&cube, 4, 1, 0), Err(Error::Config(_))));
    }

    #[test]
    fn covariates_and_outcome_come_from_the_right_steps() {
        let cube = cube_from_series(&[&[1, 2, 3, 4, 5, 0], &[0, 0, 0, 0, 0, 7]]);
        let s = build_samples(&cube, 2, 2, 1).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].time, 3);
        assert_eq!(s[0].covariates, vec![3.0, 4.0, 0.0, 0.0]);
        assert!(s[0].outcome);
        assert_eq!(s[0].time_major(), vec![3.0, 0.0, 4.0, 0.0]);
    }
}
