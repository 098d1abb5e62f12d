use std::collections::BTreeMap;

use super::samples::SampleWindow;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// All locations' samples at one time step. Graph layers couple locations,
/// so the model always consumes whole frames.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub time: usize,
    /// Sample index per location, in location order.
    pub samples: Vec<usize>,
}

/// Groups samples by time. Every frame must contain each of `locations`
/// exactly once.
pub fn frames(samples: &[SampleWindow], locations: usize) -> Result<Vec<Frame>> {
    let mut by_time: BTreeMap<usize, Vec<Option<usize>>> = BTreeMap::new();
    for (k, s) in samples.iter().enumerate() {
        if s.location >= locations {
            return Err(Error::Bounds(format!("location {} of {locations}", s.location)));
        }
        let slot = &mut by_time.entry(s.time).or_insert_with(|| vec![None; locations])[s.location];
        if slot.replace(k).is_some() {
            return Err(Error::Consistency(format!(
                "duplicate sample for location {} at time {}",
                s.location, s.time
            )));
        }
    }
    by_time
        .into_iter()
        .map(|(time, slots)| {
            let samples = slots
                .into_iter()
                .enumerate()
                .map(|(i, s)| s.ok_or_else(|| Error::Consistency(format!("location {i} missing at time {time}"))))
                .collect::<Result<Vec<_>>>()?;
            Ok(Frame { time, samples })
        })
        .collect()
}

/// Stacks the time-major covariates of the samples in `frames` into a
/// `(frames·locations·window) × event_types` tensor.
pub fn frame_inputs(samples: &[SampleWindow], frames: &[&Frame]) -> Tensor {
    let first = &samples[frames[0].samples[0]];
    let (e, w) = (first.event_types(), first.window);
    let mut data = Vec::with_capacity(frames.len() * frames[0].samples.len() * w * e);
    for f in frames {
        for &k in &f.samples {
            data.extend(samples[k].time_major());
        }
    }
    let rows = data.len() / e;
    Tensor::new(vec![rows, e], data).expect("consistent sample shapes")
}

/// Sample indices of `frames` in row order.
pub fn frame_rows(frames: &[&Frame]) -> Vec<usize> {
    frames.iter().flat_map(|f| f.samples.iter().copied()).collect()
}
