use serde::{Deserialize, Serialize};

use crate::data::SampleWindow;
use crate::error::{Error, Result};

/// Probability threshold at which a prediction counts as positive.
pub const THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn from_predictions(probabilities: &[f64], labels: &[bool]) -> Result<Self> {
        if probabilities.len() != labels.len() {
            return Err(Error::dim("confusion", &[probabilities.len()], &[labels.len()]));
        }
        let mut c = Confusion::default();
        for (&p, &y) in probabilities.iter().zip(labels) {
            match (p >= THRESHOLD, y) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn tpr(&self) -> Option<f64> {
        let pos = self.tp + self.fn_;
        (pos > 0).then(|| self.tp as f64 / pos as f64)
    }

    pub fn tnr(&self) -> Option<f64> {
        let neg = self.tn + self.fp;
        (neg > 0).then(|| self.tn as f64 / neg as f64)
    }
}

/// Balanced accuracy with its confusion counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bacc {
    pub value: f64,
    pub confusion: Confusion,
    /// Set when the labels hold a single class; `value` is then the one
    /// defined rate rather than a balanced average.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub warning: Option<String>,
}

/// `(TPR + TNR) / 2` at threshold 0.5.
pub fn bacc(probabilities: &[f64], labels: &[bool]) -> Result<Bacc> {
    let confusion = Confusion::from_predictions(probabilities, labels)?;
    match (confusion.tpr(), confusion.tnr()) {
        (Some(tpr), Some(tnr)) => Ok(Bacc {
            value: (tpr + tnr) / 2.0,
            confusion,
            warning: None,
        }),
        (Some(rate), None) | (None, Some(rate)) => {
            let which = if confusion.tpr().is_some() { "TNR" } else { "TPR" };
            let warning = format!("labels hold a single class; {which} undefined, reporting the other rate only");
            log::warn!("{warning}");
            Ok(Bacc {
                value: rate,
                confusion,
                warning: Some(warning),
            })
        }
        (None, None) => Err(Error::UndefinedMetric("balanced accuracy of zero samples".into())),
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Distribution summary of per-sample effect estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IteSummary {
    pub treatment: usize,
    pub count: usize,
    pub mean: f64,
    /// Mean absolute effect; near zero when no treatment has an effect.
    pub mean_abs: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

impl IteSummary {
    pub fn of(treatment: usize, values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::UndefinedMetric(format!("no effects for treatment {treatment}")));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self {
            treatment,
            count: values.len(),
            mean: values.iter().sum::<f64>() / values.len() as f64,
            mean_abs: values.iter().map(|v| v.abs()).sum::<f64>() / values.len() as f64,
            median: quantile(&sorted, 0.5),
            q1: quantile(&sorted, 0.25),
            q3: quantile(&sorted, 0.75),
            min: sorted[0],
            max: sorted[sorted.len() - 1],
        })
    }
}

/// Difference in mean factual outcomes between treated and control samples
/// of `indices`.
pub fn naive_att(samples: &[SampleWindow], indices: &[usize], treatment: usize) -> Result<f64> {
    let (mut s1, mut n1, mut s0, mut n0) = (0.0, 0usize, 0.0, 0usize);
    for &i in indices {
        let y = f64::from(u8::from(samples[i].outcome));
        if samples[i].treatments[treatment] {
            s1 += y;
            n1 += 1;
        } else {
            s0 += y;
            n0 += 1;
        }
    }
    if n1 == 0 || n0 == 0 {
        return Err(Error::UndefinedMetric(format!(
            "treatment {treatment} needs both treated and control samples"
        )));
    }
    Ok(s1 / n1 as f64 - s0 / n0 as f64)
}

/// Mean of `effects[i]` over the samples of `indices` treated with `treatment`.
pub fn mean_effect_on_treated(
    samples: &[SampleWindow],
    effects: &[f64],
    indices: &[usize],
    treatment: usize,
) -> Result<f64> {
    let treated: Vec<f64> = indices
        .iter()
        .filter(|&&i| samples[i].treatments[treatment])
        .map(|&i| effects[i])
        .collect();
    if treated.is_empty() {
        return Err(Error::UndefinedMetric(format!(
            "no treated samples for treatment {treatment}"
        )));
    }
    Ok(treated.iter().sum::<f64>() / treated.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_counted_confusion() {
        let probs = [0.9, 0.8, 0.7, 0.1, 0.2, 0.3, 0.6, 0.55];
        let labels = [true, true, true, true, false, false, false, false];
        let b = bacc(&probs, &labels).unwrap();
        assert_eq!(
            b.confusion,
            Confusion {
                tp: 3,
                fn_: 1,
                tn: 2,
                fp: 2
            }
        );
        assert_eq!(b.value, 0.625);
    }

    #[test]
    fn perfect_and_constant_predictors() {
        let labels = [true, false, true, false];
        assert_eq!(bacc(&[1.0, 0.0, 0.9, 0.1], &labels).unwrap().value, 1.0);
        assert_eq!(bacc(&[1.0; 4], &labels).unwrap().value, 0.5);
        assert_eq!(bacc(&[0.5; 4], &labels).unwrap().value, 0.5);
    }

    #[test]
    fn single_class_is_flagged() {
        let b = bacc(&[0.9, 0.1], &[true, true]).unwrap();
        assert_eq!(b.value, 0.5);
        assert!(b.warning.is_some());
        assert!(bacc(&[], &[]).is_err());
    }

    #[test]
    fn quartiles_interpolate() {
        let s = IteSummary::of(0, &[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!((s.min, s.q1, s.median, s.q3, s.max), (1.0, 1.75, 2.5, 3.25, 4.0));
        assert_eq!(s.mean, 2.5);
        assert!(IteSummary::of(0, &[]).is_err());
    }
}
