use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::samples::SampleWindow;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    /// Seeded uniform shuffle over samples.
    Random,
    /// Samples ordered by (time, location); earliest go to training.
    Chronological,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Train,
    Validation,
    Test,
}

/// Index partition of a sample list.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
    pub ratios: [f64; 3],
}

impl DatasetSplit {
    pub fn indices(&self, role: Role) -> &[usize] {
        match role {
            Role::Train => &self.train,
            Role::Validation => &self.validation,
            Role::Test => &self.test,
        }
    }

    /// Role of every sample index, for `n` samples.
    pub fn roles(&self, n: usize) -> Vec<Role> {
        let mut out = vec![Role::Train; n];
        for &i in &self.validation {
            out[i] = Role::Validation;
        }
        for &i in &self.test {
            out[i] = Role::Test;
        }
        out
    }
}

pub const DEFAULT_RATIOS: [f64; 3] = [0.7, 0.15, 0.15];

/// Partitions `samples` into train/validation/test by `ratios`.
pub fn split(samples: &[SampleWindow], ratios: [f64; 3], seed: u64, mode: SplitMode) -> Result<DatasetSplit> {
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios {ratios:?} must be in [0,1] and sum to 1"
        )));
    }
    let n = samples.len();
    let mut order: Vec<usize> = (0..n).collect();
    match mode {
        SplitMode::Random => order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed)),
        SplitMode::Chronological => order.sort_by_key(|&i| samples[i].key()),
    }
    let n_train = (n as f64 * ratios[0]).round() as usize;
    let n_val = ((n as f64 * ratios[1]).round() as usize).min(n - n_train);
    let mut train = order[..n_train].to_vec();
    let mut validation = order[n_train..n_train + n_val].to_vec();
    let mut test = order[n_train + n_val..].to_vec();
    train.sort_unstable();
    validation.sort_unstable();
    test.sort_unstable();
    Ok(DatasetSplit {
        train,
        validation,
        test,
        seed,
        ratios,
    })
}
