//! Run configuration: one JSON document covering data, both models and
//! evaluation, identified by a content hash.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::causal::CausalConfig;
use crate::data::{SplitMode, DEFAULT_RATIOS};
use crate::error::{Error, Result};
use crate::predict::PredictorConfig;
use crate::synth::SyntheticConfig;

/// Shape of the event data and how samples are split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub locations: usize,
    pub event_types: usize,
    /// Number of time steps; inferred from the data when absent.
    pub time_steps: Option<usize>,
    pub window: usize,
    pub lead: usize,
    pub target_type: usize,
    pub ratios: [f64; 3],
    pub split_mode: SplitMode,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            locations: 6,
            event_types: 4,
            time_steps: None,
            window: 7,
            lead: 1,
            target_type: 3,
            ratios: DEFAULT_RATIOS,
            split_mode: SplitMode::Random,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    /// Noise on validation and test covariates.
    TestNoise,
    /// Noise on training covariates only.
    TrainNoise,
}

impl NoiseMode {
    pub fn label(self) -> &'static str {
        match self {
            NoiseMode::TestNoise => "test-noise",
            NoiseMode::TrainNoise => "train-noise",
        }
    }
}

/// Enabled stage-2 modules for one robustness cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlagSet {
    pub reweight: bool,
    pub constraint: bool,
}

impl FlagSet {
    pub const ALL: [FlagSet; 4] = [
        FlagSet {
            reweight: false,
            constraint: false,
        },
        FlagSet {
            reweight: true,
            constraint: false,
        },
        FlagSet {
            reweight: false,
            constraint: true,
        },
        FlagSet {
            reweight: true,
            constraint: true,
        },
    ];

    pub fn label(self) -> &'static str {
        match (self.reweight, self.constraint) {
            (false, false) => "none",
            (true, false) => "F",
            (false, true) => "L",
            (true, true) => "F+L",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobustnessConfig {
    pub modes: Vec<NoiseMode>,
    pub lambdas: Vec<f64>,
    pub flags: Vec<FlagSet>,
    pub seeds: Vec<u64>,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        Self {
            modes: vec![NoiseMode::TestNoise],
            lambdas: vec![0.0, 5.0, 15.0],
            flags: FlagSet::ALL.to_vec(),
            seeds: (0..5).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct EvaluationConfig {
    /// Treatment whose effect estimate is the headline metric.
    pub treatment: usize,
    /// Z-score covariates before nearest-neighbour matching.
    pub standardize_matching: bool,
    pub robustness: RobustnessConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; every stage derives its own seed from it.
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub synthetic: SyntheticConfig,
    pub causal: CausalConfig,
    pub predictor: PredictorConfig,
    pub evaluation: EvaluationConfig,
}

/// Per-stage seeds derived from one master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct StageSeeds {
    pub split: u64,
    pub causal: u64,
    pub predictor: u64,
    pub noise: u64,
}

impl StageSeeds {
    /// Fixed offsets leave room for the streams each trainer derives from
    /// its own seed (causal: +0 init, +1 batches; predictor: +0, +1, +2).
    pub fn from_master(seed: u64) -> Self {
        Self {
            split: seed.wrapping_add(1),
            causal: seed.wrapping_add(2),
            predictor: seed.wrapping_add(4),
            noise: seed.wrapping_add(7),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        if d.locations == 0 || d.event_types == 0 || d.window == 0 || d.lead == 0 {
            return Err(Error::Config("dataset sizes, window and lead must be positive".into()));
        }
        if d.target_type >= d.event_types {
            return Err(Error::Config(format!(
                "target type {} outside {} event types",
                d.target_type, d.event_types
            )));
        }
        if self.evaluation.treatment >= d.event_types {
            return Err(Error::Config(format!(
                "designated treatment {} outside {} event types",
                self.evaluation.treatment, d.event_types
            )));
        }
        if d.ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (d.ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split ratios {:?} must be in [0,1] and sum to 1",
                d.ratios
            )));
        }
        if self
            .evaluation
            .robustness
            .lambdas
            .iter()
            .any(|l| l.is_nan() || *l < 0.0)
        {
            return Err(Error::Config("noise rates must be ≥ 0".into()));
        }
        self.causal.validate()?;
        self.predictor.validate()?;
        self.synthetic_for_run().validate()
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hex SHA-256 of the compact JSON serialization. Field order is fixed
    /// by the struct definitions, so equal configs hash equally.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(text.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn seeds(&self) -> StageSeeds {
        StageSeeds::from_master(self.seed)
    }

    /// Causal config with its stage seed applied.
    pub fn causal_for_run(&self) -> CausalConfig {
        CausalConfig {
            seed: self.seeds().causal,
            ..self.causal.clone()
        }
    }

    /// Synthetic generator config with the dataset shape and master seed
    /// applied, so generated data always matches the dataset section.
    pub fn synthetic_for_run(&self) -> SyntheticConfig {
        let d = &self.dataset;
        SyntheticConfig {
            locations: d.locations,
            event_types: d.event_types,
            time_steps: d.time_steps.unwrap_or(self.synthetic.time_steps),
            window: d.window,
            lead: d.lead,
            target_type: d.target_type,
            seed: self.seed,
            ..self.synthetic.clone()
        }
    }

    pub fn predictor_for_run(&self) -> PredictorConfig {
        PredictorConfig {
            seed: self.seeds().predictor,
            ..self.predictor.clone()
        }
    }
}
