//! Poisson-noise robustness grid: for every seed, noise mode, rate and
//! module combination, the two-stage pipeline is rerun on perturbed data
//! and the test BACC recorded.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{FlagSet, NoiseMode, RunConfig};
use crate::data::{perturb_roles, Role, SampleWindow};
use crate::error::{Error, Result};
use crate::pipeline::{guidance, run_causal, run_predictor, test_bacc, Dataset};
use crate::predict::{Guidance, PredictorConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub mode: String,
    pub lambda: f64,
    pub flags: String,
    pub seed: u64,
    pub bacc: f64,
}

pub const CSV_HEADER: [&str; 5] = ["mode", "lambda", "flags", "seed", "bacc"];

impl NoiseMode {
    /// Split roles whose covariates receive noise.
    pub fn roles(self) -> &'static [Role] {
        match self {
            NoiseMode::TestNoise => &[Role::Validation, Role::Test],
            NoiseMode::TrainNoise => &[Role::Train],
        }
    }
}

/// Perturbed copy of `data.samples` for one grid cell.
pub fn noisy_samples(cfg: &RunConfig, data: &Dataset, mode: NoiseMode, lambda: f64) -> Result<Vec<SampleWindow>> {
    perturb_roles(&data.samples, &data.split, mode.roles(), lambda, cfg.seeds().noise)
}

/// Predictor config for one module combination under run config `cfg`.
pub fn cell_predictor(cfg: &RunConfig, flags: FlagSet) -> PredictorConfig {
    PredictorConfig {
        use_reweight: flags.reweight,
        use_constraint: flags.constraint,
        ..cfg.predictor_for_run()
    }
}

/// Runs the grid. `dataset` produces the data of one master seed; each seed
/// gets its own data and split. A causal model is trained once per
/// (seed, mode, rate) and shared by every module combination, and the
/// noise-free model is shared by all modes.
pub fn run_robustness(
    base: &RunConfig,
    dataset: &dyn Fn(&RunConfig) -> Result<Dataset>,
    on_row: &mut dyn FnMut(&RobustnessRow),
) -> Result<Vec<RobustnessRow>> {
    let grid = &base.evaluation.robustness;
    if grid.lambdas.is_empty() || grid.flags.is_empty() || grid.seeds.is_empty() || grid.modes.is_empty() {
        return Err(Error::Config(
            "robustness grid needs at least one mode, rate, flag set and seed".into(),
        ));
    }
    let mut rows = Vec::new();
    for &seed in &grid.seeds {
        let cfg = RunConfig { seed, ..base.clone() };
        let data = dataset(&cfg)?;
        let mut clean: Option<Vec<Guidance>> = None;
        for &mode in &grid.modes {
            for &lambda in &grid.lambdas {
                let samples = noisy_samples(&cfg, &data, mode, lambda)?;
                let needs_causal = grid.flags.iter().any(|f| f.reweight || f.constraint);
                let guide = if !needs_causal {
                    None
                } else if lambda == 0.0 && clean.is_some() {
                    clean.clone()
                } else {
                    log::info!("seed {seed} {} λ={lambda}: training causal model", mode.label());
                    let trained = run_causal(&cfg, &data, &samples, &mut |_| {})?;
                    let g = guidance(&trained.model, &trained.params, &samples)?;
                    if lambda == 0.0 {
                        clean = Some(g.clone());
                    }
                    Some(g)
                };
                for &flags in &grid.flags {
                    let pcfg = cell_predictor(&cfg, flags);
                    let (model, trained) = run_predictor(pcfg, &data, &samples, guide.as_deref(), &mut |_| {})?;
                    let b = test_bacc(&model, &trained.params, &data, &samples, guide.as_deref())?;
                    let row = RobustnessRow {
                        mode: mode.label().to_string(),
                        lambda,
                        flags: flags.label().to_string(),
                        seed,
                        bacc: b.value,
                    };
                    log::info!("{row:?}");
                    on_row(&row);
                    rows.push(row);
                }
            }
        }
    }
    Ok(rows)
}

pub fn write_rows_csv(path: &Path, rows: &[RobustnessRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_rows_csv(path: &Path) -> Result<Vec<RobustnessRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::Ingestion {
            line: 1,
            message: format!("expected header {CSV_HEADER:?}, found {header:?}"),
        });
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Mean and population standard deviation of BACC over seeds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellSummary {
    pub mode: String,
    pub lambda: f64,
    pub flags: String,
    pub seeds: usize,
    pub mean_bacc: f64,
    pub std_bacc: f64,
}

/// Aggregates rows over seeds, ordered by mode, rate and the first
/// appearance of each flag label.
pub fn summarize(rows: &[RobustnessRow]) -> Vec<CellSummary> {
    let mut flag_order: Vec<&str> = Vec::new();
    for r in rows {
        if !flag_order.contains(&r.flags.as_str()) {
            flag_order.push(&r.flags);
        }
    }
    let rank = |f: &str| flag_order.iter().position(|x| *x == f).unwrap_or(usize::MAX);
    let mut cells: BTreeMap<(String, u64, usize), Vec<f64>> = BTreeMap::new();
    for r in rows {
        cells
            .entry((r.mode.clone(), r.lambda.to_bits(), rank(&r.flags)))
            .or_default()
            .push(r.bacc);
    }
    let mut out: Vec<CellSummary> = cells
        .into_iter()
        .map(|((mode, lambda, f), v)| {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            CellSummary {
                mode,
                lambda: f64::from_bits(lambda),
                flags: flag_order[f].to_string(),
                seeds: v.len(),
                mean_bacc: mean,
                std_bacc: var.sqrt(),
            }
        })
        .collect();
    out.sort_by(|a, b| {
        a.mode
            .cmp(&b.mode)
            .then(a.lambda.total_cmp(&b.lambda))
            .then(rank(&a.flags).cmp(&rank(&b.flags)))
    });
    out
}
