//! End-to-end plumbing shared by the CLI, the FFI layer and the tests:
//! dataset assembly, the two training stages, checkpoints and reports.

use std::io::Write;
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::causal::{
    train_causal, CausalConfig, CausalModel, CausalObserver, Dims, EpochRecord, PotentialOutcomes, TrainedCausal,
};
use crate::checkpoint::{Checkpoint, Manifest, FORMAT_VERSION};
use crate::config::RunConfig;
use crate::data::{
    build_samples, load_adjacency_csv, load_event_csv, positivity, split, CubeDims, DatasetSplit, EventCube,
    PositivityEntry, SampleWindow,
};
use crate::error::{Error, Result};
use crate::evaluation::{att_error, bacc, matched_att, mean_effect_on_treated, naive_att, nn_match, Bacc, IteSummary};
use crate::predict::{train_predictor, Guidance, PredictEpoch, PredictorConfig, PredictorModel, TrainedPredictor};
use crate::synth::{generate, GroundTruth};

pub const CAUSAL_KIND: &str = "causal";
pub const PREDICTOR_KIND: &str = "predictor";

/// Samples, split and (for synthetic data) the ground truth of one run.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub cube: EventCube,
    pub samples: Vec<SampleWindow>,
    pub split: DatasetSplit,
    pub truth: Option<GroundTruth>,
}

impl Dataset {
    pub fn dims(&self) -> Result<Dims> {
        Dims::of(&self.samples, self.cube.locations())
    }

    /// Treated fraction per treatment over the training split.
    pub fn positivity(&self) -> Vec<PositivityEntry> {
        positivity(&self.samples, &self.split.train)
    }

    /// `location_id@time` for sample `k`.
    pub fn sample_key(&self, k: usize) -> String {
        let s = &self.samples[k];
        format!("{}@{}", self.cube.location_ids[s.location], s.time)
    }
}

/// Builds samples and the split for an event cube under `cfg`.
pub fn assemble(cfg: &RunConfig, cube: EventCube, truth: Option<GroundTruth>) -> Result<Dataset> {
    let d = &cfg.dataset;
    if cube.locations() != d.locations || cube.event_types() != d.event_types {
        return Err(Error::Config(format!(
            "data has {} locations and {} event types, config declares {} and {}",
            cube.locations(),
            cube.event_types(),
            d.locations,
            d.event_types
        )));
    }
    let samples = build_samples(&cube, d.window, d.lead, d.target_type)?;
    let split = split(&samples, d.ratios, cfg.seeds().split, d.split_mode)?;
    if let Some(t) = &truth {
        if t.records.len() != samples.len() {
            return Err(Error::Consistency(format!(
                "{} truth records for {} samples",
                t.records.len(),
                samples.len()
            )));
        }
    }
    Ok(Dataset {
        cube,
        samples,
        split,
        truth,
    })
}

/// Generates synthetic data from the run config.
pub fn synthetic_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let (cube, truth) = generate(&cfg.synthetic_for_run())?;
    assemble(cfg, cube, Some(truth))
}

/// Loads an event CSV (and optional adjacency CSV) declared by `cfg`.
pub fn file_dataset(cfg: &RunConfig, events: &Path, adjacency: Option<&Path>) -> Result<Dataset> {
    let d = &cfg.dataset;
    let dims = CubeDims {
        locations: Some(d.locations),
        event_types: Some(d.event_types),
        time_steps: d.time_steps,
    };
    let mut cube = load_event_csv(events, dims)?;
    if let Some(path) = adjacency {
        cube.set_adjacency(load_adjacency_csv(path)?)?;
    }
    assemble(cfg, cube, None)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSpec<C> {
    config: C,
    dims: Dims,
}

fn checkpoint<C: Serialize>(kind: &str, config: &C, dims: Dims, params: &ParamStore, config_hash: &str) -> Checkpoint {
    Checkpoint {
        manifest: Manifest {
            format_version: FORMAT_VERSION,
            kind: kind.to_string(),
            config_hash: config_hash.to_string(),
            model_config: serde_json::to_value(ModelSpec { config, dims }).expect("model config serializes"),
        },
        params: params.clone(),
    }
}

fn spec_of<C: DeserializeOwned>(ckpt: &Checkpoint, kind: &str) -> Result<ModelSpec<C>> {
    if ckpt.manifest.kind != kind {
        return Err(Error::checkpoint(
            "manifest",
            format!("expected a {kind} checkpoint, found `{}`", ckpt.manifest.kind),
        ));
    }
    serde_json::from_value(ckpt.manifest.model_config.clone()).map_err(|e| Error::checkpoint("manifest", e.to_string()))
}

pub fn causal_checkpoint(model: &CausalModel, params: &ParamStore, config_hash: &str) -> Checkpoint {
    checkpoint(CAUSAL_KIND, &model.config, model.dims, params, config_hash)
}

/// Rebuilds a causal model from a checkpoint and checks every parameter
/// shape against it.
pub fn restore_causal(ckpt: Checkpoint) -> Result<(CausalModel, ParamStore, Manifest)> {
    let spec: ModelSpec<CausalConfig> = spec_of(&ckpt, CAUSAL_KIND)?;
    let model = CausalModel::new(spec.config, spec.dims)?;
    ckpt.validate_against(&model.init_params())?;
    Ok((model, ckpt.params, ckpt.manifest))
}

pub fn load_causal(path: &Path) -> Result<(CausalModel, ParamStore, Manifest)> {
    restore_causal(Checkpoint::load(path)?)
}

pub fn predictor_checkpoint(model: &PredictorModel, params: &ParamStore, config_hash: &str) -> Checkpoint {
    checkpoint(PREDICTOR_KIND, &model.config, model.dims, params, config_hash)
}

pub fn restore_predictor(ckpt: Checkpoint) -> Result<(PredictorModel, ParamStore, Manifest)> {
    let spec: ModelSpec<PredictorConfig> = spec_of(&ckpt, PREDICTOR_KIND)?;
    let model = PredictorModel::new(spec.config, spec.dims)?;
    ckpt.validate_against(&model.init_params())?;
    Ok((model, ckpt.params, ckpt.manifest))
}

pub fn load_predictor(path: &Path) -> Result<(PredictorModel, ParamStore, Manifest)> {
    restore_predictor(Checkpoint::load(path)?)
}

/// Forwards epochs to a callback and, when ground truth is present, scores
/// the validation ATT of the designated treatment against it.
struct Observer<'a> {
    truth: Option<&'a GroundTruth>,
    samples: &'a [SampleWindow],
    treatment: usize,
    on_epoch: &'a mut dyn FnMut(&EpochRecord),
}

impl CausalObserver for Observer<'_> {
    fn tracks_att_error(&self) -> bool {
        self.truth.is_some()
    }

    fn validation_att_error(&mut self, predictions: &[PotentialOutcomes], split: &DatasetSplit) -> Option<f64> {
        let truth = self.truth?;
        let reference = truth.att_over(self.treatment, split.validation.iter().copied()).ok()?;
        let effects: Vec<f64> = predictions.iter().map(|p| p.ite(self.treatment)).collect();
        let estimate = mean_effect_on_treated(self.samples, &effects, &split.validation, self.treatment).ok()?;
        Some((estimate - reference).abs())
    }

    fn epoch(&mut self, record: &EpochRecord) {
        (self.on_epoch)(record)
    }
}

/// Stage 1 on `samples` (which may be a perturbed copy of `data.samples`).
pub fn run_causal(
    cfg: &RunConfig,
    data: &Dataset,
    samples: &[SampleWindow],
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainedCausal> {
    let model = CausalModel::new(cfg.causal_for_run(), Dims::of(samples, data.cube.locations())?)?;
    let mut observer = Observer {
        truth: data.truth.as_ref(),
        samples,
        treatment: cfg.evaluation.treatment,
        on_epoch,
    };
    train_causal(&model, samples, &data.split, &mut observer)
}

/// Guidance records of a frozen causal model for every sample.
pub fn guidance(model: &CausalModel, params: &ParamStore, samples: &[SampleWindow]) -> Result<Vec<Guidance>> {
    Guidance::for_all(&model.predict(params, samples)?)
}

/// Stage 2. Guidance is only consulted when a robust-learning module is on.
pub fn run_predictor(
    config: PredictorConfig,
    data: &Dataset,
    samples: &[SampleWindow],
    guidance: Option<&[Guidance]>,
    on_epoch: &mut dyn FnMut(&PredictEpoch),
) -> Result<(PredictorModel, TrainedPredictor)> {
    let model = PredictorModel::new(config, Dims::of(samples, data.cube.locations())?)?;
    let guidance = if model.config.needs_guidance() { guidance } else { None };
    let trained = train_predictor(&model, samples, &data.split, guidance, on_epoch)?;
    Ok((model, trained))
}

/// Test-split BACC of a trained predictor.
pub fn test_bacc(
    model: &PredictorModel,
    params: &ParamStore,
    data: &Dataset,
    samples: &[SampleWindow],
    guidance: Option<&[Guidance]>,
) -> Result<Bacc> {
    let guidance = if model.config.needs_guidance() { guidance } else { None };
    let probs = model.predict(params, samples, guidance)?;
    let test = &data.split.test;
    let p: Vec<f64> = test.iter().map(|&k| probs[k]).collect();
    let y: Vec<bool> = test.iter().map(|&k| samples[k].outcome).collect();
    bacc(&p, &y)
}

/// Effect-estimation metrics of one treatment on the test split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreatmentReport {
    pub treatment: usize,
    pub treated_test: usize,
    pub matched_pairs: usize,
    pub unmatched_treated: usize,
    pub excluded_locations: Vec<usize>,
    /// Factual ATT over the matched subset.
    pub matched_att: Option<f64>,
    /// `|matched ATT − mean τ̂ over the matched treated samples|`.
    pub att_error: Option<f64>,
    /// Mean τ̂ over every treated test sample.
    pub estimated_att: Option<f64>,
    /// Mean true ITE over treated test samples (synthetic data only).
    pub oracle_att: Option<f64>,
    pub oracle_att_error: Option<f64>,
    /// Error of the training-split difference in means against the oracle.
    pub naive_att_error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seed: u64,
    pub config_hash: String,
    pub causal_config_hash: String,
    pub designated_treatment: usize,
    pub test_samples: usize,
    pub treatments: Vec<TreatmentReport>,
    pub ite: Vec<IteSummary>,
    /// Present when a predictor checkpoint was evaluated.
    pub bacc: Option<Bacc>,
    pub predictor_flags: Option<String>,
    pub predictor_config_hash: Option<String>,
}

/// Per-sample ITE estimates, `ite[k][j]`.
pub type IteMatrix = Vec<Vec<f64>>;

fn defined(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedMetric(m)) => {
            log::warn!("{m}");
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Evaluates a causal model (and optionally a predictor) on the test split.
pub fn evaluate(
    cfg: &RunConfig,
    data: &Dataset,
    causal: (&CausalModel, &ParamStore, &Manifest),
    predictor: Option<(&PredictorModel, &ParamStore, &Manifest)>,
) -> Result<(MetricsReport, IteMatrix)> {
    let (cm, cp, cman) = causal;
    let outcomes = cm.predict(cp, &data.samples)?;
    let ite: IteMatrix = outcomes.iter().map(PotentialOutcomes::ites).collect();
    let test = &data.split.test;
    let e = cm.dims.event_types;

    let mut treatments = Vec::with_capacity(e);
    let mut summaries = Vec::with_capacity(e);
    for j in 0..e {
        let effects: Vec<f64> = ite.iter().map(|row| row[j]).collect();
        let matched = nn_match(&data.samples, test, j, cfg.evaluation.standardize_matching)?;
        let oracle = match &data.truth {
            Some(t) => defined(t.att_over(j, test.iter().copied()))?,
            None => None,
        };
        let estimated = defined(mean_effect_on_treated(&data.samples, &effects, test, j))?;
        let naive = defined(naive_att(&data.samples, &data.split.train, j))?;
        treatments.push(TreatmentReport {
            treatment: j,
            treated_test: test.iter().filter(|&&k| data.samples[k].treatments[j]).count(),
            matched_pairs: matched.pairs.len(),
            unmatched_treated: matched.unmatched,
            excluded_locations: matched.excluded_locations.clone(),
            matched_att: defined(matched_att(&data.samples, &matched))?,
            att_error: defined(att_error(&data.samples, &matched, &effects))?,
            estimated_att: estimated,
            oracle_att: oracle,
            oracle_att_error: oracle.zip(estimated).map(|(o, m)| (o - m).abs()),
            naive_att_error: oracle.zip(naive).map(|(o, n)| (o - n).abs()),
        });
        let test_effects: Vec<f64> = test.iter().map(|&k| effects[k]).collect();
        if !test_effects.is_empty() {
            summaries.push(IteSummary::of(j, &test_effects)?);
        }
    }

    let (bacc, flags, phash) = match predictor {
        Some((pm, pp, pman)) => {
            let g = Guidance::for_all(&outcomes)?;
            let b = test_bacc(pm, pp, data, &data.samples, Some(&g))?;
            (
                Some(b),
                Some(pm.config.flags_label().to_string()),
                Some(pman.config_hash.clone()),
            )
        }
        None => (None, None, None),
    };

    let report = MetricsReport {
        seed: cfg.seed,
        config_hash: cfg.hash(),
        causal_config_hash: cman.config_hash.clone(),
        designated_treatment: cfg.evaluation.treatment,
        test_samples: test.len(),
        treatments,
        ite: summaries,
        bacc,
        predictor_flags: flags,
        predictor_config_hash: phash,
    };
    Ok((report, ite))
}

/// Raw test-split ITE estimates: `sample,location,time,tau_0,..,tau_{E-1}`.
pub fn write_ite_csv(path: &Path, data: &Dataset, ite: &IteMatrix) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let e = ite.first().map_or(0, Vec::len);
    let mut header = vec!["sample".to_string(), "location".into(), "time".into()];
    header.extend((0..e).map(|j| format!("tau_{j}")));
    w.write_record(&header)?;
    for &k in &data.split.test {
        let s = &data.samples[k];
        let mut row = vec![
            data.sample_key(k),
            data.cube.location_ids[s.location].clone(),
            s.time.to_string(),
        ];
        row.extend(ite[k].iter().map(|v| format!("{v}")));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Writes `value` as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Appends one JSON object per line.
pub struct JsonLines<W: Write> {
    out: W,
}

impl<W: Write> JsonLines<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn emit<T: Serialize>(&mut self, value: &T) {
        let line = serde_json::to_string(value).expect("record serializes");
        if let Err(e) = writeln!(self.out, "{line}") {
            log::warn!("could not write log line: {e}");
        }
    }
}
