use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use eventcause::checkpoint::Checkpoint;
use eventcause::config::{NoiseMode, RunConfig};
use eventcause::data::write_adjacency_csv;
use eventcause::evaluation::robustness::{read_rows_csv, write_rows_csv, CSV_HEADER};
use eventcause::evaluation::{run_robustness, summarize, IteSummary};
use eventcause::pipeline::{
    causal_checkpoint, evaluate, file_dataset, guidance, load_causal, load_predictor, predictor_checkpoint, run_causal,
    run_predictor, synthetic_dataset, write_ite_csv, write_json, Dataset, JsonLines, MetricsReport,
};
use eventcause::predict::PredictorKind;
use eventcause::{Error, Result};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// Environment variable naming the directory searched for `config.json`
/// when `--config` is not given.
const CONFIG_DIR_ENV: &str = "EVENTCAUSE_CONFIG_DIR";

#[derive(Parser)]
#[command(
    name = "eventcause",
    version,
    about = "Treatment-effect estimation and causally guided forecasting for multi-type event data"
)]
struct Cli {
    /// JSON run configuration. Defaults to $EVENTCAUSE_CONFIG_DIR/config.json
    /// when that file exists, otherwise built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed; overrides the `seed` key of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Repeat for more log output (warn, info, debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DataArgs {
    /// Event CSV with header `location_id,time_index,event_type,count`.
    /// Without it, synthetic data is generated from the configuration.
    #[arg(long)]
    events: Option<PathBuf>,

    /// Optional `M×M` adjacency CSV accompanying `--events`.
    #[arg(long, requires = "events")]
    adjacency: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with known potential outcomes.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train the treatment-effect model (stage 1).
    TrainCausal {
        #[command(flatten)]
        data: DataArgs,
        /// Output checkpoint.
        #[arg(long)]
        out: PathBuf,
        /// JSON-lines epoch log; defaults to stdout.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Train the event predictor (stage 2) against a frozen causal model.
    TrainPredict {
        #[command(flatten)]
        data: DataArgs,
        /// Stage-1 checkpoint; required when a robust-learning module is on.
        #[arg(long)]
        causal_ckpt: Option<PathBuf>,
        #[arg(long, value_enum)]
        predictor: Option<KindArg>,
        #[arg(long)]
        use_reweight: bool,
        #[arg(long)]
        use_constraint: bool,
        /// Weight of the approximation constraint.
        #[arg(long)]
        mu: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Report effect-estimation and forecasting metrics on the test split.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        causal_ckpt: PathBuf,
        #[arg(long)]
        predictor_ckpt: Option<PathBuf>,
        /// Metrics report (JSON); defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-sample test ITE estimates (CSV).
        #[arg(long)]
        ite_csv: Option<PathBuf>,
    },
    /// Run the Poisson-noise robustness grid.
    Robustness {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out_dir: PathBuf,
        /// Noise modes; overrides the configuration.
        #[arg(long, value_enum, value_delimiter = ',')]
        modes: Vec<ModeArg>,
        /// Comma-separated noise rates; overrides the configuration.
        #[arg(long, value_delimiter = ',')]
        lambdas: Vec<f64>,
        /// Comma-separated master seeds; overrides the configuration.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Convert a robustness CSV or a metrics report into per-panel CSV series.
    EmitPlots {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Baseline,
    ExternalStub,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    TestNoise,
    TrainNoise,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = match &e {
                Error::Config(_) => "config",
                Error::Checkpoint { .. } | Error::ParamShape { .. } => "checkpoint",
                Error::Ingestion { .. } | Error::Csv(_) => "ingestion",
                Error::Io { .. } => "io",
                _ => "runtime",
            };
            let msg = serde_json::json!({"error": kind, "message": e.to_string()});
            eprintln!("{msg}");
            ExitCode::from(if matches!(e, Error::Config(_)) { 3 } else { 1 })
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli.config.clone().or_else(|| {
        let dir = std::env::var_os(CONFIG_DIR_ENV)?;
        let p = Path::new(&dir).join("config.json");
        p.exists().then_some(p)
    });
    let mut cfg = match path {
        Some(p) => RunConfig::load(&p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn dataset(cfg: &RunConfig, data: &DataArgs) -> Result<Dataset> {
    let ds = match &data.events {
        Some(events) => file_dataset(cfg, events, data.adjacency.as_deref())?,
        None => synthetic_dataset(cfg)?,
    };
    ds.positivity();
    Ok(ds)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn log_sink(path: Option<&Path>) -> Result<JsonLines<Box<dyn std::io::Write>>> {
    let out: Box<dyn std::io::Write> = match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(std::io::stdout()),
    };
    Ok(JsonLines::new(out))
}

fn make_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = resolve_config(&cli)?;
    match cli.command {
        Command::Synth { out_dir } => {
            cfg.validate()?;
            let data = synthetic_dataset(&cfg)?;
            make_dir(&out_dir)?;
            data.cube.write_csv(&out_dir.join("events.csv"))?;
            if let Some(a) = &data.cube.geo_adjacency {
                write_adjacency_csv(&out_dir.join("adjacency.csv"), a, data.cube.locations())?;
            }
            let truth = data.truth.as_ref().expect("synthetic data carries truth");
            truth.write_json(&out_dir.join("truth.json"), &data.cube.location_ids)?;
            write_json(&out_dir.join("config.json"), &cfg)?;
        }
        Command::TrainCausal { data, out, log } => {
            cfg.validate()?;
            let ds = dataset(&cfg, &data)?;
            let mut sink = log_sink(log.as_deref())?;
            let trained = run_causal(&cfg, &ds, &ds.samples, &mut |r| sink.emit(r))?;
            log::info!("best causal epoch {}", trained.best_epoch);
            save(&causal_checkpoint(&trained.model, &trained.params, &cfg.hash()), &out)?;
        }
        Command::TrainPredict {
            data,
            causal_ckpt,
            predictor,
            use_reweight,
            use_constraint,
            mu,
            out,
            log,
        } => {
            if let Some(k) = predictor {
                cfg.predictor.kind = match k {
                    KindArg::Baseline => PredictorKind::Baseline,
                    KindArg::ExternalStub => PredictorKind::ExternalStub,
                };
            }
            cfg.predictor.use_reweight |= use_reweight;
            cfg.predictor.use_constraint |= use_constraint;
            if let Some(mu) = mu {
                cfg.predictor.mu = mu;
            }
            cfg.validate()?;
            let ds = dataset(&cfg, &data)?;
            let pcfg = cfg.predictor_for_run();
            let guide = if pcfg.needs_guidance() {
                let path = causal_ckpt.ok_or_else(|| {
                    Error::Config("--causal-ckpt is required with --use-reweight or --use-constraint".into())
                })?;
                let (model, params, _) = load_causal(&path)?;
                Some(guidance(&model, &params, &ds.samples)?)
            } else {
                None
            };
            let mut sink = log_sink(log.as_deref())?;
            let (model, trained) = run_predictor(pcfg, &ds, &ds.samples, guide.as_deref(), &mut |r| {
                #[derive(Serialize)]
                struct Line {
                    epoch: usize,
                    train_loss: f64,
                    val_loss: f64,
                    val_bacc: Option<f64>,
                }
                sink.emit(&Line {
                    epoch: r.epoch,
                    train_loss: r.train_loss,
                    val_loss: r.val_loss,
                    val_bacc: r.val_bacc,
                })
            })?;
            log::info!("best predictor epoch {}", trained.best_epoch);
            save(&predictor_checkpoint(&model, &trained.params, &cfg.hash()), &out)?;
        }
        Command::Eval {
            data,
            causal_ckpt,
            predictor_ckpt,
            out,
            ite_csv,
        } => {
            cfg.validate()?;
            let ds = dataset(&cfg, &data)?;
            let (cm, cp, cman) = load_causal(&causal_ckpt)?;
            let pred = predictor_ckpt.as_deref().map(load_predictor).transpose()?;
            let (report, ite) = evaluate(
                &cfg,
                &ds,
                (&cm, &cp, &cman),
                pred.as_ref().map(|(m, p, man)| (m, p, man)),
            )?;
            match out {
                Some(p) => write_json(&p, &report)?,
                None => println!("{}", serde_json::to_string_pretty(&report)?),
            }
            if let Some(p) = ite_csv {
                write_ite_csv(&p, &ds, &ite)?;
            }
        }
        Command::Robustness {
            data,
            out_dir,
            modes,
            lambdas,
            seeds,
        } => {
            let grid = &mut cfg.evaluation.robustness;
            if !modes.is_empty() {
                grid.modes = modes
                    .iter()
                    .map(|m| match m {
                        ModeArg::TestNoise => NoiseMode::TestNoise,
                        ModeArg::TrainNoise => NoiseMode::TrainNoise,
                    })
                    .collect();
            }
            if !lambdas.is_empty() {
                grid.lambdas = lambdas;
            }
            if !seeds.is_empty() {
                grid.seeds = seeds;
            }
            cfg.validate()?;
            make_dir(&out_dir)?;
            let rows = run_robustness(&cfg, &|c| dataset(c, &data), &mut |_| {})?;
            write_rows_csv(&out_dir.join("robustness.csv"), &rows)?;
            let seeds: Vec<_> = cfg
                .evaluation
                .robustness
                .seeds
                .iter()
                .map(|&s| {
                    let c = RunConfig { seed: s, ..cfg.clone() };
                    serde_json::json!({"seed": s, "config_hash": c.hash()})
                })
                .collect();
            let manifest = serde_json::json!({
                "config": cfg,
                "config_hash": cfg.hash(),
                "data": data.events.as_ref().map_or("synthetic".to_string(), |p| p.display().to_string()),
                "rows": rows.len(),
                "runs": seeds,
                "columns": CSV_HEADER,
            });
            write_json(&out_dir.join("manifest.json"), &manifest)?;
        }
        Command::EmitPlots { input, out_dir } => {
            make_dir(&out_dir)?;
            emit_plots(&input, &out_dir)?;
        }
    }
    Ok(())
}

fn save(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        make_dir(dir)?;
    }
    ckpt.save(path)
}

fn write_series<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// A robustness CSV yields one BACC-versus-rate panel per noise mode; a
/// metrics report yields the ITE distribution and ATT-error panels.
fn emit_plots(input: &Path, out_dir: &Path) -> Result<()> {
    let is_json = input.extension().is_some_and(|e| e == "json");
    if !is_json {
        let summary = summarize(&read_rows_csv(input)?);
        let mut modes: Vec<&str> = summary.iter().map(|c| c.mode.as_str()).collect();
        modes.dedup();
        for mode in modes {
            let panel: Vec<_> = summary.iter().filter(|c| c.mode == mode).collect();
            write_series(&out_dir.join(format!("bacc_vs_lambda_{mode}.csv")), &panel)?;
        }
        return Ok(());
    }
    let text = std::fs::read_to_string(input).map_err(|e| Error::io(input, e))?;
    let report: MetricsReport = serde_json::from_str(&text)?;
    let ite: Vec<&IteSummary> = report.ite.iter().collect();
    write_series(&out_dir.join("ite_distribution.csv"), &ite)?;
    #[derive(Serialize)]
    struct AttRow {
        treatment: usize,
        att_error: Option<f64>,
        oracle_att_error: Option<f64>,
        naive_att_error: Option<f64>,
    }
    let att: Vec<AttRow> = report
        .treatments
        .iter()
        .map(|t| AttRow {
            treatment: t.treatment,
            att_error: t.att_error,
            oracle_att_error: t.oracle_att_error,
            naive_att_error: t.naive_att_error,
        })
        .collect();
    write_series(&out_dir.join("att_error.csv"), &att)
}
