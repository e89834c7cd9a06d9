//! `pikan`: synthetic data, chained training, prediction, evaluation, λ tuning,
//! response export and gradient checks.

mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pikan::data::{load_inference_csv, write_csv, FeatureSchema, Stage, LOG_INTERVAL_S, TIMESTAMP_COLUMN};
use pikan::eval::{
    evaluate_predictions, export_responses, format_table, write_report_csv, write_responses_csv, DEFAULT_ZERO_DELTA,
    RESPONSE_GRID,
};
use pikan::gradcheck::run_suite;
use pikan::pipeline::{chained_predict, chained_train, tune_lambda_fleet, ModelFile, StageModel};

use config::{engineered_if_needed, ExperimentConfig};
use output::Staged;

#[derive(Debug)]
pub struct CliError {
    code: &'static str,
    message: String,
}

impl CliError {
    pub fn new(code: &'static str, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new("E_CONFIG", message)
    }
}

impl From<pikan::error::Error> for CliError {
    fn from(e: pikan::error::Error) -> Self {
        Self::new(e.code(), e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::new("E_IO", e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "pikan", version, about = "Physics-informed additive networks for vessel rpm, power and fuel")]
struct Cli {
    /// Worker threads for parallel folds and sweeps (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic vessel CSVs described by the config's [synth] section.
    SynthGen {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default: the config's out_dir).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the chained rpm, power and fuel models for every vessel.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Predict rpm, power and fuel for a feature CSV (targets optional).
    Predict {
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score model files against labelled test CSVs, paired in order.
    Evaluate {
        #[arg(long, required = true, num_args = 1..)]
        models: Vec<PathBuf>,
        #[arg(long, required = true, num_args = 1..)]
        test: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep the config's λ candidates across all vessels.
    TuneLambda {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Export per-feature response curves of an additive stage model.
    ExportResponses {
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// shaft_rpm, shaft_power or fuel.
        #[arg(long, default_value = "shaft_power")]
        stage: String,
        #[arg(long, default_value_t = RESPONSE_GRID)]
        grid: usize,
    },
    /// Finite-difference check of every loss gradient.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_config(path: &Path, out: Option<PathBuf>, seed: Option<u64>) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(o) = out {
        cfg.out_dir = o;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> pikan::error::Result<()>) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn load_models(path: &Path) -> Result<ModelFile, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::new("E_IO", format!("cannot read {}: {e}", path.display())))?;
    Ok(ModelFile::from_json(&text)?)
}

fn synth_gen(cfg: &ExperimentConfig) -> Result<(), CliError> {
    if cfg.synth.is_none() {
        return Err(CliError::config("synth-gen needs a [synth] section"));
    }
    let mut staged = Staged::new();
    for v in cfg.vessels()? {
        staged.add(cfg.out_dir.join(format!("{}.csv", v.id)), csv_bytes(|b| write_csv(&v.full, b))?);
    }
    for p in staged.commit()? {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn train(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let pipeline = cfg.pipeline();
    let hash = cfg.hash();
    let mut staged = Staged::new();
    for v in cfg.vessels()? {
        log::info!("training vessel `{}` on {} rows", v.id, v.train.len());
        let run = chained_train(&v.train, &pipeline)?;
        run.oof.assert_no_leakage()?;
        let dir = cfg.out_dir.join(&v.id);
        staged.add(dir.join("oof.csv"), csv_bytes(|b| run.oof.write_csv(b))?);
        for (stage, log) in
            [(Stage::Rpm, &run.logs.rpm), (Stage::Power, &run.logs.power), (Stage::Fuel, &run.logs.fuel)]
        {
            if let Some(log) = log {
                staged.add(dir.join(format!("trainlog_{}.csv", stage.name())), csv_bytes(|b| log.write_csv(b))?);
            }
        }
        staged.add(dir.join("test.csv"), csv_bytes(|b| write_csv(&v.test, b))?);
        let manifest = serde_json::json!({ "vessel": v.id, "method": cfg.method, "config_hash": hash, "config": cfg.provenance() });
        staged.add(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest).expect("json"));
        staged.add(dir.join("models.json"), ModelFile::new(run.models, hash.clone()).to_json()?.into_bytes());
    }
    for p in staged.commit()? {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn predict(models: &Path, input: &Path, out: &Path) -> Result<(), CliError> {
    let file = load_models(models)?;
    let ds = load_inference_csv(input, &FeatureSchema::base())?;
    let ds = engineered_if_needed(&ds, &file.models.features);
    let pred = chained_predict(&file.models, &ds)?;
    let bytes = csv_bytes(|b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record([TIMESTAMP_COLUMN, "predicted_rpm", "predicted_shaft_power", "predicted_fuel_consumed"])?;
        for (i, r) in ds.records().iter().enumerate() {
            w.write_record([
                r.timestamp.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
                pred.rpm[i].to_string(),
                (pred.power[i] / 1e3).to_string(),
                (pred.fuel[i] * LOG_INTERVAL_S).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    let mut staged = Staged::new();
    staged.add(out.to_path_buf(), bytes);
    staged.commit()?;
    println!("wrote {} predictions to {}", pred.rpm.len(), out.display());
    Ok(())
}

fn evaluate(models: &[PathBuf], tests: &[PathBuf], out: &Path) -> Result<(), CliError> {
    if models.len() != tests.len() {
        return Err(CliError::new(
            "E_ARGUMENT",
            format!("{} model files but {} test files", models.len(), tests.len()),
        ));
    }
    let mut reports = Vec::new();
    for (m, t) in models.iter().zip(tests) {
        let file = load_models(m)?;
        let ds = pikan::data::load_csv(t, &FeatureSchema::base())?;
        if ds.is_empty() {
            log::warn!("skipping {}: empty test set", t.display());
            continue;
        }
        let ds = engineered_if_needed(&ds, &file.models.features);
        let pred = chained_predict(&file.models, &ds)?;
        reports.push(evaluate_predictions(
            &ds.vessel_id,
            file.method,
            &file.config_hash,
            &pred,
            &ds,
            DEFAULT_ZERO_DELTA,
        )?);
    }
    let mut staged = Staged::new();
    staged.add(out.to_path_buf(), csv_bytes(|b| write_report_csv(&reports, b))?);
    staged.commit()?;
    print!("{}", format_table(&reports));
    println!("metrics in SI units: rpm, W, kg/s; wrote {}", out.display());
    Ok(())
}

fn tune(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let vessels: Vec<_> = cfg.vessels()?.into_iter().map(|v| v.train).collect();
    let tuning = tune_lambda_fleet(&vessels, &cfg.lambda_candidates, &cfg.pipeline(), cfg.tune_target)?;
    let out = cfg.out_dir.join("lambda_tuning.csv");
    let mut staged = Staged::new();
    staged.add(out.clone(), csv_bytes(|b| tuning.write_csv(b))?);
    staged.commit()?;
    println!("lambda* = {}", tuning.best);
    println!("wrote {}", out.display());
    Ok(())
}

fn responses(models: &Path, out: &Path, stage: &str, grid: usize) -> Result<(), CliError> {
    let stage = Stage::from_name(stage).ok_or_else(|| {
        CliError::new("E_ARGUMENT", format!("unknown stage `{stage}` (shaft_rpm, shaft_power, fuel)"))
    })?;
    if grid == 0 {
        return Err(CliError::new("E_ARGUMENT", "grid must be >= 1"));
    }
    let file = load_models(models)?;
    let model = match stage {
        Stage::Rpm => &file.models.rpm,
        Stage::Power => &file.models.power,
        Stage::Fuel => &file.models.fuel,
    };
    let StageModel::Kan(kan) = model else {
        return Err(CliError::new("E_ARGUMENT", format!("{} stage is not an additive network model", stage.name())));
    };
    let curves = export_responses(kan, grid)?;
    let mut staged = Staged::new();
    staged.add(out.to_path_buf(), csv_bytes(|b| write_responses_csv(&curves, b))?);
    staged.commit()?;
    println!("wrote {} response curves to {}", curves.len(), out.display());
    Ok(())
}

fn gradcheck(seed: u64) -> Result<(), CliError> {
    let results = run_suite([seed])?;
    let mut worst: f64 = 0.0;
    for r in &results {
        worst = worst.max(r.max_rel_error);
        println!(
            "{:<14} {:<18} params {:>4}  max rel error {:.3e}  {}",
            format!("{:?}", r.architecture),
            r.variant.name(),
            r.params,
            r.max_rel_error,
            if r.passed() { "ok" } else { "FAIL" }
        );
    }
    if results.iter().all(|r| r.passed()) {
        println!("gradcheck passed: max relative error {worst:.3e}");
        Ok(())
    } else {
        Err(CliError::new("E_GRADCHECK", format!("gradient check failed: max relative error {worst:.3e}")))
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(CliError::new("E_ARGUMENT", "--jobs must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| CliError::new("E_ARGUMENT", e.to_string()))?;
    }
    match cli.command {
        Command::SynthGen { config, out, seed } => synth_gen(&load_config(&config, out, seed)?),
        Command::Train { config, out, seed } => train(&load_config(&config, out, seed)?),
        Command::Predict { models, input, out } => predict(&models, &input, &out),
        Command::Evaluate { models, test, out } => evaluate(&models, &test, &out),
        Command::TuneLambda { config, out, seed } => tune(&load_config(&config, out, seed)?),
        Command::ExportResponses { models, out, stage, grid } => responses(&models, &out, &stage, grid),
        Command::Gradcheck { seed } => gradcheck(seed),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.code, e.message.replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
