//! The chained RPM → power → fuel pipeline with K-fold out-of-fold stacking,
//! deployable refits, chained inference and fleet-wide λ tuning.
//!
//! Each downstream stage consumes its predecessor's prediction as an input.
//! During training that column is always out-of-fold: the value for row `r`
//! comes from a model that never saw `r`'s fold, so no stage learns from a
//! stacked input that has already seen its own target.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{pm_fit, pm_select_features, MlpConfig, MlpModel, PolynomialModel, PM_MAX_FEATURES};
use crate::data::{
    assign_folds, chronological_split, engineer_features, Feature, FeatureKind, FeatureMatrix, FeatureSchema,
    FoldAssignment, FoldMode, Stage, VesselDataset,
};
use crate::error::{Error, Result};
use crate::kan::{KanConfig, KanModel};
use crate::physics::{calibrate_k, calibrate_resistance, CubeLaw, CubeLawMode, PhysicsConfig, DEFAULT_N_MIN};
use crate::train::{fit, LambdaMode, LossWeights, PhysicsTargets, Regressor, TrainConfig, TrainLog};

pub const MODEL_FILE_FORMAT: &str = "pikan-chained-models";
pub const MODEL_FILE_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "pikan")]
    PiKan,
    /// The additive network with the physics term switched off.
    #[serde(rename = "kan_noPhysics")]
    KanNoPhysics,
    #[serde(rename = "polynomial")]
    Polynomial,
    #[serde(rename = "mlp")]
    Mlp,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::PiKan, Method::KanNoPhysics, Method::Polynomial, Method::Mlp];

    pub fn name(self) -> &'static str {
        match self {
            Method::PiKan => "pikan",
            Method::KanNoPhysics => "kan_noPhysics",
            Method::Polynomial => "polynomial",
            Method::Mlp => "mlp",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A trained model for one stage, tagged by method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", content = "model", rename_all = "snake_case")]
pub enum StageModel {
    Kan(KanModel),
    Polynomial(PolynomialModel),
    Mlp(MlpModel),
}

impl Regressor for StageModel {
    fn schema(&self) -> &FeatureSchema {
        match self {
            StageModel::Kan(m) => m.schema(),
            StageModel::Polynomial(m) => m.schema(),
            StageModel::Mlp(m) => m.schema(),
        }
    }

    fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        match self {
            StageModel::Kan(m) => m.predict(x),
            StageModel::Polynomial(m) => m.predict(x),
            StageModel::Mlp(m) => m.predict(x),
        }
    }
}

impl StageModel {
    pub fn as_kan(&self) -> Option<&KanModel> {
        match self {
            StageModel::Kan(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_kan_mut(&mut self) -> Option<&mut KanModel> {
        match self {
            StageModel::Kan(m) => Some(m),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub method: Method,
    /// Number of out-of-fold partitions K.
    pub folds: usize,
    pub fold_mode: FoldMode,
    /// Raw and derived inputs shared by all stages (stacked inputs are added per stage).
    pub features: FeatureSchema,
    pub kan: KanConfig,
    pub mlp: MlpConfig,
    pub train: TrainConfig,
    pub mlp_train: TrainConfig,
    pub weights: LossWeights,
    pub physics: PhysicsConfig,
    /// Least-squares fit the resistance coefficients on the training rows.
    pub calibrate_resistance: bool,
    /// Idle floor for cube-law calibration, 1/min.
    pub n_min: f64,
    /// Fixed polynomial-model features; `None` runs greedy selection per stage.
    pub polynomial_features: Option<Vec<Feature>>,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            method: Method::PiKan,
            folds: 5,
            fold_mode: FoldMode::Contiguous,
            features: FeatureSchema::engineered(),
            kan: KanConfig::default(),
            mlp: MlpConfig::default(),
            train: TrainConfig::default(),
            mlp_train: MlpConfig::train_config(0),
            weights: LossWeights::default(),
            physics: PhysicsConfig::default(),
            calibrate_resistance: false,
            n_min: DEFAULT_N_MIN,
            polynomial_features: None,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::Config(format!("folds = {} must be >= 2", self.folds)));
        }
        for &f in self.features.features() {
            if f.kind() == FeatureKind::Stacked {
                return Err(Error::Config(format!("stacked feature `{f}` cannot be a shared input")));
            }
        }
        if self.features.is_empty() {
            return Err(Error::Config("no input features".into()));
        }
        self.train.validate()?;
        self.mlp_train.validate()?;
        self.weights.validate()?;
        self.physics.validate()
    }

    /// Inputs of `stage`: the shared features plus the predecessor's output.
    pub fn stage_schema(&self, stage: Stage) -> FeatureSchema {
        match stage.stacked_input() {
            Some(f) => self.features.with(f),
            None => self.features.clone(),
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hash_json(self)
    }
}

pub fn hash_json<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    hex::encode(Sha256::digest(&json))
}

fn needs_engineering(schema: &FeatureSchema) -> bool {
    schema.features().iter().any(|f| f.kind() == FeatureKind::Derived)
}

/// Engineers derived features when the configured inputs require them.
pub fn prepare_dataset(ds: &VesselDataset, cfg: &PipelineConfig) -> VesselDataset {
    if needs_engineering(&cfg.features) && ds.records().iter().any(|r| r.derived.is_none()) {
        engineer_features(ds)
    } else {
        ds.clone()
    }
}

fn stage_seed(seed: u64, stage: Stage, slot: usize) -> u64 {
    let s = match stage {
        Stage::Rpm => 1u64,
        Stage::Power => 2,
        Stage::Fuel => 3,
    };
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (s << 32) ^ slot as u64
}

/// Physics constants actually used in training: resistance coefficients
/// optionally calibrated, and the per-rpm cube law calibrated when the cube
/// term is active and no constant was given.
pub fn resolve_physics(train: &VesselDataset, cfg: &PipelineConfig) -> Result<PhysicsConfig> {
    let mut physics =
        if cfg.calibrate_resistance { calibrate_resistance(train, &cfg.physics)? } else { cfg.physics.clone() };
    if cfg.weights.gamma > 0.0 && physics.cube_law.is_none() {
        physics.cube_law = Some(CubeLaw { k: calibrate_k(train, cfg.n_min)?, mode: CubeLawMode::PerRpm });
    }
    Ok(physics)
}

/// Inputs needed to train one stage on a set of rows.
pub struct StageData<'a> {
    pub dataset: &'a VesselDataset,
    pub rows: &'a [usize],
    /// Full-length stacked column (predecessor output), if the stage has one.
    pub stacked: Option<&'a [f64]>,
}

impl StageData<'_> {
    fn matrix(&self, stage: Stage, cfg: &PipelineConfig) -> Result<FeatureMatrix> {
        stage_matrix(&self.dataset.subset(self.rows), stage, cfg, self.stacked.map(|s| pick(s, self.rows)).as_deref())
    }
}

fn pick(v: &[f64], rows: &[usize]) -> Vec<f64> {
    rows.iter().map(|&r| v[r]).collect()
}

/// The stage's input matrix: shared features plus the stacked column.
pub fn stage_matrix(
    ds: &VesselDataset,
    stage: Stage,
    cfg: &PipelineConfig,
    stacked: Option<&[f64]>,
) -> Result<FeatureMatrix> {
    let schema = cfg.stage_schema(stage);
    schema.validate_for_stage(stage)?;
    match (stage.stacked_input(), stacked) {
        (Some(f), Some(col)) => FeatureMatrix::from_dataset(ds, &schema, &[(f, col)]),
        (None, _) => FeatureMatrix::from_dataset(ds, &schema, &[]),
        (Some(f), None) => Err(Error::Schema(format!("{stage} stage needs stacked column `{f}`"))),
    }
}

/// Trains one stage model on `data.rows`. Returns the training log for
/// gradient-trained methods.
pub fn fit_stage(
    stage: Stage,
    data: &StageData<'_>,
    physics: &PhysicsConfig,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<(StageModel, Option<TrainLog>)> {
    let x = data.matrix(stage, cfg)?;
    let y = pick(&data.dataset.targets(stage)?, data.rows);
    match cfg.method {
        Method::PiKan | Method::KanNoPhysics => {
            let mut weights = cfg.weights.clone();
            if cfg.method == Method::KanNoPhysics {
                weights.lambda_mode = LambdaMode::Disabled;
            }
            let records: Vec<_> = data.rows.iter().map(|&r| data.dataset.records()[r].clone()).collect();
            let stacked = data.stacked.map(|s| pick(s, data.rows));
            let targets = if weights.lambda_mode == LambdaMode::Disabled {
                PhysicsTargets::None
            } else {
                match stage {
                    Stage::Rpm => PhysicsTargets::None,
                    Stage::Power => PhysicsTargets::power(&records, physics, weights.gamma, stacked.as_deref())?,
                    Stage::Fuel => PhysicsTargets::fuel(stacked.as_deref().expect("fuel stage is stacked"), physics),
                }
            };
            let model = KanModel::new(x.schema(), cfg.kan, seed)?;
            let train = TrainConfig { seed, ..cfg.train.clone() };
            let (model, log) = fit(model, &x, &y, &targets, &weights, &train)?;
            Ok((StageModel::Kan(model), Some(log)))
        }
        Method::Mlp => {
            let model = MlpModel::new(x.schema(), &cfg.mlp, seed)?;
            let train = TrainConfig { seed, ..cfg.mlp_train.clone() };
            let (model, log) = fit(model, &x, &y, &PhysicsTargets::None, &cfg.weights, &train)?;
            Ok((StageModel::Mlp(model), Some(log)))
        }
        Method::Polynomial => {
            let features = match &cfg.polynomial_features {
                Some(f) => f.clone(),
                None => {
                    let candidates: Vec<Feature> = x.schema().features().to_vec();
                    let mut sel = pm_select_features(&x, &y, &candidates, PM_MAX_FEATURES)?;
                    if sel.is_empty() {
                        sel.push(candidates[0]);
                    }
                    sel
                }
            };
            Ok((StageModel::Polynomial(pm_fit(&x, &y, &features)?), None))
        }
    }
}

/// Audit record of one fold model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldModelInfo {
    /// The fold this model predicts.
    pub held_out: usize,
    /// Folds whose rows it was trained on.
    pub trained_on: Vec<usize>,
}

/// One stage's out-of-fold column with per-row provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OofColumn {
    pub stage: Stage,
    pub predictions: Vec<f64>,
    /// Index into `models` of the fold model that produced each row.
    pub provenance: Vec<usize>,
    pub models: Vec<FoldModelInfo>,
}

impl OofColumn {
    /// Every row predicted exactly once, by a model that excluded its fold.
    pub fn assert_no_leakage(&self, folds: &FoldAssignment) -> Result<()> {
        if self.predictions.len() != folds.len() || self.provenance.len() != folds.len() {
            return Err(Error::Shape(format!("{} OOF rows for {} assigned rows", self.predictions.len(), folds.len())));
        }
        let mut seen = vec![false; folds.len()];
        for (r, &m) in self.provenance.iter().enumerate() {
            let info =
                self.models.get(m).ok_or_else(|| Error::InvalidArgument(format!("row {r}: unknown fold model {m}")))?;
            let fold = folds.fold_of_row[r];
            if info.trained_on.contains(&fold) || info.held_out != fold {
                return Err(Error::InvalidArgument(format!(
                    "{} row {r} (fold {fold}) predicted by a model trained on folds {:?}",
                    self.stage, info.trained_on
                )));
            }
            if std::mem::replace(&mut seen[r], true) {
                return Err(Error::InvalidArgument(format!("row {r} predicted twice")));
            }
        }
        Ok(())
    }
}

/// Fold assignment and the stacked OOF columns of a chained run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OofTable {
    pub folds: FoldAssignment,
    pub rpm: OofColumn,
    pub power: OofColumn,
}

impl OofTable {
    pub fn predicted_rpm(&self) -> &[f64] {
        &self.rpm.predictions
    }

    pub fn predicted_shaft_power(&self) -> &[f64] {
        &self.power.predictions
    }

    /// Structural no-leakage check over both stacked columns.
    pub fn assert_no_leakage(&self) -> Result<()> {
        self.rpm.assert_no_leakage(&self.folds)?;
        self.power.assert_no_leakage(&self.folds)
    }

    /// `row,fold,predicted_rpm,predicted_shaft_power`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["row", "fold", "predicted_rpm", "predicted_shaft_power"])?;
        for r in 0..self.folds.len() {
            w.write_record([
                r.to_string(),
                self.folds.fold_of_row[r].to_string(),
                self.rpm.predictions[r].to_string(),
                self.power.predictions[r].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Trains one model per fold on the other folds and predicts the held-out
/// fold. Fold trainings run in parallel; results are assembled in fold order.
pub fn oof_stage(
    stage: Stage,
    dataset: &VesselDataset,
    folds: &FoldAssignment,
    stacked: Option<&[f64]>,
    physics: &PhysicsConfig,
    cfg: &PipelineConfig,
) -> Result<(OofColumn, Vec<StageModel>)> {
    if folds.len() != dataset.len() {
        return Err(Error::Shape(format!("{} fold entries for {} rows", folds.len(), dataset.len())));
    }
    let trained: Vec<Result<(StageModel, Vec<usize>, Vec<f64>)>> = (0..folds.k)
        .into_par_iter()
        .map(|k| {
            let train_rows = folds.training_rows(k);
            let held = folds.held_out(k);
            let data = StageData { dataset, rows: &train_rows, stacked };
            let (model, _) = fit_stage(stage, &data, physics, cfg, stage_seed(cfg.seed, stage, k))
                .map_err(|e| Error::Fold { fold: k, source: Box::new(e) })?;
            let x = StageData { dataset, rows: &held, stacked }.matrix(stage, cfg)?;
            let pred = model.predict(&x).map_err(|e| Error::Fold { fold: k, source: Box::new(e) })?;
            Ok((model, held, pred))
        })
        .collect();
    let mut predictions = vec![f64::NAN; dataset.len()];
    let mut provenance = vec![usize::MAX; dataset.len()];
    let mut models = Vec::with_capacity(folds.k);
    let mut infos = Vec::with_capacity(folds.k);
    for (k, result) in trained.into_iter().enumerate() {
        let (model, held, pred) = result?;
        for (&r, p) in held.iter().zip(pred) {
            predictions[r] = p;
            provenance[r] = k;
        }
        infos.push(FoldModelInfo { held_out: k, trained_on: (0..folds.k).filter(|&j| j != k).collect() });
        models.push(model);
    }
    Ok((OofColumn { stage, predictions, provenance, models: infos }, models))
}

/// The three deployable stage models and everything needed to apply them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainedModels {
    pub method: Method,
    /// Shared raw/derived inputs.
    pub features: FeatureSchema,
    pub rpm: StageModel,
    pub power: StageModel,
    pub fuel: StageModel,
    /// Physics constants used in training.
    pub physics: PhysicsConfig,
    pub weights: LossWeights,
}

/// Training logs of the deployable refits.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageLogs {
    pub rpm: Option<TrainLog>,
    pub power: Option<TrainLog>,
    pub fuel: Option<TrainLog>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainedRun {
    pub models: ChainedModels,
    pub oof: OofTable,
    pub logs: StageLogs,
}

/// OOF rpm → power (with OOF rpm) → fuel (with OOF power), then refits each
/// stage on all rows using the OOF columns as stacked inputs.
pub fn chained_train(dataset: &VesselDataset, cfg: &PipelineConfig) -> Result<ChainedRun> {
    cfg.validate()?;
    if !dataset.has_targets() {
        return Err(Error::Schema(format!("dataset `{}` lacks targets", dataset.vessel_id)));
    }
    let ds = prepare_dataset(dataset, cfg);
    let folds = assign_folds(ds.len(), cfg.folds, cfg.seed, cfg.fold_mode)?;
    let physics = resolve_physics(&ds, cfg)?;
    let all: Vec<usize> = (0..ds.len()).collect();

    let (rpm_oof, _) = oof_stage(Stage::Rpm, &ds, &folds, None, &physics, cfg)?;
    let (power_oof, _) = oof_stage(Stage::Power, &ds, &folds, Some(&rpm_oof.predictions), &physics, cfg)?;

    let refit = |stage: Stage, stacked: Option<&[f64]>| {
        fit_stage(
            stage,
            &StageData { dataset: &ds, rows: &all, stacked },
            &physics,
            cfg,
            stage_seed(cfg.seed, stage, cfg.folds),
        )
    };
    let (rpm, (power, fuel)) = rayon::join(
        || refit(Stage::Rpm, None),
        || {
            rayon::join(
                || refit(Stage::Power, Some(&rpm_oof.predictions)),
                || refit(Stage::Fuel, Some(&power_oof.predictions)),
            )
        },
    );
    let (rpm, power, fuel) = (rpm?, power?, fuel?);
    Ok(ChainedRun {
        models: ChainedModels {
            method: cfg.method,
            features: cfg.features.clone(),
            rpm: rpm.0,
            power: power.0,
            fuel: fuel.0,
            physics,
            weights: cfg.weights.clone(),
        },
        oof: OofTable { folds, rpm: rpm_oof, power: power_oof },
        logs: StageLogs { rpm: rpm.1, power: power.1, fuel: fuel.1 },
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainedPredictions {
    pub rpm: Vec<f64>,
    pub power: Vec<f64>,
    pub fuel: Vec<f64>,
}

/// `rpm̂ = f_rpm(x)`, `P̂ = f_pwr(x ⊕ rpm̂)`, `ṁ̂ = f_fuel(x ⊕ P̂)`. Targets are
/// never read.
pub fn chained_predict(models: &ChainedModels, dataset: &VesselDataset) -> Result<ChainedPredictions> {
    let mut ds = dataset.without_targets();
    if needs_engineering(&models.features) && ds.records().iter().any(|r| r.derived.is_none()) {
        ds = engineer_features(&ds);
    }
    let matrix = |stage: Stage, model: &StageModel, stacked: Option<&[f64]>| -> Result<FeatureMatrix> {
        let schema = model.schema();
        schema.validate_for_stage(stage)?;
        let mut expected = models.features.clone();
        if let Some(f) = stage.stacked_input() {
            expected = expected.with(f);
        }
        if schema != &expected {
            return Err(Error::Schema(format!(
                "{stage} model expects {:?}, pipeline provides {:?}",
                schema.features(),
                expected.features()
            )));
        }
        match (stage.stacked_input(), stacked) {
            (Some(f), Some(col)) => FeatureMatrix::from_dataset(&ds, schema, &[(f, col)]),
            _ => FeatureMatrix::from_dataset(&ds, schema, &[]),
        }
    };
    let rpm = models.rpm.predict(&matrix(Stage::Rpm, &models.rpm, None)?)?;
    let power = models.power.predict(&matrix(Stage::Power, &models.power, Some(&rpm))?)?;
    let fuel = models.fuel.predict(&matrix(Stage::Fuel, &models.fuel, Some(&power))?)?;
    Ok(ChainedPredictions { rpm, power, fuel })
}

/// Versioned on-disk form of [`ChainedModels`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub method: Method,
    pub schema_hash: String,
    pub config_hash: String,
    pub models: ChainedModels,
}

impl ModelFile {
    pub fn new(models: ChainedModels, config_hash: String) -> Self {
        Self {
            format: MODEL_FILE_FORMAT.into(),
            version: MODEL_FILE_VERSION,
            method: models.method,
            schema_hash: models.features.hash(),
            config_hash,
            models,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format != MODEL_FILE_FORMAT {
            return Err(Error::ModelFile(format!("unknown format `{}`", file.format)));
        }
        if file.version != MODEL_FILE_VERSION {
            return Err(Error::ModelFile(format!("unsupported version {}", file.version)));
        }
        if file.schema_hash != file.models.features.hash() {
            return Err(Error::ModelFile("schema hash does not match stored features".into()));
        }
        if file.method != file.models.method {
            return Err(Error::ModelFile("method tag does not match stored models".into()));
        }
        Ok(file)
    }
}

/// Which chained output the λ sweep scores.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TuneTarget {
    /// Fuel at the end of the chain.
    #[default]
    Fuel,
    /// One stage's own chained prediction.
    Stage(Stage),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CandidateScore {
    pub lambda: f64,
    /// Validation MAE per vessel, `None` where training failed.
    pub per_vessel: Vec<Option<f64>>,
    pub median: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LambdaTuning {
    pub best: f64,
    pub candidates: Vec<CandidateScore>,
}

impl LambdaTuning {
    /// `lambda,median_val_mae` (empty median where every vessel failed).
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["lambda", "median_val_mae"])?;
        for c in &self.candidates {
            w.write_record([c.lambda.to_string(), c.median.map(|m| m.to_string()).unwrap_or_default()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Argmin of the medians in ascending-λ order; ties keep the smaller λ.
pub fn select_lambda(scores: &[(f64, Option<f64>)]) -> Option<f64> {
    let mut sorted: Vec<(f64, Option<f64>)> = scores.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best: Option<(f64, f64)> = None;
    for (lambda, median) in sorted {
        if let Some(m) = median {
            if best.is_none_or(|(_, b)| m < b) {
                best = Some((lambda, m));
            }
        }
    }
    best.map(|(l, _)| l)
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    crate::physics::median(std::mem::take(&mut v))
}

/// Sweeps fixed λ values: per vessel, train on the chronological first 80%
/// and score the chained prediction on the last 20%. λ* minimizes the median
/// validation MAE across vessels.
pub fn tune_lambda_fleet(
    vessels: &[VesselDataset],
    candidates: &[f64],
    cfg: &PipelineConfig,
    target: TuneTarget,
) -> Result<LambdaTuning> {
    if vessels.is_empty() {
        return Err(Error::InvalidArgument("no vessels to tune on".into()));
    }
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("no λ candidates".into()));
    }
    if let Some(&bad) = candidates.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
        return Err(Error::InvalidArgument(format!("λ candidate {bad} must be finite and > 0")));
    }
    let splits: Vec<(VesselDataset, VesselDataset)> =
        vessels.iter().map(|v| chronological_split(v, 0.8)).collect::<Result<_>>()?;
    let grid: Vec<(usize, usize)> =
        (0..candidates.len()).flat_map(|c| (0..vessels.len()).map(move |v| (c, v))).collect();
    let scores: Vec<Option<f64>> = grid
        .par_iter()
        .map(|&(c, v)| {
            let lambda = candidates[c];
            let weights = LossWeights {
                lambda,
                lambda_min: cfg.weights.lambda_min.min(lambda),
                lambda_max: cfg.weights.lambda_max.max(lambda),
                lambda_mode: LambdaMode::Fixed,
                ..cfg.weights.clone()
            };
            let run_cfg = PipelineConfig { weights, ..cfg.clone() };
            let (train, val) = &splits[v];
            let outcome = chained_train(train, &run_cfg).and_then(|run| {
                let pred = chained_predict(&run.models, val)?;
                let (stage, yhat) = match target {
                    TuneTarget::Fuel | TuneTarget::Stage(Stage::Fuel) => (Stage::Fuel, pred.fuel),
                    TuneTarget::Stage(Stage::Power) => (Stage::Power, pred.power),
                    TuneTarget::Stage(Stage::Rpm) => (Stage::Rpm, pred.rpm),
                };
                crate::train::data_loss(&yhat, &val.targets(stage)?)
            });
            match outcome {
                Ok(m) => Some(m),
                Err(e) => {
                    log::warn!("λ = {lambda} failed on vessel `{}`: {e}", vessels[v].vessel_id);
                    None
                }
            }
        })
        .collect();
    let candidates: Vec<CandidateScore> = candidates
        .iter()
        .enumerate()
        .map(|(c, &lambda)| {
            let per_vessel: Vec<Option<f64>> = scores[c * vessels.len()..(c + 1) * vessels.len()].to_vec();
            let ok: Vec<f64> = per_vessel.iter().flatten().copied().collect();
            CandidateScore { lambda, median: median(ok), per_vessel }
        })
        .collect();
    let best = select_lambda(&candidates.iter().map(|c| (c.lambda, c.median)).collect::<Vec<_>>())
        .ok_or_else(|| Error::InvalidArgument("every λ candidate failed on every vessel".into()))?;
    Ok(LambdaTuning { best, candidates })
}
