//! Experiment configuration file (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use pikan::baselines::MlpConfig;
use pikan::data::{chronological_split, engineer_features, load_csv, FeatureSchema, FoldMode, VesselDataset};
use pikan::kan::KanConfig;
use pikan::physics::{PhysicsConfig, DEFAULT_N_MIN};
use pikan::pipeline::{hash_json, Method, PipelineConfig, TuneTarget};
use pikan::synth::{generate, SynthConfig};
use pikan::train::{LossWeights, TrainConfig};

use crate::CliError;

/// Logged vessel CSVs. Without explicit test files each training file is split
/// chronologically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    pub train: Vec<PathBuf>,
    #[serde(default)]
    pub test: Vec<PathBuf>,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

fn default_test_fraction() -> f64 {
    0.2
}

fn default_vessels() -> usize {
    1
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_candidates() -> Vec<f64> {
    vec![0.01, 0.1, 1.0, 10.0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub fold_mode: FoldMode,
    /// Shared model inputs; defaults to all base and derived features.
    #[serde(default)]
    pub features: Option<FeatureSchema>,
    #[serde(default = "default_candidates")]
    pub lambda_candidates: Vec<f64>,
    #[serde(default)]
    pub tune_target: TuneTarget,
    #[serde(default)]
    pub calibrate_resistance: bool,
    #[serde(default = "default_n_min")]
    pub n_min: f64,
    /// Number of synthetic vessels drawn from `[synth]`, seeds `synth.seed + i`.
    #[serde(default = "default_vessels")]
    pub synth_vessels: usize,
    #[serde(default)]
    pub data: Option<DataSource>,
    #[serde(default)]
    pub synth: Option<SynthConfig>,
    /// Defaults to the synthetic ground truth when `[synth]` is the source.
    #[serde(default)]
    pub physics: Option<PhysicsConfig>,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub kan: KanConfig,
    #[serde(default)]
    pub mlp: MlpConfig,
    /// Defaults to the MLP schedule (lr 1e-2, batch 8, 200 epochs).
    #[serde(default)]
    pub mlp_train: Option<TrainConfig>,
}

fn default_method() -> Method {
    Method::PiKan
}

fn default_folds() -> usize {
    5
}

fn default_n_min() -> f64 {
    DEFAULT_N_MIN
}

/// One vessel's data, split for training and held-out testing.
pub struct Vessel {
    pub id: String,
    pub full: VesselDataset,
    pub train: VesselDataset,
    pub test: VesselDataset,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::new("E_IO", format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: Self =
            toml::from_str(&text).map_err(|e| CliError::new("E_CONFIG", e.to_string().replace('\n', " ")))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(d) = &mut cfg.data {
            for p in d.train.iter_mut().chain(d.test.iter_mut()) {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        if cfg.out_dir.is_relative() {
            cfg.out_dir = base.join(&cfg.out_dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        match (&self.data, &self.synth) {
            (Some(_), Some(_)) => {
                return Err(CliError::config("both [data] and [synth] given; choose one data source"))
            }
            (None, None) => return Err(CliError::config("no data source: add a [data] or [synth] section")),
            _ => {}
        }
        if let Some(d) = &self.data {
            if d.train.is_empty() {
                return Err(CliError::config("[data] train lists no files"));
            }
            if !d.test.is_empty() && d.test.len() != d.train.len() {
                return Err(CliError::config("[data] test must list one file per training file"));
            }
            if let Some(p) = d.train.iter().chain(&d.test).find(|p| !p.exists()) {
                return Err(CliError::new("E_IO", format!("data file {} does not exist", p.display())));
            }
            if !(d.test_fraction > 0.0 && d.test_fraction < 1.0) {
                return Err(CliError::config(format!("test_fraction {} outside (0, 1)", d.test_fraction)));
            }
        }
        if let Some(s) = &self.synth {
            s.validate()?;
            if self.synth_vessels == 0 {
                return Err(CliError::config("synth_vessels must be >= 1"));
            }
        }
        if self.lambda_candidates.is_empty() {
            return Err(CliError::config("lambda_candidates is empty"));
        }
        self.pipeline().validate()?;
        Ok(())
    }

    pub fn synth_configs(&self) -> Vec<SynthConfig> {
        let Some(s) = &self.synth else { return Vec::new() };
        if self.synth_vessels == 1 {
            return vec![s.clone()];
        }
        (0..self.synth_vessels)
            .map(|i| SynthConfig {
                seed: s.seed.wrapping_add(i as u64),
                vessel_id: format!("{}-{i}", s.vessel_id),
                ..s.clone()
            })
            .collect()
    }

    pub fn pipeline(&self) -> PipelineConfig {
        let physics = match (&self.physics, &self.synth) {
            (Some(p), _) => p.clone(),
            (None, Some(s)) => s.physics_config(),
            (None, None) => PhysicsConfig::default(),
        };
        PipelineConfig {
            method: self.method,
            folds: self.folds,
            fold_mode: self.fold_mode,
            features: self.features.clone().unwrap_or_else(FeatureSchema::engineered),
            kan: self.kan,
            mlp: self.mlp.clone(),
            train: TrainConfig { seed: self.seed, ..self.train.clone() },
            mlp_train: self.mlp_train.clone().unwrap_or_else(|| MlpConfig::train_config(self.seed)),
            weights: self.weights.clone(),
            physics,
            calibrate_resistance: self.calibrate_resistance,
            n_min: self.n_min,
            polynomial_features: None,
            seed: self.seed,
        }
    }

    /// The configuration with the output location cleared: where results are
    /// written does not change them.
    pub fn provenance(&self) -> Self {
        Self { out_dir: PathBuf::new(), ..self.clone() }
    }

    /// Hex SHA-256 of [`Self::provenance`].
    pub fn hash(&self) -> String {
        hash_json(&self.provenance())
    }

    pub fn vessels(&self) -> Result<Vec<Vessel>, CliError> {
        let schema = FeatureSchema::base();
        let mut out = Vec::new();
        if let Some(d) = &self.data {
            for (i, path) in d.train.iter().enumerate() {
                let full = load_csv(path, &schema)?;
                let (train, test) = match d.test.get(i) {
                    Some(t) => (full.clone(), load_csv(t, &schema)?),
                    None => chronological_split(&full, 1.0 - d.test_fraction)?,
                };
                out.push(Vessel { id: full.vessel_id.clone(), full, train, test });
            }
        }
        for s in self.synth_configs() {
            let full = generate(&s)?.dataset;
            let (train, test) = chronological_split(&full, 0.8)?;
            out.push(Vessel { id: s.vessel_id.clone(), full, train, test });
        }
        Ok(out)
    }
}

/// Adds derived features when the model needs them and they are absent.
pub fn engineered_if_needed(ds: &VesselDataset, schema: &FeatureSchema) -> VesselDataset {
    if schema.features().iter().any(|f| f.kind() == pikan::data::FeatureKind::Derived) {
        engineer_features(ds)
    } else {
        ds.clone()
    }
}
