//! Vessel log ingestion, validation, feature engineering, splits, folds and
//! standardization.
//!
//! Internally every quantity is SI: speed through water in m/s, shaft power in W
//! and fuel as a mass rate in kg/s. The CSV boundary uses the logging units
//! (knots, kW, kg per 15-minute interval) and converts exactly once on the way in
//! and once on the way out.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, SecondsFormat, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// One knot in m/s.
pub const KNOT_MS: f64 = 0.514444;
/// Length of one logging interval in seconds; fuel is logged per interval.
pub const LOG_INTERVAL_S: f64 = 900.0;

/// CSV column holding the ISO-8601 UTC timestamp.
pub const TIMESTAMP_COLUMN: &str = "timestamp";
/// CSV target columns, in file order.
pub const TARGET_COLUMNS: [&str; 3] = ["shaft_rpm", "shaft_power", "fuel_consumed"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Base,
    Derived,
    Stacked,
}

/// Every model input known to the toolkit.
///
/// Base features map one-to-one onto CSV columns; derived proxies are added by
/// [`engineer_features`]; stacked features are upstream model outputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Feature {
    #[serde(rename = "stw")]
    Stw,
    #[serde(rename = "draught")]
    Draught,
    #[serde(rename = "sea_depth")]
    SeaDepth,
    #[serde(rename = "sea_temp")]
    SeaTemp,
    #[serde(rename = "wave_Hs")]
    WaveHeight,
    #[serde(rename = "wave_Tp")]
    WavePeriod,
    #[serde(rename = "swell_Hs")]
    SwellHeight,
    #[serde(rename = "swell_Tp")]
    SwellPeriod,
    #[serde(rename = "swell_dir_apparent")]
    SwellDir,
    #[serde(rename = "wave_dir_apparent")]
    WaveDir,
    #[serde(rename = "wind_speed_apparent")]
    WindSpeed,
    #[serde(rename = "wind_dir_apparent")]
    WindDir,
    #[serde(rename = "stw_cubed")]
    StwCubed,
    #[serde(rename = "cos_wave_dir")]
    CosWaveDir,
    #[serde(rename = "predicted_rpm")]
    PredictedRpm,
    #[serde(rename = "predicted_shaft_power")]
    PredictedShaftPower,
}

impl Feature {
    pub const BASE: [Feature; 12] = [
        Feature::Stw,
        Feature::Draught,
        Feature::SeaDepth,
        Feature::SeaTemp,
        Feature::WaveHeight,
        Feature::WavePeriod,
        Feature::SwellHeight,
        Feature::SwellPeriod,
        Feature::SwellDir,
        Feature::WaveDir,
        Feature::WindSpeed,
        Feature::WindDir,
    ];
    pub const DERIVED: [Feature; 2] = [Feature::StwCubed, Feature::CosWaveDir];

    pub fn name(self) -> &'static str {
        match self {
            Feature::Stw => "stw",
            Feature::Draught => "draught",
            Feature::SeaDepth => "sea_depth",
            Feature::SeaTemp => "sea_temp",
            Feature::WaveHeight => "wave_Hs",
            Feature::WavePeriod => "wave_Tp",
            Feature::SwellHeight => "swell_Hs",
            Feature::SwellPeriod => "swell_Tp",
            Feature::SwellDir => "swell_dir_apparent",
            Feature::WaveDir => "wave_dir_apparent",
            Feature::WindSpeed => "wind_speed_apparent",
            Feature::WindDir => "wind_dir_apparent",
            Feature::StwCubed => "stw_cubed",
            Feature::CosWaveDir => "cos_wave_dir",
            Feature::PredictedRpm => "predicted_rpm",
            Feature::PredictedShaftPower => "predicted_shaft_power",
        }
    }

    /// Unit of the in-memory (SI) value.
    pub fn unit(self) -> &'static str {
        match self {
            Feature::Stw => "m/s",
            Feature::Draught | Feature::SeaDepth => "m",
            Feature::SeaTemp => "degC",
            Feature::WaveHeight | Feature::SwellHeight => "m",
            Feature::WavePeriod | Feature::SwellPeriod => "s",
            Feature::SwellDir | Feature::WaveDir | Feature::WindDir => "deg",
            Feature::WindSpeed => "m/s",
            Feature::StwCubed => "m3/s3",
            Feature::CosWaveDir => "1",
            Feature::PredictedRpm => "1/min",
            Feature::PredictedShaftPower => "W",
        }
    }

    pub fn kind(self) -> FeatureKind {
        match self {
            Feature::StwCubed | Feature::CosWaveDir => FeatureKind::Derived,
            Feature::PredictedRpm | Feature::PredictedShaftPower => FeatureKind::Stacked,
            _ => FeatureKind::Base,
        }
    }

    pub fn from_name(name: &str) -> Option<Feature> {
        Feature::BASE
            .iter()
            .chain(Feature::DERIVED.iter())
            .chain([Feature::PredictedRpm, Feature::PredictedShaftPower].iter())
            .copied()
            .find(|f| f.name() == name)
    }

    /// Whether the raw value is a direction in degrees.
    pub fn is_direction(self) -> bool {
        matches!(self, Feature::SwellDir | Feature::WaveDir | Feature::WindDir)
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Prediction stage of the RPM → power → fuel chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Rpm,
    Power,
    Fuel,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Rpm, Stage::Power, Stage::Fuel];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Rpm => "shaft_rpm",
            Stage::Power => "shaft_power",
            Stage::Fuel => "fuel",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|st| st.name() == s)
    }

    pub fn target(self, t: &Targets) -> f64 {
        match self {
            Stage::Rpm => t.shaft_rpm,
            Stage::Power => t.shaft_power,
            Stage::Fuel => t.fuel_rate,
        }
    }

    /// The stacked input this stage consumes from its predecessor.
    pub fn stacked_input(self) -> Option<Feature> {
        match self {
            Stage::Rpm => None,
            Stage::Power => Some(Feature::PredictedRpm),
            Stage::Fuel => Some(Feature::PredictedShaftPower),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Ordered, duplicate-free list of model inputs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Feature>", into = "Vec<Feature>")]
pub struct FeatureSchema {
    features: Vec<Feature>,
}

impl TryFrom<Vec<Feature>> for FeatureSchema {
    type Error = Error;
    fn try_from(features: Vec<Feature>) -> Result<Self> {
        FeatureSchema::new(features)
    }
}

impl From<FeatureSchema> for Vec<Feature> {
    fn from(s: FeatureSchema) -> Self {
        s.features
    }
}

impl FeatureSchema {
    pub fn new(features: Vec<Feature>) -> Result<Self> {
        for (i, f) in features.iter().enumerate() {
            if features[..i].contains(f) {
                return Err(Error::Schema(format!("feature `{f}` listed twice")));
            }
        }
        Ok(Self { features })
    }

    /// The twelve logged operational and environmental inputs.
    pub fn base() -> Self {
        Self { features: Feature::BASE.to_vec() }
    }

    /// Base inputs plus the V³ and cos(wave direction) proxies.
    pub fn engineered() -> Self {
        let mut features = Feature::BASE.to_vec();
        features.extend(Feature::DERIVED);
        Self { features }
    }

    /// The engineered schema plus the stacked input of `stage`, if any.
    pub fn for_stage(stage: Stage) -> Self {
        let mut s = Self::engineered();
        if let Some(f) = stage.stacked_input() {
            s.features.push(f);
        }
        s
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn contains(&self, f: Feature) -> bool {
        self.features.contains(&f)
    }

    pub fn position(&self, f: Feature) -> Option<usize> {
        self.features.iter().position(|&g| g == f)
    }

    pub fn with(&self, f: Feature) -> Self {
        let mut s = self.clone();
        if !s.contains(f) {
            s.features.push(f);
        }
        s
    }

    pub fn without(&self, f: Feature) -> Self {
        Self { features: self.features.iter().copied().filter(|&g| g != f).collect() }
    }

    /// Checks that stacked inputs only appear downstream of their producer and
    /// that each downstream stage carries exactly its predecessor's output.
    pub fn validate_for_stage(&self, stage: Stage) -> Result<()> {
        for &f in &self.features {
            if f.kind() == FeatureKind::Stacked && Some(f) != stage.stacked_input() {
                return Err(Error::Schema(format!("stacked feature `{f}` is not allowed in the {stage} stage")));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 over the ordered feature names.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for f in &self.features {
            h.update(f.name().as_bytes());
            h.update(b",");
        }
        hex::encode(h.finalize())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Targets {
    /// Shaft speed, 1/min.
    pub shaft_rpm: f64,
    /// Shaft power, W.
    pub shaft_power: f64,
    /// Fuel mass rate, kg/s.
    pub fuel_rate: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivedFeatures {
    /// V³ with V in m/s.
    pub stw_cubed: f64,
    pub cos_wave_dir: f64,
}

/// One 15-minute log row, in SI units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoyageRecord {
    pub timestamp: DateTime<Utc>,
    /// Speed through water, m/s.
    pub stw: f64,
    pub draught: f64,
    pub sea_depth: f64,
    pub sea_temp: f64,
    pub wave_height: f64,
    pub wave_period: f64,
    pub swell_height: f64,
    pub swell_period: f64,
    /// Degrees relative to heading, in [0, 360).
    pub swell_dir: f64,
    pub wave_dir: f64,
    /// Apparent wind speed, m/s.
    pub wind_speed: f64,
    pub wind_dir: f64,
    pub targets: Option<Targets>,
    pub derived: Option<DerivedFeatures>,
}

impl VoyageRecord {
    /// Value of a base or derived feature. Stacked features never live on records.
    pub fn value(&self, f: Feature) -> Option<f64> {
        Some(match f {
            Feature::Stw => self.stw,
            Feature::Draught => self.draught,
            Feature::SeaDepth => self.sea_depth,
            Feature::SeaTemp => self.sea_temp,
            Feature::WaveHeight => self.wave_height,
            Feature::WavePeriod => self.wave_period,
            Feature::SwellHeight => self.swell_height,
            Feature::SwellPeriod => self.swell_period,
            Feature::SwellDir => self.swell_dir,
            Feature::WaveDir => self.wave_dir,
            Feature::WindSpeed => self.wind_speed,
            Feature::WindDir => self.wind_dir,
            Feature::StwCubed => self.derived?.stw_cubed,
            Feature::CosWaveDir => self.derived?.cos_wave_dir,
            Feature::PredictedRpm | Feature::PredictedShaftPower => return None,
        })
    }

    fn set_base(&mut self, f: Feature, v: f64) {
        match f {
            Feature::Stw => self.stw = v,
            Feature::Draught => self.draught = v,
            Feature::SeaDepth => self.sea_depth = v,
            Feature::SeaTemp => self.sea_temp = v,
            Feature::WaveHeight => self.wave_height = v,
            Feature::WavePeriod => self.wave_period = v,
            Feature::SwellHeight => self.swell_height = v,
            Feature::SwellPeriod => self.swell_period = v,
            Feature::SwellDir => self.swell_dir = v,
            Feature::WaveDir => self.wave_dir = v,
            Feature::WindSpeed => self.wind_speed = v,
            Feature::WindDir => self.wind_dir = v,
            _ => unreachable!("not a base feature"),
        }
    }

    /// Checks the row invariants. Returns a human-readable reason on failure.
    pub fn validate(&self) -> std::result::Result<(), String> {
        for f in Feature::BASE {
            let v = self.value(f).unwrap_or(f64::NAN);
            if !v.is_finite() {
                return Err(format!("`{f}` is not finite"));
            }
            if f.is_direction() && !(0.0..360.0).contains(&v) {
                return Err(format!("`{f}` = {v} outside [0, 360)"));
            }
        }
        let nonneg = [
            (Feature::Stw, self.stw),
            (Feature::WaveHeight, self.wave_height),
            (Feature::SwellHeight, self.swell_height),
            (Feature::WindSpeed, self.wind_speed),
        ];
        for (f, v) in nonneg {
            if v < 0.0 {
                return Err(format!("`{f}` = {v} is negative"));
            }
        }
        if self.sea_depth <= 0.0 {
            return Err(format!("`sea_depth` = {} must be positive", self.sea_depth));
        }
        if self.draught <= 0.0 {
            return Err(format!("`draught` = {} must be positive", self.draught));
        }
        if let Some(t) = &self.targets {
            for (name, v) in TARGET_COLUMNS.iter().zip([t.shaft_rpm, t.shaft_power, t.fuel_rate]) {
                if !v.is_finite() {
                    return Err(format!("target `{name}` is not finite"));
                }
            }
        }
        Ok(())
    }
}

/// A row dropped during ingestion.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    /// 1-based line number in the source file (header is line 1).
    pub line: u64,
    pub reason: String,
}

/// Time-ordered log of one vessel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VesselDataset {
    pub vessel_id: String,
    records: Vec<VoyageRecord>,
    schema: FeatureSchema,
    /// Rows rejected while loading, if this dataset came from a file.
    pub rejections: Vec<Rejection>,
}

impl VesselDataset {
    /// Builds a dataset, checking row invariants and strictly increasing timestamps.
    pub fn new(vessel_id: impl Into<String>, records: Vec<VoyageRecord>, schema: FeatureSchema) -> Result<Self> {
        for (i, r) in records.iter().enumerate() {
            r.validate().map_err(|e| Error::InvalidArgument(format!("row {i}: {e}")))?;
            if i > 0 && r.timestamp <= records[i - 1].timestamp {
                return Err(Error::InvalidArgument(format!("row {i}: timestamps not strictly increasing")));
            }
        }
        for &f in schema.features() {
            if f.kind() == FeatureKind::Stacked {
                return Err(Error::Schema(format!("dataset schema cannot hold stacked feature `{f}`")));
            }
            if f.kind() == FeatureKind::Derived && records.iter().any(|r| r.derived.is_none()) {
                return Err(Error::Schema(format!("derived feature `{f}` requested on unengineered records")));
            }
        }
        Ok(Self { vessel_id: vessel_id.into(), records, schema, rejections: Vec::new() })
    }

    pub fn records(&self) -> &[VoyageRecord] {
        &self.records
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn has_targets(&self) -> bool {
        !self.records.is_empty() && self.records.iter().all(|r| r.targets.is_some())
    }

    /// Target column for `stage`; errors if any row lacks targets.
    pub fn targets(&self, stage: Stage) -> Result<Vec<f64>> {
        self.records
            .iter()
            .map(|r| r.targets.map(|t| stage.target(&t)))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::Schema(format!("dataset `{}` has rows without targets", self.vessel_id)))
    }

    /// Rows `idx` as a new dataset (indices must be increasing).
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            vessel_id: self.vessel_id.clone(),
            records: idx.iter().map(|&i| self.records[i].clone()).collect(),
            schema: self.schema.clone(),
            rejections: Vec::new(),
        }
    }

    /// The same rows with targets removed.
    pub fn without_targets(&self) -> Self {
        let mut ds = self.clone();
        for r in &mut ds.records {
            r.targets = None;
        }
        ds
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum CsvMode {
    Training,
    Inference,
}

/// Loads a training CSV: every base feature column plus all three targets.
///
/// Rows failing validation are rejected (never coerced) and recorded in
/// [`VesselDataset::rejections`]. If `schema` contains derived features the
/// dataset is engineered before returning.
pub fn load_csv(path: &Path, schema: &FeatureSchema) -> Result<VesselDataset> {
    load_with_mode(path, schema, CsvMode::Training)
}

/// Loads an inference CSV; target columns are optional and ignored.
pub fn load_inference_csv(path: &Path, schema: &FeatureSchema) -> Result<VesselDataset> {
    load_with_mode(path, schema, CsvMode::Inference)
}

fn load_with_mode(path: &Path, schema: &FeatureSchema, mode: CsvMode) -> Result<VesselDataset> {
    let file = std::fs::File::open(path)?;
    let vessel_id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let mut ds = read_csv(file, schema, mode).map_err(|e| match e {
        Error::EmptyDataset { rejected, .. } => Error::EmptyDataset { path: path.to_path_buf(), rejected },
        other => other,
    })?;
    ds.vessel_id = vessel_id;
    Ok(ds)
}

/// Parses a CSV from any reader. See [`load_csv`].
pub fn read_csv_training<R: Read>(reader: R, schema: &FeatureSchema) -> Result<VesselDataset> {
    read_csv(reader, schema, CsvMode::Training)
}

fn read_csv<R: Read>(reader: R, schema: &FeatureSchema, mode: CsvMode) -> Result<VesselDataset> {
    if schema.features().iter().any(|f| f.kind() == FeatureKind::Stacked) {
        return Err(Error::Schema("stacked features cannot be loaded from CSV".into()));
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let col = |name: &str| index.get(name).copied().ok_or_else(|| Error::MissingColumn(name.to_string()));

    let ts_col = col(TIMESTAMP_COLUMN)?;
    let feature_cols = Feature::BASE.iter().map(|f| col(f.name())).collect::<Result<Vec<_>>>()?;
    let target_cols = match mode {
        CsvMode::Training => Some(TARGET_COLUMNS.iter().map(|c| col(c)).collect::<Result<Vec<_>>>()?),
        CsvMode::Inference => None,
    };

    let mut rows: Vec<(u64, VoyageRecord)> = Vec::new();
    let mut rejections = Vec::new();
    for (i, result) in rdr.records().enumerate() {
        // header is line 1
        let line = i as u64 + 2;
        let rec = match result {
            Ok(r) => r,
            Err(e) => {
                rejections.push(Rejection { line, reason: e.to_string() });
                continue;
            }
        };
        match parse_row(&rec, ts_col, &feature_cols, target_cols.as_deref()) {
            Ok(r) => rows.push((line, r)),
            Err(reason) => rejections.push(Rejection { line, reason }),
        }
    }

    rows.sort_by(|a, b| a.1.timestamp.cmp(&b.1.timestamp).then(a.0.cmp(&b.0)));
    let mut records: Vec<VoyageRecord> = Vec::with_capacity(rows.len());
    for (line, r) in rows {
        if records.last().is_some_and(|prev| prev.timestamp == r.timestamp) {
            rejections.push(Rejection { line, reason: format!("duplicate timestamp {}", r.timestamp) });
            continue;
        }
        records.push(r);
    }
    rejections.sort_by_key(|r| r.line);
    if !rejections.is_empty() {
        log::warn!("rejected {} row(s) while loading", rejections.len());
    }
    if records.is_empty() {
        return Err(Error::EmptyDataset { path: Default::default(), rejected: rejections.len() });
    }

    let base_schema =
        FeatureSchema::new(schema.features().iter().copied().filter(|f| f.kind() == FeatureKind::Base).collect())?;
    let mut ds = VesselDataset::new(String::new(), records, base_schema)?;
    ds.rejections = rejections;
    if schema.features().iter().any(|f| f.kind() == FeatureKind::Derived) {
        ds = engineer_features(&ds);
    }
    ds.schema = schema.clone();
    Ok(ds)
}

fn parse_row(
    rec: &csv::StringRecord,
    ts_col: usize,
    feature_cols: &[usize],
    target_cols: Option<&[usize]>,
) -> std::result::Result<VoyageRecord, String> {
    let field = |c: usize| rec.get(c).ok_or_else(|| format!("missing field {}", c + 1));
    let number = |c: usize, name: &str| -> std::result::Result<f64, String> {
        let s = field(c)?;
        let v: f64 = s.parse().map_err(|_| format!("`{name}`: cannot parse `{s}` as a number"))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("`{name}` is not finite"))
        }
    };

    let timestamp = parse_timestamp(field(ts_col)?)?;
    let mut r = VoyageRecord {
        timestamp,
        stw: 0.0,
        draught: 0.0,
        sea_depth: 0.0,
        sea_temp: 0.0,
        wave_height: 0.0,
        wave_period: 0.0,
        swell_height: 0.0,
        swell_period: 0.0,
        swell_dir: 0.0,
        wave_dir: 0.0,
        wind_speed: 0.0,
        wind_dir: 0.0,
        targets: None,
        derived: None,
    };
    for (&f, &c) in Feature::BASE.iter().zip(feature_cols) {
        let mut v = number(c, f.name())?;
        if f == Feature::Stw {
            v *= KNOT_MS;
        }
        if f.is_direction() {
            v = normalize_degrees(v);
        }
        r.set_base(f, v);
    }
    if let Some(tc) = target_cols {
        r.targets = Some(Targets {
            shaft_rpm: number(tc[0], TARGET_COLUMNS[0])?,
            shaft_power: number(tc[1], TARGET_COLUMNS[1])? * 1e3,
            fuel_rate: number(tc[2], TARGET_COLUMNS[2])? / LOG_INTERVAL_S,
        });
    }
    r.validate()?;
    Ok(r)
}

fn parse_timestamp(s: &str) -> std::result::Result<DateTime<Utc>, String> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(t.and_utc());
        }
    }
    Err(format!("cannot parse timestamp `{s}`"))
}

/// Maps any finite angle in degrees into [0, 360).
pub fn normalize_degrees(d: f64) -> f64 {
    let r = d.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}

/// Writes a dataset in CSV units (knots, kW, kg per interval). Target columns are
/// written when every row carries targets.
pub fn write_csv<W: Write>(ds: &VesselDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let with_targets = ds.has_targets();
    let mut header = vec![TIMESTAMP_COLUMN];
    header.extend(Feature::BASE.iter().map(|f| f.name()));
    if with_targets {
        header.extend(TARGET_COLUMNS);
    }
    w.write_record(&header)?;
    for r in ds.records() {
        let mut row = vec![r.timestamp.to_rfc3339_opts(SecondsFormat::Secs, true)];
        for f in Feature::BASE {
            let mut v = r.value(f).expect("base feature");
            if f == Feature::Stw {
                v /= KNOT_MS;
            }
            row.push(v.to_string());
        }
        if with_targets {
            let t = r.targets.expect("checked");
            row.push(t.shaft_rpm.to_string());
            row.push((t.shaft_power / 1e3).to_string());
            row.push((t.fuel_rate * LOG_INTERVAL_S).to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Adds the V³ (V in m/s) and cos(wave direction) proxies. Idempotent.
pub fn engineer_features(ds: &VesselDataset) -> VesselDataset {
    let mut out = ds.clone();
    for r in &mut out.records {
        r.derived = Some(derive(r.stw, r.wave_dir));
    }
    for f in Feature::DERIVED {
        out.schema = out.schema.with(f);
    }
    out
}

fn derive(stw_ms: f64, wave_dir_deg: f64) -> DerivedFeatures {
    DerivedFeatures { stw_cubed: stw_ms.powi(3), cos_wave_dir: wave_dir_deg.to_radians().cos() }
}

/// First ⌈fraction·N⌉ rows for training, the rest for testing. No shuffling.
pub fn chronological_split(ds: &VesselDataset, train_fraction: f64) -> Result<(VesselDataset, VesselDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    if ds.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let n_train = split_point(ds.len(), train_fraction);
    let train: Vec<usize> = (0..n_train).collect();
    let test: Vec<usize> = (n_train..ds.len()).collect();
    Ok((ds.subset(&train), ds.subset(&test)))
}

/// ⌈fraction·n⌉, clamped to n.
pub(crate) fn split_point(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64).ceil() as usize).min(n)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldMode {
    /// Contiguous time blocks.
    #[default]
    Contiguous,
    /// Seeded random permutation, then blocks. For ablations only: leaks
    /// neighbouring rows of autocorrelated logs across folds.
    Shuffled,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub fold_of_row: Vec<usize>,
}

impl FoldAssignment {
    pub fn len(&self) -> usize {
        self.fold_of_row.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fold_of_row.is_empty()
    }

    /// Rows held out in fold `k`, increasing.
    pub fn held_out(&self, k: usize) -> Vec<usize> {
        (0..self.len()).filter(|&r| self.fold_of_row[r] == k).collect()
    }

    /// Rows used to train the model for fold `k`, increasing.
    pub fn training_rows(&self, k: usize) -> Vec<usize> {
        (0..self.len()).filter(|&r| self.fold_of_row[r] != k).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.fold_of_row {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Block `i` covers positions [⌈i·N/K⌉, ⌈(i+1)·N/K⌉). With [`FoldMode::Contiguous`]
/// positions are row indices and `seed` is unused.
pub fn assign_folds(n_rows: usize, k: usize, seed: u64, mode: FoldMode) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("fold count {k} < 2")));
    }
    if k > n_rows {
        return Err(Error::InvalidArgument(format!("fold count {k} exceeds row count {n_rows}")));
    }
    let mut order: Vec<usize> = (0..n_rows).collect();
    if mode == FoldMode::Shuffled {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let mut fold_of_row = vec![0; n_rows];
    for i in 0..k {
        let lo = (i * n_rows).div_ceil(k);
        let hi = ((i + 1) * n_rows).div_ceil(k);
        for &row in &order[lo..hi] {
            fold_of_row[row] = i;
        }
    }
    Ok(FoldAssignment { k, fold_of_row })
}

/// Dense row-major design matrix with a feature schema.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    schema: FeatureSchema,
    rows: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(schema: FeatureSchema, rows: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * schema.len() {
            return Err(Error::Shape(format!("{} values for {rows} rows × {} features", values.len(), schema.len())));
        }
        Ok(Self { schema, rows, values })
    }

    /// Gathers `schema` from records, taking stacked features from `stacked`.
    pub fn from_dataset(ds: &VesselDataset, schema: &FeatureSchema, stacked: &[(Feature, &[f64])]) -> Result<Self> {
        Self::from_records(ds.records(), schema, stacked)
    }

    pub fn from_records(
        records: &[VoyageRecord],
        schema: &FeatureSchema,
        stacked: &[(Feature, &[f64])],
    ) -> Result<Self> {
        let d = schema.len();
        let mut columns: Vec<Option<&[f64]>> = vec![None; d];
        for (p, &f) in schema.features().iter().enumerate() {
            if f.kind() == FeatureKind::Stacked {
                let col = stacked
                    .iter()
                    .find(|(g, _)| *g == f)
                    .map(|(_, c)| *c)
                    .ok_or_else(|| Error::Schema(format!("stacked column `{f}` not supplied")))?;
                if col.len() != records.len() {
                    return Err(Error::Shape(format!(
                        "stacked column `{f}` has {} rows, expected {}",
                        col.len(),
                        records.len()
                    )));
                }
                columns[p] = Some(col);
            }
        }
        let mut values = Vec::with_capacity(records.len() * d);
        for (i, r) in records.iter().enumerate() {
            for (p, &f) in schema.features().iter().enumerate() {
                let v = match columns[p] {
                    Some(col) => col[i],
                    None => r.value(f).ok_or_else(|| {
                        Error::Schema(format!("feature `{f}` missing; run feature engineering first"))
                    })?,
                };
                values.push(v);
            }
        }
        Ok(Self { schema: schema.clone(), rows: records.len(), values })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.schema.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let d = self.cols();
        &self.values[r * d..(r + 1) * d]
    }

    pub fn get(&self, r: usize, p: usize) -> f64 {
        self.values[r * self.cols() + p]
    }

    pub fn set(&mut self, r: usize, p: usize, v: f64) {
        let d = self.cols();
        self.values[r * d + p] = v;
    }

    pub fn column(&self, p: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, p)).collect()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut values = Vec::with_capacity(idx.len() * self.cols());
        for &r in idx {
            values.extend_from_slice(self.row(r));
        }
        Self { schema: self.schema.clone(), rows: idx.len(), values }
    }

    /// Selects a subset of columns by feature.
    pub fn select_features(&self, features: &[Feature]) -> Result<Self> {
        let schema = FeatureSchema::new(features.to_vec())?;
        let pos = features
            .iter()
            .map(|&f| self.schema.position(f).ok_or_else(|| Error::Schema(format!("feature `{f}` not in matrix"))))
            .collect::<Result<Vec<_>>>()?;
        let mut values = Vec::with_capacity(self.rows * pos.len());
        for r in 0..self.rows {
            for &p in &pos {
                values.push(self.get(r, p));
            }
        }
        Ok(Self { schema, rows: self.rows, values })
    }

    /// Index of the first non-finite cell, as (row, feature).
    pub fn first_non_finite(&self) -> Option<(usize, Feature)> {
        let d = self.cols();
        self.values.iter().position(|v| !v.is_finite()).map(|i| (i / d, self.schema.features()[i % d]))
    }
}

/// Per-feature z-scoring fitted on training rows only.
///
/// Uses the population standard deviation. Constant features get std = 1 (so
/// they map to 0) and are listed in `constant_features`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub schema: FeatureSchema,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Training-range minimum and maximum per feature, kept for response grids.
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub constant_features: Vec<Feature>,
}

impl Standardizer {
    /// Identity transform (mean 0, std 1) with unit ranges.
    pub fn identity(schema: &FeatureSchema) -> Self {
        let d = schema.len();
        Self {
            schema: schema.clone(),
            mean: vec![0.0; d],
            std: vec![1.0; d],
            min: vec![-1.0; d],
            max: vec![1.0; d],
            constant_features: Vec::new(),
        }
    }

    pub fn fit(train: &FeatureMatrix) -> Result<Self> {
        let n = train.rows();
        if n == 0 {
            return Err(Error::Empty("standardizer training rows"));
        }
        if let Some((row, f)) = train.first_non_finite() {
            return Err(Error::NonFiniteInput { row, feature: f.name().into() });
        }
        let d = train.cols();
        let mut mean = vec![0.0; d];
        let mut std = vec![0.0; d];
        let mut min = vec![f64::INFINITY; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        let mut constant_features = Vec::new();
        for p in 0..d {
            let col = train.column(p);
            let m = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64;
            let mut s = var.sqrt();
            if s <= 1e-12 * m.abs().max(1.0) {
                let f = train.schema().features()[p];
                log::warn!("feature `{f}` is constant on the training rows; using std = 1");
                constant_features.push(f);
                s = 1.0;
            }
            mean[p] = m;
            std[p] = s;
            min[p] = col.iter().copied().fold(f64::INFINITY, f64::min);
            max[p] = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        }
        Ok(Self { schema: train.schema().clone(), mean, std, min, max, constant_features })
    }

    pub fn transform_value(&self, p: usize, x: f64) -> f64 {
        (x - self.mean[p]) / self.std[p]
    }

    pub fn inverse_value(&self, p: usize, z: f64) -> f64 {
        z * self.std[p] + self.mean[p]
    }

    pub fn transform(&self, x: &FeatureMatrix) -> Result<FeatureMatrix> {
        self.check_schema(x)?;
        let d = x.cols();
        let values = x.values().iter().enumerate().map(|(i, &v)| self.transform_value(i % d, v)).collect();
        FeatureMatrix::new(x.schema().clone(), x.rows(), values)
    }

    pub fn inverse_transform(&self, z: &FeatureMatrix) -> Result<FeatureMatrix> {
        self.check_schema(z)?;
        let d = z.cols();
        let values = z.values().iter().enumerate().map(|(i, &v)| self.inverse_value(i % d, v)).collect();
        FeatureMatrix::new(z.schema().clone(), z.rows(), values)
    }

    fn check_schema(&self, x: &FeatureMatrix) -> Result<()> {
        if x.schema() != &self.schema {
            return Err(Error::Schema(format!(
                "matrix schema {:?} differs from standardizer schema {:?}",
                x.schema().features(),
                self.schema.features()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use chrono::TimeZone;

    pub(crate) fn record(minute: i64, stw_ms: f64) -> VoyageRecord {
        VoyageRecord {
            timestamp: Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap() + chrono::Duration::minutes(minute),
            stw: stw_ms,
            draught: 10.0,
            sea_depth: 100.0,
            sea_temp: 15.0,
            wave_height: 1.0,
            wave_period: 6.0,
            swell_height: 0.5,
            swell_period: 9.0,
            swell_dir: 30.0,
            wave_dir: 0.0,
            wind_speed: 5.0,
            wind_dir: 45.0,
            targets: Some(Targets { shaft_rpm: 70.0, shaft_power: 1e6, fuel_rate: 0.05 }),
            derived: None,
        }
    }

    const HEADER: &str = "timestamp,stw,draught,sea_depth,sea_temp,wave_Hs,wave_Tp,swell_Hs,swell_Tp,swell_dir_apparent,wave_dir_apparent,wind_speed_apparent,wind_dir_apparent,shaft_rpm,shaft_power,fuel_consumed";

    fn csv_row(ts: &str, stw_kn: f64, power_kw: &str) -> String {
        format!("{ts},{stw_kn},10.5,120,14,1.2,6,0.8,9,370,-90,7,180,72,{power_kw},450")
    }

    #[test]
    fn loads_rows_in_timestamp_order_with_unit_conversion() {
        let text = [
            HEADER.to_string(),
            csv_row("2024-01-01T00:30:00Z", 12.0, "5000"),
            csv_row("2024-01-01T00:00:00Z", 10.0, "4000"),
            csv_row("2024-01-01T00:15:00Z", 11.0, "4500"),
        ]
        .join("\n");
        let ds = read_csv_training(text.as_bytes(), &FeatureSchema::base()).unwrap();
        assert_eq!(ds.len(), 3);
        assert!(ds.rejections.is_empty());
        let stw: Vec<f64> = ds.records().iter().map(|r| r.stw).collect();
        assert_eq!(stw, vec![10.0 * KNOT_MS, 11.0 * KNOT_MS, 12.0 * KNOT_MS]);
        let r = &ds.records()[0];
        assert_eq!(r.draught, 10.5);
        assert_eq!(r.sea_depth, 120.0);
        assert_eq!(r.swell_dir, 10.0);
        assert_eq!(r.wave_dir, 270.0);
        assert_eq!(r.wind_dir, 180.0);
        let t = r.targets.unwrap();
        assert_eq!(t.shaft_rpm, 72.0);
        assert_eq!(t.shaft_power, 4.0e6);
        assert_eq!(t.fuel_rate, 450.0 / 900.0);
    }

    #[test]
    fn missing_column_is_named() {
        let text = HEADER.replace("stw,", "") + "\n";
        let err = read_csv_training(text.as_bytes(), &FeatureSchema::base()).unwrap_err();
        assert!(matches!(&err, Error::MissingColumn(c) if c == "stw"), "{err}");
        assert!(err.to_string().contains("stw"));
    }

    #[test]
    fn nan_target_row_is_rejected_with_line_number() {
        let text = [
            HEADER.to_string(),
            csv_row("2024-01-01T00:00:00Z", 10.0, "4000"),
            csv_row("2024-01-01T00:15:00Z", 11.0, "NaN"),
            csv_row("2024-01-01T00:30:00Z", 12.0, "5000"),
        ]
        .join("\n");
        let ds = read_csv_training(text.as_bytes(), &FeatureSchema::base()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.rejections.len(), 1);
        assert_eq!(ds.rejections[0].line, 3);
    }

    #[test]
    fn invalid_values_rejected_not_coerced() {
        let text = [
            HEADER.to_string(),
            csv_row("2024-01-01T00:00:00Z", -1.0, "4000"),
            csv_row("2024-01-01T00:15:00Z", 11.0, "abc"),
            csv_row("2024-01-01T00:30:00Z", 12.0, "5000"),
            csv_row("2024-01-01T00:30:00Z", 13.0, "5100"),
        ]
        .join("\n");
        let ds = read_csv_training(text.as_bytes(), &FeatureSchema::base()).unwrap();
        assert_eq!(ds.len(), 1);
        let lines: Vec<u64> = ds.rejections.iter().map(|r| r.line).collect();
        assert_eq!(lines, vec![2, 3, 5]);
    }

    #[test]
    fn all_rows_rejected_is_empty_error() {
        let text = [HEADER.to_string(), csv_row("2024-01-01T00:00:00Z", 10.0, "inf")].join("\n");
        let err = read_csv_training(text.as_bytes(), &FeatureSchema::base()).unwrap_err();
        assert!(matches!(err, Error::EmptyDataset { rejected: 1, .. }));
    }

    #[test]
    fn csv_round_trip() {
        let recs: Vec<_> = (0..4).map(|i| record(15 * i, 5.0 + i as f64)).collect();
        let ds = VesselDataset::new("v", recs, FeatureSchema::base()).unwrap();
        let mut buf = Vec::new();
        write_csv(&ds, &mut buf).unwrap();
        let back = read_csv_training(buf.as_slice(), &FeatureSchema::base()).unwrap();
        assert_eq!(back.len(), 4);
        for (a, b) in ds.records().iter().zip(back.records()) {
            assert_eq!(a.timestamp, b.timestamp);
            assert!((a.stw - b.stw).abs() <= 1e-12 * a.stw);
            let (ta, tb) = (a.targets.unwrap(), b.targets.unwrap());
            assert!((ta.shaft_power - tb.shaft_power).abs() <= 1e-9);
            assert!((ta.fuel_rate - tb.fuel_rate).abs() <= 1e-15);
        }
    }

    #[test]
    fn engineered_proxies() {
        let mut r = record(0, 2.0);
        r.wave_dir = 90.0;
        let mut r0 = record(15, 2.0);
        r0.wave_dir = 0.0;
        let ds = VesselDataset::new("v", vec![r, r0], FeatureSchema::base()).unwrap();
        let e = engineer_features(&ds);
        let d0 = e.records()[0].derived.unwrap();
        let d1 = e.records()[1].derived.unwrap();
        assert_eq!(d0.stw_cubed, 8.0);
        assert!(d0.cos_wave_dir.abs() < 1e-15);
        assert_eq!(d1.cos_wave_dir, 1.0);
        assert_eq!(e.schema(), &FeatureSchema::engineered());
        assert_eq!(engineer_features(&e), e);
        // originals untouched
        assert_eq!(e.records()[0].stw, 2.0);
    }

    #[test]
    fn split_uses_ceiling() {
        let ds = |n: i64| {
            VesselDataset::new("v", (0..n).map(|i| record(15 * i, 5.0)).collect(), FeatureSchema::base()).unwrap()
        };
        let (tr, te) = chronological_split(&ds(10), 0.8).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
        let (tr, te) = chronological_split(&ds(1), 0.8).unwrap();
        assert_eq!((tr.len(), te.len()), (1, 0));
        let (tr, te) = chronological_split(&ds(5), 0.5).unwrap();
        assert_eq!((tr.len(), te.len()), (3, 2));
        assert!(chronological_split(&ds(5), 1.0).is_err());
        assert!(chronological_split(&ds(5), 0.0).is_err());
    }

    #[test]
    fn folds_are_ceiling_blocks() {
        let f = assign_folds(10, 5, 0, FoldMode::Contiguous).unwrap();
        assert_eq!(f.fold_of_row, vec![0, 0, 1, 1, 2, 2, 3, 3, 4, 4]);
        let f = assign_folds(7, 2, 0, FoldMode::Contiguous).unwrap();
        assert_eq!(f.fold_sizes(), vec![4, 3]);
        assert_eq!(f.held_out(0), vec![0, 1, 2, 3]);
        assert!(assign_folds(4, 5, 0, FoldMode::Contiguous).is_err());
        assert!(assign_folds(4, 1, 0, FoldMode::Contiguous).is_err());
    }

    #[test]
    fn shuffled_folds_are_seeded() {
        let a = assign_folds(50, 5, 3, FoldMode::Shuffled).unwrap();
        let b = assign_folds(50, 5, 3, FoldMode::Shuffled).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.fold_sizes(), vec![10; 5]);
        assert_ne!(a, assign_folds(50, 5, 0, FoldMode::Contiguous).unwrap());
    }

    #[test]
    fn standardizer_examples() {
        let schema = FeatureSchema::new(vec![Feature::Stw, Feature::Draught]).unwrap();
        let x = FeatureMatrix::new(schema, 3, vec![1.0, 5.0, 3.0, 5.0, 2.0, 5.0]).unwrap();
        let s = Standardizer::fit(&x).unwrap();
        assert_eq!(s.mean, vec![2.0, 5.0]);
        assert!((s.std[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(s.std[1], 1.0);
        assert_eq!(s.constant_features, vec![Feature::Draught]);
        let z = s.transform(&x).unwrap();
        assert_eq!(z.column(1), vec![0.0; 3]);

        let two = FeatureMatrix::new(FeatureSchema::new(vec![Feature::Stw]).unwrap(), 2, vec![1.0, 3.0]).unwrap();
        let s2 = Standardizer::fit(&two).unwrap();
        assert_eq!((s2.mean[0], s2.std[0]), (2.0, 1.0));
        assert_eq!(s2.transform(&two).unwrap().values(), &[-1.0, 1.0]);
    }

    #[test]
    fn schema_rules() {
        assert!(FeatureSchema::new(vec![Feature::Stw, Feature::Stw]).is_err());
        assert!(FeatureSchema::for_stage(Stage::Power).validate_for_stage(Stage::Power).is_ok());
        assert!(FeatureSchema::for_stage(Stage::Power).validate_for_stage(Stage::Rpm).is_err());
        assert!(FeatureSchema::for_stage(Stage::Fuel).validate_for_stage(Stage::Power).is_err());
        assert_eq!(Feature::from_name("wave_Hs"), Some(Feature::WaveHeight));
        let json = serde_json::to_string(&FeatureSchema::for_stage(Stage::Fuel)).unwrap();
        assert!(json.contains("predicted_shaft_power"));
        assert!(serde_json::from_str::<FeatureSchema>(r#"["stw","stw"]"#).is_err());
    }

    #[test]
    fn normalize_degrees_range() {
        assert_eq!(normalize_degrees(370.0), 10.0);
        assert_eq!(normalize_degrees(-90.0), 270.0);
        assert_eq!(normalize_degrees(-1e-20), 0.0);
        assert_eq!(normalize_degrees(360.0), 0.0);
    }
}
