//! Synthetic vessel logs drawn from a known ground-truth propulsion model.
//!
//! Ground truth, all SI:
//!
//! ```text
//! rpm   = a·V + b
//! P     = k_cube·V³ + c_w·v_wind²·cos(d_wind)·V + c_v·h²·(1 + cos d_wave)/2·V + c_T·(T − T*)²·V
//! fuel  = P / (η·H)
//! ```
//!
//! Each target then gets independent multiplicative Gaussian noise
//! `y·(1 + σ·z)` and is clamped at zero. Fuel is derived from the noise-free
//! power, so power sensor noise does not propagate into fuel.

use chrono::{DateTime, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureSchema, Targets, VesselDataset, VoyageRecord};
use crate::error::{Error, Result};
use crate::physics::{CubeLaw, CubeLawMode, PhysicsConfig};

/// Half-open range `[lo, hi)` sampled uniformly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        self.lo + (self.hi - self.lo) * rng.random::<f64>()
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Relative noise standard deviations per target.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Noise {
    pub rpm: f64,
    pub power: f64,
    pub fuel: f64,
}

impl Default for Noise {
    fn default() -> Self {
        Self::uniform(0.02)
    }
}

impl Noise {
    pub const fn uniform(s: f64) -> Self {
        Self { rpm: s, power: s, fuel: s }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub rows: usize,
    pub seed: u64,
    pub vessel_id: String,
    pub start: DateTime<Utc>,

    /// Speed through water, m/s.
    pub speed: Interval,
    pub draught: Interval,
    pub sea_depth: Interval,
    pub sea_temp: Interval,
    pub wave_height: Interval,
    pub wave_period: Interval,
    pub swell_height: Interval,
    pub swell_period: Interval,
    /// Apparent wind speed, m/s.
    pub wind_speed: Interval,

    /// rpm per m/s.
    pub rpm_slope: f64,
    /// rpm at zero speed.
    pub rpm_intercept: f64,
    /// W·s³/m³.
    pub k_cube: f64,
    /// kg/m.
    pub c_wind: f64,
    /// N/m².
    pub c_wave: f64,
    /// Draught of minimum resistance, m.
    pub draught_optimum: f64,
    /// N/m² per m² of draught offset.
    pub draught_curvature: f64,
    pub eta: f64,
    /// J/kg.
    pub heating_value: f64,
    pub noise: Noise,
}

impl Default for SynthConfig {
    /// A mid-size cargo vessel: 10–15.5 kn, 2–9 MW, 65–95 rpm.
    fn default() -> Self {
        Self {
            rows: 5000,
            seed: 0,
            vessel_id: "synthetic".into(),
            start: Utc.with_ymd_and_hms(2023, 1, 1, 0, 0, 0).unwrap(),
            speed: Interval::new(5.0, 8.0),
            draught: Interval::new(8.0, 12.0),
            sea_depth: Interval::new(30.0, 500.0),
            sea_temp: Interval::new(2.0, 28.0),
            wave_height: Interval::new(0.0, 4.0),
            wave_period: Interval::new(4.0, 12.0),
            swell_height: Interval::new(0.0, 3.0),
            swell_period: Interval::new(8.0, 16.0),
            wind_speed: Interval::new(0.0, 15.0),
            rpm_slope: 10.0,
            rpm_intercept: 15.0,
            k_cube: 18_000.0,
            c_wind: 350.0,
            c_wave: 17_000.0,
            draught_optimum: 10.0,
            draught_curvature: 11_500.0,
            eta: 0.45,
            heating_value: 42.7e6,
            noise: Noise::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("speed", self.speed),
            ("draught", self.draught),
            ("sea_depth", self.sea_depth),
            ("sea_temp", self.sea_temp),
            ("wave_height", self.wave_height),
            ("wave_period", self.wave_period),
            ("swell_height", self.swell_height),
            ("swell_period", self.swell_period),
            ("wind_speed", self.wind_speed),
        ];
        for (name, r) in ranges {
            if !(r.lo.is_finite() && r.hi.is_finite() && r.lo < r.hi) {
                return Err(Error::Config(format!("synth range `{name}` [{}, {}) is degenerate", r.lo, r.hi)));
            }
        }
        for (name, r) in [
            ("speed", self.speed),
            ("wave_height", self.wave_height),
            ("swell_height", self.swell_height),
            ("wind_speed", self.wind_speed),
        ] {
            if r.lo < 0.0 {
                return Err(Error::Config(format!("synth range `{name}` must be non-negative")));
            }
        }
        if self.draught.lo <= 0.0 || self.sea_depth.lo <= 0.0 {
            return Err(Error::Config("draught and sea depth must be positive".into()));
        }
        let n = self.noise;
        if [n.rpm, n.power, n.fuel].iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Config("noise std must be >= 0".into()));
        }
        if !(self.k_cube > 0.0) {
            return Err(Error::Config("k_cube must be > 0".into()));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::Config(format!("eta = {} outside (0, 1]", self.eta)));
        }
        if !(self.heating_value > 0.0) {
            return Err(Error::Config("heating_value must be > 0".into()));
        }
        if self.rows == 0 {
            return Err(Error::Config("rows must be > 0".into()));
        }
        Ok(())
    }

    /// Physics constants matching this ground truth (draught term excluded, since
    /// the resistance model has none). The tailwind clamp is on, as in training.
    pub fn physics_config(&self) -> PhysicsConfig {
        PhysicsConfig {
            c_calm: self.k_cube,
            c_wind: self.c_wind,
            c_wave: self.c_wave,
            cube_law: Some(CubeLaw { k: self.k_cube, mode: CubeLawMode::PerSpeed }),
            eta: self.eta,
            heating_value: self.heating_value,
            clamp_tailwind: true,
        }
    }

    /// Noise-free shaft power for one operating point, W.
    pub fn true_power(&self, v: f64, v_wind: f64, d_wind_deg: f64, h_wave: f64, d_wave_deg: f64, draught: f64) -> f64 {
        let dt = draught - self.draught_optimum;
        self.k_cube * v.powi(3)
            + self.c_wind * v_wind * v_wind * d_wind_deg.to_radians().cos() * v
            + self.c_wave * h_wave * h_wave * (1.0 + d_wave_deg.to_radians().cos()) / 2.0 * v
            + self.draught_curvature * dt * dt * v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Synthetic {
    pub dataset: VesselDataset,
    /// Rows whose noisy power was clamped to zero.
    pub clamped_power: usize,
    pub clamped_fuel: usize,
    pub clamped_rpm: usize,
}

/// Draws `cfg.rows` records. Deterministic per seed; every row consumes the same
/// number of random draws whatever the noise level, so noisy and noise-free
/// variants of one seed share their inputs.
pub fn generate(cfg: &SynthConfig) -> Result<Synthetic> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut records = Vec::with_capacity(cfg.rows);
    let (mut clamped_power, mut clamped_fuel, mut clamped_rpm) = (0, 0, 0);
    let step = chrono::Duration::minutes(15);
    for i in 0..cfg.rows {
        let stw = cfg.speed.sample(&mut rng);
        let draught = cfg.draught.sample(&mut rng);
        let sea_depth = cfg.sea_depth.sample(&mut rng);
        let sea_temp = cfg.sea_temp.sample(&mut rng);
        let wave_height = cfg.wave_height.sample(&mut rng);
        let wave_period = cfg.wave_period.sample(&mut rng);
        let swell_height = cfg.swell_height.sample(&mut rng);
        let swell_period = cfg.swell_period.sample(&mut rng);
        let swell_dir = 360.0 * rng.random::<f64>();
        let wave_dir = 360.0 * rng.random::<f64>();
        let wind_speed = cfg.wind_speed.sample(&mut rng);
        let wind_dir = 360.0 * rng.random::<f64>();
        let z: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];

        let rpm_clean = cfg.rpm_slope * stw + cfg.rpm_intercept;
        let power_clean = cfg.true_power(stw, wind_speed, wind_dir, wave_height, wave_dir, draught).max(0.0);
        let fuel_clean = power_clean / (cfg.eta * cfg.heating_value);

        let noisy = |y: f64, s: f64, z: f64, count: &mut usize| {
            let v = y * (1.0 + s * z);
            if v < 0.0 {
                *count += 1;
                0.0
            } else {
                v
            }
        };
        let shaft_rpm = noisy(rpm_clean, cfg.noise.rpm, z[0], &mut clamped_rpm);
        let shaft_power = noisy(power_clean, cfg.noise.power, z[1], &mut clamped_power);
        let fuel_rate = noisy(fuel_clean, cfg.noise.fuel, z[2], &mut clamped_fuel);

        records.push(VoyageRecord {
            timestamp: cfg.start + step * i as i32,
            stw,
            draught,
            sea_depth,
            sea_temp,
            wave_height,
            wave_period,
            swell_height,
            swell_period,
            swell_dir,
            wave_dir,
            wind_speed,
            wind_dir,
            targets: Some(Targets { shaft_rpm, shaft_power, fuel_rate }),
            derived: None,
        });
    }
    if clamped_power + clamped_fuel + clamped_rpm > 0 {
        log::info!("synth: clamped {clamped_rpm} rpm, {clamped_power} power, {clamped_fuel} fuel rows at zero");
    }
    let dataset = VesselDataset::new(cfg.vessel_id.clone(), records, FeatureSchema::base())?;
    Ok(Synthetic { dataset, clamped_power, clamped_fuel, clamped_rpm })
}
