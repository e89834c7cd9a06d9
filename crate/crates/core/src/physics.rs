//! Empirical resistance, physical power, the propeller cube-law prior and the
//! thermal-efficiency fuel relation.
//!
//! Resistance forms are the simplest standard empirical ones:
//!
//! - calm water: `c_calm · V²`
//! - wind: `c_wind · v_wind² · max(0, cos d_wind)` (tailwind clamp switchable)
//! - waves: `c_wave · h² · (1 + cos d_wave) / 2`
//!
//! and `P_physical = (R_calm + R_wind + R_wave) · V`. Coefficients are stand-ins
//! to be set by the user or least-squares calibrated on training data.

use serde::{Deserialize, Serialize};

use crate::data::{VesselDataset, VoyageRecord};
use crate::error::{Error, Result};

/// Default effective engine efficiency.
pub const DEFAULT_ETA: f64 = 0.40;
/// Default lower heating value, J/kg (marine diesel oil).
pub const DEFAULT_HEATING_VALUE: f64 = 42.7e6;
/// Default idle floor for cube-law calibration, 1/min.
pub const DEFAULT_N_MIN: f64 = 10.0;

/// Which shaft quantity the cube-law constant multiplies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CubeLawMode {
    /// `P = k · n³`, n in 1/min, k in W·min³.
    PerRpm,
    /// `P = k · V³`, V in m/s, k in W·s³/m³.
    PerSpeed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubeLaw {
    pub k: f64,
    pub mode: CubeLawMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicsConfig {
    /// Calm-water coefficient, kg/m.
    pub c_calm: f64,
    /// Wind coefficient, kg/m.
    pub c_wind: f64,
    /// Wave coefficient, N/m².
    pub c_wave: f64,
    /// Cube-law constant; `None` until calibrated.
    pub cube_law: Option<CubeLaw>,
    /// Effective engine efficiency, (0, 1].
    pub eta: f64,
    /// Lower heating value, J/kg.
    pub heating_value: f64,
    /// Zero out wind resistance for following winds.
    pub clamp_tailwind: bool,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        Self {
            c_calm: 0.0,
            c_wind: 0.0,
            c_wave: 0.0,
            cube_law: None,
            eta: DEFAULT_ETA,
            heating_value: DEFAULT_HEATING_VALUE,
            clamp_tailwind: true,
        }
    }
}

impl PhysicsConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("c_calm", self.c_calm), ("c_wind", self.c_wind), ("c_wave", self.c_wave)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} = {v} must be finite and >= 0")));
            }
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::Config(format!("eta = {} outside (0, 1]", self.eta)));
        }
        if !(self.heating_value.is_finite() && self.heating_value > 0.0) {
            return Err(Error::Config(format!("heating_value = {} must be > 0", self.heating_value)));
        }
        if let Some(c) = self.cube_law {
            if !(c.k.is_finite() && c.k >= 0.0) {
                return Err(Error::Config(format!("cube-law k = {} must be finite and >= 0", c.k)));
            }
        }
        Ok(())
    }

    /// The cube-law constant against shaft rpm, if calibrated in that mode.
    pub fn k_per_rpm(&self) -> Option<f64> {
        self.cube_law.filter(|c| c.mode == CubeLawMode::PerRpm).map(|c| c.k)
    }
}

pub fn calm_resistance(v: f64, cfg: &PhysicsConfig) -> f64 {
    cfg.c_calm * v * v
}

pub fn wind_resistance(v_wind: f64, d_wind_deg: f64, cfg: &PhysicsConfig) -> f64 {
    let c = d_wind_deg.to_radians().cos();
    let c = if cfg.clamp_tailwind { c.max(0.0) } else { c };
    cfg.c_wind * v_wind * v_wind * c
}

pub fn wave_resistance(h_wave: f64, d_wave_deg: f64, cfg: &PhysicsConfig) -> f64 {
    cfg.c_wave * h_wave * h_wave * wave_direction_factor(d_wave_deg)
}

/// Raised-cosine directionality: 1 in head seas, 0 in following seas.
pub fn wave_direction_factor(d_wave_deg: f64) -> f64 {
    (1.0 + d_wave_deg.to_radians().cos()) / 2.0
}

/// `(R_calm + R_wind + R_wave) · V` for one record, in W.
pub fn physical_power(r: &VoyageRecord, cfg: &PhysicsConfig) -> f64 {
    physical_power_from(r.stw, r.wind_speed, r.wind_dir, r.wave_height, r.wave_dir, cfg)
}

pub fn physical_power_from(v: f64, v_wind: f64, d_wind: f64, h_wave: f64, d_wave: f64, cfg: &PhysicsConfig) -> f64 {
    (calm_resistance(v, cfg) + wind_resistance(v_wind, d_wind, cfg) + wave_resistance(h_wave, d_wave, cfg)) * v
}

pub fn cube_law_power(n: f64, k: f64) -> f64 {
    k * n * n * n
}

/// `ṁ = P / (η·H)`, kg/s.
pub fn fuel_rate_from_power(p: f64, cfg: &PhysicsConfig) -> f64 {
    p / (cfg.eta * cfg.heating_value)
}

/// `P = 2π · (n/60) · Q`, with n in 1/min and Q in N·m.
pub fn power_from_torque(n_rpm: f64, torque: f64) -> f64 {
    2.0 * std::f64::consts::PI * (n_rpm / 60.0) * torque
}

/// Robust cube-law constant: median of `P / n³` over rows with `n ≥ n_min`
/// and finite targets.
pub fn calibrate_k(train: &VesselDataset, n_min: f64) -> Result<f64> {
    let ratios: Vec<f64> = train
        .records()
        .iter()
        .filter_map(|r| r.targets)
        .filter(|t| t.shaft_rpm.is_finite() && t.shaft_power.is_finite() && t.shaft_rpm >= n_min && t.shaft_rpm > 0.0)
        .map(|t| t.shaft_power / t.shaft_rpm.powi(3))
        .collect();
    median(ratios).ok_or_else(|| Error::Calibration(format!("no rows with shaft rpm >= {n_min}")))
}

/// Cube-law constant in either mode. `floor` is an rpm floor for
/// [`CubeLawMode::PerRpm`] and a speed floor (m/s) for [`CubeLawMode::PerSpeed`].
pub fn calibrate_cube_law(train: &VesselDataset, mode: CubeLawMode, floor: f64) -> Result<CubeLaw> {
    let k = match mode {
        CubeLawMode::PerRpm => calibrate_k(train, floor)?,
        CubeLawMode::PerSpeed => {
            let ratios: Vec<f64> = train
                .records()
                .iter()
                .filter_map(|r| r.targets.map(|t| (r.stw, t.shaft_power)))
                .filter(|(v, p)| p.is_finite() && *v >= floor && *v > 0.0)
                .map(|(v, p)| p / v.powi(3))
                .collect();
            median(ratios).ok_or_else(|| Error::Calibration(format!("no rows with speed >= {floor} m/s")))?
        }
    };
    Ok(CubeLaw { k, mode })
}

pub(crate) fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

/// Least-squares fit of `c_calm`, `c_wind`, `c_wave` to measured shaft power,
/// constrained to be non-negative (exhaustive active-set search over the three
/// coefficients). Other fields of `base` are kept.
pub fn calibrate_resistance(train: &VesselDataset, base: &PhysicsConfig) -> Result<PhysicsConfig> {
    let unit = PhysicsConfig { c_calm: 1.0, c_wind: 1.0, c_wave: 1.0, ..base.clone() };
    let mut rows: Vec<[f64; 3]> = Vec::new();
    let mut y = Vec::new();
    for r in train.records() {
        let Some(t) = r.targets else { continue };
        rows.push([
            calm_resistance(r.stw, &unit) * r.stw,
            wind_resistance(r.wind_speed, r.wind_dir, &unit) * r.stw,
            wave_resistance(r.wave_height, r.wave_dir, &unit) * r.stw,
        ]);
        y.push(t.shaft_power);
    }
    if y.is_empty() {
        return Err(Error::Calibration("no rows with targets".into()));
    }
    let mut best: Option<([f64; 3], f64)> = None;
    for mask in 1u8..8 {
        let active: Vec<usize> = (0..3).filter(|i| mask & (1 << i) != 0).collect();
        let design: Vec<f64> = rows.iter().flat_map(|row| active.iter().map(|&i| row[i])).collect();
        let Some(beta) = crate::linalg::least_squares(&design, active.len(), &y, 0.0) else { continue };
        if beta.iter().any(|&b| b < 0.0) {
            continue;
        }
        let mut coef = [0.0; 3];
        for (&i, &b) in active.iter().zip(&beta) {
            coef[i] = b;
        }
        let sse: f64 = rows
            .iter()
            .zip(&y)
            .map(|(row, yy)| {
                let pred: f64 = row.iter().zip(&coef).map(|(a, c)| a * c).sum();
                (pred - yy).powi(2)
            })
            .sum();
        if best.as_ref().is_none_or(|(_, s)| sse < *s) {
            best = Some((coef, sse));
        }
    }
    let (coef, _) = best.ok_or_else(|| Error::Calibration("no non-negative resistance fit".into()))?;
    Ok(PhysicsConfig { c_calm: coef[0], c_wind: coef[1], c_wave: coef[2], ..base.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FeatureSchema, Targets};
    use chrono::{TimeZone, Utc};
    use proptest::prelude::*;

    fn cfg(c_calm: f64, c_wind: f64, c_wave: f64) -> PhysicsConfig {
        PhysicsConfig { c_calm, c_wind, c_wave, ..Default::default() }
    }

    fn rec(i: i64, stw: f64, rpm: f64, power: f64) -> VoyageRecord {
        VoyageRecord {
            timestamp: Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap() + chrono::Duration::minutes(15 * i),
            stw,
            draught: 10.0,
            sea_depth: 100.0,
            sea_temp: 15.0,
            wave_height: 0.0,
            wave_period: 6.0,
            swell_height: 0.0,
            swell_period: 9.0,
            swell_dir: 0.0,
            wave_dir: 0.0,
            wind_speed: 0.0,
            wind_dir: 0.0,
            targets: Some(Targets { shaft_rpm: rpm, shaft_power: power, fuel_rate: 0.1 }),
            derived: None,
        }
    }

    fn dataset(rows: &[(f64, f64)]) -> VesselDataset {
        let recs = rows.iter().enumerate().map(|(i, &(n, p))| rec(i as i64, 5.0, n, p)).collect();
        VesselDataset::new("v", recs, FeatureSchema::base()).unwrap()
    }

    #[test]
    fn resistance_examples() {
        assert_eq!(calm_resistance(0.0, &cfg(2.0, 0.0, 0.0)), 0.0);
        assert_eq!(calm_resistance(3.0, &cfg(2.0, 0.0, 0.0)), 18.0);
        assert!(wind_resistance(2.0, 90.0, &cfg(0.0, 1.0, 0.0)).abs() < 1e-15);
        assert_eq!(wind_resistance(2.0, 0.0, &cfg(0.0, 1.0, 0.0)), 4.0);
        assert_eq!(wind_resistance(2.0, 180.0, &cfg(0.0, 1.0, 0.0)), 0.0);
        let unclamped = PhysicsConfig { clamp_tailwind: false, ..cfg(0.0, 1.0, 0.0) };
        assert!((wind_resistance(2.0, 180.0, &unclamped) + 4.0).abs() < 1e-12);
        assert_eq!(wave_resistance(0.0, 0.0, &cfg(0.0, 0.0, 1.0)), 0.0);
        assert_eq!(wave_resistance(2.0, 0.0, &cfg(0.0, 0.0, 1.0)), 4.0);
        assert!(wave_resistance(2.0, 180.0, &cfg(0.0, 0.0, 1.0)).abs() < 1e-15);
    }

    #[test]
    fn power_examples() {
        let c = cfg(1.0, 0.0, 0.0);
        assert_eq!(physical_power_from(0.0, 5.0, 0.0, 2.0, 0.0, &cfg(1.0, 1.0, 1.0)), 0.0);
        assert_eq!(physical_power_from(2.0, 0.0, 0.0, 0.0, 0.0, &c), 8.0);
        assert_eq!(cube_law_power(3.0, 2.0), 54.0);
        assert_eq!(cube_law_power(0.0, 2.0), 0.0);
        assert_eq!(cube_law_power(1.0, 1.0), 1.0);
        assert_eq!(power_from_torque(7.0, 0.0), 0.0);
        let two_pi = 2.0 * std::f64::consts::PI;
        assert!((power_from_torque(60.0, 1.0) - two_pi).abs() < 1e-15);
        assert!((power_from_torque(120.0, 0.5) - two_pi).abs() < 1e-15);
    }

    #[test]
    fn fuel_examples() {
        let c = PhysicsConfig { eta: 0.4, heating_value: 42.7e6, ..Default::default() };
        assert_eq!(fuel_rate_from_power(0.4 * 42.7e6, &c), 1.0);
        assert_eq!(fuel_rate_from_power(0.0, &c), 0.0);
        // 8.54e6 / (0.4 · 42.7e6) = 8.54 / 17.08
        assert!((fuel_rate_from_power(8.54e6, &c) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn calibrate_k_examples() {
        let exact = dataset(&[(10.0, 1.5e3), (20.0, 1.5 * 8e3), (30.0, 1.5 * 27e3)]);
        assert!((calibrate_k(&exact, DEFAULT_N_MIN).unwrap() - 1.5).abs() < 1e-12);
        // ratios {1, 2, 100}
        let outlier = dataset(&[(10.0, 1e3), (20.0, 2.0 * 8e3), (30.0, 100.0 * 27e3)]);
        assert_eq!(calibrate_k(&outlier, DEFAULT_N_MIN).unwrap(), 2.0);
        let idle = dataset(&[(0.0, 0.0), (0.0, 10.0)]);
        assert!(matches!(calibrate_k(&idle, DEFAULT_N_MIN), Err(Error::Calibration(_))));
    }

    #[test]
    fn resistance_calibration_recovers_coefficients() {
        let truth = cfg(1800.0, 35.0, 1700.0);
        let mut recs = Vec::new();
        for i in 0..60 {
            let mut r = rec(i, 4.0 + (i % 7) as f64 * 0.5, 70.0, 0.0);
            r.wind_speed = (i % 5) as f64 * 3.0;
            r.wind_dir = (i * 37 % 360) as f64;
            r.wave_height = (i % 4) as f64 * 0.8;
            r.wave_dir = (i * 53 % 360) as f64;
            r.targets.as_mut().unwrap().shaft_power = physical_power(&r, &truth);
            recs.push(r);
        }
        let ds = VesselDataset::new("v", recs, FeatureSchema::base()).unwrap();
        let fit = calibrate_resistance(&ds, &PhysicsConfig::default()).unwrap();
        assert!((fit.c_calm - 1800.0).abs() < 1e-6);
        assert!((fit.c_wind - 35.0).abs() < 1e-6);
        assert!((fit.c_wave - 1700.0).abs() < 1e-6);
    }

    #[test]
    fn config_validation() {
        assert!(PhysicsConfig::default().validate().is_ok());
        assert!(PhysicsConfig { eta: 0.0, ..Default::default() }.validate().is_err());
        assert!(PhysicsConfig { eta: 1.2, ..Default::default() }.validate().is_err());
        assert!(PhysicsConfig { heating_value: 0.0, ..Default::default() }.validate().is_err());
        assert!(cfg(-1.0, 0.0, 0.0).validate().is_err());
    }

    proptest! {
        #[test]
        fn resistance_terms_non_negative(v in 0.0..20.0f64, vw in 0.0..30.0f64, dw in 0.0..360.0f64,
                                         h in 0.0..8.0f64, dv in 0.0..360.0f64) {
            let c = cfg(1.0, 2.0, 3.0);
            prop_assert!(calm_resistance(v, &c) >= 0.0);
            prop_assert!(wind_resistance(vw, dw, &c) >= 0.0);
            prop_assert!(wave_resistance(h, dv, &c) >= 0.0);
        }

        #[test]
        fn physical_power_monotone_in_speed(v1 in 0.0..15.0f64, dv in 0.0..5.0f64, vw in 0.0..30.0f64,
                                            dw in 0.0..360.0f64, h in 0.0..8.0f64, dd in 0.0..360.0f64) {
            let c = cfg(1500.0, 40.0, 2000.0);
            let p1 = physical_power_from(v1, vw, dw, h, dd, &c);
            let p2 = physical_power_from(v1 + dv, vw, dw, h, dd, &c);
            prop_assert!(p2 >= p1);
        }

        #[test]
        fn fuel_rate_is_linear(p in 0.0..2e7f64, a in 0.0..10.0f64) {
            let c = PhysicsConfig::default();
            let lhs = fuel_rate_from_power(a * p, &c);
            let rhs = a * fuel_rate_from_power(p, &c);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1e-300));
        }

        #[test]
        fn calibrate_k_stable_under_median_rows(ratios in proptest::collection::vec(0.1..10.0f64, 1..15), extra in 1usize..4) {
            let rows: Vec<(f64, f64)> = ratios.iter().enumerate()
                .map(|(i, r)| { let n = 20.0 + i as f64; (n, r * n * n * n) }).collect();
            let k = calibrate_k(&dataset(&rows), DEFAULT_N_MIN).unwrap();
            let mut more = rows.clone();
            // n = 10 → n³ = 1000, so each appended ratio is k
            more.extend(std::iter::repeat_n((10.0, k * 1000.0), extra));
            let k2 = calibrate_k(&dataset(&more), DEFAULT_N_MIN).unwrap();
            prop_assert!((k2 - k).abs() <= 1e-12 * k);
        }
    }
}
