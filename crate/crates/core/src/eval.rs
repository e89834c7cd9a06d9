//! Error metrics, per-vessel benchmark reports and response-curve exports.
//!
//! R² and the percentage metrics are reported in percent. The signed error is
//! `mean((ŷ − y)/y)·100`, so positive values mean over-prediction. Rows whose
//! true value is within δ of zero are excluded from percentage metrics and
//! counted.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{Feature, Stage, VesselDataset};
use crate::error::{Error, Result};
use crate::kan::KanModel;
use crate::pipeline::{chained_predict, ChainedModels, ChainedPredictions, Method};

/// Default zero-exclusion threshold δ.
pub const DEFAULT_ZERO_DELTA: f64 = 1e-9;
/// Points per exported response curve.
pub const RESPONSE_GRID: usize = 100;

fn check(y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.is_empty() {
        return Err(Error::Empty("metric input"));
    }
    if y.len() != yhat.len() {
        return Err(Error::Shape(format!("{} targets vs {} predictions", y.len(), yhat.len())));
    }
    Ok(())
}

pub fn mae(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check(y, yhat)?;
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check(y, yhat)?;
    Ok((y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64).sqrt())
}

/// A percentage metric and how many rows the zero policy excluded.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Percent {
    pub value: f64,
    pub excluded: usize,
}

fn relative_mean(y: &[f64], yhat: &[f64], delta: f64, name: &str, f: impl Fn(f64) -> f64) -> Result<Percent> {
    check(y, yhat)?;
    let (mut sum, mut n) = (0.0, 0usize);
    for (a, b) in y.iter().zip(yhat) {
        if a.abs() > delta {
            sum += f((b - a) / a);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::UndefinedMetric(format!("{name}: every true value is within {delta} of zero")));
    }
    Ok(Percent { value: sum / n as f64 * 100.0, excluded: y.len() - n })
}

/// `mean |(y−ŷ)/y|·100` over rows with `|y| > δ`.
pub fn mape(y: &[f64], yhat: &[f64], delta: f64) -> Result<Percent> {
    relative_mean(y, yhat, delta, "MAPE", f64::abs)
}

/// `mean((ŷ−y)/y)·100` over rows with `|y| > δ`.
pub fn signed_me(y: &[f64], yhat: &[f64], delta: f64) -> Result<Percent> {
    relative_mean(y, yhat, delta, "signed ME", |r| r)
}

/// `(1 − SSE/SST)·100`.
pub fn r2(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check(y, yhat)?;
    if y.len() < 2 {
        return Err(Error::UndefinedMetric("R² needs at least two rows".into()));
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let sst: f64 = y.iter().map(|a| (a - mean) * (a - mean)).sum();
    if sst == 0.0 {
        return Err(Error::UndefinedMetric("R² of a constant target".into()));
    }
    let sse: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((1.0 - sse / sst) * 100.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetMetrics {
    pub target: Stage,
    pub mae: f64,
    pub rmse: f64,
    /// `None` when every true value is zero.
    pub mape_pct: Option<f64>,
    /// `None` for a constant target.
    pub r2_pct: Option<f64>,
    pub me_signed_pct: Option<f64>,
    pub n: usize,
    pub excluded_n: usize,
}

impl TargetMetrics {
    pub fn compute(target: Stage, y: &[f64], yhat: &[f64], delta: f64) -> Result<Self> {
        let mae = mae(y, yhat)?;
        let rmse = rmse(y, yhat)?;
        let undefined = |r: Result<Percent>| match r {
            Ok(p) => Ok(Some(p)),
            Err(Error::UndefinedMetric(_)) => Ok(None),
            Err(e) => Err(e),
        };
        let mape = undefined(mape(y, yhat, delta))?;
        let me = undefined(signed_me(y, yhat, delta))?;
        let r2 = match r2(y, yhat) {
            Ok(v) => Some(v),
            Err(Error::UndefinedMetric(_)) => None,
            Err(e) => return Err(e),
        };
        debug_assert!(rmse >= mae * (1.0 - 1e-12));
        Ok(Self {
            target,
            mae,
            rmse,
            mape_pct: mape.map(|p| p.value),
            r2_pct: r2,
            me_signed_pct: me.map(|p| p.value),
            n: y.len(),
            excluded_n: mape.map_or(y.len(), |p| p.excluded),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub vessel: String,
    pub method: Method,
    pub config_hash: String,
    pub targets: Vec<TargetMetrics>,
}

/// Metrics of chained predictions against a labelled dataset.
pub fn evaluate_predictions(
    vessel: &str,
    method: Method,
    config_hash: &str,
    pred: &ChainedPredictions,
    test: &VesselDataset,
    delta: f64,
) -> Result<MetricsReport> {
    let targets = Stage::ALL
        .iter()
        .map(|&stage| {
            let yhat = match stage {
                Stage::Rpm => &pred.rpm,
                Stage::Power => &pred.power,
                Stage::Fuel => &pred.fuel,
            };
            TargetMetrics::compute(stage, &test.targets(stage)?, yhat, delta)
        })
        .collect::<Result<_>>()?;
    Ok(MetricsReport { vessel: vessel.into(), method, config_hash: config_hash.into(), targets })
}

pub struct BenchmarkCase<'a> {
    pub test: &'a VesselDataset,
    pub method: Method,
    pub models: &'a ChainedModels,
    pub config_hash: String,
}

/// One report per (vessel, method) case; empty test sets are skipped.
pub fn benchmark(cases: &[BenchmarkCase<'_>]) -> Result<Vec<MetricsReport>> {
    let mut out = Vec::with_capacity(cases.len());
    for c in cases {
        if c.test.is_empty() {
            log::warn!("skipping vessel `{}` ({}): empty test set", c.test.vessel_id, c.method);
            continue;
        }
        let pred = chained_predict(c.models, c.test)?;
        out.push(evaluate_predictions(&c.test.vessel_id, c.method, &c.config_hash, &pred, c.test, DEFAULT_ZERO_DELTA)?);
    }
    Ok(out)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `vessel,method,target,mae,rmse,mape_pct,r2_pct,me_signed_pct,n,excluded_n`.
pub fn write_report_csv<W: Write>(reports: &[MetricsReport], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "vessel",
        "method",
        "target",
        "mae",
        "rmse",
        "mape_pct",
        "r2_pct",
        "me_signed_pct",
        "n",
        "excluded_n",
    ])?;
    for r in reports {
        for t in &r.targets {
            w.write_record([
                r.vessel.clone(),
                r.method.name().to_string(),
                t.target.name().to_string(),
                t.mae.to_string(),
                t.rmse.to_string(),
                opt(t.mape_pct),
                opt(t.r2_pct),
                opt(t.me_signed_pct),
                t.n.to_string(),
                t.excluded_n.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Aligned text table: one row per vessel and method, MAE/RMSE/MAPE/R² per target.
pub fn format_table(reports: &[MetricsReport]) -> String {
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    let mut header = vec!["vessel".to_string(), "method".to_string()];
    for s in Stage::ALL {
        for m in ["MAE", "RMSE", "MAPE%", "R2%", "ME%"] {
            header.push(format!("{}:{m}", s.name()));
        }
    }
    let mut rows = vec![header];
    for r in reports {
        let mut row = vec![r.vessel.clone(), r.method.name().to_string()];
        for s in Stage::ALL {
            match r.targets.iter().find(|t| t.target == s) {
                Some(t) => row.extend([
                    fmt(Some(t.mae)),
                    fmt(Some(t.rmse)),
                    fmt(t.mape_pct),
                    fmt(t.r2_pct),
                    fmt(t.me_signed_pct),
                ]),
                None => row.extend(std::iter::repeat_n("-".to_string(), 5)),
            }
        }
        rows.push(row);
    }
    let widths: Vec<usize> = (0..rows[0].len()).map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for row in &rows {
        let cells: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    let _ = writeln!(out, "ME% = mean((pred - true)/true)*100; positive means over-prediction");
    out
}

/// Sampled contribution `w_p·φ_p` of one input.
#[derive(Clone, Debug, PartialEq)]
pub struct ResponseCurve {
    pub feature: Feature,
    pub points: Vec<(f64, f64)>,
}

/// `n` evenly spaced points from `lo` to `hi`, endpoints exact.
pub fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| if i == n - 1 { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 }).collect(),
    }
}

/// Per-feature response over `grid_size` points spanning the training range.
pub fn export_responses(model: &KanModel, grid_size: usize) -> Result<Vec<ResponseCurve>> {
    (0..model.num_features())
        .map(|p| {
            let g = grid(model.standardizer.min[p], model.standardizer.max[p], grid_size);
            Ok(ResponseCurve { feature: model.schema.features()[p], points: model.univariate_response(p, &g)? })
        })
        .collect()
}

/// Derived proxies of a raw input and how to compute them.
pub fn proxies_of(raw: Feature) -> Vec<(Feature, fn(f64) -> f64)> {
    match raw {
        Feature::Stw => vec![(Feature::StwCubed, |v: f64| v.powi(3))],
        Feature::WaveDir => vec![(Feature::CosWaveDir, |d: f64| d.to_radians().cos())],
        _ => Vec::new(),
    }
}

/// Total contribution of a raw input through its own subnet and those of its
/// derived proxies, over raw values `xs`.
pub fn grouped_response(model: &KanModel, raw: Feature, xs: &[f64]) -> Result<Vec<(f64, f64)>> {
    let mut total = vec![0.0; xs.len()];
    let mut found = false;
    if let Some(p) = model.schema.position(raw) {
        found = true;
        for (t, (_, r)) in total.iter_mut().zip(model.univariate_response(p, xs)?) {
            *t += r;
        }
    }
    for (proxy, f) in proxies_of(raw) {
        if let Some(p) = model.schema.position(proxy) {
            found = true;
            let mapped: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
            for (t, (_, r)) in total.iter_mut().zip(model.univariate_response(p, &mapped)?) {
                *t += r;
            }
        }
    }
    if !found {
        return Err(Error::InvalidArgument(format!("model has no input for `{raw}`")));
    }
    Ok(xs.iter().copied().zip(total).collect())
}

/// `feature,x,response`.
pub fn write_responses_csv<W: Write>(curves: &[ResponseCurve], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["feature", "x", "response"])?;
    for c in curves {
        for (x, y) in &c.points {
            w.write_record([c.feature.name().to_string(), x.to_string(), y.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
