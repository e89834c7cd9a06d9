//! Losses, the auto-balanced objective, Adam and the early-stopping training
//! loop shared by every gradient-trained model.
//!
//! The objective is
//!
//! ```text
//! L = L_data + λ·L_physics + L_reg
//! ```
//!
//! with `L_data` and `L_physics` mean absolute errors in physical units and
//! `L_reg` an elastic-net penalty on weights. λ follows the multiplicative
//! controller `λ ← clip(λ·exp(η_b·(L_data − L_physics)), λ_min, λ_max)`, applied
//! once per epoch on epoch-mean losses.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{split_point, FeatureMatrix, FeatureSchema, VoyageRecord};
use crate::error::{Error, Result};
use crate::physics::{cube_law_power, fuel_rate_from_power, physical_power, CubeLawMode, PhysicsConfig};

/// Anything that maps a raw feature matrix to predictions.
pub trait Regressor {
    fn schema(&self) -> &FeatureSchema;
    fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>>;
}

/// Which data term a model is trained with.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataTerm {
    /// Mean absolute error in target units; the penalty is scaled by the
    /// model's output scale so it acts on the same footing as the data term.
    Mae,
    /// Mean squared error of standardized residuals `(ŷ−y)/s`.
    StandardizedMse,
}

/// A model trainable by [`fit`]: flat parameter access plus analytic backprop.
pub trait Differentiable: Regressor + Clone {
    type Cache;

    /// Fits input standardization and output scaling on the fitting rows.
    fn prepare(&mut self, x: &FeatureMatrix, y: &[f64]) -> Result<()>;
    fn standardize(&self, x: &FeatureMatrix) -> Result<FeatureMatrix>;
    /// Predictions in target units from standardized inputs.
    fn forward_standardized(&self, z: &FeatureMatrix) -> Result<(Vec<f64>, Self::Cache)>;
    /// Flat gradient of `Σ_r dy_r · ŷ_r`.
    fn backward(&self, cache: &Self::Cache, dy: &[f64]) -> Result<Vec<f64>>;
    fn num_params(&self) -> usize;
    fn params(&self) -> Vec<f64>;
    fn set_params(&mut self, theta: &[f64]);
    /// Which flat parameters the elastic-net penalty applies to.
    fn penalized(&self) -> Vec<bool>;
    /// Target scale `s` used to normalize residuals.
    fn output_scale(&self) -> f64;
    fn data_term(&self) -> DataTerm;
}

/// How λ evolves during a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaMode {
    /// Multiplicative controller, once per epoch.
    #[default]
    AutoBalance,
    /// λ held at its initial value.
    Fixed,
    /// Physics term switched off; λ is logged as 0.
    Disabled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Balance rate η_b of the λ controller.
    pub eta_balance: f64,
    /// Weight of the cube-law term inside the power physics loss, [0, 1].
    pub gamma: f64,
    /// Elastic-net strength.
    pub alpha: f64,
    /// Elastic-net L1 share, [0, 1].
    pub rho: f64,
    pub lambda_mode: LambdaMode,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            lambda_min: 1e-4,
            lambda_max: 10.0,
            eta_balance: 0.01,
            gamma: 0.0,
            alpha: 1e-2,
            rho: 0.5,
            lambda_mode: LambdaMode::AutoBalance,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lambda_min > 0.0
            && self.lambda_min <= self.lambda
            && self.lambda <= self.lambda_max
            && self.lambda_max.is_finite();
        if !ok {
            return Err(Error::Config(format!(
                "need 0 < lambda_min ({}) <= lambda ({}) <= lambda_max ({})",
                self.lambda_min, self.lambda, self.lambda_max
            )));
        }
        if !(self.eta_balance.is_finite() && self.eta_balance > 0.0) {
            return Err(Error::Config(format!("eta_balance = {} must be > 0", self.eta_balance)));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma = {} outside [0, 1]", self.gamma)));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::Config(format!("alpha = {} must be >= 0", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::Config(format!("rho = {} outside [0, 1]", self.rho)));
        }
        Ok(())
    }

    /// The λ that multiplies the physics term right now.
    pub fn effective_lambda(&self) -> f64 {
        match self.lambda_mode {
            LambdaMode::Disabled => 0.0,
            _ => self.lambda,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Minimum decrease in validation MAE that counts as improvement.
    pub min_improvement: f64,
    /// Chronological tail of the training rows held out for early stopping.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 150,
            patience: 10,
            min_improvement: 1e-6,
            validation_fraction: 0.2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning_rate = {} must be > 0", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.patience == 0 || self.patience > self.max_epochs.max(1) {
            return Err(Error::Config(format!(
                "patience = {} must be in [1, max_epochs = {}]",
                self.patience, self.max_epochs
            )));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config(format!("validation_fraction = {} outside [0, 1)", self.validation_fraction)));
        }
        if !(self.min_improvement >= 0.0) {
            return Err(Error::Config("min_improvement must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub data_loss: f64,
    pub physics_loss: f64,
    pub lambda: f64,
    pub val_mae: f64,
    #[serde(skip)]
    pub wall_seconds: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    NotStarted,
    MaxEpochs,
    EarlyStop,
    Diverged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub stop_epoch: usize,
    pub stop_reason: StopReason,
    /// Epoch whose parameters were returned.
    pub best_epoch: Option<usize>,
}

impl Default for TrainLog {
    fn default() -> Self {
        Self { epochs: Vec::new(), stop_epoch: 0, stop_reason: StopReason::NotStarted, best_epoch: None }
    }
}

impl TrainLog {
    /// Loss curve as CSV: `epoch,L_data,L_physics,lambda,val_mae`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["epoch", "L_data", "L_physics", "lambda", "val_mae"])?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                e.data_loss.to_string(),
                e.physics_loss.to_string(),
                e.lambda.to_string(),
                e.val_mae.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn lambda_trajectory(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.lambda).collect()
    }
}

#[inline]
pub(crate) fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() {
        return Err(Error::Empty("loss input"));
    }
    if a.len() != b.len() {
        return Err(Error::Shape(format!("{} predictions vs {} targets", a.len(), b.len())));
    }
    Ok(())
}

fn mean_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// Mean absolute error.
pub fn data_loss(yhat: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(yhat, y)?;
    Ok(mean_abs_diff(yhat, y))
}

/// Per-row physics targets, fixed before training.
#[derive(Clone, Debug, PartialEq)]
pub enum PhysicsTargets {
    /// No physics term (rpm stage, baselines).
    None,
    /// `P_physical` per row and, when the cube-law term is active, `k·n³`.
    Power { physical: Vec<f64>, cube: Option<Vec<f64>> },
    /// `P_input / (η·H)` per row.
    Fuel { physical: Vec<f64> },
}

impl PhysicsTargets {
    /// Power-stage targets. `shaft_rpm` is the rpm signal fed to the cube law
    /// (the stacked prediction inside the chained pipeline); it is required
    /// only when `gamma > 0` and the cube law is expressed per rpm.
    pub fn power(records: &[VoyageRecord], cfg: &PhysicsConfig, gamma: f64, shaft_rpm: Option<&[f64]>) -> Result<Self> {
        let physical = records.iter().map(|r| physical_power(r, cfg)).collect();
        if gamma == 0.0 {
            return Ok(Self::Power { physical, cube: None });
        }
        let law =
            cfg.cube_law.ok_or_else(|| Error::Config(format!("gamma = {gamma} needs a calibrated cube-law k")))?;
        let cube = match law.mode {
            CubeLawMode::PerRpm => {
                let n = shaft_rpm.ok_or_else(|| Error::Config("per-rpm cube law needs an rpm signal".into()))?;
                if n.len() != records.len() {
                    return Err(Error::Shape(format!("{} rpm values for {} rows", n.len(), records.len())));
                }
                n.iter().map(|&n| cube_law_power(n.max(0.0), law.k)).collect()
            }
            CubeLawMode::PerSpeed => records.iter().map(|r| cube_law_power(r.stw, law.k)).collect(),
        };
        Ok(Self::Power { physical, cube: Some(cube) })
    }

    /// Fuel-stage targets from the power signal the fuel model consumes.
    pub fn fuel(power_input: &[f64], cfg: &PhysicsConfig) -> Self {
        Self::Fuel { physical: power_input.iter().map(|&p| fuel_rate_from_power(p, cfg)).collect() }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, Self::None)
    }

    fn len(&self) -> Option<usize> {
        match self {
            Self::None => None,
            Self::Power { physical, .. } | Self::Fuel { physical } => Some(physical.len()),
        }
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        match self {
            Self::None => Self::None,
            Self::Power { physical, cube } => Self::Power { physical: pick(physical), cube: cube.as_deref().map(pick) },
            Self::Fuel { physical } => Self::Fuel { physical: pick(physical) },
        }
    }

    /// Physics loss of `yhat`; zero when there is no physics term.
    pub fn loss(&self, yhat: &[f64], gamma: f64) -> Result<f64> {
        match self {
            Self::None => Ok(0.0),
            Self::Power { physical, cube } => {
                check_lengths(yhat, physical)?;
                let mut l = mean_abs_diff(yhat, physical);
                if gamma != 0.0 {
                    let cube = cube.as_ref().ok_or_else(|| Error::Config("cube-law targets missing".into()))?;
                    check_lengths(yhat, cube)?;
                    l += gamma * mean_abs_diff(yhat, cube);
                }
                Ok(l)
            }
            Self::Fuel { physical } => {
                check_lengths(yhat, physical)?;
                Ok(mean_abs_diff(yhat, physical))
            }
        }
    }

    /// Adds `coef · ∂L_physics/∂ŷ` into `dy`.
    fn add_gradient(&self, yhat: &[f64], gamma: f64, coef: f64, dy: &mut [f64]) {
        let n = yhat.len() as f64;
        match self {
            Self::None => {}
            Self::Power { physical, cube } => {
                for (i, g) in dy.iter_mut().enumerate() {
                    *g += coef * sgn(yhat[i] - physical[i]) / n;
                }
                if gamma != 0.0 {
                    if let Some(cube) = cube {
                        for (i, g) in dy.iter_mut().enumerate() {
                            *g += coef * gamma * sgn(yhat[i] - cube[i]) / n;
                        }
                    }
                }
            }
            Self::Fuel { physical } => {
                for (i, g) in dy.iter_mut().enumerate() {
                    *g += coef * sgn(yhat[i] - physical[i]) / n;
                }
            }
        }
    }
}

/// `MAE(P̂, P_physical) + γ·MAE(P̂, k·n³)`; the cube term is skipped when γ = 0.
pub fn physics_loss_power(
    p_hat: &[f64],
    records: &[VoyageRecord],
    shaft_rpm: Option<&[f64]>,
    cfg: &PhysicsConfig,
    weights: &LossWeights,
) -> Result<f64> {
    PhysicsTargets::power(records, cfg, weights.gamma, shaft_rpm)?.loss(p_hat, weights.gamma)
}

/// `MAE(ṁ̂, P_input/(η·H))`.
pub fn physics_loss_fuel(m_hat: &[f64], power_input: &[f64], cfg: &PhysicsConfig) -> Result<f64> {
    PhysicsTargets::fuel(power_input, cfg).loss(m_hat, 0.0)
}

/// `α·(ρ·Σ|θ| + (1−ρ)/2·Σθ²)` over the entries flagged in `mask`.
pub fn elastic_penalty(theta: &[f64], mask: &[bool], alpha: f64, rho: f64) -> f64 {
    let (mut l1, mut l2) = (0.0, 0.0);
    for (t, &m) in theta.iter().zip(mask) {
        if m {
            l1 += t.abs();
            l2 += t * t;
        }
    }
    alpha * (rho * l1 + (1.0 - rho) / 2.0 * l2)
}

fn elastic_gradient(theta: &[f64], mask: &[bool], alpha: f64, rho: f64, coef: f64, grad: &mut [f64]) {
    for i in 0..theta.len() {
        if mask[i] {
            grad[i] += coef * alpha * (rho * sgn(theta[i]) + (1.0 - rho) * theta[i]);
        }
    }
}

/// Elastic-net penalty of a model's weights.
pub fn model_penalty<M: Differentiable>(model: &M, alpha: f64, rho: f64) -> f64 {
    elastic_penalty(&model.params(), &model.penalized(), alpha, rho)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub data: f64,
    pub physics: f64,
    pub reg: f64,
    pub lambda: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn new(data: f64, physics: f64, reg: f64, lambda: f64) -> Self {
        Self { data, physics, reg, lambda, total: data + lambda * physics + reg }
    }
}

/// `L = L_data + λ·L_physics + L_reg` with its components. λ comes from
/// [`LossWeights::effective_lambda`]; `reg` is the already-weighted penalty.
pub fn total_loss(
    yhat: &[f64],
    y: &[f64],
    physics: &PhysicsTargets,
    weights: &LossWeights,
    reg: f64,
) -> Result<LossBreakdown> {
    let data = data_loss(yhat, y)?;
    let phys = physics.loss(yhat, weights.gamma)?;
    Ok(LossBreakdown::new(data, phys, reg, weights.effective_lambda()))
}

/// The objective a model is actually trained on, with its flat gradient when
/// requested. Inputs are standardized.
pub fn objective<M: Differentiable>(
    model: &M,
    z: &FeatureMatrix,
    y: &[f64],
    physics: &PhysicsTargets,
    weights: &LossWeights,
    with_gradient: bool,
) -> Result<(LossBreakdown, Option<Vec<f64>>)> {
    let (yhat, cache) = model.forward_standardized(z)?;
    check_lengths(&yhat, y)?;
    let lambda = weights.effective_lambda();
    let theta = model.params();
    let mask = model.penalized();
    let s = model.output_scale();
    let n = y.len() as f64;
    let (data, reg_coef) = match model.data_term() {
        DataTerm::Mae => (mean_abs_diff(&yhat, y), s),
        DataTerm::StandardizedMse => (yhat.iter().zip(y).map(|(a, b)| ((a - b) / s).powi(2)).sum::<f64>() / n, 1.0),
    };
    let phys = physics.loss(&yhat, weights.gamma)?;
    let reg = reg_coef * elastic_penalty(&theta, &mask, weights.alpha, weights.rho);
    let breakdown = LossBreakdown::new(data, phys, reg, lambda);
    if !with_gradient {
        return Ok((breakdown, None));
    }
    let grad = objective_gradient_from(model, &cache, &yhat, y, physics, weights, &theta)?;
    Ok((breakdown, Some(grad)))
}

/// `clip(λ·exp(η_b·(L_data − L_physics)), λ_min, λ_max)`.
pub fn update_lambda(weights: &LossWeights, data_loss: f64, physics_loss: f64) -> Result<f64> {
    if !(data_loss.is_finite() && physics_loss.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite losses {data_loss}, {physics_loss}")));
    }
    let next = weights.lambda * (weights.eta_balance * (data_loss - physics_loss)).exp();
    Ok(next.clamp(weights.lambda_min, weights.lambda_max))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Steps taken so far.
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }
}

/// One bias-corrected Adam update; advances `state.t` first, so the first
/// call runs with `t = 1`.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let mhat = state.m[i] / c1;
        let vhat = state.v[i] / c2;
        params[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
    }
}

/// Mini-batch Adam with a per-epoch λ update and early stopping on the MAE of
/// the chronological validation tail. Returns the best-validation snapshot.
///
/// `physics` must be row-aligned with `x` and `y`. With `max_epochs = 0` the
/// model is returned untouched with an empty log.
pub fn fit<M: Differentiable>(
    model: M,
    x: &FeatureMatrix,
    y: &[f64],
    physics: &PhysicsTargets,
    weights: &LossWeights,
    cfg: &TrainConfig,
) -> Result<(M, TrainLog)> {
    cfg.validate()?;
    weights.validate()?;
    if x.rows() != y.len() {
        return Err(Error::Shape(format!("{} feature rows vs {} targets", x.rows(), y.len())));
    }
    if let Some(n) = physics.len() {
        if n != y.len() {
            return Err(Error::Shape(format!("{n} physics targets vs {} rows", y.len())));
        }
    }
    if cfg.max_epochs == 0 {
        return Ok((model, TrainLog::default()));
    }
    let n = y.len();
    let n_fit = split_point(n, 1.0 - cfg.validation_fraction);
    if n_fit < cfg.batch_size || n_fit == 0 {
        return Err(Error::InvalidArgument(format!(
            "{n_fit} fitting rows is fewer than the batch size {}",
            cfg.batch_size
        )));
    }
    let fit_idx: Vec<usize> = (0..n_fit).collect();
    let val_idx: Vec<usize> = (n_fit..n).collect();
    let x_fit = x.select_rows(&fit_idx);
    let y_fit = &y[..n_fit];
    let phys_fit = physics.select(&fit_idx);

    let mut model = model;
    model.prepare(&x_fit, y_fit)?;
    let z_fit = model.standardize(&x_fit)?;
    let (z_val, y_val) = if val_idx.is_empty() {
        (z_fit.clone(), y_fit)
    } else {
        (model.standardize(&x.select_rows(&val_idx))?, &y[n_fit..])
    };

    let mut weights = weights.clone();
    let adam = AdamConfig::with_lr(cfg.learning_rate);
    let mut state = AdamState::new(model.num_params());
    let mut theta = model.params();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n_fit).collect();
    let mut log = TrainLog::default();
    let mut best = (f64::INFINITY, theta.clone());
    let mut stale = 0;
    let start = Instant::now();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let (mut sum_data, mut sum_phys) = (0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let zb = z_fit.select_rows(batch);
            let yb: Vec<f64> = batch.iter().map(|&i| y_fit[i]).collect();
            let pb = phys_fit.select(batch);
            let (yhat, cache) = model.forward_standardized(&zb)?;
            let bn = batch.len() as f64;
            let data_mae = mean_abs_diff(&yhat, &yb);
            let phys = pb.loss(&yhat, weights.gamma)?;
            sum_data += data_mae * bn;
            sum_phys += phys * bn;
            let grad = objective_gradient_from(&model, &cache, &yhat, &yb, &pb, &weights, &theta)?;
            if grad.iter().any(|g| !g.is_finite()) || !data_mae.is_finite() || !phys.is_finite() {
                log.stop_epoch = epoch;
                log.stop_reason = StopReason::Diverged;
                return Err(Error::Diverged { epoch, log: Box::new(log) });
            }
            adam_step(&mut theta, &grad, &mut state, &adam);
            model.set_params(&theta);
        }
        let data_mean = sum_data / n_fit as f64;
        let phys_mean = sum_phys / n_fit as f64;
        let (yv, _) = model.forward_standardized(&z_val)?;
        let val_mae = mean_abs_diff(&yv, y_val);
        if !(val_mae.is_finite() && data_mean.is_finite()) {
            log.stop_epoch = epoch;
            log.stop_reason = StopReason::Diverged;
            return Err(Error::Diverged { epoch, log: Box::new(log) });
        }
        log.epochs.push(EpochRecord {
            epoch,
            data_loss: data_mean,
            physics_loss: phys_mean,
            lambda: weights.effective_lambda(),
            val_mae,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
        if weights.lambda_mode == LambdaMode::AutoBalance && !physics.is_none() {
            weights.lambda = update_lambda(&weights, data_mean, phys_mean)?;
        }
        if val_mae < best.0 - cfg.min_improvement {
            best = (val_mae, theta.clone());
            log.best_epoch = Some(epoch);
            stale = 0;
        } else {
            stale += 1;
        }
        log.stop_epoch = epoch;
        if stale >= cfg.patience {
            log.stop_reason = StopReason::EarlyStop;
            break;
        }
        log.stop_reason = StopReason::MaxEpochs;
    }
    model.set_params(&best.1);
    Ok((model, log))
}

fn objective_gradient_from<M: Differentiable>(
    model: &M,
    cache: &M::Cache,
    yhat: &[f64],
    y: &[f64],
    physics: &PhysicsTargets,
    weights: &LossWeights,
    theta: &[f64],
) -> Result<Vec<f64>> {
    let n = y.len() as f64;
    let s = model.output_scale();
    let (mut dy, reg_coef): (Vec<f64>, f64) = match model.data_term() {
        DataTerm::Mae => (yhat.iter().zip(y).map(|(a, b)| sgn(a - b) / n).collect(), s),
        DataTerm::StandardizedMse => (yhat.iter().zip(y).map(|(a, b)| 2.0 * (a - b) / (s * s * n)).collect(), 1.0),
    };
    let lambda = weights.effective_lambda();
    if lambda != 0.0 {
        physics.add_gradient(yhat, weights.gamma, lambda, &mut dy);
    }
    let mut grad = model.backward(cache, &dy)?;
    elastic_gradient(theta, &model.penalized(), weights.alpha, weights.rho, reg_coef, &mut grad);
    Ok(grad)
}
