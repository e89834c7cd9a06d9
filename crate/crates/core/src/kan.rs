//! Additive per-feature network: one univariate subnetwork per input and a
//! linear combination head.
//!
//! For standardized inputs `z_p`:
//!
//! ```text
//! φ_p(z) = Σ_j W2_j · σ(W1_j · z + b1_j) + b2          (optionally layer-normed hidden units)
//! ŷ      = Σ_p w_p · φ_p(z_p) + b
//! ```
//!
//! The head is stored in target-normalized form, `w_p = s·ω_p` and
//! `b = μ + s·β`, where `(μ, s)` are the training-target mean and standard
//! deviation fixed by [`Differentiable::prepare`]. Predictions come out in
//! physical units and remain exactly additive; only the optimizer sees the
//! normalized `ω`, `β`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureMatrix, FeatureSchema, Standardizer};
use crate::error::{Error, Result};
use crate::train::{DataTerm, Differentiable, Regressor};

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KanConfig {
    pub hidden_width: usize,
    /// Layer-normalize each subnet's hidden activations (Linear–activation–LayerNorm).
    pub layer_norm: bool,
}

impl Default for KanConfig {
    fn default() -> Self {
        Self { hidden_width: 16, layer_norm: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
}

/// `φ(z) = W2 · act(W1·z + b1) + b2` with a sigmoid activation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnivariateSubnet {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
    pub norm: Option<LayerNorm>,
}

impl UnivariateSubnet {
    fn zeros(m: usize, layer_norm: bool) -> Self {
        Self {
            w1: vec![0.0; m],
            b1: vec![0.0; m],
            w2: vec![0.0; m],
            b2: 0.0,
            norm: layer_norm.then(|| LayerNorm { gain: vec![0.0; m], bias: vec![0.0; m] }),
        }
    }

    pub fn width(&self) -> usize {
        self.w1.len()
    }

    fn num_params(&self) -> usize {
        3 * self.width() + 1 + if self.norm.is_some() { 2 * self.width() } else { 0 }
    }

    /// Evaluates φ at a standardized input.
    pub fn eval(&self, z: f64) -> f64 {
        let m = self.width();
        let mut act = vec![0.0; m];
        for j in 0..m {
            act[j] = sigmoid(self.w1[j] * z + self.b1[j]);
        }
        match &self.norm {
            None => self.b2 + self.w2.iter().zip(&act).map(|(w, a)| w * a).sum::<f64>(),
            Some(ln) => {
                let (mean, inv) = moments(&act);
                self.b2 + (0..m).map(|j| self.w2[j] * (ln.gain[j] * (act[j] - mean) * inv + ln.bias[j])).sum::<f64>()
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn moments(a: &[f64]) -> (f64, f64) {
    let m = a.len() as f64;
    let mean = a.iter().sum::<f64>() / m;
    let var = a.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / m;
    (mean, 1.0 / (var + LAYER_NORM_EPS).sqrt())
}

/// Fixed affine map from the normalized head output to physical units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputScale {
    pub shift: f64,
    pub scale: f64,
}

impl Default for OutputScale {
    fn default() -> Self {
        Self { shift: 0.0, scale: 1.0 }
    }
}

impl OutputScale {
    /// Mean and population std of the targets; constant targets get unit scale.
    pub fn fit(y: &[f64]) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::Empty("targets"));
        }
        let n = y.len() as f64;
        let shift = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - shift) * (v - shift)).sum::<f64>() / n;
        let sd = var.sqrt();
        let scale = if sd > 1e-12 * shift.abs().max(1.0) { sd } else { 1.0 };
        if !(shift.is_finite() && scale.is_finite()) {
            return Err(Error::NonFiniteInput { row: 0, feature: "target".into() });
        }
        Ok(Self { shift, scale })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KanModel {
    pub schema: FeatureSchema,
    pub standardizer: Standardizer,
    pub config: KanConfig,
    pub subnets: Vec<UnivariateSubnet>,
    /// Normalized head weights ω_p.
    pub head_weights: Vec<f64>,
    /// Normalized head bias β.
    pub head_bias: f64,
    pub output: OutputScale,
}

/// Gradient with the same layout as [`KanModel`]'s learnable parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct KanGradient {
    pub subnets: Vec<UnivariateSubnet>,
    pub head_weights: Vec<f64>,
    pub head_bias: f64,
}

/// Intermediate values from [`KanModel::forward`] needed for backprop.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    rows: usize,
    features: usize,
    width: usize,
    /// Standardized inputs, row-major.
    inputs: Vec<f64>,
    /// Sigmoid activations, `[row][feature][unit]`.
    act: Vec<f64>,
    /// Layer-normed activations before gain/bias, same layout as `act`.
    normed: Vec<f64>,
    /// `1/√(var+ε)` per (row, feature) when layer norm is on.
    inv_std: Vec<f64>,
    /// Subnet outputs h_p, `[row][feature]`.
    pub h: Vec<f64>,
}

impl ForwardCache {
    pub fn rows(&self) -> usize {
        self.rows
    }
}

impl KanModel {
    /// Glorot-uniform subnet weights, zero biases, head weights uniform in
    /// ±1/√d. Deterministic per seed.
    pub fn new(schema: &FeatureSchema, config: KanConfig, seed: u64) -> Result<Self> {
        if config.hidden_width == 0 {
            return Err(Error::InvalidArgument("hidden width must be >= 1".into()));
        }
        if schema.is_empty() {
            return Err(Error::InvalidArgument("schema has no features".into()));
        }
        let m = config.hidden_width;
        let d = schema.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // fan_in + fan_out = 1 + m for both layers
        let bound = (6.0 / (1.0 + m as f64)).sqrt();
        let subnets = (0..d)
            .map(|_| {
                let mut s = UnivariateSubnet::zeros(m, config.layer_norm);
                for w in &mut s.w1 {
                    *w = rng.random_range(-bound..bound);
                }
                for w in &mut s.w2 {
                    *w = rng.random_range(-bound..bound);
                }
                if let Some(ln) = &mut s.norm {
                    ln.gain.fill(1.0);
                }
                s
            })
            .collect();
        let hb = 1.0 / (d as f64).sqrt();
        let head_weights = (0..d).map(|_| rng.random_range(-hb..hb)).collect();
        Ok(Self {
            schema: schema.clone(),
            standardizer: Standardizer::identity(schema),
            config,
            subnets,
            head_weights,
            head_bias: 0.0,
            output: OutputScale::default(),
        })
    }

    pub fn num_features(&self) -> usize {
        self.subnets.len()
    }

    /// Effective head weight `w_p` in target units.
    pub fn head_weight(&self, p: usize) -> f64 {
        self.output.scale * self.head_weights[p]
    }

    /// Effective head bias `b` in target units.
    pub fn bias(&self) -> f64 {
        self.output.shift + self.output.scale * self.head_bias
    }

    /// Sets the effective head so that `ŷ = Σ w_p h_p + b` exactly.
    pub fn set_head(&mut self, weights: &[f64], bias: f64) {
        let s = self.output.scale;
        self.head_weights = weights.iter().map(|w| w / s).collect();
        self.head_bias = (bias - self.output.shift) / s;
    }

    /// φ_p at a standardized input.
    pub fn subnet_output(&self, p: usize, z: f64) -> f64 {
        self.subnets[p].eval(z)
    }

    /// Forward pass on standardized inputs; predictions are in target units.
    pub fn forward(&self, z: &FeatureMatrix) -> Result<(Vec<f64>, ForwardCache)> {
        let d = self.num_features();
        if z.cols() != d {
            return Err(Error::Shape(format!("input has {} columns, model expects {d}", z.cols())));
        }
        if let Some((row, f)) = z.first_non_finite() {
            return Err(Error::NonFiniteInput { row, feature: f.name().into() });
        }
        let n = z.rows();
        let m = self.config.hidden_width;
        let ln = self.config.layer_norm;
        let mut cache = ForwardCache {
            rows: n,
            features: d,
            width: m,
            inputs: z.values().to_vec(),
            act: vec![0.0; n * d * m],
            normed: if ln { vec![0.0; n * d * m] } else { Vec::new() },
            inv_std: if ln { vec![0.0; n * d] } else { Vec::new() },
            h: vec![0.0; n * d],
        };
        let mut yhat = Vec::with_capacity(n);
        for r in 0..n {
            let mut acc = self.head_bias;
            for p in 0..d {
                let s = &self.subnets[p];
                let x = cache.inputs[r * d + p];
                let base = (r * d + p) * m;
                let act = &mut cache.act[base..base + m];
                for j in 0..m {
                    act[j] = sigmoid(s.w1[j] * x + s.b1[j]);
                }
                let h = match &s.norm {
                    None => s.b2 + s.w2.iter().zip(act.iter()).map(|(w, a)| w * a).sum::<f64>(),
                    Some(norm) => {
                        let (mean, inv) = moments(act);
                        cache.inv_std[r * d + p] = inv;
                        let normed = &mut cache.normed[base..base + m];
                        let mut h = s.b2;
                        for j in 0..m {
                            normed[j] = (act[j] - mean) * inv;
                            h += s.w2[j] * (norm.gain[j] * normed[j] + norm.bias[j]);
                        }
                        h
                    }
                };
                cache.h[r * d + p] = h;
                acc += self.head_weights[p] * h;
            }
            yhat.push(self.output.shift + self.output.scale * acc);
        }
        Ok((yhat, cache))
    }

    /// Exact gradient of `Σ_r g_r · ŷ_r` with respect to every learnable
    /// parameter, given `g = dL/dŷ`. Rows are reduced in order.
    pub fn gradient(&self, cache: &ForwardCache, dy: &[f64]) -> Result<KanGradient> {
        let (n, d, m) = (cache.rows, cache.features, cache.width);
        if dy.len() != n {
            return Err(Error::Shape(format!("{} output gradients for {n} cached rows", dy.len())));
        }
        if d != self.num_features() || m != self.config.hidden_width {
            return Err(Error::Shape("cache does not match model".into()));
        }
        let mut g = KanGradient {
            subnets: (0..d).map(|_| UnivariateSubnet::zeros(m, self.config.layer_norm)).collect(),
            head_weights: vec![0.0; d],
            head_bias: 0.0,
        };
        let scale = self.output.scale;
        let mut dnormed = vec![0.0; m];
        for r in 0..n {
            let gy = dy[r] * scale;
            if gy == 0.0 {
                continue;
            }
            g.head_bias += gy;
            for p in 0..d {
                let s = &self.subnets[p];
                let gs = &mut g.subnets[p];
                let h = cache.h[r * d + p];
                g.head_weights[p] += gy * h;
                let dh = gy * self.head_weights[p];
                gs.b2 += dh;
                let x = cache.inputs[r * d + p];
                let base = (r * d + p) * m;
                let act = &cache.act[base..base + m];
                match (&s.norm, &mut gs.norm) {
                    (None, _) => {
                        for j in 0..m {
                            gs.w2[j] += dh * act[j];
                            let dpre = dh * s.w2[j] * act[j] * (1.0 - act[j]);
                            gs.w1[j] += dpre * x;
                            gs.b1[j] += dpre;
                        }
                    }
                    (Some(norm), Some(gnorm)) => {
                        let normed = &cache.normed[base..base + m];
                        let inv = cache.inv_std[r * d + p];
                        let (mut mean_dn, mut mean_dn_n) = (0.0, 0.0);
                        for j in 0..m {
                            gs.w2[j] += dh * (norm.gain[j] * normed[j] + norm.bias[j]);
                            let dout = dh * s.w2[j];
                            gnorm.gain[j] += dout * normed[j];
                            gnorm.bias[j] += dout;
                            dnormed[j] = dout * norm.gain[j];
                            mean_dn += dnormed[j];
                            mean_dn_n += dnormed[j] * normed[j];
                        }
                        mean_dn /= m as f64;
                        mean_dn_n /= m as f64;
                        for j in 0..m {
                            let dact = inv * (dnormed[j] - mean_dn - normed[j] * mean_dn_n);
                            let dpre = dact * act[j] * (1.0 - act[j]);
                            gs.w1[j] += dpre * x;
                            gs.b1[j] += dpre;
                        }
                    }
                    (Some(_), None) => unreachable!("gradient layout mirrors model"),
                }
            }
        }
        Ok(g)
    }

    /// `(x, w_p · φ_p(z(x)))` over raw feature values, through the model's own
    /// standardizer. Other features cannot influence it.
    pub fn univariate_response(&self, p: usize, grid: &[f64]) -> Result<Vec<(f64, f64)>> {
        if p >= self.num_features() {
            return Err(Error::InvalidArgument(format!("feature index {p} >= {}", self.num_features())));
        }
        let w = self.head_weight(p);
        Ok(grid.iter().map(|&x| (x, w * self.subnet_output(p, self.standardizer.transform_value(p, x)))).collect())
    }
}

impl KanGradient {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for s in &self.subnets {
            push_subnet(&mut out, s);
        }
        out.extend_from_slice(&self.head_weights);
        out.push(self.head_bias);
        out
    }
}

fn push_subnet(out: &mut Vec<f64>, s: &UnivariateSubnet) {
    out.extend_from_slice(&s.w1);
    out.extend_from_slice(&s.b1);
    out.extend_from_slice(&s.w2);
    out.push(s.b2);
    if let Some(ln) = &s.norm {
        out.extend_from_slice(&ln.gain);
        out.extend_from_slice(&ln.bias);
    }
}

impl Regressor for KanModel {
    fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        if x.schema() != &self.schema {
            return Err(Error::Schema(format!(
                "input features {:?} differ from model features {:?}",
                x.schema().features(),
                self.schema.features()
            )));
        }
        if let Some((row, f)) = x.first_non_finite() {
            return Err(Error::NonFiniteInput { row, feature: f.name().into() });
        }
        let z = self.standardizer.transform(x)?;
        Ok(self.forward(&z)?.0)
    }
}

impl Differentiable for KanModel {
    type Cache = ForwardCache;

    fn prepare(&mut self, x: &FeatureMatrix, y: &[f64]) -> Result<()> {
        if x.schema() != &self.schema {
            return Err(Error::Schema("training features differ from model schema".into()));
        }
        self.standardizer = Standardizer::fit(x)?;
        self.output = OutputScale::fit(y)?;
        Ok(())
    }

    fn standardize(&self, x: &FeatureMatrix) -> Result<FeatureMatrix> {
        self.standardizer.transform(x)
    }

    fn forward_standardized(&self, z: &FeatureMatrix) -> Result<(Vec<f64>, ForwardCache)> {
        self.forward(z)
    }

    fn backward(&self, cache: &ForwardCache, dy: &[f64]) -> Result<Vec<f64>> {
        Ok(self.gradient(cache, dy)?.flatten())
    }

    fn num_params(&self) -> usize {
        self.subnets.iter().map(UnivariateSubnet::num_params).sum::<usize>() + self.num_features() + 1
    }

    fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for s in &self.subnets {
            push_subnet(&mut out, s);
        }
        out.extend_from_slice(&self.head_weights);
        out.push(self.head_bias);
        out
    }

    fn set_params(&mut self, theta: &[f64]) {
        assert_eq!(theta.len(), self.num_params(), "parameter vector length");
        let mut it = theta.iter().copied();
        let mut take = |dst: &mut [f64]| {
            for v in dst {
                *v = it.next().expect("length checked");
            }
        };
        for s in &mut self.subnets {
            take(&mut s.w1);
            take(&mut s.b1);
            take(&mut s.w2);
            take(std::slice::from_mut(&mut s.b2));
            if let Some(ln) = &mut s.norm {
                take(&mut ln.gain);
                take(&mut ln.bias);
            }
        }
        take(&mut self.head_weights);
        take(std::slice::from_mut(&mut self.head_bias));
    }

    /// Weights only: W1, W2 and the head. Biases and layer-norm parameters are
    /// not penalized.
    fn penalized(&self) -> Vec<bool> {
        let mut mask = Vec::with_capacity(self.num_params());
        for s in &self.subnets {
            let m = s.width();
            mask.extend(std::iter::repeat_n(true, m));
            mask.extend(std::iter::repeat_n(false, m));
            mask.extend(std::iter::repeat_n(true, m));
            mask.push(false);
            if s.norm.is_some() {
                mask.extend(std::iter::repeat_n(false, 2 * m));
            }
        }
        mask.extend(std::iter::repeat_n(true, self.num_features()));
        mask.push(false);
        mask
    }

    fn output_scale(&self) -> f64 {
        self.output.scale
    }

    fn data_term(&self) -> DataTerm {
        DataTerm::Mae
    }
}
