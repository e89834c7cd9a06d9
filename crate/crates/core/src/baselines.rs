//! Reference methods: a multiplicative polynomial model and a dense ReLU
//! network. Both implement [`Regressor`] so the pipeline treats them like the
//! additive network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Feature, FeatureMatrix, FeatureSchema, Standardizer};
use crate::error::{Error, Result};
use crate::kan::OutputScale;
use crate::linalg::least_squares;
use crate::train::{DataTerm, Differentiable, Regressor, TrainConfig};

/// Sweeps of the alternating fit.
pub const PM_MAX_SWEEPS: usize = 50;
/// Relative train-MAE improvement below which the alternating fit stops.
pub const PM_TOLERANCE: f64 = 1e-6;
/// Residual correlation a candidate must exceed to be selected.
pub const PM_MIN_CORRELATION: f64 = 0.05;
pub const PM_MAX_FEATURES: usize = 4;
const PM_RIDGE: f64 = 1e-8;

/// Features the polynomial model uses when no selection is run.
pub const PM_DEFAULT_FEATURES: [Feature; 4] =
    [Feature::Stw, Feature::Draught, Feature::WindSpeed, Feature::SwellHeight];

/// `ŷ = scale · Π_i p_i(u_i)` with cubic `p_i`, each evaluated on its feature
/// mapped linearly from the training range onto [1, 2].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolynomialModel {
    /// Schema of the matrices the model is applied to.
    pub schema: FeatureSchema,
    pub features: Vec<Feature>,
    /// Training minimum and width per selected feature.
    pub ranges: Vec<(f64, f64)>,
    /// `c0 + c1·u + c2·u² + c3·u³` per selected feature.
    pub coefficients: Vec<[f64; 4]>,
    pub scale: f64,
}

/// Diagnostics from [`pm_fit_traced`].
#[derive(Clone, Debug, PartialEq)]
pub struct PmTrace {
    /// Train MAE after initialization and after every sweep.
    pub train_mae: Vec<f64>,
    /// Predictions on the training rows from the final model.
    pub train_predictions: Vec<f64>,
    pub ridge_refit: bool,
}

fn cubic(c: &[f64; 4], u: f64) -> f64 {
    c[0] + u * (c[1] + u * (c[2] + u * c[3]))
}

fn mae(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

impl PolynomialModel {
    fn mapped(&self, x: &FeatureMatrix, r: usize, i: usize, col: usize) -> f64 {
        let (lo, w) = self.ranges[i];
        1.0 + (x.get(r, col) - lo) / w
    }

    fn columns(&self, x: &FeatureMatrix) -> Result<Vec<usize>> {
        self.features
            .iter()
            .map(|&f| {
                x.schema().position(f).ok_or_else(|| Error::Schema(format!("polynomial model needs feature `{f}`")))
            })
            .collect()
    }

    /// Value of the `i`-th factor at a raw feature value.
    pub fn factor(&self, i: usize, raw: f64) -> f64 {
        let (lo, w) = self.ranges[i];
        cubic(&self.coefficients[i], 1.0 + (raw - lo) / w)
    }
}

/// `scale · Π p_i(u_i)`.
pub fn pm_predict(model: &PolynomialModel, x: &FeatureMatrix) -> Result<Vec<f64>> {
    let cols = model.columns(x)?;
    Ok((0..x.rows())
        .map(|r| {
            let mut y = model.scale;
            for (i, &c) in cols.iter().enumerate() {
                y *= cubic(&model.coefficients[i], model.mapped(x, r, i, c));
            }
            y
        })
        .collect())
}

impl Regressor for PolynomialModel {
    fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        if let Some((row, f)) = x.first_non_finite() {
            return Err(Error::NonFiniteInput { row, feature: f.name().into() });
        }
        pm_predict(self, x)
    }
}

/// Alternating least-squares fit of the multiplicative model.
pub fn pm_fit(x: &FeatureMatrix, y: &[f64], features: &[Feature]) -> Result<PolynomialModel> {
    Ok(pm_fit_traced(x, y, features)?.0)
}

/// Factor `i` refit given all others: least squares of `y ≈ q·p_i(u_i)` over
/// rows with `|q| ≥ ε`, where `q` is the product of the other factors.
fn refit_factor(u: &[Vec<f64>], y: &[f64], coeffs: &[[f64; 4]], i: usize, eps: f64, ridge: f64) -> Result<[f64; 4]> {
    let n = y.len();
    let mut design = Vec::with_capacity(n * 4);
    let mut rhs = Vec::with_capacity(n);
    for r in 0..n {
        let q: f64 = (0..coeffs.len()).filter(|&j| j != i).map(|j| cubic(&coeffs[j], u[j][r])).product();
        if q.abs() < eps {
            continue;
        }
        let ui = u[i][r];
        design.extend_from_slice(&[q, q * ui, q * ui * ui, q * ui * ui * ui]);
        rhs.push(y[r]);
    }
    if rhs.is_empty() {
        return Err(Error::Conditioning(format!("every row excluded when refitting factor {i}")));
    }
    let beta = least_squares(&design, 4, &rhs, ridge)
        .ok_or_else(|| Error::Conditioning(format!("least squares failed for factor {i}")))?;
    Ok([beta[0], beta[1], beta[2], beta[3]])
}

fn product_predictions(u: &[Vec<f64>], coeffs: &[[f64; 4]], n: usize) -> Vec<f64> {
    (0..n).map(|r| coeffs.iter().enumerate().map(|(j, c)| cubic(c, u[j][r])).product()).collect()
}

fn alternate(u: &[Vec<f64>], y: &[f64], eps: f64, ridge: f64) -> Result<(Vec<[f64; 4]>, Vec<f64>)> {
    let n = y.len();
    let k = u.len();
    let mut coeffs = vec![[1.0, 0.0, 0.0, 0.0]; k];
    coeffs[0] = refit_factor(u, y, &coeffs, 0, eps, ridge)?;
    let mut current = mae(&product_predictions(u, &coeffs, n), y);
    let mut trace = vec![current];
    for _ in 0..PM_MAX_SWEEPS {
        let before = current;
        for i in 0..k {
            let mut candidate = coeffs.clone();
            candidate[i] = refit_factor(u, y, &coeffs, i, eps, ridge)?;
            let m = mae(&product_predictions(u, &candidate, n), y);
            // least squares is optimal in squared error, so keep only non-worsening MAE steps
            if m <= current {
                coeffs = candidate;
                current = m;
            }
        }
        trace.push(current);
        if before - current <= PM_TOLERANCE * before.max(f64::MIN_POSITIVE) || k == 1 {
            break;
        }
    }
    Ok((coeffs, trace))
}

/// [`pm_fit`] with the per-sweep MAE trace and stored training predictions.
pub fn pm_fit_traced(x: &FeatureMatrix, y: &[f64], features: &[Feature]) -> Result<(PolynomialModel, PmTrace)> {
    if features.is_empty() {
        return Err(Error::InvalidArgument("polynomial model needs at least one feature".into()));
    }
    if x.rows() != y.len() || y.is_empty() {
        return Err(Error::Shape(format!("{} rows vs {} targets", x.rows(), y.len())));
    }
    let mut ranges = Vec::new();
    let mut u = Vec::new();
    for &f in features {
        let col =
            x.schema().position(f).ok_or_else(|| Error::Schema(format!("polynomial model needs feature `{f}`")))?;
        let values = x.column(col);
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(hi > lo) {
            return Err(Error::InvalidArgument(format!("feature `{f}` is constant on the training rows")));
        }
        let w = hi - lo;
        ranges.push((lo, w));
        u.push(values.iter().map(|v| 1.0 + (v - lo) / w).collect::<Vec<_>>());
    }
    // factors are fitted to y / max|y|, where the threshold 1e-6·max|y| becomes 1e-6
    let y_max = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let y_max = if y_max > 0.0 { y_max } else { 1.0 };
    let yn: Vec<f64> = y.iter().map(|v| v / y_max).collect();
    let eps = 1e-6;
    let (mut coeffs, mut trace) = alternate(&u, &yn, eps, 0.0)?;
    let mut ridge_refit = false;
    if features.len() > 1 && !well_conditioned(&coeffs, &u, eps) {
        ridge_refit = true;
        let (c, t) = alternate(&u, &yn, eps, PM_RIDGE)?;
        coeffs = c;
        trace = t;
        if !well_conditioned(&coeffs, &u, eps) {
            log::warn!("polynomial factor approaches zero on the training range after ridge refit");
        }
    }
    // move each factor's training-mean magnitude into the global scale
    let mut scale = y_max;
    for m in &mut trace {
        *m *= y_max;
    }
    for (i, c) in coeffs.iter_mut().enumerate() {
        let m = u[i].iter().map(|&v| cubic(c, v)).sum::<f64>() / y.len() as f64;
        if m.abs() > 0.0 && m.is_finite() && features.len() > 1 {
            for v in c.iter_mut() {
                *v /= m;
            }
            scale *= m;
        }
    }
    let model = PolynomialModel {
        schema: x.schema().clone(),
        features: features.to_vec(),
        ranges,
        coefficients: coeffs,
        scale,
    };
    let train_predictions = pm_predict(&model, x)?;
    Ok((model, PmTrace { train_mae: trace, train_predictions, ridge_refit }))
}

/// `|p_i| ≥ ε` at every training value and on a dense grid of [1, 2].
fn well_conditioned(coeffs: &[[f64; 4]], u: &[Vec<f64>], eps: f64) -> bool {
    coeffs.iter().enumerate().all(|(i, c)| {
        u[i].iter().all(|&v| cubic(c, v).abs() >= eps)
            && (0..=200).all(|g| cubic(c, 1.0 + g as f64 / 200.0).abs() >= eps)
    })
}

pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

/// Greedy forward selection: repeatedly add the candidate most correlated
/// (in absolute value) with the current residuals, refitting after each
/// addition, until `max_features` are chosen or no correlation exceeds
/// [`PM_MIN_CORRELATION`].
pub fn pm_select_features(
    x: &FeatureMatrix,
    y: &[f64],
    candidates: &[Feature],
    max_features: usize,
) -> Result<Vec<Feature>> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("no candidate features".into()));
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let mut residual: Vec<f64> = y.iter().map(|v| v - mean).collect();
    let mut selected: Vec<Feature> = Vec::new();
    while selected.len() < max_features {
        let mut best: Option<(f64, Feature)> = None;
        for &f in candidates {
            if selected.contains(&f) {
                continue;
            }
            let col =
                x.schema().position(f).ok_or_else(|| Error::Schema(format!("candidate `{f}` missing from matrix")))?;
            if let Some(r) = pearson(&x.column(col), &residual) {
                if best.is_none_or(|(b, _)| r.abs() > b) {
                    best = Some((r.abs(), f));
                }
            }
        }
        match best {
            Some((r, f)) if r > PM_MIN_CORRELATION => selected.push(f),
            _ => break,
        }
        let model = pm_fit(x, y, &selected)?;
        let pred = pm_predict(&model, x)?;
        residual = y.iter().zip(&pred).map(|(a, b)| a - b).collect();
    }
    Ok(selected)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self { hidden: vec![37, 28] }
    }
}

impl MlpConfig {
    /// Adam lr 1e-2, batch 8, up to 200 epochs.
    pub fn train_config(seed: u64) -> TrainConfig {
        TrainConfig { learning_rate: 1e-2, batch_size: 8, max_epochs: 200, seed, ..TrainConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `[output][input]`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Dense ReLU network with a linear scalar head; the head output is mapped to
/// target units by a fixed affine [`OutputScale`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub schema: FeatureSchema,
    pub standardizer: Standardizer,
    pub layers: Vec<DenseLayer>,
    pub output: OutputScale,
}

#[derive(Clone, Debug)]
pub struct MlpCache {
    rows: usize,
    /// Per layer: inputs to that layer, row-major.
    inputs: Vec<Vec<f64>>,
    /// Per hidden layer: pre-activations, row-major.
    pre: Vec<Vec<f64>>,
}

impl MlpModel {
    pub fn new(schema: &FeatureSchema, config: &MlpConfig, seed: u64) -> Result<Self> {
        if schema.is_empty() {
            return Err(Error::InvalidArgument("schema has no features".into()));
        }
        if config.hidden.contains(&0) {
            return Err(Error::InvalidArgument("hidden widths must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sizes = vec![schema.len()];
        sizes.extend(&config.hidden);
        sizes.push(1);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = (6.0 / (w[0] + w[1]) as f64).sqrt();
                DenseLayer {
                    inputs: w[0],
                    outputs: w[1],
                    weights: (0..w[0] * w[1]).map(|_| rng.random_range(-bound..bound)).collect(),
                    bias: vec![0.0; w[1]],
                }
            })
            .collect();
        Ok(Self {
            schema: schema.clone(),
            standardizer: Standardizer::identity(schema),
            layers,
            output: OutputScale::default(),
        })
    }

    pub fn forward(&self, z: &FeatureMatrix) -> Result<(Vec<f64>, MlpCache)> {
        if z.cols() != self.schema.len() {
            return Err(Error::Shape(format!("input has {} columns, model expects {}", z.cols(), self.schema.len())));
        }
        if let Some((row, f)) = z.first_non_finite() {
            return Err(Error::NonFiniteInput { row, feature: f.name().into() });
        }
        let n = z.rows();
        let last = self.layers.len() - 1;
        let mut cache = MlpCache { rows: n, inputs: Vec::with_capacity(self.layers.len()), pre: Vec::new() };
        let mut a = z.values().to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut out = vec![0.0; n * layer.outputs];
            for r in 0..n {
                let x = &a[r * layer.inputs..(r + 1) * layer.inputs];
                for o in 0..layer.outputs {
                    let w = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    out[r * layer.outputs + o] = layer.bias[o] + w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>();
                }
            }
            cache.inputs.push(a);
            if l < last {
                cache.pre.push(out.clone());
                for v in &mut out {
                    *v = v.max(0.0);
                }
            }
            a = out;
        }
        let yhat = a.iter().map(|o| self.output.shift + self.output.scale * o).collect();
        Ok((yhat, cache))
    }

    fn gradient_flat(&self, cache: &MlpCache, dy: &[f64]) -> Result<Vec<f64>> {
        if dy.len() != cache.rows {
            return Err(Error::Shape(format!("{} output gradients for {} cached rows", dy.len(), cache.rows)));
        }
        let mut grads: Vec<DenseLayer> = self
            .layers
            .iter()
            .map(|l| DenseLayer {
                inputs: l.inputs,
                outputs: l.outputs,
                weights: vec![0.0; l.weights.len()],
                bias: vec![0.0; l.outputs],
            })
            .collect();
        let last = self.layers.len() - 1;
        for r in 0..cache.rows {
            let mut delta = vec![dy[r] * self.output.scale];
            for l in (0..=last).rev() {
                let layer = &self.layers[l];
                let g = &mut grads[l];
                let x = &cache.inputs[l][r * layer.inputs..(r + 1) * layer.inputs];
                let mut back = vec![0.0; layer.inputs];
                for o in 0..layer.outputs {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    g.bias[o] += d;
                    let row = o * layer.inputs;
                    for i in 0..layer.inputs {
                        g.weights[row + i] += d * x[i];
                        back[i] += d * layer.weights[row + i];
                    }
                }
                if l > 0 {
                    let pre = &cache.pre[l - 1][r * layer.inputs..(r + 1) * layer.inputs];
                    for i in 0..layer.inputs {
                        if pre[i] <= 0.0 {
                            back[i] = 0.0;
                        }
                    }
                }
                delta = back;
            }
        }
        Ok(grads.into_iter().flat_map(|g| g.weights.into_iter().chain(g.bias)).collect())
    }
}

impl Regressor for MlpModel {
    fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        if x.schema() != &self.schema {
            return Err(Error::Schema("input features differ from model features".into()));
        }
        if let Some((row, f)) = x.first_non_finite() {
            return Err(Error::NonFiniteInput { row, feature: f.name().into() });
        }
        Ok(self.forward(&self.standardizer.transform(x)?)?.0)
    }
}

impl Differentiable for MlpModel {
    type Cache = MlpCache;

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

    fn forward_standardized(&self, z: &FeatureMatrix) -> Result<(Vec<f64>, MlpCache)> {
        self.forward(z)
    }

    fn backward(&self, cache: &MlpCache, dy: &[f64]) -> Result<Vec<f64>> {
        self.gradient_flat(cache, dy)
    }

    fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    fn params(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias).copied()).collect()
    }

    fn set_params(&mut self, theta: &[f64]) {
        assert_eq!(theta.len(), self.num_params(), "parameter vector length");
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&theta[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&theta[off..off + nb]);
            off += nb;
        }
    }

    fn penalized(&self) -> Vec<bool> {
        self.layers
            .iter()
            .flat_map(|l| std::iter::repeat_n(true, l.weights.len()).chain(std::iter::repeat_n(false, l.bias.len())))
            .collect()
    }

    fn output_scale(&self) -> f64 {
        self.output.scale
    }

    fn data_term(&self) -> DataTerm {
        DataTerm::StandardizedMse
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::{fit, LossWeights, PhysicsTargets};
    use proptest::prelude::*;
    use rand::Rng;

    fn matrix(features: &[Feature], cols: &[Vec<f64>]) -> FeatureMatrix {
        let n = cols[0].len();
        let mut v = Vec::with_capacity(n * cols.len());
        for r in 0..n {
            for c in cols {
                v.push(c[r]);
            }
        }
        FeatureMatrix::new(FeatureSchema::new(features.to_vec()).unwrap(), n, v).unwrap()
    }

    #[test]
    fn recovers_exact_cubic() {
        let u: Vec<f64> = (0..50).map(|i| 0.5 + i as f64 * 0.03).collect();
        let y: Vec<f64> = u.iter().map(|v| v * v * v).collect();
        let x = matrix(&[Feature::Stw], &[u]);
        let m = pm_fit(&x, &y, &[Feature::Stw]).unwrap();
        assert!(mae(&pm_predict(&m, &x).unwrap(), &y) < 1e-8);
    }

    #[test]
    fn constant_target_fits_exactly() {
        let u: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let x = matrix(&[Feature::Stw], &[u]);
        let m = pm_fit(&x, &[4.5; 20], &[Feature::Stw]).unwrap();
        assert!(pm_predict(&m, &x).unwrap().iter().all(|p| (p - 4.5).abs() < 1e-10));
    }

    #[test]
    fn recovers_product_on_grid() {
        let (mut a, mut b, mut y) = (Vec::new(), Vec::new(), Vec::new());
        for i in 0..15 {
            for j in 0..15 {
                let u1 = 1.0 + i as f64 * 0.2;
                let u2 = 0.5 + j as f64 * 0.1;
                a.push(u1);
                b.push(u2);
                y.push(u1 * u2);
            }
        }
        let x = matrix(&[Feature::Stw, Feature::Draught], &[a, b]);
        let (m, trace) = pm_fit_traced(&x, &y, &[Feature::Stw, Feature::Draught]).unwrap();
        assert!(mae(&pm_predict(&m, &x).unwrap(), &y) < 1e-6);
        assert!(trace.train_mae.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn predict_examples() {
        let schema = FeatureSchema::new(vec![Feature::Stw]).unwrap();
        let x = FeatureMatrix::new(schema.clone(), 2, vec![0.0, 1.0]).unwrap();
        let ones = PolynomialModel {
            schema: schema.clone(),
            features: vec![Feature::Stw],
            ranges: vec![(0.0, 1.0)],
            coefficients: vec![[1.0, 0.0, 0.0, 0.0]],
            scale: 5.0,
        };
        assert_eq!(pm_predict(&ones, &x).unwrap(), vec![5.0, 5.0]);
        // u = 2 maps to itself with range (1, 1)
        let cube =
            PolynomialModel { ranges: vec![(1.0, 1.0)], coefficients: vec![[0.0, 0.0, 0.0, 1.0]], scale: 1.0, ..ones };
        let x2 = FeatureMatrix::new(schema, 1, vec![2.0]).unwrap();
        assert_eq!(pm_predict(&cube, &x2).unwrap(), vec![8.0]);
    }

    #[test]
    fn stored_train_predictions_match() {
        let u1: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin() + 2.0).collect();
        let u2: Vec<f64> = (0..40).map(|i| (i as f64 * 0.11).cos() + 3.0).collect();
        let y: Vec<f64> = u1.iter().zip(&u2).map(|(a, b)| a * a + b).collect();
        let x = matrix(&[Feature::Stw, Feature::Draught], &[u1, u2]);
        let (m, trace) = pm_fit_traced(&x, &y, &[Feature::Stw, Feature::Draught]).unwrap();
        assert_eq!(pm_predict(&m, &x).unwrap(), trace.train_predictions);
    }

    #[test]
    fn selection_picks_driver_first_and_stops() {
        let n = 300;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cols: Vec<Vec<f64>> = (0..3).map(|_| (0..n).map(|_| rng.random_range(0.0..2.0)).collect()).collect();
        let y: Vec<f64> = (0..n).map(|r| cols[1][r].powi(3) + 0.01 * rng.random_range(-1.0..1.0)).collect();
        let feats = [Feature::Stw, Feature::Draught, Feature::SeaDepth];
        let x = matrix(&feats, &cols);
        let sel = pm_select_features(&x, &y, &feats, 4).unwrap();
        assert_eq!(sel[0], Feature::Draught);
        assert_eq!(sel, pm_select_features(&x, &y, &feats, 4).unwrap());

        // exact fit after one feature leaves zero residuals
        let exact: Vec<f64> = cols[0].iter().map(|v| 2.0 * v + 1.0).collect();
        assert_eq!(pm_select_features(&x, &exact, &feats, 4).unwrap(), vec![Feature::Stw]);
    }

    #[test]
    fn constant_feature_is_rejected() {
        let x = matrix(&[Feature::Stw], &[vec![1.0; 5]]);
        assert!(pm_fit(&x, &[1.0, 2.0, 3.0, 4.0, 5.0], &[Feature::Stw]).is_err());
    }

    proptest! {
        #[test]
        fn scaling_one_factor_scales_predictions(c in -3.0..3.0f64, i in 0usize..2, vals in proptest::collection::vec(0.0..4.0f64, 6)) {
            let schema = FeatureSchema::new(vec![Feature::Stw, Feature::Draught]).unwrap();
            let x = FeatureMatrix::new(schema.clone(), 3, vals).unwrap();
            let m = PolynomialModel {
                schema,
                features: vec![Feature::Stw, Feature::Draught],
                ranges: vec![(0.0, 4.0), (0.0, 4.0)],
                coefficients: vec![[1.0, -0.5, 0.25, 0.1], [2.0, 0.3, -0.2, 0.05]],
                scale: 1.7,
            };
            let mut scaled = m.clone();
            for v in scaled.coefficients[i].iter_mut() { *v *= c; }
            let a = pm_predict(&m, &x).unwrap();
            let b = pm_predict(&scaled, &x).unwrap();
            for (p, q) in a.iter().zip(&b) {
                prop_assert!((c * p - q).abs() <= 1e-12 * (1.0 + p.abs()));
            }
        }
    }

    #[test]
    fn zero_weight_mlp_predicts_bias() {
        let schema = FeatureSchema::new(vec![Feature::Stw, Feature::Draught]).unwrap();
        let mut m = MlpModel::new(&schema, &MlpConfig::default(), 0).unwrap();
        let mut theta = vec![0.0; m.num_params()];
        *theta.last_mut().unwrap() = 2.5;
        m.set_params(&theta);
        let x = FeatureMatrix::new(schema, 2, vec![1.0, -3.0, 7.0, 0.2]).unwrap();
        assert_eq!(m.forward(&x).unwrap().0, vec![2.5, 2.5]);
    }

    #[test]
    fn mlp_forward_is_deterministic() {
        let schema = FeatureSchema::new(vec![Feature::Stw]).unwrap();
        let a = MlpModel::new(&schema, &MlpConfig::default(), 3).unwrap();
        let b = MlpModel::new(&schema, &MlpConfig::default(), 3).unwrap();
        assert_eq!(a, b);
        let x = FeatureMatrix::new(schema, 3, vec![0.1, 0.5, -2.0]).unwrap();
        assert_eq!(a.forward(&x).unwrap().0, b.forward(&x).unwrap().0);
        assert_eq!(a.num_params(), 37 + 37 + 37 * 28 + 28 + 28 + 1);
    }

    #[test]
    fn mlp_fits_affine() {
        let n = 1000;
        let schema = FeatureSchema::new(vec![Feature::Stw]).unwrap();
        let xs: Vec<f64> = (0..n).map(|i| ((i * 7919) % n) as f64 / n as f64).collect();
        let y: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let x = FeatureMatrix::new(schema.clone(), n, xs).unwrap();
        let m = MlpModel::new(&schema, &MlpConfig::default(), 1).unwrap();
        let (_, log) =
            fit(m, &x, &y, &PhysicsTargets::None, &LossWeights::default(), &MlpConfig::train_config(4)).unwrap();
        let best = log.epochs.iter().map(|e| e.val_mae).fold(f64::INFINITY, f64::min);
        assert!(best < 1e-2, "best validation MAE {best}");
    }
}
