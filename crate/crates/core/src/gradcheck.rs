//! Central finite-difference verification of the analytic gradients of every
//! training objective.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::baselines::{MlpConfig, MlpModel};
use crate::data::{Feature, FeatureMatrix, FeatureSchema};
use crate::error::Result;
use crate::kan::{KanConfig, KanModel};
use crate::train::{objective, Differentiable, LambdaMode, LossWeights, PhysicsTargets};

/// Finite-difference step.
pub const STEP: f64 = 1e-5;
/// Pass threshold on [`relative_error`].
pub const TOLERANCE: f64 = 1e-4;
/// Magnitude floor of the relative-error denominator; with [`TOLERANCE`] this
/// is a 1e-6 absolute floor.
pub const FLOOR: f64 = 1e-2;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Architecture {
    Kan,
    KanLayerNorm,
    Mlp,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LossVariant {
    Data,
    Power { gamma: f64 },
    Fuel,
    Elastic,
    Composite,
}

impl LossVariant {
    pub const ALL: [LossVariant; 6] = [
        LossVariant::Data,
        LossVariant::Power { gamma: 0.0 },
        LossVariant::Power { gamma: 0.5 },
        LossVariant::Fuel,
        LossVariant::Elastic,
        LossVariant::Composite,
    ];

    pub fn name(self) -> String {
        match self {
            LossVariant::Data => "data".into(),
            LossVariant::Power { gamma } => format!("power(gamma={gamma})"),
            LossVariant::Fuel => "fuel".into(),
            LossVariant::Elastic => "elastic".into(),
            LossVariant::Composite => "composite".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub architecture: Architecture,
    pub variant: LossVariant,
    pub seed: u64,
    pub max_rel_error: f64,
    /// Flat index of the worst parameter.
    pub worst_param: usize,
    pub params: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

/// Compares analytic and central-difference gradients of the training
/// objective at the model's current parameters.
pub fn check_gradient<M: Differentiable>(
    model: &M,
    z: &FeatureMatrix,
    y: &[f64],
    physics: &PhysicsTargets,
    weights: &LossWeights,
) -> Result<(f64, usize)> {
    let (_, grad) = objective(model, z, y, physics, weights, true)?;
    let grad = grad.expect("gradient requested");
    let theta = model.params();
    let mut probe = model.clone();
    let mut worst = (0.0, 0);
    for i in 0..theta.len() {
        let mut t = theta.clone();
        t[i] = theta[i] + STEP;
        probe.set_params(&t);
        let plus = objective(&probe, z, y, physics, weights, false)?.0.total;
        t[i] = theta[i] - STEP;
        probe.set_params(&t);
        let minus = objective(&probe, z, y, physics, weights, false)?.0.total;
        let numeric = (plus - minus) / (2.0 * STEP);
        let e = relative_error(grad[i], numeric);
        if e > worst.0 {
            worst = (e, i);
        }
    }
    Ok(worst)
}

struct Problem {
    z: FeatureMatrix,
    y: Vec<f64>,
    physics: PhysicsTargets,
    weights: LossWeights,
}

fn problem(variant: LossVariant, rows: usize, d: usize, rng: &mut ChaCha8Rng) -> Problem {
    let schema = FeatureSchema::new(Feature::BASE[..d].to_vec()).expect("distinct base features");
    let z =
        FeatureMatrix::new(schema, rows, (0..rows * d).map(|_| rng.random_range(-2.0..2.0)).collect()).expect("shape");
    let y: Vec<f64> = (0..rows).map(|_| rng.random_range(-3.0..3.0)).collect();
    let mut random = |n: usize| (0..n).map(|_| rng.random_range(-3.0..3.0)).collect::<Vec<f64>>();
    let base = LossWeights { lambda: 0.7, lambda_mode: LambdaMode::Fixed, alpha: 0.0, ..LossWeights::default() };
    let (physics, weights) = match variant {
        LossVariant::Data => (PhysicsTargets::None, base),
        LossVariant::Power { gamma } => {
            (PhysicsTargets::Power { physical: random(rows), cube: Some(random(rows)) }, LossWeights { gamma, ..base })
        }
        LossVariant::Fuel => (PhysicsTargets::Fuel { physical: random(rows) }, base),
        LossVariant::Elastic => (PhysicsTargets::None, LossWeights { alpha: 0.05, rho: 0.5, ..base }),
        LossVariant::Composite => (
            PhysicsTargets::Power { physical: random(rows), cube: Some(random(rows)) },
            LossWeights { gamma: 0.5, alpha: 0.05, rho: 0.3, ..base },
        ),
    };
    Problem { z, y, physics, weights }
}

/// One architecture, one loss variant, one seed: random 3-feature model and
/// 8-row batch (widths 4 for the additive network, (3, 2) for the MLP).
pub fn check(architecture: Architecture, variant: LossVariant, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let p = problem(variant, 8, 3, &mut rng);
    let schema = p.z.schema().clone();
    // biases start at zero; randomize all parameters so every path is exercised
    let perturb = |theta: &mut Vec<f64>, rng: &mut ChaCha8Rng| {
        for t in theta.iter_mut() {
            *t += rng.random_range(-0.5..0.5);
        }
    };
    let (max_rel_error, worst_param, params) = match architecture {
        Architecture::Kan | Architecture::KanLayerNorm => {
            let cfg = KanConfig { hidden_width: 4, layer_norm: architecture == Architecture::KanLayerNorm };
            let mut m = KanModel::new(&schema, cfg, seed)?;
            m.output.scale = 1.3;
            m.output.shift = 0.2;
            let mut theta = m.params();
            perturb(&mut theta, &mut rng);
            m.set_params(&theta);
            let (e, i) = check_gradient(&m, &p.z, &p.y, &p.physics, &p.weights)?;
            (e, i, m.num_params())
        }
        Architecture::Mlp => {
            let mut m = MlpModel::new(&schema, &MlpConfig { hidden: vec![3, 2] }, seed)?;
            m.output.scale = 1.3;
            m.output.shift = 0.2;
            let mut theta = m.params();
            perturb(&mut theta, &mut rng);
            m.set_params(&theta);
            let (e, i) = check_gradient(&m, &p.z, &p.y, &p.physics, &p.weights)?;
            (e, i, m.num_params())
        }
    };
    Ok(CheckResult { architecture, variant, seed, max_rel_error, worst_param, params })
}

/// Every architecture × loss variant for each seed in `seeds`.
pub fn run_suite(seeds: impl IntoIterator<Item = u64>) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for seed in seeds {
        for arch in [Architecture::Kan, Architecture::KanLayerNorm, Architecture::Mlp] {
            for v in LossVariant::ALL {
                out.push(check(arch, v, seed)?);
            }
        }
    }
    Ok(out)
}
