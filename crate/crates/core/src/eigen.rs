//! Smallest-eigenvalue solver: Adam on the exact Rayleigh quotient.

use std::f64::consts::PI;
use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{PltmError, Result};
use crate::legendre::{assemble_forms, dot, eval_basis_into, BasisSpec, FormMatrices, Interval};
use crate::model::{init_model, InitConfig, LtmModel};
use crate::optim::{AdamConfig, AdamState};
use crate::quadrature::integrate;
use crate::rayleigh::{rayleigh_with, ProblemKind, ProblemSpec, RayleighOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenTrainConfig {
    pub problem: ProblemSpec,
    pub rank: usize,
    pub bases: usize,
    pub init: InitConfig,
    pub adam: AdamConfig,
    pub iterations: usize,
    pub rayleigh: RayleighOptions,
}

impl EigenTrainConfig {
    /// `r = b = 10`, 500 Adam steps at `lr = 1e-3` on `[0, 1]^d`.
    pub fn laplacian(dim: usize) -> Self {
        Self {
            problem: ProblemSpec {
                kind: ProblemKind::Laplacian,
                interval: Interval { s: 0.0, t: 1.0 },
                dim,
            },
            rank: 10,
            bases: 10,
            init: InitConfig::default(),
            adam: AdamConfig::default(),
            iterations: 500,
            rayleigh: RayleighOptions::default(),
        }
    }

    /// `r = 10`, `b = 22`, 1000 Adam steps at `lr = 1e-3` on `[-5, 5]^d`;
    /// `c = 0.3` from `d = 512` on, 1 below.
    pub fn oscillator(dim: usize) -> Self {
        Self {
            problem: ProblemSpec {
                kind: ProblemKind::HarmonicOscillator,
                interval: Interval { s: -5.0, t: 5.0 },
                dim,
            },
            rank: 10,
            bases: 22,
            init: InitConfig {
                c: if dim >= 512 { 0.3 } else { 1.0 },
                ..InitConfig::default()
            },
            adam: AdamConfig::default(),
            iterations: 1000,
            rayleigh: RayleighOptions::default(),
        }
    }

    /// The named published protocols: `paper-lap-d10`, `paper-lap-d512`,
    /// `paper-osc-d10`, `paper-osc-d512`.
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "paper-lap-d10" => Some(Self::laplacian(10)),
            "paper-lap-d512" => Some(Self::laplacian(512)),
            "paper-osc-d10" => Some(Self::oscillator(10)),
            "paper-osc-d512" => Some(Self::oscillator(512)),
            _ => None,
        }
    }

    fn validate(&self) -> Result<()> {
        let checks: [(&'static str, bool, &str); 5] = [
            ("rank", self.rank >= 1, "must be at least 1"),
            ("bases", self.bases >= 1, "must be at least 1"),
            ("dim", self.problem.dim >= 1, "must be at least 1"),
            ("iters", self.iterations >= 1, "must be at least 1"),
            ("lr", self.adam.lr > 0.0, "must be positive"),
        ];
        for (name, ok, reason) in checks {
            if !ok {
                return Err(PltmError::InvalidParameter {
                    name,
                    reason: reason.into(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EigenReport {
    pub learned_eigenvalue: f64,
    pub true_eigenvalue: Option<f64>,
    pub relative_error: Option<f64>,
    /// Loss after each of the `K` updates; the last entry is the learned eigenvalue.
    pub loss_trace: Vec<f64>,
    /// Loss of the initial model, before any update.
    pub initial_loss: f64,
    pub wall_time: f64,
    #[serde(skip)]
    pub final_model: LtmModel,
}

impl EigenReport {
    /// `key = value` lines.
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "learned_eigenvalue = {:.17e}", self.learned_eigenvalue)?;
        match self.true_eigenvalue {
            Some(v) => writeln!(w, "true_eigenvalue = {v:.17e}")?,
            None => writeln!(w, "true_eigenvalue = unknown")?,
        }
        match self.relative_error {
            Some(v) => writeln!(w, "relative_error = {v:.3e}")?,
            None => writeln!(w, "relative_error = unknown")?,
        }
        writeln!(w, "initial_loss = {:.17e}", self.initial_loss)?;
        writeln!(w, "iterations = {}", self.loss_trace.len())?;
        writeln!(w, "wall_time_s = {:.3}", self.wall_time)
    }

    /// `iteration,loss` rows, iteration counted from 1.
    pub fn write_trace_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "iteration,loss")?;
        for (k, loss) in self.loss_trace.iter().enumerate() {
            writeln!(w, "{},{:.17e}", k + 1, loss)?;
        }
        Ok(())
    }
}

/// Trains a boundary-adapted model for `config.iterations` Adam steps and
/// reports the final Rayleigh quotient as the eigenvalue estimate.
pub fn solve(config: &EigenTrainConfig) -> Result<EigenReport> {
    config.validate()?;
    let start = Instant::now();
    let problem = config.problem;
    let basis = BasisSpec::boundary_adapted(problem.interval, config.bases)?;
    let forms = assemble_forms(&basis);
    let mut model = init_model(config.rank, problem.dim, basis, None, &config.init)?;
    let mut adam = AdamState::new(model.coeffs().len(), config.adam);

    let mut eval = rayleigh_with(&model, &forms, &problem, &config.rayleigh)?;
    let initial_loss = eval.loss;
    let mut trace = Vec::with_capacity(config.iterations);
    for iteration in 1..=config.iterations {
        adam.step(model.coeffs_mut(), &eval.grad)?;
        eval = rayleigh_with(&model, &forms, &problem, &config.rayleigh)?;
        if !eval.loss.is_finite() || eval.grad.iter().any(|g| !g.is_finite()) {
            return Err(PltmError::NonFiniteLoss {
                iteration,
                value: eval.loss,
            });
        }
        trace.push(eval.loss);
    }

    let learned = eval.loss;
    let truth = problem.true_eigenvalue();
    Ok(EigenReport {
        learned_eigenvalue: learned,
        true_eigenvalue: truth,
        relative_error: truth.map(|t| (learned - t).abs() / t.abs()),
        loss_trace: trace,
        initial_loss,
        wall_time: start.elapsed().as_secs_f64(),
        final_model: model,
    })
}

/// The 1D factor of the known ground state.
fn ground_state_factor(problem: &ProblemSpec) -> Result<Box<dyn Fn(f64) -> f64>> {
    let Interval { s, t } = problem.interval;
    match problem.kind {
        ProblemKind::Laplacian => Ok(Box::new(move |y: f64| (PI * (y - s) / (t - s)).sin())),
        ProblemKind::HarmonicOscillator if problem.true_eigenvalue().is_some() => {
            Ok(Box::new(|y: f64| (-0.5 * y * y).exp()))
        }
        ProblemKind::HarmonicOscillator => Err(PltmError::Unsupported(
            "no known separable eigenfunction for the oscillator on this interval".into(),
        )),
    }
}

const QUAD_ABS_TOL: f64 = 1e-13;

/// Relative `L²(Ω)` distance between the normalized model and the normalized
/// exact ground state (sign-aligned). Diagnostic only: the 1D overlaps with
/// the exact factor use adaptive quadrature.
pub fn eigenfunction_l2_error(model: &LtmModel, problem: &ProblemSpec) -> Result<f64> {
    if model.out_weights().is_some() {
        return Err(PltmError::Unsupported("single-output models only".into()));
    }
    if model.dim() != problem.dim || model.basis().interval != problem.interval {
        return Err(PltmError::InvalidParameter {
            name: "problem",
            reason: "model and problem disagree on dimension or interval".into(),
        });
    }
    let f = ground_state_factor(problem)?;
    let basis = *model.basis();
    let forms = assemble_forms(&basis);
    let b = basis.count;
    let Interval { s, t } = basis.interval;

    let norm_f = integrate(|y| f(y) * f(y), s, t, QUAD_ABS_TOL, 1e-15).sqrt();
    let basis_at = |y: f64| {
        let mut out = vec![0.0; b];
        eval_basis_into(&basis, y, &mut Vec::new(), &mut out);
        out
    };
    // q_k = ∫ P_k f̂ with f̂ = f / ‖f‖
    let q: Vec<f64> = (0..b)
        .map(|k| integrate(|y| basis_at(y)[k] * f(y) / norm_f, s, t, QUAD_ABS_TOL, 1e-15))
        .collect();

    match rank_one_view(model) {
        Some(factors) => rank_one_error(&factors, &forms, &q, |y| f(y) / norm_f),
        None => {
            // cos = ⟨ũ, f̂^⊗d⟩ / ‖ũ‖; accurate to roughly √ε in the error
            let mut overlap = 0.0;
            for i in 0..model.rank() {
                overlap += (0..model.dim())
                    .map(|j| dot(model.factor(i, j), &q))
                    .product::<f64>();
            }
            let norm_u = crate::rayleigh::denominator(model, &forms)?.sqrt();
            let cos = (overlap / norm_u).abs().min(1.0);
            Ok((2.0 - 2.0 * cos).max(0.0).sqrt())
        }
    }
}

/// The per-dimension factors when every rank term carries the same
/// coefficients (the sum is then a multiple of one separable product).
fn rank_one_view(model: &LtmModel) -> Option<Vec<Vec<f64>>> {
    let first: Vec<f64> = model.coeffs()[..model.dim() * model.bases()].to_vec();
    let all_equal = model
        .coeffs()
        .chunks_exact(first.len())
        .all(|term| term == first.as_slice());
    all_equal.then(|| first.chunks_exact(model.bases()).map(<[f64]>::to_vec).collect())
}

/// Error for a separable model, computed dimension by dimension so that no
/// `1 - cos` cancellation occurs.
fn rank_one_error(
    factors: &[Vec<f64>],
    forms: &FormMatrices,
    q: &[f64],
    f_hat: impl Fn(f64) -> f64,
) -> Result<f64> {
    let b = q.len();
    let mass = DMatrix::from_row_slice(b, b, &forms.mass.data);
    let chol = mass
        .clone()
        .cholesky()
        .ok_or_else(|| PltmError::Unsupported("mass matrix is not positive definite".into()))?;
    // projection p = Σ c_k P_k of f̂ onto the 1D basis, and residual e = f̂ - p
    let c = chol.solve(&DVector::from_column_slice(q));
    let p_norm_sq: f64 = dot(c.as_slice(), q);
    let basis = forms.spec;
    let Interval { s, t } = basis.interval;
    let e_norm_sq = integrate(
        |y| {
            let mut vals = vec![0.0; b];
            eval_basis_into(&basis, y, &mut Vec::new(), &mut vals);
            let r = f_hat(y) - dot(&vals, c.as_slice());
            r * r
        },
        s,
        t,
        1e-30,
        1e-10,
    );
    let m_norm = |v: &DVector<f64>| (v.transpose() * &mass * v)[(0, 0)];
    let p_unit = &c / p_norm_sq.sqrt();

    let mut log_cos = 0.0;
    for a in factors {
        let a = DVector::from_column_slice(a);
        let g = &a / m_norm(&a).sqrt();
        let cos_phi = (g.transpose() * &mass * &p_unit)[(0, 0)];
        let delta = &g - cos_phi * &p_unit;
        let sin_phi_sq = m_norm(&delta).clamp(0.0, 1.0);
        let sin_sq = (e_norm_sq + p_norm_sq * sin_phi_sq).clamp(0.0, 1.0);
        log_cos += 0.5 * (-sin_sq).ln_1p();
    }
    // 1 - |cos| without cancellation
    let one_minus_cos = -log_cos.exp_m1();
    Ok((2.0 * one_minus_cos).sqrt())
}
