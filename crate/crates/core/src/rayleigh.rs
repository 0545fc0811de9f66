//! Exact Rayleigh quotients of single-output models.
//!
//! For a rank pair `(i1, i2)` and dimension `j` let
//! `sM = a[i1][j]ᵀ M a[i2][j]` and `sH = a[i1][j]ᵀ H a[i2][j]`, where `M` is
//! the 1D mass matrix and `H` is the stiffness matrix, plus the `y²`-weighted
//! matrix for the harmonic oscillator. Then
//!
//! ```text
//! ∫ ũ²             = Σ_{i1,i2} Π_j sM_j
//! ∫ |∇ũ|² + ∫ vũ²  = Σ_{i1,i2} Σ_{j0} sH_{j0} Π_{j≠j0} sM_j
//! ```
//!
//! Both sums and their gradients are built from prefix/suffix products over
//! `j`, so nothing is ever divided by a factor. One evaluation costs
//! `O(r² d b + r d b²)`; there is no exponential dependence on `d`.

use serde::{Deserialize, Serialize};

use crate::error::{PltmError, Result};
use crate::legendre::{dot, FormMatrices, Interval};
use crate::model::LtmModel;
use crate::numeric::NeumaierSum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    /// `-Δu = λu`
    Laplacian,
    /// `-Δu + (Σ x_i²) u = λu`
    HarmonicOscillator,
}

/// An eigenvalue problem on `[s, t]^d` with zero Dirichlet boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub interval: Interval,
    pub dim: usize,
}

impl ProblemSpec {
    /// Smallest eigenvalue where a closed form is known: `dπ²` for the
    /// Laplacian on `[0, 1]^d` (`dπ²/(t-s)²` on a general box) and `d` for
    /// the oscillator on `[-5, 5]^d`, where the truncation error of the
    /// Gaussian is far below double precision.
    pub fn true_eigenvalue(&self) -> Option<f64> {
        let d = self.dim as f64;
        match self.kind {
            ProblemKind::Laplacian => {
                let len = self.interval.length();
                Some(d * std::f64::consts::PI.powi(2) / (len * len))
            }
            ProblemKind::HarmonicOscillator => {
                let Interval { s, t } = self.interval;
                (s == -5.0 && t == 5.0).then_some(d)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RayleighEvaluation {
    /// `∫|∇ũ|² + ∫ v ũ²`
    pub numerator: f64,
    /// `∫ ũ²`
    pub denominator: f64,
    pub loss: f64,
    /// `∂ loss / ∂a[i][j][k]`, laid out like the model coefficients.
    pub grad: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RayleighOptions {
    /// A denominator at or below `collapse_threshold · max(1, max|a|^{2d})`
    /// is reported as [`PltmError::DegenerateDenominator`].
    pub collapse_threshold: f64,
}

impl Default for RayleighOptions {
    fn default() -> Self {
        Self {
            collapse_threshold: 1e-280,
        }
    }
}

fn check_inputs(model: &LtmModel, forms: &FormMatrices) -> Result<()> {
    if model.out_weights().is_some() {
        return Err(PltmError::Unsupported(
            "Rayleigh quotients are defined for single-output models only".into(),
        ));
    }
    if forms.spec != *model.basis() {
        return Err(PltmError::InvalidParameter {
            name: "forms",
            reason: "form matrices were assembled for a different basis".into(),
        });
    }
    Ok(())
}

/// `op · a[i][j]` for every rank term and dimension.
fn apply_all(model: &LtmModel, apply: impl Fn(&[f64], &mut [f64])) -> Vec<f64> {
    let b = model.bases();
    let mut out = vec![0.0; model.coeffs().len()];
    for (a, o) in model.coeffs().chunks_exact(b).zip(out.chunks_exact_mut(b)) {
        apply(a, o);
    }
    out
}

struct Sums {
    numerator: f64,
    denominator: f64,
    grad_numerator: Vec<f64>,
    grad_denominator: Vec<f64>,
}

/// The pair sweep shared by all public entry points. `h_applied` is `None`
/// when only the denominator is wanted.
fn pair_sums(
    model: &LtmModel,
    m_applied: &[f64],
    h_applied: Option<&[f64]>,
    with_grad: bool,
) -> Sums {
    let r = model.rank();
    let d = model.dim();
    let b = model.bases();
    let coeffs = model.coeffs();
    let block = |i: usize, j: usize| {
        let o = (i * d + j) * b;
        o..o + b
    };

    let mut den = NeumaierSum::default();
    let mut num = NeumaierSum::default();
    let grad_len = if with_grad { coeffs.len() } else { 0 };
    let mut g_den = vec![0.0; grad_len];
    let mut g_num = vec![0.0; if h_applied.is_some() { grad_len } else { 0 }];

    let mut s_m = vec![0.0; d];
    let mut s_h = vec![0.0; d];
    let mut pre = vec![0.0; d + 1];
    let mut pre_h = vec![0.0; d + 1];
    let mut suf = vec![0.0; d + 1];
    let mut suf_h = vec![0.0; d + 1];

    for i1 in 0..r {
        for i2 in i1..r {
            for j in 0..d {
                let a1 = &coeffs[block(i1, j)];
                s_m[j] = dot(a1, &m_applied[block(i2, j)]);
                if let Some(h) = h_applied {
                    s_h[j] = dot(a1, &h[block(i2, j)]);
                }
            }
            pre[0] = 1.0;
            pre_h[0] = 0.0;
            for j in 0..d {
                pre_h[j + 1] = pre_h[j] * s_m[j] + pre[j] * s_h[j];
                pre[j + 1] = pre[j] * s_m[j];
            }
            let mult = if i1 == i2 { 1.0 } else { 2.0 };
            den.add(mult * pre[d]);
            if h_applied.is_some() {
                num.add(mult * pre_h[d]);
            }
            if !with_grad {
                continue;
            }

            suf[d] = 1.0;
            suf_h[d] = 0.0;
            for j in (0..d).rev() {
                suf_h[j] = s_h[j] * suf[j + 1] + s_m[j] * suf_h[j + 1];
                suf[j] = s_m[j] * suf[j + 1];
            }
            for j0 in 0..d {
                // leave-one-out products for this pair at dimension j0
                let loo = pre[j0] * suf[j0 + 1];
                let loo_h = pre_h[j0] * suf[j0 + 1] + pre[j0] * suf_h[j0 + 1];
                let targets: &[(usize, usize)] = if i1 == i2 {
                    &[(i1, i2)]
                } else {
                    &[(i1, i2), (i2, i1)]
                };
                for &(target, partner) in targets {
                    let out = block(target, j0);
                    let ma = &m_applied[block(partner, j0)];
                    for (g, &v) in g_den[out.clone()].iter_mut().zip(ma) {
                        *g += 2.0 * loo * v;
                    }
                    if let Some(h) = h_applied {
                        let ha = &h[block(partner, j0)];
                        for ((g, &hv), &mv) in g_num[out.clone()].iter_mut().zip(ha).zip(ma) {
                            *g += 2.0 * (loo * hv + loo_h * mv);
                        }
                    }
                }
            }
        }
    }
    Sums {
        numerator: num.value(),
        denominator: den.value(),
        grad_numerator: g_num,
        grad_denominator: g_den,
    }
}

fn operator_applied(model: &LtmModel, forms: &FormMatrices, kind: ProblemKind) -> Vec<f64> {
    match kind {
        ProblemKind::Laplacian => apply_all(model, |a, o| forms.stiffness.mul_vec_into(a, o)),
        ProblemKind::HarmonicOscillator => apply_all(model, |a, o| {
            for (row, out) in o.iter_mut().enumerate() {
                *out = dot(forms.stiffness.row(row), a) + dot(forms.weighted.row(row), a);
            }
        }),
    }
}

fn check_problem(model: &LtmModel, forms: &FormMatrices, problem: &ProblemSpec) -> Result<()> {
    check_inputs(model, forms)?;
    if problem.dim != model.dim() {
        return Err(PltmError::ShapeMismatch {
            expected: problem.dim,
            actual: model.dim(),
        });
    }
    if problem.interval != forms.spec.interval {
        return Err(PltmError::InvalidParameter {
            name: "interval",
            reason: "problem and basis intervals differ".into(),
        });
    }
    Ok(())
}

/// `∫ ũ² dx`, exact up to rounding.
pub fn denominator(model: &LtmModel, forms: &FormMatrices) -> Result<f64> {
    check_inputs(model, forms)?;
    let ma = apply_all(model, |a, o| forms.mass.mul_vec_into(a, o));
    Ok(pair_sums(model, &ma, None, false).denominator)
}

/// `∫ |∇ũ|² dx + ∫ v ũ² dx`, exact up to rounding.
pub fn numerator(model: &LtmModel, forms: &FormMatrices, problem: &ProblemSpec) -> Result<f64> {
    check_problem(model, forms, problem)?;
    let ma = apply_all(model, |a, o| forms.mass.mul_vec_into(a, o));
    let ha = operator_applied(model, forms, problem.kind);
    Ok(pair_sums(model, &ma, Some(&ha), false).numerator)
}

pub fn rayleigh(
    model: &LtmModel,
    forms: &FormMatrices,
    problem: &ProblemSpec,
) -> Result<RayleighEvaluation> {
    rayleigh_with(model, forms, problem, &RayleighOptions::default())
}

/// Loss and analytic gradient `∇L = (∇N - L ∇D) / D`.
pub fn rayleigh_with(
    model: &LtmModel,
    forms: &FormMatrices,
    problem: &ProblemSpec,
    opts: &RayleighOptions,
) -> Result<RayleighEvaluation> {
    check_problem(model, forms, problem)?;
    let ma = apply_all(model, |a, o| forms.mass.mul_vec_into(a, o));
    let ha = operator_applied(model, forms, problem.kind);
    let sums = pair_sums(model, &ma, Some(&ha), true);

    let max_a = model.coeffs().iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    // compare in log space: max|a|^{2d} overflows long before the check matters
    let log_threshold =
        opts.collapse_threshold.ln() + (2.0 * model.dim() as f64 * max_a.ln()).max(0.0);
    let den = sums.denominator;
    if !(den > 0.0) || den.ln() <= log_threshold {
        return Err(PltmError::DegenerateDenominator {
            value: den,
            threshold: log_threshold.exp(),
        });
    }
    let loss = sums.numerator / den;
    let grad = sums
        .grad_numerator
        .iter()
        .zip(&sums.grad_denominator)
        .map(|(gn, gd)| (gn - loss * gd) / den)
        .collect();
    Ok(RayleighEvaluation {
        numerator: sums.numerator,
        denominator: den,
        loss,
        grad,
    })
}
