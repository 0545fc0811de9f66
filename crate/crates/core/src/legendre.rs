//! Legendre polynomial bases on an interval and their exact 1D Gram matrices.
//!
//! Every basis function is stored as a short vector of Legendre coefficients on
//! the reference interval `[-1, 1]`. The mass, stiffness and `y²`-weighted
//! matrices are then assembled in closed form from
//!
//! ```text
//! ∫_{-1}^{1} L_m L_n = 2/(2n+1) δ_{mn}
//! ŷ L_n = ((n+1) L_{n+1} + n L_{n-1}) / (2n+1)
//! L'_{n+1} - L'_{n-1} = (2n+1) L_n
//! ```
//!
//! and the affine map `ŷ = 2(y - s)/(t - s) - 1`.
//!
//! Index convention: the basis functions are numbered `k = 1..=b` in the math;
//! storage slot `k - 1` holds function `k` everywhere in this crate.

use serde::{Deserialize, Serialize};

use crate::error::{PltmError, Result};
use crate::numeric::NeumaierSum;

/// A closed interval `[s, t]` with `s < t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub s: f64,
    pub t: f64,
}

impl Interval {
    pub fn new(s: f64, t: f64) -> Result<Self> {
        if !(s.is_finite() && t.is_finite()) || s >= t {
            return Err(PltmError::InvalidInterval { s, t });
        }
        Ok(Self { s, t })
    }

    /// `[-1, 1]`.
    pub fn reference() -> Self {
        Self { s: -1.0, t: 1.0 }
    }

    pub fn length(&self) -> f64 {
        self.t - self.s
    }

    /// Maps `y ∈ [s, t]` to `ŷ ∈ [-1, 1]`.
    #[inline]
    pub fn to_reference(&self, y: f64) -> f64 {
        2.0 * (y - self.s) / (self.t - self.s) - 1.0
    }
}

/// Which combination of Legendre polynomials forms the basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisFamily {
    /// `P_k = L_{k+1} - L_{k-1}`, `k = 1..=b`; vanishes at both endpoints.
    BoundaryAdapted,
    /// `P_k = L_k`, `k = 1..=b`.
    PlainLegendre,
    /// `P_k = L_{k-1}`, `k = 1..=b`; includes the constant polynomial.
    LegendreFromZero,
}

impl BasisFamily {
    pub(crate) fn tag(self) -> u8 {
        match self {
            BasisFamily::BoundaryAdapted => 0,
            BasisFamily::PlainLegendre => 1,
            BasisFamily::LegendreFromZero => 2,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(BasisFamily::BoundaryAdapted),
            1 => Some(BasisFamily::PlainLegendre),
            2 => Some(BasisFamily::LegendreFromZero),
            _ => None,
        }
    }

    /// Highest Legendre degree used by a basis of `count` functions.
    fn max_degree(self, count: usize) -> usize {
        match self {
            BasisFamily::BoundaryAdapted => count + 1,
            BasisFamily::PlainLegendre => count,
            BasisFamily::LegendreFromZero => count - 1,
        }
    }
}

/// A basis of `count` polynomials of one family on an interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub interval: Interval,
    pub family: BasisFamily,
    pub count: usize,
}

impl BasisSpec {
    pub fn new(interval: Interval, family: BasisFamily, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(PltmError::InvalidParameter {
                name: "bases",
                reason: "basis count must be at least 1".into(),
            });
        }
        // re-validate in case the interval was built by hand
        let interval = Interval::new(interval.s, interval.t)?;
        Ok(Self {
            interval,
            family,
            count,
        })
    }

    pub fn boundary_adapted(interval: Interval, count: usize) -> Result<Self> {
        Self::new(interval, BasisFamily::BoundaryAdapted, count)
    }

    /// Dense Legendre coefficient vector of basis function `slot` (0-based),
    /// padded to the highest degree used by the whole basis.
    fn coefficient_vector(&self, slot: usize) -> Vec<f64> {
        let k = slot + 1;
        let mut out = vec![0.0; self.family.max_degree(self.count) + 1];
        match self.family {
            BasisFamily::BoundaryAdapted => {
                out[k + 1] = 1.0;
                out[k - 1] = -1.0;
            }
            BasisFamily::PlainLegendre => out[k] = 1.0,
            BasisFamily::LegendreFromZero => out[k - 1] = 1.0,
        }
        out
    }
}

/// Legendre values `L_0(x)..=L_n(x)` by the three-term recurrence.
pub fn legendre_values(n: usize, x: f64, out: &mut Vec<f64>) {
    out.clear();
    out.push(1.0);
    if n == 0 {
        return;
    }
    out.push(x);
    for k in 1..n {
        let next = ((2 * k + 1) as f64 * x * out[k] - k as f64 * out[k - 1]) / (k + 1) as f64;
        out.push(next);
    }
}

/// Legendre derivatives `L'_0(x)..=L'_n(x)`, given the values from
/// [`legendre_values`], via `L'_{n+1} = L'_{n-1} + (2n+1) L_n`.
fn legendre_derivatives(values: &[f64], out: &mut Vec<f64>) {
    let n = values.len() - 1;
    out.clear();
    out.push(0.0);
    if n == 0 {
        return;
    }
    out.push(1.0);
    for k in 1..n {
        let next = out[k - 1] + (2 * k + 1) as f64 * values[k];
        out.push(next);
    }
}

/// `(P_1(y), …, P_b(y))`.
pub fn eval_basis(spec: &BasisSpec, y: f64) -> Vec<f64> {
    let mut out = vec![0.0; spec.count];
    let mut scratch = Vec::new();
    eval_basis_into(spec, y, &mut scratch, &mut out);
    out
}

/// Allocation-free variant of [`eval_basis`]; `out.len()` must equal `spec.count`.
pub fn eval_basis_into(spec: &BasisSpec, y: f64, scratch: &mut Vec<f64>, out: &mut [f64]) {
    debug_assert_eq!(out.len(), spec.count);
    let yh = spec.interval.to_reference(y);
    legendre_values(spec.family.max_degree(spec.count), yh, scratch);
    match spec.family {
        BasisFamily::BoundaryAdapted => {
            for (slot, o) in out.iter_mut().enumerate() {
                let k = slot + 1;
                *o = scratch[k + 1] - scratch[k - 1];
            }
        }
        BasisFamily::PlainLegendre => out.copy_from_slice(&scratch[1..=spec.count]),
        BasisFamily::LegendreFromZero => out.copy_from_slice(&scratch[..spec.count]),
    }
}

/// `(P'_1(y), …, P'_b(y))` with respect to `y`, including the factor `2/(t-s)`.
pub fn eval_basis_deriv(spec: &BasisSpec, y: f64) -> Vec<f64> {
    let yh = spec.interval.to_reference(y);
    let scale = 2.0 / spec.interval.length();
    let mut values = Vec::new();
    legendre_values(spec.family.max_degree(spec.count), yh, &mut values);
    match spec.family {
        BasisFamily::BoundaryAdapted => (1..=spec.count)
            .map(|k| scale * (2 * k + 1) as f64 * values[k])
            .collect(),
        BasisFamily::PlainLegendre | BasisFamily::LegendreFromZero => {
            let mut derivs = Vec::new();
            legendre_derivatives(&values, &mut derivs);
            let first = if spec.family == BasisFamily::PlainLegendre {
                1
            } else {
                0
            };
            derivs[first..first + spec.count]
                .iter()
                .map(|d| scale * d)
                .collect()
        }
    }
}

/// Dense symmetric `b × b` matrix stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl SymMatrix {
    fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n + col]
    }

    fn set_sym(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.n + col] = value;
        self.data[col * self.n + row] = value;
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.n..(row + 1) * self.n]
    }

    /// `out = self · v`.
    #[inline]
    pub fn mul_vec_into(&self, v: &[f64], out: &mut [f64]) {
        for (row, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(row), v);
        }
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// The three 1D Gram matrices of a basis on its interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormMatrices {
    pub spec: BasisSpec,
    /// `∫ P_k P_l dy`
    pub mass: SymMatrix,
    /// `∫ P'_k P'_l dy`
    pub stiffness: SymMatrix,
    /// `∫ y² P_k P_l dy`
    pub weighted: SymMatrix,
}

/// Applies multiplication by `ŷ` to a Legendre coefficient vector.
fn times_reference_y(coeffs: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; coeffs.len() + 1];
    for (n, &c) in coeffs.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        let denom = (2 * n + 1) as f64;
        out[n + 1] += c * (n + 1) as f64 / denom;
        if n > 0 {
            out[n - 1] += c * n as f64 / denom;
        }
    }
    out
}

/// Legendre coefficients of the derivative (in `ŷ`) of `Σ c_n L_n`.
fn derivative_coefficients(coeffs: &[f64]) -> Vec<f64> {
    let len = coeffs.len();
    let mut out = vec![0.0; len.max(1)];
    // coefficient of L_m is (2m+1) Σ_{n>m, n-m odd} c_n
    for m in 0..len {
        let mut acc = 0.0;
        let mut n = m + 1;
        while n < len {
            acc += coeffs[n];
            n += 2;
        }
        out[m] = (2 * m + 1) as f64 * acc;
    }
    out
}

/// `∫_{-1}^{1} (Σ a_n L_n)(Σ c_n L_n)` using `∫ L_n² = 2/(2n+1)`, compensated.
fn legendre_inner(a: &[f64], c: &[f64]) -> f64 {
    let mut sum = NeumaierSum::default();
    for (n, (x, y)) in a.iter().zip(c).enumerate() {
        let p = x * y;
        if p != 0.0 {
            sum.add(2.0 * p / (2 * n + 1) as f64);
        }
    }
    sum.value()
}

/// Mass, stiffness and weighted matrices in closed form.
pub fn assemble_forms(spec: &BasisSpec) -> FormMatrices {
    let b = spec.count;
    let half = spec.interval.length() / 2.0;
    let mid = (spec.interval.s + spec.interval.t) / 2.0;

    let coeffs: Vec<Vec<f64>> = (0..b).map(|slot| spec.coefficient_vector(slot)).collect();
    let derivs: Vec<Vec<f64>> = coeffs.iter().map(|c| derivative_coefficients(c)).collect();
    // y P_k = (half·ŷ + mid) P_k in reference coordinates
    let y_times: Vec<Vec<f64>> = coeffs
        .iter()
        .map(|c| {
            let mut v = times_reference_y(c);
            for x in v.iter_mut() {
                *x *= half;
            }
            for (x, &ci) in v.iter_mut().zip(c) {
                *x += mid * ci;
            }
            v
        })
        .collect();

    let mut mass = SymMatrix::zeros(b);
    let mut stiffness = SymMatrix::zeros(b);
    let mut weighted = SymMatrix::zeros(b);
    for k in 0..b {
        for l in k..b {
            mass.set_sym(k, l, half * legendre_inner(&coeffs[k], &coeffs[l]));
            stiffness.set_sym(k, l, legendre_inner(&derivs[k], &derivs[l]) / half);
            weighted.set_sym(k, l, half * legendre_inner(&y_times[k], &y_times[l]));
        }
    }
    FormMatrices {
        spec: *spec,
        mass,
        stiffness,
        weighted,
    }
}
