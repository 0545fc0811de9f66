//! The low-rank tensor model
//!
//! ```text
//! u_l(x) = Σ_i w[l][i] · Π_j ( Σ_k a[i][j][k] P_k(x_j) )
//! ```
//!
//! with coefficients stored contiguously as `[i][j][k]`, `k` fastest. A model
//! without output weights is single-output with implicit weights all 1.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PltmError, Result};
use crate::legendre::{dot, eval_basis_into, BasisFamily, BasisSpec, Interval};

/// Initialization settings: `a[i][j][1] = c`, the rest zero; output weights
/// drawn uniformly from `w_range` by a ChaCha8 stream seeded with `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitConfig {
    pub c: f64,
    pub w_range: (f64, f64),
    pub seed: u64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            w_range: (-0.5, 0.5),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LtmModel {
    rank: usize,
    dim: usize,
    basis: BasisSpec,
    coeffs: Vec<f64>,
    /// `m × r`, row-major by output.
    out_weights: Option<Vec<f64>>,
}

impl LtmModel {
    /// Builds a model from raw parts, checking shapes and finiteness.
    pub fn from_parts(
        rank: usize,
        dim: usize,
        basis: BasisSpec,
        coeffs: Vec<f64>,
        out_weights: Option<Vec<f64>>,
    ) -> Result<Self> {
        if rank == 0 || dim == 0 {
            return Err(PltmError::InvalidParameter {
                name: "rank/dim",
                reason: "rank and dimension must be at least 1".into(),
            });
        }
        let expected = rank * dim * basis.count;
        if coeffs.len() != expected {
            return Err(PltmError::ShapeMismatch {
                expected,
                actual: coeffs.len(),
            });
        }
        if let Some(w) = &out_weights {
            if w.is_empty() || w.len() % rank != 0 {
                return Err(PltmError::ShapeMismatch {
                    expected: rank * (w.len() / rank).max(1),
                    actual: w.len(),
                });
            }
        }
        let all_finite = coeffs
            .iter()
            .chain(out_weights.iter().flatten())
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(PltmError::InvalidParameter {
                name: "coeffs",
                reason: "model entries must be finite".into(),
            });
        }
        Ok(Self {
            rank,
            dim,
            basis,
            coeffs,
            out_weights,
        })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn basis(&self) -> &BasisSpec {
        &self.basis
    }

    pub fn bases(&self) -> usize {
        self.basis.count
    }

    /// Number of outputs `m` (1 when no output weights are present).
    pub fn outputs(&self) -> usize {
        self.out_weights
            .as_ref()
            .map_or(1, |w| w.len() / self.rank)
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn out_weights(&self) -> Option<&[f64]> {
        self.out_weights.as_deref()
    }

    pub fn out_weights_mut(&mut self) -> Option<&mut [f64]> {
        self.out_weights.as_deref_mut()
    }

    /// Coefficient `a[i][j][k]` with 0-based indices (`k = 0` is basis function 1).
    #[inline]
    pub fn coeff(&self, i: usize, j: usize, k: usize) -> f64 {
        self.coeffs[self.offset(i, j) + k]
    }

    #[inline]
    fn offset(&self, i: usize, j: usize) -> usize {
        (i * self.dim + j) * self.basis.count
    }

    /// The `b` coefficients of the 1D factor for rank term `i`, dimension `j`.
    #[inline]
    pub fn factor(&self, i: usize, j: usize) -> &[f64] {
        let o = self.offset(i, j);
        &self.coeffs[o..o + self.basis.count]
    }

    #[inline]
    pub fn factor_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let o = self.offset(i, j);
        let b = self.basis.count;
        &mut self.coeffs[o..o + b]
    }

    /// Output weight `w[l][i]`; 1 for single-output models.
    #[inline]
    pub fn weight(&self, l: usize, i: usize) -> f64 {
        self.out_weights
            .as_ref()
            .map_or(1.0, |w| w[l * self.rank + i])
    }

    /// Values of the `r` rank-term products at `x`.
    pub fn rank_terms(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(PltmError::ShapeMismatch {
                expected: self.dim,
                actual: x.len(),
            });
        }
        let b = self.basis.count;
        let mut table = vec![0.0; self.dim * b];
        let mut scratch = Vec::with_capacity(b + 2);
        for (j, &xj) in x.iter().enumerate() {
            eval_basis_into(&self.basis, xj, &mut scratch, &mut table[j * b..(j + 1) * b]);
        }
        Ok((0..self.rank)
            .map(|i| {
                (0..self.dim)
                    .map(|j| dot(self.factor(i, j), &table[j * b..(j + 1) * b]))
                    .product()
            })
            .collect())
    }

    /// `(u_1(x), …, u_m(x))`.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        let terms = self.rank_terms(x)?;
        Ok((0..self.outputs())
            .map(|l| {
                terms
                    .iter()
                    .enumerate()
                    .map(|(i, t)| self.weight(l, i) * t)
                    .sum()
            })
            .collect())
    }

    /// Multiplies every coefficient of dimension `j0` (0-based) by `alpha`,
    /// which scales every output by `alpha`.
    pub fn scale_dimension(&self, j0: usize, alpha: f64) -> Result<Self> {
        if j0 >= self.dim {
            return Err(PltmError::InvalidParameter {
                name: "j0",
                reason: format!("dimension index {j0} out of range for d = {}", self.dim),
            });
        }
        if alpha == 0.0 || !alpha.is_finite() {
            return Err(PltmError::InvalidParameter {
                name: "alpha",
                reason: "scale factor must be finite and nonzero".into(),
            });
        }
        let mut out = self.clone();
        for i in 0..self.rank {
            for a in out.factor_mut(i, j0) {
                *a *= alpha;
            }
        }
        Ok(out)
    }

    /// `log10 |Π_j f_ij(x)|` per rank term, for spotting collapse or blow-up
    /// of the long products.
    pub fn log10_term_magnitudes(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(PltmError::ShapeMismatch {
                expected: self.dim,
                actual: x.len(),
            });
        }
        let mut values = vec![0.0; self.basis.count];
        let mut scratch = Vec::new();
        let mut out = vec![0.0; self.rank];
        for (j, &xj) in x.iter().enumerate() {
            eval_basis_into(&self.basis, xj, &mut scratch, &mut values);
            for (i, o) in out.iter_mut().enumerate() {
                *o += dot(self.factor(i, j), &values).abs().log10();
            }
        }
        Ok(out)
    }
}

/// A fresh model: `a[i][j][1] = c`, `a[i][j][k] = 0` for `k > 1`, and, when
/// `outputs` is given, uniform random output weights.
pub fn init_model(
    rank: usize,
    dim: usize,
    basis: BasisSpec,
    outputs: Option<usize>,
    cfg: &InitConfig,
) -> Result<LtmModel> {
    if cfg.c == 0.0 || !cfg.c.is_finite() {
        return Err(PltmError::InvalidParameter {
            name: "init-c",
            reason: "c must be finite and nonzero (c = 0 gives the zero function)".into(),
        });
    }
    let (lo, hi) = cfg.w_range;
    if !(lo < hi) {
        return Err(PltmError::InvalidParameter {
            name: "w-range",
            reason: format!("need lo < hi, got ({lo}, {hi})"),
        });
    }
    if outputs == Some(0) {
        return Err(PltmError::InvalidParameter {
            name: "outputs",
            reason: "output count must be at least 1".into(),
        });
    }
    let b = basis.count;
    let mut coeffs = vec![0.0; rank * dim * b];
    for block in coeffs.chunks_exact_mut(b) {
        block[0] = cfg.c;
    }
    let out_weights = outputs.map(|m| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        (0..m * rank).map(|_| rng.gen_range(lo..hi)).collect()
    });
    LtmModel::from_parts(rank, dim, basis, coeffs, out_weights)
}

const MAGIC: &[u8; 4] = b"PLTM";
const FORMAT_VERSION: u32 = 1;

impl LtmModel {
    /// Writes the binary model format (all integers and floats little-endian):
    ///
    /// ```text
    /// "PLTM" | version u32 | r u64 | d u64 | b u64 | family u8 | s f64 | t f64
    ///        | m u64 (0 = no output weights) | coeffs f64 × r·d·b | weights f64 × m·r
    /// ```
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        for n in [self.rank, self.dim, self.basis.count] {
            w.write_all(&(n as u64).to_le_bytes())?;
        }
        w.write_all(&[self.basis.family.tag()])?;
        w.write_all(&self.basis.interval.s.to_le_bytes())?;
        w.write_all(&self.basis.interval.t.to_le_bytes())?;
        let m = if self.out_weights.is_some() {
            self.outputs()
        } else {
            0
        };
        w.write_all(&(m as u64).to_le_bytes())?;
        for v in self.coeffs.iter().chain(self.out_weights.iter().flatten()) {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(PltmError::ModelFormat("missing PLTM magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(PltmError::ModelFormat(format!(
                "unsupported version {version}"
            )));
        }
        let rank = read_u64(&mut r)? as usize;
        let dim = read_u64(&mut r)? as usize;
        let count = read_u64(&mut r)? as usize;
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        let family = BasisFamily::from_tag(tag[0])
            .ok_or_else(|| PltmError::ModelFormat(format!("unknown basis family {}", tag[0])))?;
        let s = read_f64(&mut r)?;
        let t = read_f64(&mut r)?;
        let m = read_u64(&mut r)? as usize;
        let basis = BasisSpec::new(Interval::new(s, t)?, family, count)?;
        let n_coeffs = rank
            .checked_mul(dim)
            .and_then(|v| v.checked_mul(count))
            .ok_or_else(|| PltmError::ModelFormat("shape overflow".into()))?;
        let coeffs = (0..n_coeffs)
            .map(|_| read_f64(&mut r))
            .collect::<Result<Vec<_>>>()?;
        let out_weights = if m == 0 {
            None
        } else {
            Some(
                (0..m * rank)
                    .map(|_| read_f64(&mut r))
                    .collect::<Result<Vec<_>>>()?,
            )
        };
        LtmModel::from_parts(rank, dim, basis, coeffs, out_weights)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}
