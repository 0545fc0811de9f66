//! Analytic gradients against central finite differences on random models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::classifier::{cross_entropy_loss, MnistDataset, Split, CLASSES};
use crate::error::Result;
use crate::legendre::{assemble_forms, BasisFamily, BasisSpec, Interval};
use crate::model::LtmModel;
use crate::numeric::{central_difference, max_relative_deviation};
use crate::rayleigh::{rayleigh, ProblemKind, ProblemSpec};

/// Shape of the random instance being checked.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckShape {
    pub dim: usize,
    pub rank: usize,
    pub bases: usize,
}

/// Largest `|analytic - fd| / max(|analytic|, |fd|, 1e-3·max|analytic|)`.
fn deviation(analytic: &[f64], fd: &[f64]) -> f64 {
    let floor = analytic.iter().fold(0.0f64, |a, v| a.max(v.abs())) * 1e-3;
    max_relative_deviation(analytic, fd, floor.max(f64::MIN_POSITIVE))
}

/// Rayleigh-quotient gradient check on `[0, 1]^d` (Laplacian) or
/// `[-5, 5]^d` (oscillator) with coefficients uniform in `[-1, 1]`.
pub fn rayleigh_gradient_deviation(kind: ProblemKind, shape: CheckShape, seed: u64) -> Result<f64> {
    let interval = match kind {
        ProblemKind::Laplacian => Interval::new(0.0, 1.0)?,
        ProblemKind::HarmonicOscillator => Interval::new(-5.0, 5.0)?,
    };
    let basis = BasisSpec::boundary_adapted(interval, shape.bases)?;
    let forms = assemble_forms(&basis);
    let problem = ProblemSpec {
        kind,
        interval,
        dim: shape.dim,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coeffs: Vec<f64> = (0..shape.rank * shape.dim * shape.bases)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let model = LtmModel::from_parts(shape.rank, shape.dim, basis, coeffs, None)?;
    let analytic = rayleigh(&model, &forms, &problem)?.grad;
    let fd = central_difference(
        |p| {
            LtmModel::from_parts(shape.rank, shape.dim, basis, p.to_vec(), None)
                .and_then(|m| rayleigh(&m, &forms, &problem))
                .map_or(f64::NAN, |e| e.loss)
        },
        model.coeffs(),
        1e-5,
    );
    Ok(deviation(&analytic, &fd))
}

/// Cross-entropy gradient check (coefficients and output weights) on six
/// synthetic images with entries uniform in `[-1, 1]`.
pub fn cross_entropy_gradient_deviation(shape: CheckShape, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 6;
    let images = (0..n * shape.dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let labels = (0..n).map(|_| rng.gen_range(0..CLASSES as u8)).collect();
    let data = MnistDataset::new(shape.dim, images, labels, Split::Train)?;
    let basis = BasisSpec::new(Interval::reference(), BasisFamily::LegendreFromZero, shape.bases)?;
    let coeffs: Vec<f64> = (0..shape.rank * shape.dim * shape.bases)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let weights: Vec<f64> = (0..CLASSES * shape.rank).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let batch: Vec<usize> = (0..n).collect();
    let model = LtmModel::from_parts(shape.rank, shape.dim, basis, coeffs.clone(), Some(weights.clone()))?;
    let (_, grad) = cross_entropy_loss(&model, &data, &batch)?;
    let loss = |a: &[f64], w: &[f64]| {
        LtmModel::from_parts(shape.rank, shape.dim, basis, a.to_vec(), Some(w.to_vec()))
            .and_then(|m| cross_entropy_loss(&m, &data, &batch))
            .map_or(f64::NAN, |(l, _)| l)
    };
    let fd_a = central_difference(|a| loss(a, &weights), &coeffs, 1e-6);
    let fd_w = central_difference(|w| loss(&coeffs, w), &weights, 1e-6);
    let analytic: Vec<f64> = grad.coeffs.iter().chain(&grad.weights).copied().collect();
    let fd: Vec<f64> = fd_a.into_iter().chain(fd_w).collect();
    Ok(deviation(&analytic, &fd))
}
