//! Shared oracles and checks for the integration and acceptance tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, SymmetricEigen};
use pltm::classifier::{softmax, MnistDataset, Split};
use pltm::idx::{read_idx, write_idx, IdxData};
use pltm::{
    assemble_forms, eval_basis, rayleigh, BasisFamily, BasisSpec, Interval, LtmModel, ProblemKind, ProblemSpec,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Gauss–Legendre rule on `[s, t]` from the eigen-decomposition of the
/// Jacobi matrix (Golub–Welsch).
pub fn gauss_legendre(n: usize, s: f64, t: f64) -> Vec<(f64, f64)> {
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let kf = k as f64;
        let beta = kf / (4.0 * kf * kf - 1.0).sqrt();
        jacobi[(k - 1, k)] = beta;
        jacobi[(k, k - 1)] = beta;
    }
    let eig = SymmetricEigen::new(jacobi);
    let half = 0.5 * (t - s);
    let mut rule: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (s + half * (eig.eigenvalues[i] + 1.0), half * 2.0 * v0 * v0)
        })
        .collect();
    rule.sort_by(|a, b| a.0.total_cmp(&b.0));
    rule
}

/// `(L_n(x), L_n'(x))` for `n = 0..=max` by the Bonnet recurrence and
/// `L'_{n+1} = L'_{n-1} + (2n+1) L_n`.
fn legendre_with_derivatives(max: usize, x: f64) -> Vec<(f64, f64)> {
    let mut out = vec![(1.0, 0.0)];
    if max >= 1 {
        out.push((x, 1.0));
    }
    for n in 1..max {
        let nf = n as f64;
        let next = ((2.0 * nf + 1.0) * x * out[n].0 - nf * out[n - 1].0) / (nf + 1.0);
        let dnext = out[n - 1].1 + (2.0 * nf + 1.0) * out[n].0;
        out.push((next, dnext));
    }
    out
}

/// Values and `y`-derivatives of the boundary-adapted basis at `y`.
fn boundary_basis(b: usize, interval: Interval, y: f64) -> (Vec<f64>, Vec<f64>) {
    let x = 2.0 * (y - interval.s) / (interval.t - interval.s) - 1.0;
    let scale = 2.0 / (interval.t - interval.s);
    let l = legendre_with_derivatives(b + 1, x);
    let vals = (1..=b).map(|k| l[k + 1].0 - l[k - 1].0).collect();
    let ders = (1..=b).map(|k| scale * (l[k + 1].1 - l[k - 1].1)).collect();
    (vals, ders)
}

/// `(∫|∇u|² + ∫v u², ∫u²)` by a tensorized Gauss–Legendre rule with enough
/// nodes to be exact for the model's polynomial degree.
pub fn brute_force_forms(model: &LtmModel, problem: &ProblemSpec) -> (f64, f64) {
    let (r, d, b) = (model.rank(), model.dim(), model.bases());
    let interval = problem.interval;
    let rule = gauss_legendre(b + 4, interval.s, interval.t);
    let n = rule.len();
    let tables: Vec<(Vec<f64>, Vec<f64>)> = rule.iter().map(|&(y, _)| boundary_basis(b, interval, y)).collect();
    let mut numerator = 0.0;
    let mut denominator = 0.0;
    let mut index = vec![0usize; d];
    loop {
        let weight: f64 = index.iter().map(|&q| rule[q].1).product();
        let mut u = 0.0;
        let mut grad = vec![0.0; d];
        for i in 0..r {
            let factors: Vec<(f64, f64)> = (0..d)
                .map(|j| {
                    let (vals, ders) = &tables[index[j]];
                    let a = model.factor(i, j);
                    let f: f64 = a.iter().zip(vals).map(|(a, v)| a * v).sum();
                    let df: f64 = a.iter().zip(ders).map(|(a, v)| a * v).sum();
                    (f, df)
                })
                .collect();
            u += factors.iter().map(|f| f.0).product::<f64>();
            for (j0, g) in grad.iter_mut().enumerate() {
                *g += factors
                    .iter()
                    .enumerate()
                    .map(|(j, f)| if j == j0 { f.1 } else { f.0 })
                    .product::<f64>();
            }
        }
        let potential = match problem.kind {
            ProblemKind::Laplacian => 0.0,
            ProblemKind::HarmonicOscillator => index.iter().map(|&q| rule[q].0 * rule[q].0).sum(),
        };
        numerator += weight * (grad.iter().map(|g| g * g).sum::<f64>() + potential * u * u);
        denominator += weight * u * u;

        let mut j = 0;
        while j < d {
            index[j] += 1;
            if index[j] < n {
                break;
            }
            index[j] = 0;
            j += 1;
        }
        if j == d {
            return (numerator, denominator);
        }
    }
}

pub fn random_model(basis: BasisSpec, rank: usize, dim: usize, seed: u64) -> LtmModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coeffs = (0..rank * dim * basis.count).map(|_| rng.gen_range(-1.0..1.0)).collect();
    LtmModel::from_parts(rank, dim, basis, coeffs, None).unwrap()
}

pub const ORACLE_INTERVALS: [(f64, f64); 3] = [(0.0, 1.0), (-5.0, 5.0), (-2.0, 3.0)];

/// Worst relative disagreement between the closed-form Rayleigh parts and the
/// quadrature oracle over `(d, r, b) ∈ {1,2,3}×{1,2,3}×{2,4,6}`, both
/// operators and all test intervals.
pub fn oracle_equivalence_worst() -> f64 {
    let mut worst = 0.0f64;
    for &(s, t) in &ORACLE_INTERVALS {
        let interval = Interval::new(s, t).unwrap();
        for b in [2, 4, 6] {
            let basis = BasisSpec::boundary_adapted(interval, b).unwrap();
            let forms = assemble_forms(&basis);
            for d in 1..=3 {
                for r in 1..=3 {
                    let model = random_model(basis, r, d, (100 * d + 10 * r + b) as u64);
                    for kind in [ProblemKind::Laplacian, ProblemKind::HarmonicOscillator] {
                        let problem = ProblemSpec { kind, interval, dim: d };
                        let exact = rayleigh(&model, &forms, &problem).unwrap();
                        let (num, den) = brute_force_forms(&model, &problem);
                        worst = worst
                            .max((exact.numerator - num).abs() / num.abs())
                            .max((exact.denominator - den).abs() / den.abs());
                    }
                }
            }
        }
    }
    worst
}

/// Boundary-adapted functions vanish at both endpoints of every interval.
pub fn check_boundary_vanishing() -> Result<(), String> {
    for &(s, t) in ORACLE_INTERVALS.iter().chain(&[(-1.0, 1.0)]) {
        let basis = BasisSpec::boundary_adapted(Interval::new(s, t).unwrap(), 30).unwrap();
        for y in [s, t] {
            let worst = eval_basis(&basis, y).iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if worst > 1e-12 {
                return Err(format!("|P_k({y})| = {worst:e} on [{s}, {t}]"));
            }
        }
    }
    Ok(())
}

/// All three matrices symmetric; stiffness diagonal with `2(2k+1)` on `[-1, 1]`.
pub fn check_form_structure() -> Result<(), String> {
    for b in 1..=30 {
        for &(s, t) in ORACLE_INTERVALS.iter().chain(&[(-1.0, 1.0)]) {
            let spec = BasisSpec::boundary_adapted(Interval::new(s, t).unwrap(), b).unwrap();
            let forms = assemble_forms(&spec);
            for (name, m) in [("mass", &forms.mass), ("stiffness", &forms.stiffness), ("weighted", &forms.weighted)] {
                if !m.is_symmetric() {
                    return Err(format!("{name} not symmetric for b = {b} on [{s}, {t}]"));
                }
            }
            for row in 0..b {
                for col in 0..b {
                    let v = forms.stiffness.get(row, col);
                    if row != col && v != 0.0 {
                        return Err(format!("stiffness[{row}][{col}] = {v:e} for b = {b}"));
                    }
                }
            }
        }
        let spec = BasisSpec::boundary_adapted(Interval::reference(), b).unwrap();
        let forms = assemble_forms(&spec);
        for k in 1..=b {
            let expected = 2.0 * (2.0 * k as f64 + 1.0);
            if forms.stiffness.get(k - 1, k - 1) != expected {
                return Err(format!("stiffness[{k}][{k}] != {expected} for b = {b}"));
            }
        }
    }
    Ok(())
}

/// Rayleigh quotient unchanged when one dimension's coefficients are scaled.
pub fn check_scale_invariance(seeds: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(12345);
    for seed in 0..seeds {
        let (s, t) = ORACLE_INTERVALS[seed as usize % ORACLE_INTERVALS.len()];
        let interval = Interval::new(s, t).unwrap();
        let basis = BasisSpec::boundary_adapted(interval, 2 + seed as usize % 7).unwrap();
        let forms = assemble_forms(&basis);
        let dim = 1 + seed as usize % 5;
        let model = random_model(basis, 1 + seed as usize % 4, dim, seed);
        for kind in [ProblemKind::Laplacian, ProblemKind::HarmonicOscillator] {
            let problem = ProblemSpec { kind, interval, dim };
            let base = rayleigh(&model, &forms, &problem).unwrap().loss;
            let j0 = rng.gen_range(0..dim);
            let magnitude = 10f64.powf(rng.gen_range(-3.0..3.0));
            let alpha = if rng.gen_bool(0.5) { magnitude } else { -magnitude };
            let scaled = model.scale_dimension(j0, alpha).unwrap();
            let loss = rayleigh(&scaled, &forms, &problem).unwrap().loss;
            let rel = (loss - base).abs() / base.abs();
            if rel > 1e-12 {
                return Err(format!("seed {seed}: scaling dim {j0} by {alpha} moved the loss by {rel:e}"));
            }
        }
    }
    Ok(())
}

/// Nonnegative entries summing to 1 within 1e-12, strictly positive whenever
/// the spread of the logits keeps every `exp` above the underflow limit.
pub fn check_softmax_simplex(cases: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(777);
    for case in 0..cases {
        let scale = [1.0, 10.0, 100.0, 1e3][case % 4];
        let z: Vec<f64> = (0..10).map(|_| rng.gen_range(-scale..scale)).collect();
        let p = softmax(&z);
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-12 || p.iter().any(|&v| !(v >= 0.0)) {
            return Err(format!("softmax({z:?}) = {p:?}"));
        }
        let spread = z.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v)) - z.iter().fold(f64::INFINITY, |a, &v| a.min(v));
        if spread < 700.0 && p.iter().any(|&v| v <= 0.0) {
            return Err(format!("softmax({z:?}) has a zero entry"));
        }
        let shifted: Vec<f64> = z.iter().map(|v| v + 123.25).collect();
        let q = softmax(&shifted);
        if p.iter().zip(&q).any(|(a, b)| (a - b).abs() > 1e-12) {
            return Err(format!("softmax not shift invariant at {z:?}"));
        }
    }
    Ok(())
}

/// Synthetic IDX files read back bit-exactly, and pixels map onto `[-1, 1]`.
pub fn check_idx_round_trip(cases: usize) -> Result<(), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for case in 0..cases {
        let (rows, cols, n) = (rng.gen_range(1..30), rng.gen_range(1..30), rng.gen_range(0..40));
        let mut pixels: Vec<u8> = (0..rows * cols * n).map(|_| rng.gen()).collect();
        if let [first, second, ..] = pixels.as_mut_slice() {
            *first = 0;
            *second = 255;
        }
        let data = IdxData {
            rows,
            cols,
            pixels,
            labels: (0..n).map(|_| rng.gen_range(0..10)).collect(),
        };
        let (i, l) = (dir.path().join(format!("i{case}")), dir.path().join(format!("l{case}")));
        write_idx(&data, &i, &l).map_err(|e| e.to_string())?;
        let back = read_idx(&i, &l).map_err(|e| e.to_string())?;
        if back != data {
            return Err(format!("case {case}: round trip changed the data"));
        }
        let set = MnistDataset::from_idx(&back, Split::Train).map_err(|e| e.to_string())?;
        if n > 0 && rows * cols >= 2 && (set.image(0)[0] != -1.0 || set.image(0)[1] != 1.0) {
            return Err(format!("case {case}: pixel rescale endpoints wrong"));
        }
    }
    Ok(())
}

/// Bundled MNIST subset: the first 10,000 training and 2,000 test digits.
pub fn subset_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-subset")
}

pub fn load_subset(split: Split) -> MnistDataset {
    MnistDataset::load_dir(&subset_dir(), split).unwrap()
}

pub fn legendre_from_zero(b: usize) -> BasisSpec {
    BasisSpec::new(Interval::reference(), BasisFamily::LegendreFromZero, b).unwrap()
}
