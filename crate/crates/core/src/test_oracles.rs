//! Quadrature oracle used only by unit tests.

/// Gauss–Legendre nodes and weights on `[s, t]`, by Newton iteration on the
/// Legendre recurrence from Chebyshev-like initial guesses.
pub fn gauss_legendre(n: usize, s: f64, t: f64) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 1..n {
                let p2 = ((2 * k + 1) as f64 * x * p1 - k as f64 * p0) / (k + 1) as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else { p1 };
            let pn1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pn1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes.push(x);
        weights.push(2.0 / ((1.0 - x * x) * dp * dp));
    }
    let half = (t - s) / 2.0;
    let mid = (t + s) / 2.0;
    (
        nodes.iter().map(|x| mid + half * x).collect(),
        weights.iter().map(|w| half * w).collect(),
    )
}

#[test]
fn gauss_legendre_integrates_polynomials_exactly() {
    let (x, w) = gauss_legendre(6, -1.0, 1.0);
    let total: f64 = w.iter().sum();
    assert!((total - 2.0).abs() < 1e-14);
    let m10: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(10)).sum();
    assert!((m10 - 2.0 / 11.0).abs() < 1e-14);
}
