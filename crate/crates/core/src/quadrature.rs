//! Adaptive 15-point Gauss–Kronrod quadrature for smooth 1D integrands.
//!
//! Only the eigenfunction-error diagnostic needs this; the training loss is
//! integrated in closed form.

use crate::numeric::NeumaierSum;

// Kronrod abscissae on [0, 1) (symmetric), QUADPACK qk15.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
// 7-point Gauss weights for XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

const MAX_PANELS: usize = 4000;

/// One G7/K15 panel: `(kronrod estimate, |kronrod - gauss|)`.
fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for (idx, (&x, &w)) in XGK.iter().zip(&WGK).take(7).enumerate() {
        let dx = half * x;
        let pair = f(center - dx) + f(center + dx);
        kronrod += w * pair;
        if idx % 2 == 1 {
            gauss += WG[idx / 2] * pair;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

/// `∫_a^b f` to within `max(abs_tol, rel_tol·|∫f|)` for smooth `f`.
///
/// Globally adaptive: the panel with the largest error estimate is bisected
/// until the summed estimate meets the tolerance or the panel budget runs out.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> f64 {
    let (value, error) = gk15(&f, a, b);
    let mut panels = vec![Panel { a, b, value, error }];
    loop {
        let total: f64 = panels.iter().map(|p| p.value).sum();
        let err: f64 = panels.iter().map(|p| p.error).sum();
        if err <= abs_tol.max(rel_tol * total.abs()) || panels.len() >= MAX_PANELS {
            return panels.iter().map(|p| p.value).collect::<NeumaierSum>().value();
        }
        let worst = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.error.total_cmp(&y.1.error))
            .map_or(0, |(i, _)| i);
        let Panel { a, b, value, .. } = panels.swap_remove(worst);
        let mid = 0.5 * (a + b);
        if !(a < mid && mid < b) {
            panels.push(Panel { a, b, value, error: 0.0 });
            continue;
        }
        for (lo, hi) in [(a, mid), (mid, b)] {
            let (value, error) = gk15(&f, lo, hi);
            panels.push(Panel { a: lo, b: hi, value, error });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn integrates_known_functions() {
        let v = integrate(|x| (PI * x).sin(), 0.0, 1.0, 1e-14, 1e-14);
        assert!((v - 2.0 / PI).abs() < 1e-14);
        let g = integrate(|x| (-x * x).exp(), -5.0, 5.0, 1e-14, 1e-14);
        // √π · erf(5)
        assert!((g - 1.772_453_850_905_516 * 0.999_999_999_998_462_5).abs() < 1e-13);
        let p = integrate(|x| x.powi(9) - 3.0 * x * x, -1.0, 2.0, 1e-13, 0.0);
        assert!((p - (102.3 - 9.0)).abs() < 1e-11);
    }
}
