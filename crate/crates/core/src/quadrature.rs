//! Numerical integration: adaptive Gauss–Kronrod on (semi-)infinite ranges and
//! Gauss–Hermite rules for expectations under a normal law.

#![allow(clippy::excessive_precision)]

use std::collections::BinaryHeap;
use std::f64::consts::PI;

// QUADPACK qk15 abscissae (descending) and weights.
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
// Gauss weights for XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
}

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

struct Piece {
    map: usize,
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Piece {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Piece {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Core adaptive loop. Each interval carries a `map` tag that selects the
/// change of variables applied by `f`.
fn adaptive<F: Fn(usize, f64) -> f64>(
    f: F,
    intervals: &[(usize, f64, f64)],
    tol: f64,
    max_pieces: usize,
) -> Integral {
    let eval = |map: usize, a: f64, b: f64| gk15(&|x| f(map, x), a, b);
    let mut heap = BinaryHeap::new();
    for &(map, a, b) in intervals {
        if b > a {
            let (value, error) = eval(map, a, b);
            heap.push(Piece { map, a, b, value, error });
        }
    }
    let mut total_err: f64 = heap.iter().map(|p| p.error).sum();
    while total_err > tol && heap.len() < max_pieces {
        let Some(worst) = heap.pop() else { break };
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // interval can no longer be split in floating point
            heap.push(worst);
            break;
        }
        total_err -= worst.error;
        for (a, b) in [(worst.a, mid), (mid, worst.b)] {
            let (value, error) = eval(worst.map, a, b);
            total_err += error;
            heap.push(Piece { map: worst.map, a, b, value, error });
        }
        total_err = total_err.max(0.0);
    }
    // sum small contributions first
    let mut pieces = heap.into_vec();
    pieces.sort_by(|x, y| x.value.abs().total_cmp(&y.value.abs()));
    Integral {
        value: pieces.iter().map(|p| p.value).sum(),
        error: pieces.iter().map(|p| p.error).sum(),
    }
}

/// Globally adaptive 15-point Gauss–Kronrod integration over a set of finite
/// intervals. The interval with the largest error estimate is bisected until
/// the summed estimate drops below `tol` or `max_pieces` is reached.
pub fn integrate_pieces<F: Fn(f64) -> f64>(
    f: F,
    intervals: &[(f64, f64)],
    tol: f64,
    max_pieces: usize,
) -> Integral {
    let tagged: Vec<_> = intervals.iter().map(|&(a, b)| (0, a, b)).collect();
    adaptive(|_, x| f(x), &tagged, tol, max_pieces)
}

const FINITE: usize = 0;
const LOWER_TAIL: usize = 1;
const UPPER_TAIL: usize = 2;

/// Integrate `f` over the whole real line. Finite panels are laid between the
/// sorted `breakpoints`; the two tails are mapped onto `[0, 1)` with
/// `y = edge -/+ u / (1 - u)`.
pub fn integrate_real_line<F: Fn(f64) -> f64>(f: F, breakpoints: &[f64], tol: f64) -> Integral {
    let mut knots: Vec<f64> = breakpoints.iter().copied().filter(|x| x.is_finite()).collect();
    if knots.is_empty() {
        knots.push(0.0);
    }
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    let lo = knots[0];
    let hi = knots[knots.len() - 1];

    let g = |map: usize, s: f64| -> f64 {
        match map {
            FINITE => f(s),
            _ => {
                let step = s / (1.0 - s);
                let y = if map == LOWER_TAIL { lo - step } else { hi + step };
                let v = f(y) / ((1.0 - s) * (1.0 - s));
                if v.is_finite() {
                    v
                } else {
                    0.0
                }
            }
        }
    };
    let mut intervals = vec![(LOWER_TAIL, 0.0, 1.0), (UPPER_TAIL, 0.0, 1.0)];
    intervals.extend(knots.windows(2).map(|w| (FINITE, w[0], w[1])));
    adaptive(g, &intervals, tol, 20_000)
}

/// A Gauss–Hermite rule for the weight `exp(-x^2)`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    /// Nodes by Newton iteration on the orthonormal Hermite recurrence.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Hermite rule needs at least one node");
        const PIM4: f64 = 0.751_125_544_464_942_5; // pi^(-1/4)
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        let m = n.div_ceil(2);
        let mut z = 0.0_f64;
        for i in 0..m {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.855_75 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * nodes[0],
                3 => 1.91 * z - 0.91 * nodes[1],
                _ => 2.0 * z - nodes[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = PIM4;
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            nodes[i] = z;
            nodes[n - 1 - i] = -z;
            weights[i] = 2.0 / (pp * pp);
            weights[n - 1 - i] = weights[i];
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `E[g(Y)]` for `Y ~ N(mean, sd^2)`.
    pub fn normal_expectation<G: Fn(f64) -> f64>(&self, mean: f64, sd: f64, g: G) -> f64 {
        let scale = std::f64::consts::SQRT_2 * sd;
        let sum: f64 = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * g(mean + scale * x))
            .sum();
        sum / PI.sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gk_integrates_polynomials_and_exp() {
        let r = integrate_pieces(|x| x * x, &[(0.0, 3.0)], 1e-12, 100);
        assert!((r.value - 9.0).abs() < 1e-12);
        let r = integrate_pieces(f64::exp, &[(0.0, 1.0)], 1e-13, 100);
        assert!((r.value - (std::f64::consts::E - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn real_line_gaussian_and_cauchy() {
        let gauss = |x: f64| (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
        let r = integrate_real_line(gauss, &[-3.0, 0.0, 3.0], 1e-12);
        assert!((r.value - 1.0).abs() < 1e-10, "{}", r.value);
        let cauchy = |x: f64| 1.0 / (PI * (1.0 + x * x));
        let r = integrate_real_line(cauchy, &[-1.0, 1.0], 1e-12);
        assert!((r.value - 1.0).abs() < 1e-9, "{}", r.value);
        // a narrow spike away from the origin is found through breakpoints
        let spike = |x: f64| (-0.5 * ((x - 40.0) / 0.01).powi(2)).exp() / (0.01 * (2.0 * PI).sqrt());
        let r = integrate_real_line(spike, &[39.9, 40.0, 40.1], 1e-12);
        assert!((r.value - 1.0).abs() < 1e-9, "{}", r.value);
    }

    #[test]
    fn hermite_moments() {
        for n in [1, 2, 5, 64, 128] {
            let gh = GaussHermite::new(n);
            let w: f64 = gh.weights().iter().sum();
            assert!((w - PI.sqrt()).abs() < 1e-12, "n={n} sum={w}");
        }
        let gh = GaussHermite::new(64);
        assert!((gh.normal_expectation(0.0, 1.0, |x| x * x) - 1.0).abs() < 1e-12);
        assert!((gh.normal_expectation(2.0, 3.0, |x| x) - 2.0).abs() < 1e-12);
        assert!((gh.normal_expectation(0.0, 1.0, |x| x.powi(4)) - 3.0).abs() < 1e-11);
    }
}
