//! Scalar quadrature rules shared by the fractional-calculus and kernel code.
//!
//! The double-exponential (tanh-sinh) rule hands the integrand the distance to
//! both endpoints, computed without cancellation, so integrands with algebraic
//! endpoint singularities such as `(u - s)^(H - 3/2)` or `(1 - θ)^(-1/2 - H)`
//! can be written in terms of those distances.

use crate::error::{Error, Result};
use std::f64::consts::FRAC_PI_2;

const T_MAX: f64 = 6.0;
const MAX_LEVEL: u32 = 12;

/// Result of an adaptive quadrature: estimate plus the last level-to-level change.
#[derive(Debug, Clone, Copy)]
pub struct QuadEstimate {
    pub value: f64,
    pub error: f64,
}

/// Tanh-sinh quadrature on `[a, b]` refined by step halving until the relative
/// change drops below `rel_tol` (with an absolute floor of `1e-300`).
///
/// `f(x, dl, dr)` receives the abscissa together with `dl = x - a` and
/// `dr = b - x`, both accurate near their respective endpoint.
pub fn tanh_sinh<F>(f: F, a: f64, b: f64, rel_tol: f64) -> Result<QuadEstimate>
where
    F: Fn(f64, f64, f64) -> f64,
{
    let len = b - a;
    if !(len > 0.0) {
        return Ok(QuadEstimate { value: 0.0, error: 0.0 });
    }
    let half = 0.5 * len;

    // contribution of abscissa parameter t (symmetric pair handled by caller)
    let node = |t: f64| -> f64 {
        let u = FRAC_PI_2 * t.sinh();
        let cu = u.cosh();
        let w = FRAC_PI_2 * t.cosh() / (cu * cu);
        if w == 0.0 || !w.is_finite() {
            return 0.0;
        }
        // distance from the nearer endpoint, in units of len
        let near = 1.0 / ((2.0 * u.abs()).exp() + 1.0);
        let (dl, dr) = if u >= 0.0 { (len - len * near, len * near) } else { (len * near, len - len * near) };
        if dl <= 0.0 || dr <= 0.0 {
            return 0.0;
        }
        let x = if u >= 0.0 { b - dr } else { a + dl };
        let fx = f(x, dl, dr);
        if fx.is_finite() {
            half * w * fx
        } else {
            0.0
        }
    };

    let mut h = 1.0;
    let mut sum = node(0.0);
    let mut k = 1;
    while (k as f64) * h <= T_MAX {
        let t = k as f64 * h;
        sum += node(t) + node(-t);
        k += 1;
    }
    let mut estimate = sum * h;
    let mut last_err = f64::INFINITY;

    for _ in 1..=MAX_LEVEL {
        h *= 0.5;
        let mut k = 1;
        while (k as f64) * h <= T_MAX {
            let t = k as f64 * h;
            sum += node(t) + node(-t);
            k += 2;
        }
        let next = sum * h;
        last_err = (next - estimate).abs();
        estimate = next;
        if last_err <= rel_tol * estimate.abs() || last_err < 1e-300 {
            return Ok(QuadEstimate { value: estimate, error: last_err });
        }
    }
    Err(Error::Quadrature { estimate, error: last_err })
}

/// Four-point Gauss-Legendre nodes and weights on `[-1, 1]`.
pub const GAUSS4_NODES: [f64; 4] =
    [-0.861_136_311_594_052_6, -0.339_981_043_584_856_3, 0.339_981_043_584_856_3, 0.861_136_311_594_052_6];
pub const GAUSS4_WEIGHTS: [f64; 4] =
    [0.347_854_845_137_453_9, 0.652_145_154_862_546_1, 0.652_145_154_862_546_1, 0.347_854_845_137_453_9];

/// Eight-point Gauss-Legendre rule on `[-1, 1]`, nodes in increasing order.
pub const GAUSS8_NODES: [f64; 8] = [
    -0.960_289_856_497_536_3,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329_0,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329_0,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
pub const GAUSS8_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_3,
    0.222_381_034_453_374_5,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362_0,
    0.362_683_783_378_362_0,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// `∫_a^b f` by the eight-point Gauss-Legendre rule.
pub fn gauss8<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    GAUSS8_NODES.iter().zip(GAUSS8_WEIGHTS.iter()).map(|(x, w)| w * f(mid + half * x)).sum::<f64>() * half
}

/// Average of `f` over `[a, b]` by the four-point Gauss-Legendre rule.
pub fn gauss4_mean<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    GAUSS4_NODES.iter().zip(GAUSS4_WEIGHTS.iter()).map(|(x, w)| 0.5 * w * f(mid + half * x)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exact() {
        let q = tanh_sinh(|x, _, _| x * x, 0.0, 2.0, 1e-14).unwrap();
        assert!((q.value - 8.0 / 3.0).abs() < 1e-13);
        assert!((gauss4_mean(|x| x.powi(7), 0.0, 1.0) - 1.0 / 8.0).abs() < 1e-14);
        assert!((gauss8(|x| x.powi(15), 0.0, 1.0) - 1.0 / 16.0).abs() < 1e-14);
        assert!((GAUSS8_WEIGHTS.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn endpoint_singularities() {
        // ∫_0^1 x^{-1/2} dx = 2
        let q = tanh_sinh(|_, dl, _| dl.powf(-0.5), 0.0, 1.0, 1e-13).unwrap();
        assert!((q.value - 2.0).abs() < 1e-11, "{}", q.value);
        // ∫_0^1 (1-x)^{-0.9} dx = 10
        let q = tanh_sinh(|_, _, dr| dr.powf(-0.9), 0.0, 1.0, 1e-12).unwrap();
        assert!((q.value - 10.0).abs() < 1e-8, "{}", q.value);
    }

    #[test]
    fn empty_interval() {
        assert_eq!(tanh_sinh(|_, _, _| 1.0, 1.0, 1.0, 1e-10).unwrap().value, 0.0);
    }
}
