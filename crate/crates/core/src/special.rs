// SPDX-License-Identifier: MIT OR Apache-2.0

#![forbid(unsafe_code)]

//! Log-space arithmetic and the handful of special functions the models need.

use crate::scalar::Real;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[inline]
pub fn ln_gamma<T: Real>(x: T) -> T {
    T::lit(statrs::function::gamma::ln_gamma(x.to_f64_lossy()))
}

/// `log(exp(a) + exp(b))` without overflow.
#[inline]
pub fn log_add_exp<T: Real>(a: T, b: T) -> T {
    if a == T::neg_infinity() {
        return b;
    }
    if b == T::neg_infinity() {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `log(sum(exp(x)))`; `-inf` for an empty slice or all `-inf` entries.
pub fn log_sum_exp<T: Real>(xs: &[T]) -> T {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return max;
    }
    if max == T::infinity() {
        return max;
    }
    let sum: T = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// `log(sum(w_i * exp(x_i)))` for nonnegative weights.
pub fn log_sum_exp_weighted<T: Real>(xs: &[T], ws: &[T]) -> T {
    debug_assert_eq!(xs.len(), ws.len());
    let max = xs
        .iter()
        .zip(ws)
        .filter(|(_, &w)| w > T::zero())
        .map(|(&x, _)| x)
        .fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() || max == T::infinity() {
        return max;
    }
    let sum: T = xs
        .iter()
        .zip(ws)
        .map(|(&x, &w)| if w > T::zero() { w * (x - max).exp() } else { T::zero() })
        .sum();
    max + sum.ln()
}

/// Standard normal CDF.
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2)
}

/// Natural log of the standard normal CDF, accurate deep in the lower tail.
pub fn ln_norm_cdf(z: f64) -> f64 {
    if z > -20.0 {
        norm_cdf(z).ln()
    } else {
        // Asymptotic series for the Mills ratio.
        let z2 = z * z;
        -0.5 * z2 - 0.5 * LN_2PI - (-z).ln() + (1.0 - 1.0 / z2 + 3.0 / (z2 * z2)).ln()
    }
}

/// Natural log of `P(lo < Z < hi)` for a standard normal `Z`.
pub fn ln_norm_interval(lo: f64, hi: f64) -> f64 {
    if !(hi > lo) {
        return f64::NEG_INFINITY;
    }
    // Work in whichever tail keeps the subtraction well conditioned.
    if lo > 0.0 {
        return ln_norm_interval(-hi, -lo);
    }
    let ln_hi = ln_norm_cdf(hi);
    if lo == f64::NEG_INFINITY {
        return ln_hi;
    }
    let ln_lo = ln_norm_cdf(lo);
    let ratio = (ln_lo - ln_hi).exp();
    if ratio >= 1.0 {
        return f64::NEG_INFINITY;
    }
    ln_hi + (-ratio).ln_1p()
}

/// Standard normal quantile.
pub fn norm_quantile(p: f64) -> f64 {
    -std::f64::consts::SQRT_2 * statrs::function::erf::erfc_inv(2.0 * p)
}

/// Sample quantile with linear interpolation between order statistics
/// (Hyndman–Fan type 7, the R default). `sorted` must be ascending.
pub fn quantile_type7(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() || !(0.0..=1.0).contains(&p) {
        return None;
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Some(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_handles_extremes() {
        assert_eq!(log_sum_exp::<f64>(&[]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        let v = log_sum_exp(&[-1000.0, -1000.0]);
        assert!((v - (-1000.0 + 2f64.ln())).abs() < 1e-12);
        assert!((log_add_exp(0.0, 0.0) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn normal_tails() {
        assert!((norm_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((ln_norm_interval(0.0, f64::INFINITY) - 0.5f64.ln()).abs() < 1e-15);
        // Continuity of the asymptotic branch.
        let a = ln_norm_cdf(-19.999_999);
        let b = ln_norm_cdf(-20.000_001);
        assert!((a - b).abs() < 1e-4);
        assert!(ln_norm_cdf(-40.0).is_finite());
        assert!((norm_quantile(norm_cdf(1.3)) - 1.3).abs() < 1e-9);
    }

    #[test]
    fn type7_quantiles_on_five_values() {
        let xs = [1.0, 2.0, 4.0, 8.0, 16.0];
        // h = 4p: p=0.25 -> x[1]=2; p=0.75 -> x[3]=8; p=0.1 -> 1 + 0.4*(2-1)
        assert_eq!(quantile_type7(&xs, 0.25), Some(2.0));
        assert_eq!(quantile_type7(&xs, 0.5), Some(4.0));
        assert_eq!(quantile_type7(&xs, 0.75), Some(8.0));
        assert!((quantile_type7(&xs, 0.1).unwrap() - 1.4).abs() < 1e-15);
        assert_eq!(quantile_type7(&[], 0.5), None);
    }
}
