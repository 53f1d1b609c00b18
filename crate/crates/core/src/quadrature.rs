// SPDX-License-Identifier: MIT OR Apache-2.0

#![forbid(unsafe_code)]

//! Globally adaptive 21-point Gauss–Kronrod quadrature with a subdivision cap,
//! following the QUADPACK `qag` error heuristics.

use crate::error::{Error, Result};
use crate::scalar::Real;

const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];

const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_208_977_882_126,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

/// Gauss weights for the odd-indexed Kronrod nodes `XGK[1], XGK[3], .., XGK[9]`.
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

/// Number of integrand evaluations per interval.
pub const NODES_PER_INTERVAL: usize = 21;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadConfig {
    /// `rel_tol = eps^(1/4)` and a 1000-interval cap.
    fn default() -> Self {
        Self {
            rel_tol: f64::EPSILON.powf(0.25),
            abs_tol: 0.0,
            max_subdivisions: 1000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadResult<T> {
    pub value: T,
    pub abs_err: T,
    pub subdivisions: usize,
    pub evaluations: usize,
}

#[derive(Clone, Copy, Debug)]
struct Interval<T> {
    a: T,
    b: T,
    value: T,
    err: T,
}

/// Abscissae of the 21-point rule mapped onto `[a, b]`.
pub fn kronrod_nodes<T: Real>(a: T, b: T, out: &mut [T; NODES_PER_INTERVAL]) {
    let center = (a + b) * T::lit(0.5);
    let half = (b - a) * T::lit(0.5);
    for j in 0..10 {
        let dx = half * T::lit(XGK[j]);
        out[2 * j] = center - dx;
        out[2 * j + 1] = center + dx;
    }
    out[20] = center;
}

fn apply_rule<T: Real>(a: T, b: T, fv: &[T; NODES_PER_INTERVAL]) -> (T, T) {
    let half = (b - a) * T::lit(0.5);
    let abs_half = half.abs();
    let fc = fv[20];
    let mut resk = fc * T::lit(WGK[10]);
    let mut resg = T::zero();
    for j in 0..10 {
        let (f1, f2) = (fv[2 * j], fv[2 * j + 1]);
        resk += T::lit(WGK[j]) * (f1 + f2);
        if j % 2 == 1 {
            resg += T::lit(WG[j / 2]) * (f1 + f2);
        }
    }
    let reskh = resk * T::lit(0.5);
    let mut resasc = T::lit(WGK[10]) * (fc - reskh).abs();
    for j in 0..10 {
        resasc += T::lit(WGK[j]) * ((fv[2 * j] - reskh).abs() + (fv[2 * j + 1] - reskh).abs());
    }
    let result = resk * half;
    resasc = resasc * abs_half;
    let mut err = ((resk - resg) * half).abs();
    if resasc != T::zero() && err != T::zero() {
        let ratio = (T::lit(200.0) * err / resasc).powf(T::lit(1.5));
        err = resasc * ratio.min(T::one());
    }
    (result, err)
}

/// Integrates `f` over `[a, b]`. The integrand is called with the 21 nodes of
/// one interval at a time and writes the corresponding values into `out`.
pub fn integrate<T, F>(mut f: F, a: T, b: T, cfg: &QuadConfig) -> Result<QuadResult<T>>
where
    T: Real,
    F: FnMut(&[T], &mut [T]) -> Result<()>,
{
    let mut nodes = [T::zero(); NODES_PER_INTERVAL];
    let mut values = [T::zero(); NODES_PER_INTERVAL];
    let mut eval = |lo: T, hi: T, evaluations: &mut usize| -> Result<Interval<T>> {
        kronrod_nodes(lo, hi, &mut nodes);
        f(&nodes, &mut values)?;
        *evaluations += NODES_PER_INTERVAL;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("non-finite integrand value"));
        }
        let (value, err) = apply_rule(lo, hi, &values);
        Ok(Interval { a: lo, b: hi, value, err })
    };

    let mut evaluations = 0;
    let mut intervals = vec![eval(a, b, &mut evaluations)?];
    let rel = T::lit(cfg.rel_tol);
    let abs = T::lit(cfg.abs_tol);
    loop {
        let total: T = intervals.iter().map(|iv| iv.value).sum();
        let total_err: T = intervals.iter().map(|iv| iv.err).sum();
        if total_err <= abs.max(rel * total.abs()) {
            return Ok(QuadResult {
                value: total,
                abs_err: total_err,
                subdivisions: intervals.len(),
                evaluations,
            });
        }
        if intervals.len() >= cfg.max_subdivisions {
            return Err(Error::NonConvergence {
                subdivisions: intervals.len(),
                estimate: total.to_f64_lossy(),
                error: total_err.to_f64_lossy(),
            });
        }
        let (worst, _) = intervals
            .iter()
            .enumerate()
            .fold((0, T::neg_infinity()), |acc, (i, iv)| if iv.err > acc.1 { (i, iv.err) } else { acc });
        let iv = intervals.swap_remove(worst);
        let mid = (iv.a + iv.b) * T::lit(0.5);
        if !(mid > iv.a && mid < iv.b) {
            // Interval cannot be split further in this precision.
            return Err(Error::NonConvergence {
                subdivisions: intervals.len() + 1,
                estimate: total.to_f64_lossy(),
                error: total_err.to_f64_lossy(),
            });
        }
        intervals.push(eval(iv.a, mid, &mut evaluations)?);
        intervals.push(eval(mid, iv.b, &mut evaluations)?);
    }
}

/// Result of integrating `exp(g)` where only `g` is available.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogQuadResult<T> {
    pub ln_value: T,
    pub rel_err: T,
    pub subdivisions: usize,
    pub evaluations: usize,
}

/// Integrates `exp(ln_f)` over `[a, b]` by rescaling with a running maximum
/// so that integrands of order `exp(-1000)` remain representable.
pub fn integrate_log<T, F>(mut ln_f: F, a: T, b: T, cfg: &QuadConfig) -> Result<LogQuadResult<T>>
where
    T: Real,
    F: FnMut(&[T], &mut [T]) -> Result<()>,
{
    // Probe a coarse grid for the scale before adapting.
    let mut shift = T::neg_infinity();
    let mut probe_nodes = [T::zero(); NODES_PER_INTERVAL];
    let mut probe_vals = [T::zero(); NODES_PER_INTERVAL];
    kronrod_nodes(a, b, &mut probe_nodes);
    ln_f(&probe_nodes, &mut probe_vals)?;
    for &v in &probe_vals {
        if v > shift {
            shift = v;
        }
    }
    if shift == T::neg_infinity() {
        shift = T::zero();
    }
    let headroom = T::lit(if std::mem::size_of::<T>() == 4 { 60.0 } else { 600.0 });
    for _attempt in 0..8 {
        let mut overflow: Option<T> = None;
        let res = integrate(
            |x, out| {
                ln_f(x, out)?;
                for v in out.iter_mut() {
                    let d = *v - shift;
                    if d > headroom {
                        overflow = Some(overflow.map_or(*v, |o: T| o.max(*v)));
                        *v = T::zero();
                    } else {
                        *v = d.exp();
                    }
                }
                Ok(())
            },
            a,
            b,
            cfg,
        );
        if let Some(new_max) = overflow {
            shift = new_max;
            continue;
        }
        let res = res?;
        let ln_value = res.value.ln() + shift;
        let rel_err = if res.value > T::zero() { res.abs_err / res.value } else { T::infinity() };
        return Ok(LogQuadResult {
            ln_value,
            rel_err,
            subdivisions: res.subdivisions,
            evaluations: res.evaluations,
        });
    }
    Err(Error::domain("integrand scale could not be stabilised"))
}

/// Convenience wrapper for scalar closures.
pub fn integrate_scalar<T, F>(mut f: F, a: T, b: T, cfg: &QuadConfig) -> Result<QuadResult<T>>
where
    T: Real,
    F: FnMut(T) -> T,
{
    integrate(
        |x, out| {
            for (o, &xi) in out.iter_mut().zip(x) {
                *o = f(xi);
            }
            Ok(())
        },
        a,
        b,
        cfg,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let r = integrate_scalar(|x: f64| x.powi(5) - 2.0 * x, 0.0, 2.0, &QuadConfig::default()).unwrap();
        assert!((r.value - (64.0 / 6.0 - 4.0)).abs() < 1e-13);
        assert_eq!(r.subdivisions, 1);
    }

    #[test]
    fn peaked_integrand_needs_subdivision() {
        let cfg = QuadConfig { rel_tol: 1e-10, ..QuadConfig::default() };
        let r = integrate_scalar(|x: f64| 1.0 / (1e-4 + (x - 0.3).powi(2)), 0.0, 1.0, &cfg).unwrap();
        let exact = 100.0 * ((0.7f64 / 0.01).atan() + (0.3f64 / 0.01).atan());
        assert!((r.value - exact).abs() / exact < 1e-9);
        assert!(r.subdivisions > 1);
    }

    #[test]
    fn subdivision_cap_reports_non_convergence() {
        let cfg = QuadConfig { rel_tol: 1e-12, abs_tol: 0.0, max_subdivisions: 5 };
        let err = integrate_scalar(|x: f64| (1.0 / x).sin(), 1e-6, 1.0, &cfg).unwrap_err();
        assert!(matches!(err, Error::NonConvergence { subdivisions: 5, .. }));
    }

    #[test]
    fn log_integration_survives_underflow() {
        // exp(-2000) * int_0^1 exp(-x) dx
        let r = integrate_log(
            |x: &[f64], out: &mut [f64]| {
                for (o, &xi) in out.iter_mut().zip(x) {
                    *o = -2000.0 - xi;
                }
                Ok(())
            },
            0.0,
            1.0,
            &QuadConfig::default(),
        )
        .unwrap();
        let exact = -2000.0 + (1.0 - (-1.0f64).exp()).ln();
        assert!((r.ln_value - exact).abs() < 1e-12);
    }
}
