// SPDX-License-Identifier: MIT OR Apache-2.0

#![forbid(unsafe_code)]

//! Closed-form Normal–inverse-Gamma segment marginals, their θ-derivatives,
//! and the truncated-prior correction.

use super::stats::{
    basis_sums_batch, derivative_sums, dot, mat_vec, numerical, Chol, Mat, SegmentMoments, SuffStats, Vector,
};
use super::{check_theta, CoefBox, ConjugatePrior, ModelKind, ModelSpec, SegmentView, MAX_COEF};
use crate::error::Result;
use crate::quadrature::{integrate_scalar, QuadConfig};
use crate::scalar::Real;
use crate::special::{ln_gamma, ln_norm_interval, norm_cdf, norm_quantile, LN_2PI};

/// Conjugate posterior of one segment.
#[derive(Clone, Copy, Debug)]
pub struct NigPosterior<T> {
    pub dim: usize,
    /// Posterior coefficient mean.
    pub mean: Vector<T>,
    /// Posterior precision factor `V0^{-1} + X^T X`.
    pub precision: Mat<T>,
    pub shape: T,
    pub rate: T,
    pub(crate) chol: Chol<T>,
}

impl<T: Real> NigPosterior<T> {
    /// Posterior coefficient scale `V1`, so that `beta | s2 ~ N(mean, s2 V1)`.
    pub fn scale(&self) -> Mat<T> {
        self.chol.inverse()
    }
}

fn posterior_from_stats<T: Real>(
    stats: &SuffStats<T>,
    prior: &ConjugatePrior<T>,
) -> Option<(NigPosterior<T>, Vector<T>)> {
    let dim = prior.dim();
    let mut a = prior.scale_inv;
    let mut b = prior.scale_inv_mean;
    for i in 0..dim {
        b[i] += stats.xty[i];
        for j in 0..dim {
            a[i][j] += stats.xtx[i][j];
        }
    }
    let chol = Chol::new(dim, &a)?;
    let mean = chol.solve(&b);
    let half = T::lit(0.5);
    let resid = (stats.yty + prior.mean_quad - dot(dim, &b, &mean)).max(T::zero());
    let post = NigPosterior {
        dim,
        mean,
        precision: a,
        shape: prior.shape() + T::from_usize_lossy(stats.n) * half,
        rate: prior.rate() + half * resid,
        chol,
    };
    Some((post, b))
}

fn log_marginal_given_posterior<T: Real>(
    n: usize,
    post: &NigPosterior<T>,
    prior: &ConjugatePrior<T>,
    ln_gamma_shape: T,
) -> T {
    let half = T::lit(0.5);
    -T::from_usize_lossy(n) * half * T::lit(LN_2PI) - half * post.chol.ln_det() + prior.ln_norm_const
        - post.shape * post.rate.ln()
        + ln_gamma_shape
}

fn stats_for<T: Real>(seg: &SegmentView<'_, T>, model: &ModelSpec<T>, theta: Option<T>) -> Result<SuffStats<T>> {
    SuffStats::compute(model.kind, theta, seg.values)
}

fn theta_f64<T: Real>(theta: Option<T>) -> Option<f64> {
    theta.map(|t| t.to_f64_lossy())
}

/// Conjugate posterior of `seg` under `model` at `theta`.
pub fn posterior<T: Real>(seg: &SegmentView<'_, T>, model: &ModelSpec<T>, theta: Option<T>) -> Result<NigPosterior<T>> {
    let stats = stats_for(seg, model, theta)?;
    posterior_from_stats(&stats, &model.coef_prior)
        .map(|(p, _)| p)
        .ok_or_else(|| numerical(seg.start, seg.len(), theta_f64(theta), "posterior scale is not positive definite"))
}

/// Untruncated log marginal likelihood of `seg` under `model` at `theta`.
pub fn log_marginal_likelihood<T: Real>(seg: &SegmentView<'_, T>, model: &ModelSpec<T>, theta: Option<T>) -> Result<T> {
    let stats = stats_for(seg, model, theta)?;
    let prior = &model.coef_prior;
    let (post, _) = posterior_from_stats(&stats, prior)
        .ok_or_else(|| numerical(seg.start, seg.len(), theta_f64(theta), "posterior scale is not positive definite"))?;
    let value = log_marginal_given_posterior(stats.n, &post, prior, ln_gamma(post.shape));
    if value.is_finite() {
        Ok(value)
    } else {
        Err(numerical(seg.start, seg.len(), theta_f64(theta), format!("non-finite marginal {value}")))
    }
}

/// Truncated-prior marginal with its diagnostic flag.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruncatedMarginal<T> {
    pub value: T,
    pub correction: T,
    /// Set when either region probability underflowed; `value` is then `-inf`.
    pub underflow: bool,
}

/// Residual variance of an unregularised least-squares fit, floored at `1e-8`.
/// Falls back to the prior mode `rate / (shape + 1)` when the fit is not
/// overdetermined.
pub fn ols_residual_variance<T: Real>(stats: &SuffStats<T>, prior: &ConjugatePrior<T>) -> T {
    let dim = stats.dim;
    let fallback = prior.rate() / (prior.shape() + T::one());
    if stats.n <= dim {
        return fallback;
    }
    let Some(chol) = Chol::new(dim, &stats.xtx) else {
        return fallback;
    };
    let beta = chol.solve(&stats.xty);
    let rss = stats.yty - dot(dim, &stats.xty, &beta);
    (rss / T::from_usize_lossy(stats.n - dim)).max(T::lit(1e-8))
}

/// `ln P(beta in region)` for `beta ~ N(mean, cov)` in one or two dimensions.
pub(crate) fn ln_box_probability(dim: usize, mean: &[f64; 2], cov: &[[f64; 2]; 2], region: &CoefBox<f64>) -> f64 {
    let s1 = cov[0][0].sqrt();
    let mut a1 = (region.lower[0] - mean[0]) / s1;
    let mut b1 = (region.upper[0] - mean[0]) / s1;
    if dim == 1 {
        return ln_norm_interval(a1, b1);
    }
    let s2 = cov[1][1].sqrt();
    let a2 = (region.lower[1] - mean[1]) / s2;
    let b2 = (region.upper[1] - mean[1]) / s2;
    // A side left unbounded integrates out exactly to its partner's marginal.
    if a2 == f64::NEG_INFINITY && b2 == f64::INFINITY {
        return ln_norm_interval(a1, b1);
    }
    if a1 == f64::NEG_INFINITY && b1 == f64::INFINITY {
        return ln_norm_interval(a2, b2);
    }
    let mut rho = (cov[0][1] / (s1 * s2)).clamp(-1.0, 1.0);
    if a1 > 0.0 {
        // Mirror into the lower tail where the CDF keeps relative precision.
        (a1, b1) = (-b1, -a1);
        rho = -rho;
    }
    let ln_p1 = ln_norm_interval(a1, b1);
    if ln_p1 == f64::NEG_INFINITY {
        return ln_p1;
    }
    let cond_sd = (1.0 - rho * rho).max(0.0).sqrt();
    let conditional = |z: f64| -> f64 {
        if cond_sd < 1e-7 {
            let v = rho * z;
            return if v >= a2 && v <= b2 { 1.0 } else { 0.0 };
        }
        let ln_p = ln_norm_interval((a2 - rho * z) / cond_sd, (b2 - rho * z) / cond_sd);
        ln_p.exp()
    };
    let pa = norm_cdf(a1);
    let pb = norm_cdf(b1);
    if !(pb > pa) {
        // Interval mass below CDF resolution: it concentrates at the upper bound.
        let p2 = conditional(b1);
        return if p2 > 0.0 { ln_p1 + p2.ln() } else { f64::NEG_INFINITY };
    }
    let cfg = QuadConfig { rel_tol: 1e-10, abs_tol: 1e-300, max_subdivisions: 200 };
    let avg = match integrate_scalar(|u: f64| conditional(norm_quantile(pa + u * (pb - pa))), 0.0, 1.0, &cfg) {
        Ok(r) => r.value,
        Err(crate::error::Error::NonConvergence { estimate, .. }) => estimate,
        Err(_) => f64::NAN,
    };
    if avg > 0.0 {
        ln_p1 + avg.ln()
    } else {
        f64::NEG_INFINITY
    }
}

fn to_f64_mat<T: Real>(m: &Mat<T>, scale: T) -> [[f64; 2]; 2] {
    let mut out = [[0.0; 2]; 2];
    for i in 0..MAX_COEF {
        for j in 0..MAX_COEF {
            out[i][j] = (m[i][j] * scale).to_f64_lossy();
        }
    }
    out
}

fn truncation_correction<T: Real>(
    post: &NigPosterior<T>,
    prior: &ConjugatePrior<T>,
    region: &CoefBox<T>,
    sigma2_hat: T,
) -> (T, bool) {
    let dim = prior.dim();
    let reg = CoefBox {
        lower: [region.lower[0].to_f64_lossy(), region.lower[1].to_f64_lossy()],
        upper: [region.upper[0].to_f64_lossy(), region.upper[1].to_f64_lossy()],
    };
    let post_mean = [post.mean[0].to_f64_lossy(), post.mean[1].to_f64_lossy()];
    let post_cov = to_f64_mat(&post.scale(), sigma2_hat);
    let mut prior_mean = [0.0; 2];
    for (j, &m) in prior.mean().iter().enumerate() {
        prior_mean[j] = m.to_f64_lossy();
    }
    let prior_cov = to_f64_mat(&prior.scale(), sigma2_hat);
    let ln_post = ln_box_probability(dim, &post_mean, &post_cov, &reg);
    let ln_prior = ln_box_probability(dim, &prior_mean, &prior_cov, &reg);
    if !ln_post.is_finite() || !ln_prior.is_finite() {
        return (T::neg_infinity(), true);
    }
    (T::lit(ln_post - ln_prior), false)
}

/// Log marginal with the coefficient prior truncated to the prior's region,
/// using a plug-in residual variance `sigma2_hat` for the region probabilities.
pub fn log_marginal_truncated<T: Real>(
    seg: &SegmentView<'_, T>,
    model: &ModelSpec<T>,
    theta: Option<T>,
    sigma2_hat: T,
) -> Result<TruncatedMarginal<T>> {
    if !(sigma2_hat > T::zero()) {
        return Err(crate::error::Error::domain(format!("plug-in variance must be positive, got {sigma2_hat}")));
    }
    let base = log_marginal_likelihood(seg, model, theta)?;
    let prior = &model.coef_prior;
    let region = match prior.region() {
        Some(r) if !r.is_unbounded(prior.dim()) => r,
        _ => return Ok(TruncatedMarginal { value: base, correction: T::zero(), underflow: false }),
    };
    let post = posterior(seg, model, theta)?;
    let (correction, underflow) = truncation_correction(&post, prior, region, sigma2_hat);
    let value = if underflow { T::neg_infinity() } else { base + correction };
    Ok(TruncatedMarginal { value, correction, underflow })
}

/// Segment log marginal as used by the detector: truncated when the prior
/// carries a region (with the least-squares plug-in variance), plain otherwise.
pub fn segment_log_marginal<T: Real>(seg: &SegmentView<'_, T>, model: &ModelSpec<T>, theta: Option<T>) -> Result<T> {
    match model.coef_prior.region() {
        Some(r) if !r.is_unbounded(model.coef_prior.dim()) => {
            let stats = stats_for(seg, model, theta)?;
            let s2 = ols_residual_variance(&stats, &model.coef_prior);
            Ok(log_marginal_truncated(seg, model, theta, s2)?.value)
        }
        _ => log_marginal_likelihood(seg, model, theta),
    }
}

/// Segment log marginal of a model without a difficult parameter from
/// running moments, truncated when the prior carries a region.
pub fn log_marginal_conjugate<T: Real>(
    seg: &SegmentView<'_, T>,
    moments: &SegmentMoments<T>,
    model: &ModelSpec<T>,
) -> Result<T> {
    debug_assert!(!model.has_theta());
    let prior = &model.coef_prior;
    let stats = SuffStats::from_moments(model.kind, moments);
    let (post, _) = posterior_from_stats(&stats, prior)
        .ok_or_else(|| numerical(seg.start, seg.len(), None, "posterior scale is not positive definite"))?;
    let v = log_marginal_given_posterior(stats.n, &post, prior, ln_gamma(post.shape));
    match prior.region().filter(|r| !r.is_unbounded(prior.dim())) {
        Some(r) => {
            let s2 = ols_residual_variance(&stats, prior);
            let (c, underflow) = truncation_correction(&post, prior, r, s2);
            Ok(if underflow { T::neg_infinity() } else { v + c })
        }
        None if v.is_finite() => Ok(v),
        None => Err(numerical(seg.start, seg.len(), None, format!("non-finite marginal {v}"))),
    }
}

/// Segment log marginals for many θ values on the same segment.
///
/// `moments` must describe `seg`. Entries for θ outside the prior support are
/// set to `-inf`.
pub fn log_marginal_batch<T: Real>(
    seg: &SegmentView<'_, T>,
    moments: &SegmentMoments<T>,
    model: &ModelSpec<T>,
    thetas: &[T],
    out: &mut [T],
) -> Result<()> {
    debug_assert_eq!(moments.n, seg.len());
    debug_assert_eq!(thetas.len(), out.len());
    let prior = &model.coef_prior;
    let support = model.theta_prior.as_ref().map(|p| p.support());
    let mut sums = vec![[T::zero(); 3]; thetas.len()];
    let safe: Vec<T> = thetas
        .iter()
        .map(|&th| if in_support(th, support) { th } else { T::one() })
        .collect();
    basis_sums_batch(model.kind, seg.values, &safe, &mut sums);
    let shape = prior.shape() + T::from_usize_lossy(moments.n) * T::lit(0.5);
    let lg = ln_gamma(shape);
    let region = prior.region().filter(|r| !r.is_unbounded(prior.dim()));
    for ((o, &th), s) in out.iter_mut().zip(thetas).zip(&sums) {
        if !in_support(th, support) {
            *o = T::neg_infinity();
            continue;
        }
        let stats = SuffStats::from_basis_sums(moments, *s);
        let (post, _) = posterior_from_stats(&stats, prior).ok_or_else(|| {
            numerical(seg.start, seg.len(), Some(th.to_f64_lossy()), "posterior scale is not positive definite")
        })?;
        let mut v = log_marginal_given_posterior(stats.n, &post, prior, lg);
        if let Some(r) = region {
            let s2 = ols_residual_variance(&stats, prior);
            let (c, underflow) = truncation_correction(&post, prior, r, s2);
            v = if underflow { T::neg_infinity() } else { v + c };
        }
        if v.is_nan() {
            return Err(numerical(seg.start, seg.len(), Some(th.to_f64_lossy()), "marginal evaluated to NaN"));
        }
        *o = v;
    }
    Ok(())
}

fn in_support<T: Real>(th: T, support: Option<(T, T)>) -> bool {
    match support {
        Some((lo, hi)) => th.is_finite() && th >= lo && th <= hi,
        None => th.is_finite(),
    }
}

/// Log predictive density of the newest observation of `seg` given the rest.
pub fn predictive_log_density<T: Real>(seg: &SegmentView<'_, T>, model: &ModelSpec<T>, theta: Option<T>) -> Result<T> {
    let full = log_marginal_likelihood(seg, model, theta)?;
    if seg.len() <= 1 {
        return Ok(full);
    }
    Ok(full - log_marginal_likelihood(&seg.without_last(), model, theta)?)
}

/// Full-segment log marginal and its first two θ-derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogMarginalGrad<T> {
    pub value: T,
    pub d1: T,
    pub d2: T,
    /// Gauss–Newton information for θ with the coefficients profiled out;
    /// nonnegative.
    pub information: T,
}

/// Analytic θ-derivatives of the untruncated segment log marginal.
pub fn grad_log_marginal<T: Real>(seg: &SegmentView<'_, T>, model: &ModelSpec<T>, theta: T) -> Result<LogMarginalGrad<T>> {
    check_theta(model.kind, Some(theta))?;
    let kind = model.kind;
    debug_assert!(matches!(kind, ModelKind::ExpDecay | ModelKind::Periodic));
    let prior = &model.coef_prior;
    let err = |detail: &str| numerical(seg.start, seg.len(), Some(theta.to_f64_lossy()), detail);
    if seg.is_empty() {
        return Ok(LogMarginalGrad { value: T::zero(), d1: T::zero(), d2: T::zero(), information: T::zero() });
    }
    let s = derivative_sums(kind, theta, seg.values);
    let moments = SegmentMoments::from_values(seg.values);
    let stats = SuffStats::from_basis_sums(&moments, [s.x, s.xx, s.xy]);
    let (post, _) = posterior_from_stats(&stats, prior).ok_or_else(|| err("posterior scale is not positive definite"))?;
    let value = log_marginal_given_posterior(stats.n, &post, prior, ln_gamma(post.shape));

    let two = T::lit(2.0);
    let half = T::lit(0.5);
    let zero = T::zero();
    let da: Mat<T> = [[zero, s.dx], [s.dx, two * s.x_dx]];
    let d2a: Mat<T> = [[zero, s.d2x], [s.d2x, two * (s.dx_dx + s.x_d2x)]];
    let db: Vector<T> = [zero, s.y_dx];
    let d2b: Vector<T> = [zero, s.y_d2x];
    let mu = post.mean;

    let da_mu = mat_vec(2, &da, &mu);
    let d2a_mu = mat_vec(2, &d2a, &mu);
    let dq = two * dot(2, &db, &mu) - dot(2, &mu, &da_mu);
    let resid: Vector<T> = [db[0] - da_mu[0], db[1] - da_mu[1]];
    let dmu = post.chol.solve(&resid);
    let d2q = two * dot(2, &d2b, &mu) - dot(2, &mu, &d2a_mu) + two * dot(2, &resid, &dmu);

    let inv = post.scale();
    let tr = |m: &Mat<T>, n: &Mat<T>| -> T { m[0][0] * n[0][0] + m[0][1] * n[1][0] + m[1][0] * n[0][1] + m[1][1] * n[1][1] };
    let inv_da = mul(&inv, &da);
    let tr1 = tr(&inv, &da);
    let tr2 = tr(&inv, &d2a) - tr(&inv_da, &inv_da);

    let dv = -half * dq;
    let d2v = -half * d2q;
    let v1 = post.rate;
    let u1 = post.shape;
    let d1 = -half * tr1 - u1 * dv / v1;
    let d2 = -half * tr2 - u1 * (d2v / v1 - (dv / v1) * (dv / v1));
    if !(value.is_finite() && d1.is_finite() && d2.is_finite()) {
        return Err(err("non-finite marginal derivative"));
    }
    let cross: Vector<T> = [s.dx, s.x_dx];
    let cross_inv = mat_vec(2, &inv, &cross);
    let leverage = (s.dx_dx - dot(2, &cross, &cross_inv)).max(zero);
    let information = mu[1] * mu[1] * leverage * u1 / v1;
    Ok(LogMarginalGrad { value, d1, d2, information })
}

fn mul<T: Real>(a: &Mat<T>, b: &Mat<T>) -> Mat<T> {
    let mut out = [[T::zero(); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}
