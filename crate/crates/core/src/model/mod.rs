// SPDX-License-Identifier: MIT OR Apache-2.0

#![forbid(unsafe_code)]

//! Segment model classes and their conjugate Normal–inverse-Gamma marginals.
//!
//! Every class is a linear regression on at most two basis functions of the
//! segment-relative time `k = t - tau >= 1`:
//!
//! | class          | basis row                    | difficult parameter |
//! |----------------|------------------------------|---------------------|
//! | `Mean`         | `(1)`                        | none                |
//! | `LinearTrend`  | `(1, k)`                     | none                |
//! | `ExpDecay`     | `(1, exp(-exp(theta) k))`    | log decay rate      |
//! | `Periodic`     | `(1, sin(k / theta))`        | cycle length, `> 0` |
//!
//! Coefficients carry a Normal prior scaled by the residual variance and the
//! residual variance an inverse-Gamma prior, so the segment marginal given
//! `theta` is available in closed form.

mod marginal;
mod stats;

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::special::norm_quantile;

pub use marginal::{
    grad_log_marginal, log_marginal_batch, log_marginal_conjugate, log_marginal_likelihood, log_marginal_truncated,
    ols_residual_variance, posterior, predictive_log_density, segment_log_marginal, LogMarginalGrad,
    NigPosterior, TruncatedMarginal,
};
pub use stats::{basis_sums, basis_sums_batch, SegmentMoments, SuffStats};

/// Maximum number of regression coefficients of any model class.
pub const MAX_COEF: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Mean,
    LinearTrend,
    ExpDecay,
    Periodic,
}

impl ModelKind {
    pub fn n_coef(self) -> usize {
        match self {
            Self::Mean => 1,
            _ => 2,
        }
    }

    pub fn has_theta(self) -> bool {
        matches!(self, Self::ExpDecay | Self::Periodic)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Mean => "mean",
            Self::LinearTrend => "linear_trend",
            Self::ExpDecay => "exp_decay",
            Self::Periodic => "periodic",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Regression basis evaluated at one time point. Entries past `dim` are zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BasisRow<T> {
    pub dim: usize,
    pub values: [T; MAX_COEF],
}

impl<T: Real> BasisRow<T> {
    pub fn as_slice(&self) -> &[T] {
        &self.values[..self.dim]
    }

    pub fn dot(&self, coef: &[T; MAX_COEF]) -> T {
        (0..self.dim).map(|j| self.values[j] * coef[j]).sum()
    }
}

fn check_theta<T: Real>(kind: ModelKind, theta: Option<T>) -> Result<Option<T>> {
    match (kind.has_theta(), theta) {
        (true, None) => Err(Error::config(format!("model {kind} requires theta"))),
        (false, Some(_)) => Err(Error::config(format!("model {kind} takes no theta"))),
        (true, Some(th)) if !th.is_finite() => Err(Error::domain(format!("theta must be finite, got {th}"))),
        (true, Some(th)) if kind == ModelKind::Periodic && th <= T::zero() => {
            Err(Error::domain(format!("periodic cycle parameter must be positive, got {th}")))
        }
        _ => Ok(theta),
    }
}

/// Basis row of `kind` at segment-relative time `t_rel >= 1`.
pub fn design_row<T: Real>(kind: ModelKind, t_rel: usize, theta: Option<T>) -> Result<BasisRow<T>> {
    let theta = check_theta(kind, theta)?;
    if t_rel == 0 {
        return Err(Error::domain("segment-relative time starts at 1"));
    }
    let k = T::from_usize_lossy(t_rel);
    let second = match kind {
        ModelKind::Mean => {
            return Ok(BasisRow { dim: 1, values: [T::one(), T::zero()] });
        }
        ModelKind::LinearTrend => k,
        ModelKind::ExpDecay => (-(theta.unwrap().exp()) * k).exp(),
        ModelKind::Periodic => (k / theta.unwrap()).sin(),
    };
    Ok(BasisRow { dim: 2, values: [T::one(), second] })
}

/// Axis-aligned coefficient region used to truncate the Normal prior.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefBox<T> {
    pub lower: [T; MAX_COEF],
    pub upper: [T; MAX_COEF],
}

impl<T: Real> CoefBox<T> {
    pub fn unbounded() -> Self {
        Self {
            lower: [T::neg_infinity(); MAX_COEF],
            upper: [T::infinity(); MAX_COEF],
        }
    }

    pub fn is_unbounded(&self, dim: usize) -> bool {
        (0..dim).all(|j| self.lower[j] == T::neg_infinity() && self.upper[j] == T::infinity())
    }
}

/// Normal–inverse-Gamma prior: `beta | s2 ~ N(mean, s2 * scale)`, `s2 ~ IG(shape, rate)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConjugatePrior<T> {
    dim: usize,
    mean: [T; MAX_COEF],
    scale: [[T; MAX_COEF]; MAX_COEF],
    shape: T,
    rate: T,
    region: Option<CoefBox<T>>,
    // Cached derived quantities.
    pub(crate) scale_inv: [[T; MAX_COEF]; MAX_COEF],
    pub(crate) scale_inv_mean: [T; MAX_COEF],
    pub(crate) mean_quad: T,
    pub(crate) ln_det_scale: T,
    pub(crate) ln_norm_const: T,
}

impl<T: Real> ConjugatePrior<T> {
    /// Builds a prior of dimension `mean.len()` (1 or 2). `scale` is row-major.
    pub fn new(mean: &[T], scale: &[T], shape: T, rate: T) -> Result<Self> {
        let dim = mean.len();
        if dim == 0 || dim > MAX_COEF {
            return Err(Error::config(format!("prior dimension must be 1 or 2, got {dim}")));
        }
        if scale.len() != dim * dim {
            return Err(Error::config(format!(
                "prior scale must have {} entries, got {}",
                dim * dim,
                scale.len()
            )));
        }
        if !(shape > T::zero() && shape.is_finite()) || !(rate > T::zero() && rate.is_finite()) {
            return Err(Error::config(format!(
                "inverse-gamma shape and rate must be positive, got ({shape}, {rate})"
            )));
        }
        if mean.iter().chain(scale).any(|v| !v.is_finite()) {
            return Err(Error::config("prior mean and scale must be finite"));
        }
        let mut m = [T::zero(); MAX_COEF];
        let mut s = [[T::zero(); MAX_COEF]; MAX_COEF];
        m[..dim].copy_from_slice(mean);
        for i in 0..dim {
            for j in 0..dim {
                s[i][j] = scale[i * dim + j];
            }
        }
        if dim == 2 && (s[0][1] - s[1][0]).abs() > T::lit(1e-12) * (s[0][1].abs() + s[1][0].abs() + T::one()) {
            return Err(Error::config("prior scale matrix must be symmetric"));
        }
        let chol = stats::Chol::new(dim, &s)
            .ok_or_else(|| Error::config("prior scale matrix must be positive definite"))?;
        let scale_inv = chol.inverse();
        let scale_inv_mean = stats::mat_vec(dim, &scale_inv, &m);
        let mean_quad = (0..dim).map(|j| m[j] * scale_inv_mean[j]).sum();
        let ln_det_scale = chol.ln_det();
        let ln_norm_const = shape * rate.ln() - crate::special::ln_gamma(shape) - T::lit(0.5) * ln_det_scale;
        Ok(Self {
            dim,
            mean: m,
            scale: s,
            shape,
            rate,
            region: None,
            scale_inv,
            scale_inv_mean,
            mean_quad,
            ln_det_scale,
            ln_norm_const,
        })
    }

    /// Isotropic prior `N(0, s2 * variance * I)`.
    pub fn isotropic(dim: usize, variance: T, shape: T, rate: T) -> Result<Self> {
        let mean = vec![T::zero(); dim];
        let mut scale = vec![T::zero(); dim * dim];
        for j in 0..dim {
            scale[j * dim + j] = variance;
        }
        Self::new(&mean, &scale, shape, rate)
    }

    /// Restricts the coefficient prior to `region`.
    pub fn with_region(mut self, region: CoefBox<T>) -> Result<Self> {
        for j in 0..self.dim {
            if !(region.upper[j] > region.lower[j]) {
                return Err(Error::config(format!(
                    "coefficient region has empty interior in dimension {j}: [{}, {}]",
                    region.lower[j], region.upper[j]
                )));
            }
        }
        self.region = Some(region);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mean(&self) -> &[T] {
        &self.mean[..self.dim]
    }

    pub fn scale(&self) -> [[T; MAX_COEF]; MAX_COEF] {
        self.scale
    }

    pub fn shape(&self) -> T {
        self.shape
    }

    pub fn rate(&self) -> T {
        self.rate
    }

    pub fn region(&self) -> Option<&CoefBox<T>> {
        self.region.as_ref()
    }
}

/// Prior over the difficult parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ThetaPrior<T> {
    Normal { mean: T, sd: T },
    LogNormal { log_mean: T, log_sd: T },
    Uniform { lower: T, upper: T },
}

impl<T: Real> ThetaPrior<T> {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Normal { mean, sd } => mean.is_finite() && sd > T::zero() && sd.is_finite(),
            Self::LogNormal { log_mean, log_sd } => log_mean.is_finite() && log_sd > T::zero() && log_sd.is_finite(),
            Self::Uniform { lower, upper } => lower.is_finite() && upper.is_finite() && upper > lower,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid theta prior {self:?}")))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        match *self {
            Self::Normal { mean, sd } => mean + sd * T::sample_standard_normal(rng),
            Self::LogNormal { log_mean, log_sd } => (log_mean + log_sd * T::sample_standard_normal(rng)).exp(),
            Self::Uniform { lower, upper } => lower + (upper - lower) * T::sample_open01(rng),
        }
    }

    pub fn ln_pdf(&self, theta: T) -> T {
        let half_ln_2pi = T::lit(0.5 * crate::special::LN_2PI);
        match *self {
            Self::Normal { mean, sd } => {
                let z = (theta - mean) / sd;
                -T::lit(0.5) * z * z - sd.ln() - half_ln_2pi
            }
            Self::LogNormal { log_mean, log_sd } => {
                if theta <= T::zero() {
                    return T::neg_infinity();
                }
                let lt = theta.ln();
                let z = (lt - log_mean) / log_sd;
                -T::lit(0.5) * z * z - log_sd.ln() - half_ln_2pi - lt
            }
            Self::Uniform { lower, upper } => {
                if theta >= lower && theta <= upper {
                    -(upper - lower).ln()
                } else {
                    T::neg_infinity()
                }
            }
        }
    }

    /// Inverse CDF at `u` in (0, 1).
    pub fn quantile(&self, u: T) -> T {
        match *self {
            Self::Normal { mean, sd } => mean + sd * T::lit(norm_quantile(u.to_f64_lossy())),
            Self::LogNormal { log_mean, log_sd } => {
                (log_mean + log_sd * T::lit(norm_quantile(u.to_f64_lossy()))).exp()
            }
            Self::Uniform { lower, upper } => lower + (upper - lower) * u,
        }
    }

    /// Closed support interval used for projection.
    pub fn support(&self) -> (T, T) {
        match *self {
            Self::Normal { .. } => (T::neg_infinity(), T::infinity()),
            Self::LogNormal { .. } => (T::min_positive_value().sqrt(), T::infinity()),
            Self::Uniform { lower, upper } => (lower, upper),
        }
    }

    pub fn contains(&self, theta: T) -> bool {
        let (lo, hi) = self.support();
        theta.is_finite() && theta >= lo && theta <= hi
    }
}

/// A candidate segment model class with its priors.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec<T> {
    pub kind: ModelKind,
    pub prior_model_prob: T,
    pub coef_prior: ConjugatePrior<T>,
    pub theta_prior: Option<ThetaPrior<T>>,
}

impl<T: Real> ModelSpec<T> {
    pub fn new(
        kind: ModelKind,
        prior_model_prob: T,
        coef_prior: ConjugatePrior<T>,
        theta_prior: Option<ThetaPrior<T>>,
    ) -> Result<Self> {
        if !(prior_model_prob > T::zero() && prior_model_prob <= T::one()) {
            return Err(Error::config(format!(
                "prior model probability must lie in (0, 1], got {prior_model_prob}"
            )));
        }
        if coef_prior.dim() != kind.n_coef() {
            return Err(Error::config(format!(
                "model {kind} has {} coefficients but prior has dimension {}",
                kind.n_coef(),
                coef_prior.dim()
            )));
        }
        match (kind.has_theta(), &theta_prior) {
            (true, None) => return Err(Error::config(format!("model {kind} requires a theta prior"))),
            (false, Some(_)) => return Err(Error::config(format!("model {kind} takes no theta prior"))),
            (true, Some(p)) => {
                p.validate()?;
                if kind == ModelKind::Periodic && p.support().0 <= T::zero() {
                    return Err(Error::config("periodic theta prior must be supported on (0, inf)"));
                }
            }
            _ => {}
        }
        Ok(Self { kind, prior_model_prob, coef_prior, theta_prior })
    }

    pub fn has_theta(&self) -> bool {
        self.kind.has_theta()
    }

    pub fn ln_prior_prob(&self) -> T {
        self.prior_model_prob.ln()
    }
}

/// Checks that a model set is nonempty and its prior probabilities sum to one.
pub fn validate_model_set<T: Real>(models: &[ModelSpec<T>]) -> Result<()> {
    if models.is_empty() {
        return Err(Error::config("candidate model set is empty"));
    }
    let total: T = models.iter().map(|m| m.prior_model_prob).sum();
    if (total - T::one()).abs() > T::lit(1e-6) {
        return Err(Error::config(format!("prior model probabilities sum to {total}, expected 1")));
    }
    Ok(())
}

/// Observations `y_{s+1..=s+len}` of one hypothesised segment.
#[derive(Clone, Copy, Debug)]
pub struct SegmentView<'a, T> {
    pub values: &'a [T],
    pub start: usize,
}

impl<'a, T: Real> SegmentView<'a, T> {
    pub fn new(values: &'a [T], start: usize) -> Self {
        Self { values, start }
    }

    /// Segment `y_{start+1..=end}` of a full 0-indexed series.
    pub fn of_series(series: &'a [T], start: usize, end: usize) -> Self {
        Self { values: &series[start..end], start }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// The same segment without its newest observation.
    pub fn without_last(&self) -> Self {
        let n = self.values.len().saturating_sub(1);
        Self { values: &self.values[..n], start: self.start }
    }
}

/// Application-level reading of a decay parameter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Drydown<T> {
    /// Per-step multiplicative decay `exp(-exp(theta))`.
    pub decay_rate: T,
    /// e-folding time in samples, `exp(-theta)`.
    pub efold_samples: T,
    pub efold_days: T,
}

pub fn drydown_transforms<T: Real>(theta: T, sampling_interval_hours: T) -> Drydown<T> {
    let efold_samples = (-theta).exp();
    Drydown {
        decay_rate: (-(theta.exp())).exp(),
        efold_samples,
        efold_days: efold_samples * sampling_interval_hours / T::lit(24.0),
    }
}
