// SPDX-License-Identifier: MIT OR Apache-2.0

#![forbid(unsafe_code)]

//! Liu–West particle approximation of the posterior over a segment's difficult
//! parameter, and the particle estimate of the segment marginal.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{log_marginal_batch, ModelSpec, SegmentMoments, SegmentView, ThetaPrior};
use crate::scalar::Real;
use crate::special::log_sum_exp;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleScheme {
    #[default]
    Multinomial,
    Systematic,
}

/// Incremental importance weight of a propagated particle.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LwWeighting {
    /// Segment marginal at the particle over that at its kernel mean.
    #[default]
    SegmentRatio,
    /// One-step predictive `L(seg | theta) / L(prefix | theta)` at the
    /// particle; the marginal is the running product of its weighted means.
    Incremental,
}

/// Particle estimate of the segment marginal.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceEstimate {
    /// Average segment marginal over the current particles.
    #[default]
    SegmentAverage,
    /// Product over steps of the particle-averaged one-step predictive,
    /// started from the prior-particle average at creation.
    Sequential,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PfConfig {
    pub n_particles: usize,
    /// Kernel shrinkage `a` in `(0, 1]`.
    pub shrinkage: f64,
    pub resample: ResampleScheme,
    pub evidence: EvidenceEstimate,
    pub weighting: LwWeighting,
}

impl Default for PfConfig {
    fn default() -> Self {
        Self {
            n_particles: 1000,
            shrinkage: 0.98,
            resample: ResampleScheme::Multinomial,
            evidence: EvidenceEstimate::SegmentAverage,
            weighting: LwWeighting::SegmentRatio,
        }
    }
}

impl PfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_particles == 0 {
            return Err(Error::config("particle count must be at least 1"));
        }
        if !(self.shrinkage > 0.0 && self.shrinkage <= 1.0) {
            return Err(Error::config(format!("shrinkage must lie in (0, 1], got {}", self.shrinkage)));
        }
        Ok(())
    }
}

/// Location and quartiles of a θ approximation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaSummary {
    pub mean: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
}

impl ThetaSummary {
    pub fn point(theta: f64) -> Self {
        Self { mean: theta, q25: theta, median: theta, q75: theta }
    }
}

/// Weighted particle cloud over θ for one candidate and model.
#[derive(Clone, Debug)]
pub struct ParticleSet<T> {
    theta: Vec<T>,
    weights: Vec<T>,
    prop_means: Vec<T>,
    log_lik: Vec<T>,
    shrinkage: T,
    /// Running sequential estimate, set once stepping starts.
    evidence: Option<T>,
}

impl<T: Real> ParticleSet<T> {
    /// Equally weighted set from explicit particle values.
    pub fn from_particles(theta: Vec<T>, shrinkage: T) -> Self {
        let n = theta.len();
        let w = T::one() / T::from_usize_lossy(n);
        Self {
            prop_means: theta.clone(),
            theta,
            weights: vec![w; n],
            log_lik: vec![T::zero(); n],
            shrinkage,
            evidence: None,
        }
    }

    /// `n` independent draws from `prior`.
    pub fn from_prior<R: Rng + ?Sized>(prior: &ThetaPrior<T>, n: usize, shrinkage: T, rng: &mut R) -> Self {
        let theta = (0..n).map(|_| prior.sample(rng)).collect();
        Self::from_particles(theta, shrinkage)
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn particles(&self) -> &[T] {
        &self.theta
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    /// Cached per-particle segment log marginals.
    pub fn log_likelihoods(&self) -> &[T] {
        &self.log_lik
    }

    pub fn propagation_means(&self) -> &[T] {
        &self.prop_means
    }

    pub fn shrinkage(&self) -> T {
        self.shrinkage
    }

    /// Kernel noise scale `h = sqrt(1 - a^2)`.
    pub fn kernel_scale(&self) -> T {
        (T::one() - self.shrinkage * self.shrinkage).max(T::zero()).sqrt()
    }

    pub fn weighted_mean(&self) -> T {
        self.theta.iter().zip(&self.weights).map(|(&t, &w)| t * w).sum()
    }

    pub fn weighted_variance(&self) -> T {
        let m = self.weighted_mean();
        self.theta.iter().zip(&self.weights).map(|(&t, &w)| w * (t - m) * (t - m)).sum()
    }

    /// Shrinks each particle towards the weighted mean and perturbs it with
    /// kernel noise of variance `h^2 V`, recording the kernel means.
    pub fn propagate<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let mean = self.weighted_mean();
        let var = self.weighted_variance();
        let a = self.shrinkage;
        let sd = self.kernel_scale() * var.max(T::zero()).sqrt();
        let noisy = sd > T::zero();
        for (th, mu) in self.theta.iter_mut().zip(self.prop_means.iter_mut()) {
            *mu = a * *th + (T::one() - a) * mean;
            *th = if noisy { *mu + sd * T::sample_standard_normal(rng) } else { *mu };
        }
    }

    /// Fills the cached log marginals at the current particles without
    /// touching the weights.
    /// Restarts the sequential estimate.
    pub fn evaluate(&mut self, seg: &SegmentView<'_, T>, moments: &SegmentMoments<T>, model: &ModelSpec<T>) -> Result<()> {
        self.evidence = None;
        log_marginal_batch(seg, moments, model, &self.theta, &mut self.log_lik)
    }

    /// Reweights by the ratio of segment marginals at the propagated particles
    /// and at their kernel means.
    pub fn reweight(
        &mut self,
        seg: &SegmentView<'_, T>,
        moments: &SegmentMoments<T>,
        model: &ModelSpec<T>,
        candidate: usize,
    ) -> Result<()> {
        let n = self.len();
        let mut at_means = vec![T::zero(); n];
        log_marginal_batch(seg, moments, model, &self.prop_means, &mut at_means)?;
        log_marginal_batch(seg, moments, model, &self.theta, &mut self.log_lik)?;
        let mut lw: Vec<T> = Vec::with_capacity(n);
        for i in 0..n {
            let num = self.log_lik[i];
            let w = self.weights[i];
            let v = if num == T::neg_infinity() || !(w > T::zero()) {
                T::neg_infinity()
            } else if at_means[i] == T::neg_infinity() {
                // Kernel mean outside the support cannot occur for interval
                // supports; treat the ratio as the numerator alone.
                num
            } else {
                w.ln() + num - at_means[i]
            };
            lw.push(v);
        }
        self.set_log_weights(&lw, candidate)
    }

    fn set_log_weights(&mut self, lw: &[T], candidate: usize) -> Result<()> {
        let norm = log_sum_exp(lw);
        if !norm.is_finite() {
            return Err(Error::ParticleCollapse { candidate });
        }
        for (w, &l) in self.weights.iter_mut().zip(lw) {
            *w = (l - norm).exp();
        }
        Ok(())
    }

    /// Resamples to `len()` equally weighted particles.
    pub fn resample<R: Rng + ?Sized>(&mut self, scheme: ResampleScheme, rng: &mut R) {
        let n = self.len();
        let mut cdf = Vec::with_capacity(n);
        let mut acc = T::zero();
        for &w in &self.weights {
            acc += w;
            cdf.push(acc);
        }
        let total = acc;
        let pick = |u: T| -> usize { cdf.partition_point(|&c| c <= u * total).min(n - 1) };
        let idx: Vec<usize> = match scheme {
            ResampleScheme::Multinomial => (0..n).map(|_| pick(T::sample_open01(rng))).collect(),
            ResampleScheme::Systematic => {
                let u0 = T::sample_open01(rng);
                let nn = T::from_usize_lossy(n);
                (0..n).map(|k| pick((T::from_usize_lossy(k) + u0) / nn)).collect()
            }
        };
        let theta = idx.iter().map(|&i| self.theta[i]).collect();
        let ll = idx.iter().map(|&i| self.log_lik[i]).collect();
        let pm = idx.iter().map(|&i| self.prop_means[i]).collect();
        self.theta = theta;
        self.log_lik = ll;
        self.prop_means = pm;
        let w = T::one() / T::from_usize_lossy(n);
        self.weights.iter_mut().for_each(|x| *x = w);
    }

    /// `log sum_i w_i L_i` over the cached marginals.
    pub fn log_marginal(&self) -> T {
        let terms: Vec<T> = self
            .log_lik
            .iter()
            .zip(&self.weights)
            .map(|(&l, &w)| if w > T::zero() { l + w.ln() } else { T::neg_infinity() })
            .collect();
        log_sum_exp(&terms)
    }

    /// Sequential estimate, or the segment average before the first step.
    pub fn log_evidence(&self) -> T {
        self.evidence.unwrap_or_else(|| self.log_marginal())
    }

    /// `log sum_i w_i L(seg | theta_i) / L(prefix | theta_i)` at the current
    /// particles, whose cached marginals are those of the prefix.
    pub fn log_predictive(&self, seg: &SegmentView<'_, T>, moments: &SegmentMoments<T>, model: &ModelSpec<T>) -> Result<T> {
        let mut cur = vec![T::zero(); self.len()];
        log_marginal_batch(seg, moments, model, &self.theta, &mut cur)?;
        let terms: Vec<T> = cur
            .iter()
            .zip(&self.log_lik)
            .zip(&self.weights)
            .map(|((&c, &p), &w)| {
                if w > T::zero() && c > T::neg_infinity() && p.is_finite() {
                    w.ln() + c - p
                } else {
                    T::neg_infinity()
                }
            })
            .collect();
        Ok(log_sum_exp(&terms))
    }

    /// Propagates, then weights by the one-step predictive at the new
    /// particles and advances the running marginal by its weighted mean.
    fn incremental_reweight<R: Rng + ?Sized>(
        &mut self,
        seg: &SegmentView<'_, T>,
        moments: &SegmentMoments<T>,
        model: &ModelSpec<T>,
        candidate: usize,
        rng: &mut R,
    ) -> Result<T> {
        let before = match self.evidence {
            Some(e) => e,
            None => {
                // Prior draws: condition on the cached prefix marginals first.
                let e = self.log_marginal();
                let lw: Vec<T> = self
                    .log_lik
                    .iter()
                    .zip(&self.weights)
                    .map(|(&l, &w)| if w > T::zero() { w.ln() + l } else { T::neg_infinity() })
                    .collect();
                self.set_log_weights(&lw, candidate)?;
                e
            }
        };
        let n = self.len();
        let k = seg.len().saturating_sub(1);
        let prefix = seg.without_last();
        let prefix_moments = SegmentMoments::from_values(prefix.values);
        self.propagate(rng);
        let mut prev = vec![T::zero(); n];
        if k > 0 {
            log_marginal_batch(&prefix, &prefix_moments, model, &self.theta, &mut prev)?;
        }
        log_marginal_batch(seg, moments, model, &self.theta, &mut self.log_lik)?;
        let lw: Vec<T> = (0..n)
            .map(|i| {
                let w = self.weights[i];
                if w > T::zero() && self.log_lik[i] > T::neg_infinity() && prev[i].is_finite() {
                    w.ln() + self.log_lik[i] - prev[i]
                } else {
                    T::neg_infinity()
                }
            })
            .collect();
        let inc = log_sum_exp(&lw);
        self.set_log_weights(&lw, candidate)?;
        Ok(before + inc)
    }

    /// One filtering step on the extended segment: propagate, reweight,
    /// resample. Returns the updated log marginal estimate.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        seg: &SegmentView<'_, T>,
        moments: &SegmentMoments<T>,
        model: &ModelSpec<T>,
        cfg: &PfConfig,
        candidate: usize,
        rng: &mut R,
    ) -> Result<T> {
        if cfg.weighting == LwWeighting::Incremental {
            let e = self.incremental_reweight(seg, moments, model, candidate, rng)?;
            self.resample(cfg.resample, rng);
            self.evidence = Some(e);
            return Ok(e);
        }
        let increment = match cfg.evidence {
            EvidenceEstimate::Sequential => Some(self.log_predictive(seg, moments, model)?),
            EvidenceEstimate::SegmentAverage => None,
        };
        let before = self.log_evidence();
        self.propagate(rng);
        self.reweight(seg, moments, model, candidate)?;
        self.resample(cfg.resample, rng);
        Ok(match increment {
            Some(inc) => {
                let e = before + inc;
                self.evidence = Some(e);
                e
            }
            None => self.log_marginal(),
        })
    }

    /// Weighted mean and type-7 quartiles of the particle values.
    pub fn summary(&self) -> ThetaSummary {
        let mean = self.weighted_mean().to_f64_lossy();
        let mut xs: Vec<f64> = self.theta.iter().map(|t| t.to_f64_lossy()).collect();
        ThetaSummary {
            mean,
            q25: select_quantile(&mut xs, 0.25),
            median: select_quantile(&mut xs, 0.5),
            q75: select_quantile(&mut xs, 0.75),
        }
    }
}

/// Type-7 sample quantile by selection; reorders `xs`.
fn select_quantile(xs: &mut [f64], p: f64) -> f64 {
    let n = xs.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let (_, &mut x_lo, right) = xs.select_nth_unstable_by(lo, f64::total_cmp);
    if lo + 1 >= n || h == lo as f64 {
        return x_lo;
    }
    let x_hi = right.iter().copied().fold(f64::INFINITY, f64::min);
    x_lo + (h - lo as f64) * (x_hi - x_lo)
}
