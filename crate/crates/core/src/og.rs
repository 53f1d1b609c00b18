// SPDX-License-Identifier: MIT OR Apache-2.0

#![forbid(unsafe_code)]

//! Online gradient estimation of a segment's difficult parameter with the
//! distance-over-gradient step size.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{grad_log_marginal, ModelSpec, SegmentView};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientOrder {
    First,
    #[default]
    Second,
}

/// Objective whose θ-gradient drives the updates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientTarget {
    /// Log predictive density of the newest observation given the segment prefix.
    #[default]
    Predictive,
    /// Log marginal of the whole segment.
    Segment,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OgConfig {
    pub r_eps: f64,
    pub order: GradientOrder,
    pub curvature_floor: f64,
    pub target: GradientTarget,
}

impl Default for OgConfig {
    fn default() -> Self {
        Self { r_eps: 1e-6, order: GradientOrder::Second, curvature_floor: 1e-4, target: GradientTarget::Predictive }
    }
}

impl OgConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_eps > 0.0 && self.r_eps.is_finite()) {
            return Err(Error::config(format!("r_eps must be positive, got {}", self.r_eps)));
        }
        if !(self.curvature_floor > 0.0 && self.curvature_floor.is_finite()) {
            return Err(Error::config(format!("curvature floor must be positive, got {}", self.curvature_floor)));
        }
        Ok(())
    }
}

/// One-step log predictive of the newest observation as a function of θ.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConditionalGrad<T> {
    pub value: T,
    /// `d/dtheta` of the log predictive.
    pub gradient: T,
    /// Gauss–Newton information of the whole segment per observation.
    pub curvature: T,
}

/// Gradient of the log predictive density of the newest observation of `seg`
/// given the rest of the segment, with a curvature proxy for second-order steps.
pub fn grad_log_conditional<T: Real>(theta: T, seg: &SegmentView<'_, T>, model: &ModelSpec<T>) -> Result<ConditionalGrad<T>> {
    if !model.has_theta() {
        return Err(Error::config(format!("model {} has no difficult parameter", model.kind)));
    }
    if seg.is_empty() {
        return Err(Error::domain("gradient requires a nonempty segment"));
    }
    let full = grad_log_marginal(seg, model, theta)?;
    let (value, gradient) = if seg.len() > 1 {
        let prefix = grad_log_marginal(&seg.without_last(), model, theta)?;
        (full.value - prefix.value, full.d1 - prefix.d1)
    } else {
        (full.value, full.d1)
    };
    let curvature = full.information / T::from_usize_lossy(seg.len());
    Ok(ConditionalGrad { value, gradient, curvature })
}

/// Gradient of the whole-segment log marginal, with the same curvature proxy.
pub fn grad_log_segment<T: Real>(theta: T, seg: &SegmentView<'_, T>, model: &ModelSpec<T>) -> Result<ConditionalGrad<T>> {
    if !model.has_theta() {
        return Err(Error::config(format!("model {} has no difficult parameter", model.kind)));
    }
    let full = grad_log_marginal(seg, model, theta)?;
    let curvature = full.information / T::from_usize_lossy(seg.len().max(1));
    Ok(ConditionalGrad { value: full.value, gradient: full.d1, curvature })
}

/// Per-candidate online gradient state.
#[derive(Clone, Debug, PartialEq)]
pub struct DogState<T> {
    theta: T,
    theta_init: T,
    iter_min: T,
    iter_max: T,
    max_distance: T,
    grad_sq_sum: T,
    steps: usize,
    r_eps: T,
    order: GradientOrder,
    curvature_floor: T,
    consecutive_clamps: usize,
    stagnation: bool,
    skipped: usize,
    target: GradientTarget,
}

/// What one update did.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OgStep<T> {
    pub step_size: T,
    pub clamped: bool,
    /// The gradient was non-finite and the update was skipped.
    pub skipped: bool,
}

impl<T: Real> DogState<T> {
    pub fn new(theta: T, cfg: &OgConfig) -> Self {
        Self {
            theta,
            theta_init: theta,
            iter_min: theta,
            iter_max: theta,
            max_distance: T::zero(),
            grad_sq_sum: T::zero(),
            steps: 0,
            r_eps: T::lit(cfg.r_eps),
            order: cfg.order,
            curvature_floor: T::lit(cfg.curvature_floor),
            consecutive_clamps: 0,
            stagnation: false,
            skipped: 0,
            target: cfg.target,
        }
    }

    pub fn theta(&self) -> T {
        self.theta
    }

    pub fn theta_init(&self) -> T {
        self.theta_init
    }

    pub fn max_distance(&self) -> T {
        self.max_distance
    }

    pub fn grad_sq_sum(&self) -> T {
        self.grad_sq_sum
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn order(&self) -> GradientOrder {
        self.order
    }

    /// Set once the iterate was projected onto the support boundary on two
    /// consecutive updates.
    pub fn stagnation_warning(&self) -> bool {
        self.stagnation
    }

    pub fn skipped_updates(&self) -> usize {
        self.skipped
    }

    /// Step size for the next update along `direction`.
    pub fn step_size(&self, direction: T) -> T {
        if self.steps == 0 || !(self.grad_sq_sum > T::zero()) {
            let g = direction.abs();
            return if g > T::zero() { self.r_eps / g } else { self.r_eps };
        }
        self.max_distance.max(self.r_eps) / self.grad_sq_sum.sqrt()
    }

    /// Update direction for a loss gradient (negated log-likelihood gradient)
    /// and curvature proxy.
    pub fn direction(&self, loss_gradient: T, curvature: T) -> T {
        match self.order {
            GradientOrder::First => loss_gradient,
            GradientOrder::Second => loss_gradient / curvature.max(self.curvature_floor),
        }
    }

    /// Moves `theta <- theta - step * direction`, projects onto `[lo, hi]`
    /// and advances the accumulators.
    pub fn advance(&mut self, direction: T, step: T, support: (T, T)) -> bool {
        let proposal = self.theta - step * direction;
        let (lo, hi) = support;
        let projected = proposal.max(lo).min(hi);
        let clamped = projected != proposal;
        self.theta = projected;
        self.grad_sq_sum += direction * direction;
        self.steps += 1;
        let dist = (self.theta - self.iter_min).max(self.iter_max - self.theta);
        self.max_distance = self.max_distance.max(dist);
        self.iter_min = self.iter_min.min(self.theta);
        self.iter_max = self.iter_max.max(self.theta);
        if clamped {
            self.consecutive_clamps += 1;
            if self.consecutive_clamps >= 2 {
                self.stagnation = true;
            }
        } else {
            self.consecutive_clamps = 0;
        }
        clamped
    }

    /// Records a skipped update without moving.
    fn skip(&mut self) {
        self.skipped += 1;
    }
}

/// One online update of `ds` from the newest observation of `seg`.
pub fn og_update<T: Real>(ds: &mut DogState<T>, seg: &SegmentView<'_, T>, model: &ModelSpec<T>) -> Result<OgStep<T>> {
    let prior = model
        .theta_prior
        .as_ref()
        .ok_or_else(|| Error::config(format!("model {} has no difficult parameter", model.kind)))?;
    let grad = match ds.target {
        GradientTarget::Predictive => grad_log_conditional(ds.theta, seg, model),
        GradientTarget::Segment => grad_log_segment(ds.theta, seg, model),
    };
    let grad = match grad {
        Ok(g) if g.gradient.is_finite() && g.curvature.is_finite() => g,
        Ok(_) | Err(Error::Numerical { .. }) => {
            ds.skip();
            return Ok(OgStep { step_size: T::zero(), clamped: false, skipped: true });
        }
        Err(e) => return Err(e),
    };
    let dir = ds.direction(-grad.gradient, grad.curvature);
    let step = ds.step_size(dir);
    let support = prior.support();
    let positive_floor = if model.kind == crate::model::ModelKind::Periodic {
        (support.0.max(T::lit(1e-6)), support.1)
    } else {
        support
    };
    let clamped = ds.advance(dir, step, positive_floor);
    Ok(OgStep { step_size: step, clamped, skipped: false })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(order: GradientOrder) -> OgConfig {
        OgConfig { r_eps: 1e-6, order, ..Default::default() }
    }

    #[test]
    fn initial_step_scales_with_gradient() {
        let ds = DogState::new(0.0f64, &cfg(GradientOrder::First));
        assert!((ds.step_size(2.0) - 5e-7).abs() < 1e-22);
        assert_eq!(ds.step_size(0.0), 1e-6);
    }

    #[test]
    fn later_step_is_distance_over_root_gradient_mass() {
        let mut ds = DogState::new(0.0f64, &cfg(GradientOrder::First));
        ds.steps = 3;
        ds.max_distance = 0.3;
        ds.grad_sq_sum = 9.0;
        assert!((ds.step_size(1.0) - 0.1).abs() < 1e-15);
        ds.max_distance = 0.0;
        assert!((ds.step_size(1.0) - 1e-6 / 3.0).abs() < 1e-20);
    }

    #[test]
    fn zero_gradient_leaves_theta() {
        let mut ds = DogState::new(1.5, &cfg(GradientOrder::Second));
        let dir = ds.direction(0.0, 1.0);
        let step = ds.step_size(dir);
        ds.advance(dir, step, (f64::NEG_INFINITY, f64::INFINITY));
        assert_eq!(ds.theta(), 1.5);
    }

    #[test]
    fn newton_step_on_quadratic() {
        let target = 2.75;
        let mut ds = DogState::new(-1.0, &cfg(GradientOrder::Second));
        // l = -(theta - target)^2 / 2: loss gradient theta - target, unit curvature.
        let dir = ds.direction(ds.theta() - target, 1.0);
        ds.advance(dir, 1.0, (f64::NEG_INFINITY, f64::INFINITY));
        assert!((ds.theta() - target).abs() < 1e-15);
    }

    #[test]
    fn unit_curvature_orders_agree() {
        let mut a = DogState::new(0.3, &cfg(GradientOrder::First));
        let mut b = DogState::new(0.3, &cfg(GradientOrder::Second));
        for g in [0.5, -1.2, 2.0, 0.1, -0.7] {
            let da = a.direction(g, 1.0);
            let db = b.direction(g, 1.0);
            let (sa, sb) = (a.step_size(da), b.step_size(db));
            a.advance(da, sa, (f64::NEG_INFINITY, f64::INFINITY));
            b.advance(db, sb, (f64::NEG_INFINITY, f64::INFINITY));
            assert_eq!(a.theta(), b.theta());
        }
    }

    #[test]
    fn repeated_projection_warns() {
        let mut ds = DogState::new(0.5, &cfg(GradientOrder::First));
        ds.advance(1.0, 1.0, (0.2, 10.0));
        assert!(!ds.stagnation_warning());
        ds.advance(1.0, 1.0, (0.2, 10.0));
        assert!(ds.stagnation_warning());
        assert_eq!(ds.theta(), 0.2);
    }

    #[test]
    fn accumulators_are_monotone() {
        let mut ds = DogState::new(0.0, &cfg(GradientOrder::First));
        let (mut d, mut g) = (0.0, 0.0);
        for (i, grad) in [1.0, -3.0, 0.5, 2.0, -0.1, 0.0].iter().enumerate() {
            let s = ds.step_size(*grad);
            assert!(s > 0.0, "step {i}");
            ds.advance(*grad, s, (f64::NEG_INFINITY, f64::INFINITY));
            assert!(ds.max_distance() >= d && ds.grad_sq_sum() >= g);
            d = ds.max_distance();
            g = ds.grad_sq_sum();
        }
    }
}
