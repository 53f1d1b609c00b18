// SPDX-License-Identifier: MIT OR Apache-2.0

#![forbid(unsafe_code)]

//! θ-marginal by adaptive quadrature over the prior quantile scale.

use crate::error::{Error, Result};
use crate::model::{log_marginal_batch, ModelSpec, SegmentMoments, SegmentView};
use crate::pf::ThetaSummary;
use crate::quadrature::{integrate_log, QuadConfig};
use crate::scalar::Real;
use crate::special::log_sum_exp;

/// Prior-quantile grid size of [`theta_posterior`].
pub const POSTERIOR_GRID: usize = 4000;

/// `ln ∫ L(seg | theta) pi(theta) dtheta`, integrated as
/// `∫_0^1 L(seg | F^{-1}(u)) du` with `F` the θ-prior CDF.
///
/// Fails with [`Error::NonConvergence`] when the subdivision cap is reached.
pub fn numeric_log_marginal<T: Real>(
    seg: &SegmentView<'_, T>,
    moments: &SegmentMoments<T>,
    model: &ModelSpec<T>,
    cfg: &QuadConfig,
) -> Result<T> {
    let prior = model
        .theta_prior
        .as_ref()
        .ok_or_else(|| Error::config(format!("model {} has no difficult parameter", model.kind)))?;
    let mut thetas = Vec::new();
    let mut vals = Vec::new();
    let res = integrate_log(
        |u: &[f64], out: &mut [f64]| {
            thetas.clear();
            thetas.extend(u.iter().map(|&ui| prior.quantile(T::lit(ui))));
            vals.resize(thetas.len(), T::zero());
            log_marginal_batch(seg, moments, model, &thetas, &mut vals)?;
            for (o, v) in out.iter_mut().zip(&vals) {
                *o = v.to_f64_lossy();
            }
            Ok(())
        },
        0.0,
        1.0,
        cfg,
    )?;
    Ok(T::lit(res.ln_value))
}

/// Posterior mean and quartiles of θ given the segment, on a midpoint grid
/// over the prior quantile scale.
pub fn theta_posterior<T: Real>(seg: &SegmentView<'_, T>, model: &ModelSpec<T>) -> Result<ThetaSummary> {
    let prior = model
        .theta_prior
        .as_ref()
        .ok_or_else(|| Error::config(format!("model {} has no difficult parameter", model.kind)))?;
    let moments = SegmentMoments::from_values(seg.values);
    let thetas: Vec<T> =
        (0..POSTERIOR_GRID).map(|i| prior.quantile(T::lit((i as f64 + 0.5) / POSTERIOR_GRID as f64))).collect();
    let mut ln_l = vec![T::zero(); POSTERIOR_GRID];
    log_marginal_batch(seg, &moments, model, &thetas, &mut ln_l)?;
    let ln_l: Vec<f64> = ln_l.iter().map(|v| v.to_f64_lossy()).collect();
    let ln_z = log_sum_exp(&ln_l);
    if !ln_z.is_finite() {
        return Err(Error::Numerical {
            start: seg.start,
            len: seg.len(),
            theta: None,
            detail: "theta posterior has no mass on the grid".into(),
        });
    }
    let w: Vec<f64> = ln_l.iter().map(|l| (l - ln_z).exp()).collect();
    let th: Vec<f64> = thetas.iter().map(|t| t.to_f64_lossy()).collect();
    let mean = w.iter().zip(&th).map(|(w, t)| w * t).sum();
    let quantile = |q: f64| {
        let mut acc = 0.0;
        for (wi, ti) in w.iter().zip(&th) {
            acc += wi;
            if acc >= q {
                return *ti;
            }
        }
        th[th.len() - 1]
    };
    Ok(ThetaSummary { mean, q25: quantile(0.25), median: quantile(0.5), q75: quantile(0.75) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{log_marginal_likelihood, ConjugatePrior, ModelKind, ThetaPrior};

    #[test]
    fn narrow_prior_reduces_to_point_evaluation() {
        let m = ModelSpec::new(
            ModelKind::ExpDecay,
            1.0,
            ConjugatePrior::isotropic(2, 10.0, 2.0, 0.1).unwrap(),
            Some(ThetaPrior::Normal { mean: -2.0, sd: 1e-7 }),
        )
        .unwrap();
        let y: Vec<f64> = (1..=25).map(|k| 0.5 + 2.0 * (-(-2f64).exp() * k as f64).exp()).collect();
        let seg = SegmentView::new(&y, 0);
        let got = numeric_log_marginal(&seg, &SegmentMoments::from_values(&y), &m, &QuadConfig::default()).unwrap();
        let want = log_marginal_likelihood(&seg, &m, Some(-2.0)).unwrap();
        assert!((got - want).abs() < 1e-6);
    }

    #[test]
    fn posterior_concentrates_near_the_generator() {
        let m = ModelSpec::new(
            ModelKind::Periodic,
            1.0,
            ConjugatePrior::isotropic(2, 1e4, 2.0, 4e-4).unwrap(),
            Some(ThetaPrior::Uniform { lower: 8.0, upper: 30.0 }),
        )
        .unwrap();
        let y: Vec<f64> = (1..=200).map(|k| 0.2 + 0.1 * (k as f64 / 15.0).sin()).collect();
        let s = theta_posterior(&SegmentView::new(&y, 0), &m).unwrap();
        assert!((s.mean - 15.0).abs() < 0.05, "{s:?}");
        assert!(s.q25 <= s.median && s.median <= s.q75);
    }
}
