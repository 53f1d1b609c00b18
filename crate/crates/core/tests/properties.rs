// SPDX-License-Identifier: MIT OR Apache-2.0

#![forbid(unsafe_code)]

//! Property tests of the documented invariants.

mod common;

use bocpd_core::engine::{run_detector, DetectorConfig, Extension, ResamplingConfig};
use bocpd_core::inference::{backward_simulate, evaluate_detection, path_log_score, viterbi_map};
use bocpd_core::model::{
    design_row, drydown_transforms, log_marginal_likelihood, ConjugatePrior, ModelKind, ModelSpec, SegmentView,
    ThetaPrior,
};
use bocpd_core::og::{og_update, DogState, OgConfig};
use bocpd_core::pf::{ParticleSet, PfConfig};
use bocpd_core::runlength::RunLength;
use bocpd_core::sor::{solve_threshold, sor_resample};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn conjugate_models(p_mean: f64) -> Vec<ModelSpec<f64>> {
    vec![
        ModelSpec::new(ModelKind::Mean, p_mean, ConjugatePrior::isotropic(1, 2.0, 2.0, 0.5).unwrap(), None).unwrap(),
        ModelSpec::new(ModelKind::LinearTrend, 1.0 - p_mean, ConjugatePrior::isotropic(2, 1.0, 2.0, 0.5).unwrap(), None)
            .unwrap(),
    ]
}

fn exp_model() -> ModelSpec<f64> {
    ModelSpec::new(
        ModelKind::ExpDecay,
        1.0,
        ConjugatePrior::isotropic(2, 1e4, 2.0, 4e-4).unwrap(),
        Some(ThetaPrior::Uniform { lower: -6.0, upper: -1.0 }),
    )
    .unwrap()
}

fn decay_series(theta: f64, n: usize, seed: u64) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (1..=n)
        .map(|k| {
            let z: f64 = StandardNormal.sample(&mut rng);
            0.15 + 0.25 * (-theta.exp() * k as f64).exp() + 0.02 * z
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn design_rows_are_bounded(k in 1usize..5000, theta in -8.0f64..3.0, period in 0.5f64..100.0) {
        let e = design_row(ModelKind::ExpDecay, k, Some(theta)).unwrap();
        prop_assert_eq!(e.as_slice()[0], 1.0);
        prop_assert!(e.as_slice()[1] >= 0.0 && e.as_slice()[1] <= 1.0);
        let p = design_row(ModelKind::Periodic, k, Some(period)).unwrap();
        prop_assert!(p.as_slice()[1].abs() <= 1.0);
        let l = design_row::<f64>(ModelKind::LinearTrend, k, None).unwrap();
        prop_assert_eq!(l.as_slice(), &[1.0, k as f64][..]);
    }

    #[test]
    fn design_rows_match_the_oracle_basis(k in 1usize..500, theta in -6.0f64..1.0, period in 1.0f64..60.0) {
        let e = design_row(ModelKind::ExpDecay, k, Some(theta)).unwrap();
        let want = common::basis(ModelKind::ExpDecay, k, Some(theta));
        prop_assert!((e.as_slice()[1] - want[1]).abs() <= 1e-15);
        let p = design_row(ModelKind::Periodic, k, Some(period)).unwrap();
        let want = common::basis(ModelKind::Periodic, k, Some(period));
        prop_assert!((p.as_slice()[1] - want[1]).abs() <= 1e-12);
    }

    #[test]
    fn drydown_is_monotone(a in -8.0f64..3.0, b in -8.0f64..3.0, hours in 0.25f64..48.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assume!(hi - lo > 1e-9);
        let (x, y) = (drydown_transforms(lo, hours), drydown_transforms(hi, hours));
        prop_assert!(x.decay_rate >= y.decay_rate);
        prop_assert!(x.efold_samples > y.efold_samples);
        prop_assert!(x.efold_days > y.efold_days);
        prop_assert!(x.decay_rate > 0.0 && x.decay_rate < 1.0);
        prop_assert!((x.decay_rate.ln() * x.efold_samples + 1.0).abs() < 1e-9);
    }

    #[test]
    fn transitions_sum_to_one(hazard in 1e-4f64..0.9, s in 0usize..500, len in 1usize..500) {
        let rl = RunLength::geometric(hazard).unwrap();
        let tr = rl.transition(s, s + len).unwrap();
        prop_assert!((tr.stay + tr.change - 1.0).abs() < 1e-12);
        let table = RunLength::Table { pmf: vec![0.1, 0.2, 0.3, 0.25, 0.15] };
        if len < 5 {
            let tr = table.transition(s, s + len).unwrap();
            prop_assert!((tr.stay + tr.change - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sor_keeps_exactly_the_cap(
        raw in prop::collection::vec(0.0f64..1.0, 2..150),
        cap in 1usize..60,
        seed in any::<u64>(),
    ) {
        let weights: Vec<f64> = raw.iter().map(|w| w * w).collect();
        let positive = weights.iter().filter(|&&w| w > 0.0).count();
        prop_assume!(positive > 0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = sor_resample(&weights, cap, &mut rng).unwrap();
        prop_assert_eq!(out.kept.len(), cap.min(positive));
        prop_assert!(out.kept.windows(2).all(|w| w[0] < w[1]));
        if positive > cap {
            let alpha = solve_threshold(&weights, cap);
            let h: f64 = weights.iter().map(|&w| (w / alpha).min(1.0)).sum();
            prop_assert!((h - cap as f64).abs() < 1e-6);
            for (&i, &w) in out.kept.iter().zip(&out.weights) {
                if weights[i] >= out.alpha {
                    prop_assert_eq!(w.to_bits(), weights[i].to_bits());
                } else {
                    prop_assert_eq!(w, out.alpha);
                }
            }
        }
    }

    #[test]
    fn matching_ignores_detection_order(
        truth in prop::collection::btree_set(1usize..1000, 0..8),
        detected in prop::collection::btree_set(1usize..1000, 0..8),
        tol in 1usize..30,
    ) {
        let truth: Vec<usize> = truth.into_iter().collect();
        let detected: Vec<usize> = detected.into_iter().collect();
        let track = vec![0u8; 10];
        let a = evaluate_detection(&detected, &truth, tol, &track, &track).unwrap();
        let mut rev = detected.clone();
        rev.reverse();
        let b = evaluate_detection(&rev, &truth, tol, &track, &track).unwrap();
        prop_assert_eq!(a.matched, b.matched);
        prop_assert!(a.true_positive_rate >= 0.0 && a.true_positive_rate <= 1.0);
        prop_assert!(a.precision >= 0.0 && a.precision <= 1.0);
        let perfect = evaluate_detection(&truth, &truth, tol, &track, &track).unwrap();
        prop_assert_eq!(perfect.true_positive_rate, 1.0);
        prop_assert_eq!(perfect.precision, 1.0);
    }

    #[test]
    fn kernel_means_keep_the_weighted_mean(
        theta in prop::collection::vec(-6.0f64..-1.0, 2..200),
        a in 0.5f64..1.0,
        seed in any::<u64>(),
    ) {
        let mut ps = ParticleSet::from_particles(theta, a);
        let (mean, var) = (ps.weighted_mean(), ps.weighted_variance());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ps.propagate(&mut rng);
        let w = ps.weights().to_vec();
        let mu = ps.propagation_means();
        let m: f64 = mu.iter().zip(&w).map(|(x, w)| x * w).sum();
        let v: f64 = mu.iter().zip(&w).map(|(x, w)| w * (x - m).powi(2)).sum();
        prop_assert!((m - mean).abs() < 1e-9);
        prop_assert!((v - a * a * var).abs() < 1e-9 * var.max(1.0));
        // Kernel variance makes up the rest.
        let h2 = ps.kernel_scale().powi(2);
        prop_assert!((a * a + h2 - 1.0).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dog_distance_and_gradient_sums_never_shrink(theta0 in -5.0f64..-2.0, seed in 0u64..1000) {
        let y = decay_series(-3.0, 60, seed);
        let model = exp_model();
        let mut ds = DogState::new(theta0, &OgConfig::default());
        let (mut dist, mut g2) = (ds.max_distance(), ds.grad_sq_sum());
        for t in 3..=y.len() {
            og_update(&mut ds, &SegmentView::new(&y[..t], 0), &model).unwrap();
            prop_assert!(ds.max_distance() >= dist);
            prop_assert!(ds.grad_sq_sum() >= g2);
            prop_assert!(ds.theta() >= -6.0 && ds.theta() <= -1.0);
            dist = ds.max_distance();
            g2 = ds.grad_sq_sum();
        }
    }

    #[test]
    fn filtering_chains_are_normalised_and_capped(
        n in 12usize..60,
        d in 1usize..4,
        hazard in 0.01f64..0.3,
        seed in any::<u64>(),
        p_mean in 0.2f64..0.8,
    ) {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<f64> = (0..n).map(|i| { let z: f64 = StandardNormal.sample(&mut rng); (i / 10) as f64 * 0.5 + z * 0.3 }).collect();
        let rc = ResamplingConfig { high_water: 6, cap: 3, protect_steps: None };
        let cfg = DetectorConfig {
            min_seg_len: d,
            run_length: RunLength::geometric(hazard).unwrap(),
            resampling: Some(rc),
            extension: Extension::ParticleFilter(PfConfig::default()),
            seed,
        };
        let det = run_detector(conjugate_models(p_mean), cfg, &y).unwrap();
        prop_assert_eq!(det.history.records.len(), n - d + 1);
        for rec in &det.history.records {
            let total: f64 = rec.filtering.iter().map(|(_, l)| l.exp()).sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            prop_assert!(rec.filtering.windows(2).all(|w| w[0].0 < w[1].0));
            prop_assert!(rec.filtering.iter().all(|&(s, _)| s == 0 || (s >= d && s + d <= rec.t)));
            prop_assert!(rec.filtering.len() <= rc.high_water.max(d));
        }
        let map = viterbi_map(&det.history).unwrap();
        prop_assert!(map.segments.iter().all(|s| s.len() >= d));
        prop_assert_eq!(map.segments.last().unwrap().end, n);
        let segs: Vec<(usize, usize, usize)> = map.segments.iter().map(|s| (s.start, s.end, s.model)).collect();
        let score = path_log_score(&det.history, &segs).unwrap();
        prop_assert!((score - map.log_score).abs() < 1e-9);
        let mut brng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let draws = backward_simulate(&det.history, 20, &mut brng).unwrap();
        for cps in &draws.draws {
            let mut prev = 0;
            for &c in cps {
                prop_assert!(c >= prev + d && c + d <= n);
                prev = c;
            }
        }
        prop_assert!(draws.inclusion.iter().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn marginals_are_finite_on_random_segments(
        y in prop::collection::vec(-2.0f64..2.0, 1..80),
        theta in -6.0f64..-1.0,
    ) {
        let model = exp_model();
        let l = log_marginal_likelihood(&SegmentView::new(&y, 0), &model, Some(theta)).unwrap();
        prop_assert!(l.is_finite());
    }
}
