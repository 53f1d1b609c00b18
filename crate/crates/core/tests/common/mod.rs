// SPDX-License-Identifier: MIT OR Apache-2.0

#![forbid(unsafe_code)]
#![allow(dead_code)]

//! Independent test-side oracles.

use bocpd_core::model::{log_marginal_likelihood, ConjugatePrior, ModelKind, ModelSpec, SegmentView};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Basis row computed from the closed-form model definitions.
pub fn basis(kind: ModelKind, k: usize, theta: Option<f64>) -> Vec<f64> {
    let t = k as f64;
    match kind {
        ModelKind::Mean => vec![1.0],
        ModelKind::LinearTrend => vec![1.0, t],
        ModelKind::ExpDecay => vec![1.0, (-theta.unwrap().exp() * t).exp()],
        ModelKind::Periodic => vec![1.0, (t / theta.unwrap()).sin()],
    }
}

/// Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = a[i][i] - s;
                assert!(d > 0.0, "matrix is not positive definite");
                l[i][j] = d.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    l
}

/// `ln ∫ N(y | X mu0, s2 (I + X V0 X')) IG(s2 | u, v) ds2`, with the
/// coefficients integrated analytically and `s2` by a dense trapezoid rule
/// on `ln s2`.
pub fn quad_log_marginal(
    y: &[f64],
    kind: ModelKind,
    theta: Option<f64>,
    mean: &[f64],
    scale: &[Vec<f64>],
    shape: f64,
    rate: f64,
) -> f64 {
    let n = y.len();
    let p = mean.len();
    let x: Vec<Vec<f64>> = (1..=n).map(|k| basis(kind, k, theta)).collect();
    let mut cov = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let mut s = if i == j { 1.0 } else { 0.0 };
            for a in 0..p {
                for b in 0..p {
                    s += x[i][a] * scale[a][b] * x[j][b];
                }
            }
            cov[i][j] = s;
        }
    }
    let l = cholesky(&cov);
    let resid: Vec<f64> = (0..n).map(|i| y[i] - (0..p).map(|a| x[i][a] * mean[a]).sum::<f64>()).collect();
    let mut z = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i][k] * z[k]).sum();
        z[i] = (resid[i] - s) / l[i][i];
    }
    let quad: f64 = z.iter().map(|v| v * v).sum();
    let ln_det: f64 = 2.0 * (0..n).map(|i| l[i][i].ln()).sum::<f64>();
    let ln_gamma_u = statrs::function::gamma::ln_gamma(shape);
    // Integrand over w = ln s2, including the Jacobian s2.
    let nf = n as f64;
    let f = |w: f64| {
        let s2 = w.exp();
        let ln_lik = -0.5 * nf * (LN_2PI + w) - 0.5 * ln_det - 0.5 * quad / s2;
        let ln_prior = shape * rate.ln() - ln_gamma_u - (shape + 1.0) * w - rate / s2;
        ln_lik + ln_prior + w
    };
    // Mode of the integrand in w.
    let w0 = ((rate + 0.5 * quad) / (shape + 0.5 * nf)).ln();
    let (lo, hi, steps) = (w0 - 60.0, w0 + 60.0, 400_000usize);
    let h = (hi - lo) / steps as f64;
    let vals: Vec<f64> = (0..=steps).map(|i| f(lo + i as f64 * h)).collect();
    let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = vals
        .iter()
        .enumerate()
        .map(|(i, v)| (if i == 0 || i == steps { 0.5 } else { 1.0 }) * (v - max).exp())
        .sum();
    max + (sum * h).ln()
}

/// Random symmetric positive-definite `p x p` matrix.
pub fn random_spd(p: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let a: Vec<Vec<f64>> = (0..p).map(|_| (0..p).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let mut m = vec![vec![0.0; p]; p];
    for i in 0..p {
        for j in 0..p {
            m[i][j] = (0..p).map(|k| a[i][k] * a[j][k]).sum::<f64>() + if i == j { 0.5 } else { 0.0 };
        }
    }
    m
}

pub fn flatten(m: &[Vec<f64>]) -> Vec<f64> {
    m.iter().flatten().copied().collect()
}

/// Geometric run-length factors computed from their definitions.
pub fn geometric_ln_pmf(eta: f64, l: usize) -> f64 {
    eta.ln() + (l as f64 - 1.0) * (1.0 - eta).ln()
}

pub fn geometric_ln_survival(eta: f64, l: usize) -> f64 {
    l as f64 * (1.0 - eta).ln()
}

pub fn ln_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Conjugate log marginal of `y_{s+1..=t}` (1-based) under `model`.
pub fn seg_ln_l(y: &[f64], s: usize, t: usize, model: &ModelSpec<f64>) -> f64 {
    log_marginal_likelihood(&SegmentView::of_series(y, s, t), model, None).unwrap()
}

/// Mixture `ln sum_m p_m L(s, t, m)`; zero for an empty segment.
pub fn seg_mixture(y: &[f64], s: usize, t: usize, models: &[ModelSpec<f64>]) -> f64 {
    if t == s {
        return 0.0;
    }
    let terms: Vec<f64> = models.iter().map(|m| m.prior_model_prob.ln() + seg_ln_l(y, s, t, m)).collect();
    ln_sum_exp(&terms)
}

/// Filtering distributions `t -> [(s, ln Pr(C_t = s | y_1..t))]` for
/// `t = d..=n`, from the two-branch recursion over the exact candidate set
/// `{0, d, ..., t - d}` with conjugate models only.
pub fn unrolled_filtering(y: &[f64], d: usize, eta: f64, models: &[ModelSpec<f64>]) -> Vec<(usize, Vec<(usize, f64)>)> {
    let n = y.len();
    let mut out = Vec::new();
    let mut cur: Vec<(usize, f64)> = Vec::new();
    for t in d..=n {
        if t < 2 * d {
            cur = vec![(0, 0.0)];
            out.push((t, cur.clone()));
            continue;
        }
        let w = |s: usize| seg_mixture(y, s, t, models) - seg_mixture(y, s, t - 1, models);
        let hazard = |s: usize| -> (f64, f64) {
            // Transition from run length (t-1-s) to (t-s).
            let l = t - 1 - s;
            let g_prev = 1.0 - (1.0 - eta).powi(l as i32);
            let g_cur = 1.0 - (1.0 - eta).powi(l as i32 + 1);
            (((1.0 - g_cur) / (1.0 - g_prev)).ln(), ((g_cur - g_prev) / (1.0 - g_prev)).ln())
        };
        let mut next = Vec::with_capacity(cur.len() + 1);
        let mut change = Vec::with_capacity(cur.len());
        for &(s, lp) in &cur {
            let (stay, ch) = hazard(s);
            next.push((s, w(s) + stay + lp));
            change.push(ch + lp);
        }
        next.push((t - d, w(t - d) + ln_sum_exp(&change)));
        let z = ln_sum_exp(&next.iter().map(|x| x.1).collect::<Vec<_>>());
        for x in &mut next {
            x.1 -= z;
        }
        cur = next;
        out.push((t, cur.clone()));
    }
    out
}

/// Best segmentation by exhaustive enumeration: every composition of `n`
/// into parts of length at least `d`, every model per part. Returns the
/// changepoints, per-segment models and log score.
pub fn exhaustive_map(y: &[f64], d: usize, eta: f64, models: &[ModelSpec<f64>]) -> (Vec<usize>, Vec<usize>, f64) {
    let n = y.len();
    let mut best: (Vec<usize>, Vec<usize>, f64) = (vec![], vec![], f64::NEG_INFINITY);
    let mut stack: Vec<(Vec<usize>, Vec<usize>, f64)> = vec![(vec![0], vec![], 0.0)];
    while let Some((edges, ms, score)) = stack.pop() {
        let s = *edges.last().unwrap();
        // Close with the final open segment.
        if n - s >= d {
            for (m, model) in models.iter().enumerate() {
                let total = score
                    + seg_ln_l(y, s, n, model)
                    + model.prior_model_prob.ln()
                    + geometric_ln_survival(eta, n - s - 1);
                let mut cand_ms = ms.clone();
                cand_ms.push(m);
                let cps: Vec<usize> = edges[1..].to_vec();
                if better(total, &cps, &cand_ms, &best) {
                    best = (cps, cand_ms, total);
                }
            }
        }
        let mut t = s + d;
        while t + d <= n {
            for (m, model) in models.iter().enumerate() {
                let sc = score + seg_ln_l(y, s, t, model) + model.prior_model_prob.ln() + geometric_ln_pmf(eta, t - s);
                let mut e = edges.clone();
                e.push(t);
                let mut mm = ms.clone();
                mm.push(m);
                stack.push((e, mm, sc));
            }
            t += 1;
        }
    }
    best
}

fn better(score: f64, cps: &[usize], ms: &[usize], best: &(Vec<usize>, Vec<usize>, f64)) -> bool {
    if score > best.2 + 1e-12 {
        return true;
    }
    if (score - best.2).abs() <= 1e-12 {
        return (cps, ms) < (best.0.as_slice(), best.1.as_slice());
    }
    false
}

/// Conjugate prior from explicit parts.
pub fn prior(mean: &[f64], scale: &[Vec<f64>], shape: f64, rate: f64) -> ConjugatePrior<f64> {
    ConjugatePrior::new(mean, &flatten(scale), shape, rate).unwrap()
}

/// `d/dx f(x)` by central differences.
pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Bivariate normal box probability by Monte Carlo, with its standard error.
pub fn mc_box_probability(
    mean: [f64; 2],
    cov: [[f64; 2]; 2],
    lower: [f64; 2],
    upper: [f64; 2],
    draws: usize,
    rng: &mut ChaCha8Rng,
) -> (f64, f64) {
    use rand_distr::{Distribution, StandardNormal};
    let l00 = cov[0][0].sqrt();
    let l10 = cov[1][0] / l00;
    let l11 = (cov[1][1] - l10 * l10).sqrt();
    let mut hits = 0usize;
    for _ in 0..draws {
        let z0: f64 = StandardNormal.sample(rng);
        let z1: f64 = StandardNormal.sample(rng);
        let b0 = mean[0] + l00 * z0;
        let b1 = mean[1] + l10 * z0 + l11 * z1;
        if b0 >= lower[0] && b0 <= upper[0] && b1 >= lower[1] && b1 <= upper[1] {
            hits += 1;
        }
    }
    let p = hits as f64 / draws as f64;
    (p, (p * (1.0 - p) / draws as f64).sqrt())
}

/// Golden-section maximiser of `f` on `[a, b]`.
pub fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    while (b - a).abs() > tol {
        if f(c) > f(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - g * (b - a);
        d = a + g * (b - a);
    }
    0.5 * (a + b)
}
