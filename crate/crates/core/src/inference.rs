// SPDX-License-Identifier: MIT OR Apache-2.0

#![forbid(unsafe_code)]

//! Offline decoding of a detector history: MAP segmentation, sampled
//! changepoint configurations and detection metrics.
//!
//! The MAP recursion scores a changepoint at `t` by
//! `P[t] = max_{s,m} L(s,t,m) p_m g(t-s) P[s]` with `P[0] = 1`, and the
//! final open segment by `max_{s,m} (1 - G(n-s-1)) L(s,n,m) p_m P[s]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::history::History;
use crate::model::{posterior, ModelSpec, SegmentView};
use crate::pf::ThetaSummary;
use crate::reference::theta_posterior;
use crate::scalar::Real;

/// One decoded segment `y_{start+1..=end}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub model: usize,
    /// θ state of the candidate when the segment closed.
    pub theta: Option<ThetaSummary>,
    /// Posterior coefficient means; empty until [`SegmentationResult::fit_coefficients`].
    #[serde(default)]
    pub coefficients: Vec<f64>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentationResult {
    pub n: usize,
    pub changepoints: Vec<usize>,
    pub segments: Vec<Segment>,
    /// Log score of the MAP path.
    pub log_score: f64,
}

impl SegmentationResult {
    /// Model index at every time `1..=n`.
    pub fn model_track(&self) -> Vec<usize> {
        let mut track = Vec::with_capacity(self.n);
        for seg in &self.segments {
            track.extend(std::iter::repeat_n(seg.model, seg.len()));
        }
        track
    }

    /// Fills each segment's posterior coefficient means, using the θ mean for
    /// θ models; segments without a θ state get the grid posterior of θ.
    pub fn fit_coefficients<T: Real>(&mut self, series: &[T], models: &[ModelSpec<T>]) -> Result<()> {
        for seg in &mut self.segments {
            let model = models
                .get(seg.model)
                .ok_or_else(|| Error::History(format!("segment references model {}", seg.model)))?;
            let theta = if model.has_theta() {
                let th = match seg.theta {
                    Some(th) => th,
                    None => {
                        let th = theta_posterior(&SegmentView::of_series(series, seg.start, seg.end), model)?;
                        seg.theta = Some(th);
                        th
                    }
                };
                Some(T::lit(th.mean))
            } else {
                None
            };
            let view = SegmentView::of_series(series, seg.start, seg.end);
            let post = posterior(&view, model, theta)?;
            seg.coefficients = post.mean[..post.dim].iter().map(|c| c.to_f64_lossy()).collect();
        }
        Ok(())
    }

    /// Fitted curve at every time `1..=n`, from the stored coefficients.
    pub fn fitted_curve<T: Real>(&self, models: &[ModelSpec<T>]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.n);
        for seg in &self.segments {
            let kind = models
                .get(seg.model)
                .ok_or_else(|| Error::History(format!("segment references model {}", seg.model)))?
                .kind;
            if seg.coefficients.len() != kind.n_coef() {
                return Err(Error::Sequencing("coefficients have not been fitted".into()));
            }
            let theta = seg.theta.map(|t| t.mean);
            for k in 1..=seg.len() {
                let row = crate::model::design_row(kind, k, theta)?;
                out.push(row.as_slice().iter().zip(&seg.coefficients).map(|(x, c)| x * c).sum());
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Copy)]
struct Pointer {
    s: usize,
    model: usize,
}

fn better(score: f64, s: usize, m: usize, best: f64, bp: Option<Pointer>) -> bool {
    match bp {
        None => score > f64::NEG_INFINITY,
        Some(p) => score > best || (score == best && (s, m) < (p.s, p.model)),
    }
}

/// MAP changepoints and models by forward maximisation and backtracking.
pub fn viterbi_map(history: &History) -> Result<SegmentationResult> {
    history.validate()?;
    let n = history.n;
    let rl = &history.run_length;
    let ln_p = &history.ln_model_prior;
    let mut score = vec![f64::NEG_INFINITY; n + 1];
    let mut back: Vec<Option<Pointer>> = vec![None; n + 1];
    score[0] = 0.0;

    let mut final_best = f64::NEG_INFINITY;
    let mut final_bp: Option<Pointer> = None;
    for rec in &history.records {
        let t = rec.t;
        let (mut best, mut bp) = (f64::NEG_INFINITY, None);
        for e in &rec.entries {
            let prior = *ln_p
                .get(e.model)
                .ok_or_else(|| Error::History(format!("entry at t = {t} references model {}", e.model)))?;
            if e.s >= t {
                return Err(Error::History(format!("entry at t = {t} has candidate {}", e.s)));
            }
            let base = e.log_l + prior + score[e.s];
            if t < n {
                let v = base + rl.ln_pmf(t - e.s);
                if better(v, e.s, e.model, best, bp) {
                    best = v;
                    bp = Some(Pointer { s: e.s, model: e.model });
                }
            } else {
                let v = base + rl.ln_survival(t - e.s - 1);
                if better(v, e.s, e.model, final_best, final_bp) {
                    final_best = v;
                    final_bp = Some(Pointer { s: e.s, model: e.model });
                }
            }
        }
        score[t] = best;
        back[t] = bp;
    }

    let mut segments = Vec::new();
    let mut end = n;
    let mut bp = final_bp.ok_or_else(|| Error::History("no finite MAP path".into()))?;
    loop {
        let theta = history.record(end)?.entries.iter().find(|e| e.s == bp.s && e.model == bp.model).and_then(|e| e.theta);
        segments.push(Segment { start: bp.s, end, model: bp.model, theta, coefficients: Vec::new() });
        if bp.s == 0 {
            break;
        }
        end = bp.s;
        bp = back[end].ok_or_else(|| Error::History(format!("broken back-pointer at t = {end}")))?;
    }
    segments.reverse();
    let changepoints = segments.iter().skip(1).map(|s| s.start).collect();
    Ok(SegmentationResult { n, changepoints, segments, log_score: final_best })
}

/// Log score of an explicit segmentation under the recorded marginals.
///
/// `segments` are `(start, end, model)` triples covering `1..=n` in order.
pub fn path_log_score(history: &History, segments: &[(usize, usize, usize)]) -> Result<f64> {
    let rl = &history.run_length;
    let mut total = 0.0;
    for (i, &(s, t, m)) in segments.iter().enumerate() {
        let e = history
            .record(t)?
            .entries
            .iter()
            .find(|e| e.s == s && e.model == m)
            .ok_or_else(|| Error::History(format!("no entry for segment ({s}, {t}] model {m}")))?;
        let len_term = if i + 1 == segments.len() { rl.ln_survival(t - s - 1) } else { rl.ln_pmf(t - s) };
        total += e.log_l + history.ln_model_prior[m] + len_term;
    }
    Ok(total)
}

/// Changepoint configurations sampled backwards through the filtering history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackwardSamples {
    /// Each draw's changepoints in increasing order.
    pub draws: Vec<Vec<usize>>,
    /// Proportion of draws with a changepoint at time `t`, at index `t - 1`.
    pub inclusion: Vec<f64>,
}

fn sample_log_categorical<R: Rng + ?Sized>(items: &[(usize, f64)], rng: &mut R) -> Option<usize> {
    let max = items.iter().map(|&(_, l)| l).fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return None;
    }
    let total: f64 = items.iter().map(|&(_, l)| (l - max).exp()).sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for &(s, l) in items {
        acc += (l - max).exp();
        if u < acc {
            return Some(s);
        }
    }
    items.iter().rev().find(|&&(_, l)| l > f64::NEG_INFINITY).map(|&(s, _)| s)
}

/// Draws `n_draws` configurations: `C_n` from the final filtering
/// distribution, then each earlier changepoint `r` given a changepoint at `s`
/// with probability proportional to `Pr(C_s = r | y_1..s) Pr(C_{s+1} = s | C_s = r)`.
pub fn backward_simulate<R: Rng + ?Sized>(history: &History, n_draws: usize, rng: &mut R) -> Result<BackwardSamples> {
    history.validate()?;
    let n = history.n;
    let rl = &history.run_length;
    let mut counts = vec![0usize; n];
    let mut draws = Vec::with_capacity(n_draws);
    let mut weighted: Vec<(usize, f64)> = Vec::new();
    for _ in 0..n_draws {
        let mut cps = Vec::new();
        let mut s = sample_log_categorical(&history.record(n)?.filtering, rng)
            .ok_or_else(|| Error::History(format!("degenerate filtering distribution at t = {n}")))?;
        while s > 0 {
            cps.push(s);
            counts[s - 1] += 1;
            weighted.clear();
            for &(r, lf) in &history.record(s)?.filtering {
                if r < s {
                    weighted.push((r, lf + rl.transition(r, s)?.ln_change));
                }
            }
            s = sample_log_categorical(&weighted, rng)
                .ok_or_else(|| Error::History(format!("no predecessor for changepoint {s}")))?;
        }
        cps.reverse();
        draws.push(cps);
    }
    let denom = n_draws.max(1) as f64;
    let inclusion = counts.iter().map(|&c| c as f64 / denom).collect();
    Ok(BackwardSamples { draws, inclusion })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub true_positive_rate: f64,
    pub precision: f64,
    pub model_accuracy: f64,
    pub matched: usize,
}

/// Matches detected to true changepoints one-to-one, nearest pairs first,
/// counting a pair when the two lie strictly closer than `tolerance`.
pub fn match_changepoints(detected: &[usize], truth: &[usize], tolerance: usize) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(usize, usize, usize)> = Vec::new();
    for (i, &d) in detected.iter().enumerate() {
        for (j, &t) in truth.iter().enumerate() {
            let gap = d.abs_diff(t);
            if gap < tolerance {
                pairs.push((gap, i, j));
            }
        }
    }
    pairs.sort_by_key(|&(g, i, j)| (g, detected[i].min(truth[j]), i, j));
    let mut used_d = vec![false; detected.len()];
    let mut used_t = vec![false; truth.len()];
    let mut out = Vec::new();
    for (_, i, j) in pairs {
        if !used_d[i] && !used_t[j] {
            used_d[i] = true;
            used_t[j] = true;
            out.push((detected[i], truth[j]));
        }
    }
    out
}

/// Detection rate, precision and per-time model agreement.
///
/// Empty truth gives a rate of 1; empty detections give a precision of 1.
pub fn evaluate_detection<M: PartialEq>(
    detected: &[usize],
    truth: &[usize],
    tolerance: usize,
    model_track_detected: &[M],
    model_track_truth: &[M],
) -> Result<DetectionMetrics> {
    if model_track_detected.len() != model_track_truth.len() {
        return Err(Error::domain(format!(
            "model tracks differ in length: {} and {}",
            model_track_detected.len(),
            model_track_truth.len()
        )));
    }
    let matched = match_changepoints(detected, truth, tolerance).len();
    let ratio = |k: usize, of: usize| if of == 0 { 1.0 } else { k as f64 / of as f64 };
    let agree = model_track_detected.iter().zip(model_track_truth).filter(|(a, b)| a == b).count();
    Ok(DetectionMetrics {
        true_positive_rate: ratio(matched, truth.len()),
        precision: ratio(matched, detected.len()),
        model_accuracy: ratio(agree, model_track_truth.len()),
        matched,
    })
}
