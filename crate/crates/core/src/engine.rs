// SPDX-License-Identifier: MIT OR Apache-2.0

#![forbid(unsafe_code)]

//! Forward filtering over candidate last changepoints.
//!
//! Times are 1-based: after `t` observations, candidate `s` hypothesises the
//! segment `y_{s+1..=t}`. Candidate `0` appears at `t = d`; from `t = 2d`
//! on, candidate `t - d` joins at every step, so adjacent changepoints are at
//! least `d` apart.

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::history::{History, MapEntry, StepRecord};
use crate::model::{
    log_marginal_conjugate, segment_log_marginal, validate_model_set, ModelSpec, SegmentMoments, SegmentView,
};
use crate::og::{og_update, DogState, OgConfig};
use crate::pf::{ParticleSet, PfConfig, ThetaSummary};
use crate::quadrature::QuadConfig;
use crate::reference::numeric_log_marginal;
use crate::runlength::RunLength;
use crate::scalar::Real;
use crate::sor::sor_resample;
use crate::special::log_sum_exp;

/// How the difficult parameter of θ models is handled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Extension {
    ParticleFilter(PfConfig),
    OnlineGradient(OgConfig),
    /// θ integrated out by adaptive quadrature.
    NumericReference(QuadSettings),
}

/// Serialisable quadrature settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadSettings {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadSettings {
    fn default() -> Self {
        let q = QuadConfig::default();
        Self { rel_tol: q.rel_tol, abs_tol: q.abs_tol, max_subdivisions: q.max_subdivisions }
    }
}

impl From<QuadSettings> for QuadConfig {
    fn from(q: QuadSettings) -> Self {
        QuadConfig { rel_tol: q.rel_tol, abs_tol: q.abs_tol, max_subdivisions: q.max_subdivisions }
    }
}

/// Candidate-set resampling trigger and target.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResamplingConfig {
    /// Resample once the candidate count exceeds this.
    pub high_water: usize,
    /// Candidate count after resampling.
    pub cap: usize,
    /// Steps after creation during which a candidate cannot be removed;
    /// defaults to the minimum segment length.
    pub protect_steps: Option<usize>,
}

impl Default for ResamplingConfig {
    fn default() -> Self {
        Self { high_water: 80, cap: 40, protect_steps: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub min_seg_len: usize,
    pub run_length: RunLength,
    /// `None` disables candidate resampling.
    pub resampling: Option<ResamplingConfig>,
    pub extension: Extension,
    pub seed: u64,
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_seg_len == 0 {
            return Err(Error::config("minimum segment length must be at least 1"));
        }
        self.run_length.validate()?;
        if let Some(r) = &self.resampling {
            if r.cap == 0 || r.high_water < r.cap {
                return Err(Error::config(format!(
                    "resampling requires 1 <= cap <= high-water mark, got cap {} and mark {}",
                    r.cap, r.high_water
                )));
            }
        }
        match &self.extension {
            Extension::ParticleFilter(p) => p.validate(),
            Extension::OnlineGradient(o) => o.validate(),
            Extension::NumericReference(q) => {
                if q.max_subdivisions == 0 || !(q.rel_tol >= 0.0) || !(q.abs_tol >= 0.0) {
                    Err(Error::config("invalid quadrature settings"))
                } else {
                    Ok(())
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
enum ThetaState<T> {
    Conjugate,
    Particles(ParticleSet<T>),
    Gradient(DogState<T>),
    Quadrature,
}

impl<T: Real> ThetaState<T> {
    fn summary(&self) -> Option<ThetaSummary> {
        match self {
            Self::Particles(ps) => Some(ps.summary()),
            Self::Gradient(ds) => Some(ThetaSummary::point(ds.theta().to_f64_lossy())),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
struct Candidate<T> {
    s: usize,
    created_at: usize,
    rng: ChaCha8Rng,
    moments: SegmentMoments<T>,
    log_l: Vec<T>,
    theta: Vec<ThetaState<T>>,
    log_weight: T,
    flags: CandidateFlags,
}

#[derive(Clone, Copy, Debug, Default)]
struct CandidateFlags {
    collapses: usize,
    skipped_gradients: usize,
    stagnation: bool,
}

/// Run-level counters.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub resampling_events: usize,
    pub max_candidates: usize,
    pub dead_candidates: usize,
    pub particle_collapses: usize,
    pub skipped_gradient_updates: usize,
    pub stagnation_warnings: usize,
    pub protected_overflow_events: usize,
    pub warnings: Vec<String>,
}

/// Finished forward pass.
#[derive(Clone, Debug)]
pub struct Detection {
    pub history: History,
    pub diagnostics: Diagnostics,
}

fn mixture<T: Real>(ln_prior: &[T], log_l: &[T]) -> T {
    let terms: Vec<T> = ln_prior.iter().zip(log_l).map(|(&p, &l)| p + l).collect();
    log_sum_exp(&terms)
}

struct StepContext<'a, T> {
    models: &'a [ModelSpec<T>],
    extension: &'a Extension,
    series: &'a [T],
    t: usize,
}

impl<T: Real> Candidate<T> {
    fn segment<'a>(&self, series: &'a [T], t: usize) -> SegmentView<'a, T> {
        SegmentView::of_series(series, self.s, t)
    }

    /// Segment marginal of model `m` at the current θ state.
    fn evaluate(&mut self, m: usize, ctx: &StepContext<'_, T>, seg: &SegmentView<'_, T>) -> Result<T> {
        if seg.is_empty() {
            return Ok(T::zero());
        }
        let model = &ctx.models[m];
        match &mut self.theta[m] {
            ThetaState::Conjugate => log_marginal_conjugate(seg, &self.moments, model),
            ThetaState::Particles(ps) => {
                ps.evaluate(seg, &self.moments, model)?;
                Ok(ps.log_marginal())
            }
            ThetaState::Gradient(ds) => segment_log_marginal(seg, model, Some(ds.theta())),
            ThetaState::Quadrature => match ctx.extension {
                Extension::NumericReference(q) => numeric_log_marginal(seg, &self.moments, model, &(*q).into()),
                _ => unreachable!("quadrature state without quadrature extension"),
            },
        }
    }

    fn create(s: usize, ctx: &StepContext<'_, T>, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(s as u64 + 1);
        let mut theta = Vec::with_capacity(ctx.models.len());
        for model in ctx.models {
            let st = match (&model.theta_prior, ctx.extension) {
                (None, _) => ThetaState::Conjugate,
                (Some(p), Extension::ParticleFilter(cfg)) => {
                    ThetaState::Particles(ParticleSet::from_prior(p, cfg.n_particles, T::lit(cfg.shrinkage), &mut rng))
                }
                (Some(p), Extension::OnlineGradient(cfg)) => ThetaState::Gradient(DogState::new(p.sample(&mut rng), cfg)),
                (Some(_), Extension::NumericReference(_)) => ThetaState::Quadrature,
            };
            theta.push(st);
        }
        let mut c = Self {
            s,
            created_at: ctx.t,
            rng,
            moments: SegmentMoments::default(),
            log_l: vec![T::zero(); ctx.models.len()],
            theta,
            log_weight: T::zero(),
            flags: CandidateFlags::default(),
        };
        // Marginal one step back, for the weight of the first step.
        for &y in &ctx.series[s..ctx.t - 1] {
            c.moments.push(y);
        }
        let prefix = c.segment(ctx.series, ctx.t - 1);
        let mut prev = vec![T::zero(); ctx.models.len()];
        for (m, p) in prev.iter_mut().enumerate() {
            *p = c.evaluate(m, ctx, &prefix)?;
        }
        c.moments.push(ctx.series[ctx.t - 1]);
        let seg = c.segment(ctx.series, ctx.t);
        for m in 0..ctx.models.len() {
            c.log_l[m] = c.evaluate(m, ctx, &seg)?;
        }
        let ln_p: Vec<T> = ctx.models.iter().map(|m| m.ln_prior_prob()).collect();
        c.log_weight = weight(&ln_p, &prev, &c.log_l);
        Ok(c)
    }

    fn advance(&mut self, ctx: &StepContext<'_, T>, ln_p: &[T]) -> Result<()> {
        let prev = self.log_l.clone();
        self.moments.push(ctx.series[ctx.t - 1]);
        let seg = self.segment(ctx.series, ctx.t);
        for m in 0..ctx.models.len() {
            let model = &ctx.models[m];
            let value = match &mut self.theta[m] {
                ThetaState::Particles(ps) => {
                    let cfg = match ctx.extension {
                        Extension::ParticleFilter(cfg) => cfg,
                        _ => unreachable!("particles without particle extension"),
                    };
                    match ps.step(&seg, &self.moments, model, cfg, self.s, &mut self.rng) {
                        Ok(v) => v,
                        Err(Error::ParticleCollapse { .. }) => {
                            self.flags.collapses += 1;
                            T::neg_infinity()
                        }
                        Err(e) => return Err(e),
                    }
                }
                ThetaState::Gradient(ds) => {
                    let step = og_update(ds, &seg, model)?;
                    if step.skipped {
                        self.flags.skipped_gradients += 1;
                    }
                    self.flags.stagnation |= ds.stagnation_warning();
                    segment_log_marginal(&seg, model, Some(ds.theta()))?
                }
                _ => self.evaluate(m, ctx, &seg)?,
            };
            self.log_l[m] = value;
        }
        self.log_weight = weight(ln_p, &prev, &self.log_l);
        Ok(())
    }

    fn entries(&self) -> impl Iterator<Item = MapEntry> + '_ {
        self.log_l.iter().enumerate().map(move |(m, &l)| MapEntry {
            s: self.s,
            model: m,
            log_l: l.to_f64_lossy(),
            theta: self.theta[m].summary(),
        })
    }
}

/// `log W = log sum_m p_m L(s,t,m) - log sum_m p_m L(s,t-1,m)`.
fn weight<T: Real>(ln_p: &[T], prev: &[T], cur: &[T]) -> T {
    let num = mixture(ln_p, cur);
    let den = mixture(ln_p, prev);
    if num == T::neg_infinity() || !den.is_finite() {
        T::neg_infinity()
    } else {
        num - den
    }
}

/// Online detector; feed observations with [`Detector::push`].
pub struct Detector<T: Real> {
    models: Vec<ModelSpec<T>>,
    ln_p: Vec<T>,
    cfg: DetectorConfig,
    series: Vec<T>,
    candidates: Vec<Candidate<T>>,
    /// `log Pr(C_t = s | y_1..t)` aligned with `candidates`.
    log_filter: Vec<T>,
    master_rng: ChaCha8Rng,
    history: History,
    diagnostics: Diagnostics,
}

impl<T: Real> Detector<T> {
    pub fn new(models: Vec<ModelSpec<T>>, cfg: DetectorConfig) -> Result<Self> {
        validate_model_set(&models)?;
        cfg.validate()?;
        let ln_p: Vec<T> = models.iter().map(|m| m.ln_prior_prob()).collect();
        let history = History::new(cfg.min_seg_len, ln_p.iter().map(|p| p.to_f64_lossy()).collect(), cfg.run_length.clone());
        Ok(Self {
            master_rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            models,
            ln_p,
            cfg,
            series: Vec::new(),
            candidates: Vec::new(),
            log_filter: Vec::new(),
            history,
            diagnostics: Diagnostics::default(),
        })
    }

    /// Number of observations consumed.
    pub fn time(&self) -> usize {
        self.series.len()
    }

    /// Active `(s, log Pr(C_t = s | y_1..t))` pairs.
    pub fn filtering(&self) -> Vec<(usize, f64)> {
        self.candidates.iter().zip(&self.log_filter).map(|(c, &l)| (c.s, l.to_f64_lossy())).collect()
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    pub fn diagnostics(&self) -> &Diagnostics {
        &self.diagnostics
    }

    /// Consumes one observation.
    pub fn push(&mut self, y: T) -> Result<()> {
        if !y.is_finite() {
            return Err(Error::domain(format!("observation {} is not finite", self.series.len() + 1)));
        }
        self.series.push(y);
        let t = self.series.len();
        let d = self.cfg.min_seg_len;
        if t < d {
            return Ok(());
        }
        let ctx = StepContext { models: &self.models, extension: &self.cfg.extension, series: &self.series, t };
        if t == d {
            let c = Candidate::create(0, &ctx, self.cfg.seed)?;
            self.candidates.push(c);
            self.log_filter = vec![T::zero()];
            return self.finish_step(t);
        }

        let ln_p = &self.ln_p;
        self.candidates.par_iter_mut().try_for_each(|c| c.advance(&ctx, ln_p))?;
        let new = (t >= 2 * d).then(|| Candidate::create(t - d, &ctx, self.cfg.seed)).transpose()?;

        if t < 2 * d {
            // Warm-up: the only candidate holds all mass.
            self.log_filter = vec![T::zero()];
            return self.finish_step(t);
        }

        let rl = &self.cfg.run_length;
        let mut change_terms = Vec::with_capacity(self.candidates.len());
        let mut next = Vec::with_capacity(self.candidates.len() + 1);
        for (c, &lf) in self.candidates.iter().zip(&self.log_filter) {
            let tr = rl.transition(c.s, t - 1)?;
            change_terms.push(T::lit(tr.ln_change) + lf);
            next.push(c.log_weight + T::lit(tr.ln_stay) + lf);
        }
        let new = new.expect("new candidate exists after warm-up");
        next.push(new.log_weight + log_sum_exp(&change_terms));
        self.candidates.push(new);
        self.log_filter = next;
        self.prune_dead(t)?;
        self.normalise();
        self.finish_step(t)
    }

    fn prune_dead(&mut self, t: usize) -> Result<()> {
        let before = self.candidates.len();
        let mut i = 0;
        while i < self.candidates.len() {
            if self.log_filter[i] == T::neg_infinity() || self.log_filter[i].is_nan() {
                retire(&mut self.diagnostics, &self.candidates[i]);
                self.candidates.remove(i);
                self.log_filter.remove(i);
            } else {
                i += 1;
            }
        }
        self.diagnostics.dead_candidates += before - self.candidates.len();
        if self.candidates.is_empty() {
            return Err(Error::EmptyCandidateSet {
                t,
                detail: format!("all {before} candidates have zero weight; observation {}", self.series[t - 1]),
            });
        }
        Ok(())
    }

    fn normalise(&mut self) {
        let z = log_sum_exp(&self.log_filter);
        for l in &mut self.log_filter {
            *l -= z;
        }
    }

    fn finish_step(&mut self, t: usize) -> Result<()> {
        let entries: Vec<MapEntry> = self.candidates.iter().flat_map(|c| c.entries()).collect();
        self.resample_candidates(t)?;
        self.diagnostics.max_candidates = self.diagnostics.max_candidates.max(self.candidates.len());
        let filtering = self.filtering();
        self.history.push(StepRecord { t, entries, filtering })
    }

    fn resample_candidates(&mut self, t: usize) -> Result<()> {
        let Some(rc) = self.cfg.resampling else {
            return Ok(());
        };
        if self.candidates.len() <= rc.high_water {
            return Ok(());
        }
        let protect = rc.protect_steps.unwrap_or(self.cfg.min_seg_len);
        let protected: Vec<bool> = self.candidates.iter().map(|c| t < c.created_at + protect).collect();
        let n_protected = protected.iter().filter(|&&p| p).count();
        let pool: Vec<usize> = (0..self.candidates.len()).filter(|&i| !protected[i]).collect();
        let mut keep = vec![false; self.candidates.len()];
        let mut new_log = self.log_filter.clone();
        for (k, &p) in keep.iter_mut().zip(&protected) {
            *k = p;
        }
        self.diagnostics.resampling_events += 1;
        if n_protected >= rc.cap {
            self.diagnostics.protected_overflow_events += 1;
            let msg = format!("t = {t}: {n_protected} protected candidates reach the cap {}; unprotected dropped", rc.cap);
            warn!("{msg}");
            self.diagnostics.warnings.push(msg);
        } else {
            let target = rc.cap - n_protected;
            let max = pool.iter().map(|&i| self.log_filter[i]).fold(T::neg_infinity(), T::max);
            let w: Vec<f64> = pool.iter().map(|&i| (self.log_filter[i] - max).exp().to_f64_lossy()).collect();
            let out = sor_resample(&w, target, &mut self.master_rng)?;
            for (&j, &wj) in out.kept.iter().zip(&out.weights) {
                let i = pool[j];
                keep[i] = true;
                if wj != w[j] {
                    new_log[i] = T::lit(wj.ln()) + max;
                }
            }
        }
        for (c, _) in self.candidates.iter().zip(&keep).filter(|(_, &k)| !k) {
            retire(&mut self.diagnostics, c);
        }
        let mut idx = 0;
        self.candidates.retain(|_| {
            let k = keep[idx];
            idx += 1;
            k
        });
        self.log_filter = new_log.into_iter().zip(&keep).filter(|(_, &k)| k).map(|(l, _)| l).collect();
        self.normalise();
        Ok(())
    }

    /// Ends the run and returns the history.
    pub fn finish(mut self) -> Result<Detection> {
        self.history.validate()?;
        let mut diag = std::mem::take(&mut self.diagnostics);
        for c in &self.candidates {
            retire(&mut diag, c);
        }
        Ok(Detection { history: self.history, diagnostics: diag })
    }
}

fn retire<T>(diag: &mut Diagnostics, c: &Candidate<T>) {
    diag.particle_collapses += c.flags.collapses;
    diag.skipped_gradient_updates += c.flags.skipped_gradients;
    diag.stagnation_warnings += usize::from(c.flags.stagnation);
}

/// Runs the detector over a whole series.
pub fn run_detector<T: Real>(models: Vec<ModelSpec<T>>, cfg: DetectorConfig, series: &[T]) -> Result<Detection> {
    let mut det = Detector::new(models, cfg)?;
    for &y in series {
        det.push(y)?;
    }
    det.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{log_marginal_likelihood, ConjugatePrior, ModelKind, SegmentView, ThetaPrior};

    fn models() -> Vec<ModelSpec<f64>> {
        vec![
            ModelSpec::new(ModelKind::Mean, 0.6, ConjugatePrior::isotropic(1, 2.0, 2.0, 0.5).unwrap(), None).unwrap(),
            ModelSpec::new(ModelKind::LinearTrend, 0.4, ConjugatePrior::isotropic(2, 1.0, 2.0, 0.5).unwrap(), None)
                .unwrap(),
        ]
    }

    fn config(d: usize, hazard: f64, extension: Extension) -> DetectorConfig {
        DetectorConfig {
            min_seg_len: d,
            run_length: RunLength::geometric(hazard).unwrap(),
            resampling: None,
            extension,
            seed: 5,
        }
    }

    fn series(n: usize) -> Vec<f64> {
        (0..n).map(|i| ((i * 7919) % 13) as f64 / 13.0 + if i >= n / 2 { 1.5 } else { 0.0 }).collect()
    }

    fn mix(y: &[f64], s: usize, t: usize, ms: &[ModelSpec<f64>]) -> f64 {
        let terms: Vec<f64> = ms
            .iter()
            .map(|m| m.prior_model_prob.ln() + log_marginal_likelihood(&SegmentView::of_series(y, s, t), m, None).unwrap())
            .collect();
        log_sum_exp(&terms)
    }

    #[test]
    fn warm_up_holds_a_single_candidate() {
        let d = 3;
        let y = series(12);
        let det = run_detector(models(), config(d, 0.1, Extension::ParticleFilter(PfConfig::default())), &y).unwrap();
        assert_eq!(det.history.records[0].t, d);
        for rec in det.history.records.iter().take(d) {
            assert_eq!(rec.filtering, vec![(0, 0.0)]);
        }
        let at_2d = &det.history.records[d];
        assert_eq!(at_2d.filtering.iter().map(|x| x.0).collect::<Vec<_>>(), vec![0, d]);
    }

    #[test]
    fn first_split_matches_the_hand_recursion() {
        let (d, h) = (3, 0.1);
        let y = series(6);
        let ms = models();
        let det = run_detector(ms.clone(), config(d, h, Extension::ParticleFilter(PfConfig::default())), &y).unwrap();
        let t = 2 * d;
        let stay = (1.0 - h).ln() + mix(&y, 0, t, &ms) - mix(&y, 0, t - 1, &ms);
        let change = h.ln() + mix(&y, d, t, &ms) - mix(&y, d, t - 1, &ms);
        let z = log_sum_exp(&[stay, change]);
        let got = &det.history.records.last().unwrap().filtering;
        assert!((got[0].1 - (stay - z)).abs() < 1e-12);
        assert!((got[1].1 - (change - z)).abs() < 1e-12);
    }

    #[test]
    fn theta_extensions_give_normalised_filters() {
        let exp = ModelSpec::new(
            ModelKind::ExpDecay,
            0.5,
            ConjugatePrior::isotropic(2, 10.0, 2.0, 0.01).unwrap(),
            Some(ThetaPrior::Uniform { lower: -4.0, upper: -1.0 }),
        )
        .unwrap();
        let mean = ModelSpec::new(ModelKind::Mean, 0.5, ConjugatePrior::isotropic(1, 10.0, 2.0, 0.01).unwrap(), None).unwrap();
        let y: Vec<f64> = (1..=40).map(|k| 0.2 + 0.3 * (-(0.1 * (k % 20) as f64)).exp()).collect();
        for ext in [
            Extension::ParticleFilter(PfConfig { n_particles: 50, ..PfConfig::default() }),
            Extension::OnlineGradient(OgConfig::default()),
            Extension::NumericReference(QuadSettings::default()),
        ] {
            let det = run_detector(vec![exp.clone(), mean.clone()], config(4, 0.05, ext), &y).unwrap();
            for rec in &det.history.records {
                let total: f64 = rec.filtering.iter().map(|x| x.1.exp()).sum();
                assert!((total - 1.0).abs() < 1e-9);
                assert!(rec.entries.iter().filter(|e| e.model == 0).all(|e| e.theta.is_some() || e.log_l.is_finite()));
            }
        }
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let mut cfg = config(0, 0.1, Extension::OnlineGradient(OgConfig::default()));
        assert!(Detector::new(models(), cfg.clone()).is_err());
        cfg.min_seg_len = 2;
        cfg.resampling = Some(ResamplingConfig { high_water: 3, cap: 5, protect_steps: None });
        assert!(Detector::new(models(), cfg.clone()).is_err());
        cfg.resampling = None;
        let mut det = Detector::new(models(), cfg).unwrap();
        assert!(det.push(f64::NAN).is_err());
    }

    #[test]
    fn resampling_bounds_the_candidate_count() {
        let y = series(80);
        let mut cfg = config(2, 0.2, Extension::ParticleFilter(PfConfig::default()));
        cfg.resampling = Some(ResamplingConfig { high_water: 8, cap: 4, protect_steps: None });
        let det = run_detector(models(), cfg, &y).unwrap();
        assert!(det.diagnostics.resampling_events > 0);
        assert!(det.history.records.iter().all(|r| r.filtering.len() <= 8));
    }
}
