// SPDX-License-Identifier: MIT OR Apache-2.0

#![forbid(unsafe_code)]

//! JSON run configuration and its translation into detector inputs.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::engine::{DetectorConfig, Extension, QuadSettings, ResamplingConfig};
use crate::error::{Error, Result};
use crate::model::{validate_model_set, CoefBox, ConjugatePrior, ModelKind, ModelSpec, ThetaPrior, MAX_COEF};
use crate::og::{GradientOrder, GradientTarget, OgConfig};
use crate::pf::{EvidenceEstimate, LwWeighting, PfConfig, ResampleScheme};
use crate::runlength::RunLength;
use crate::simkit::ScenarioId;

/// Grid of DOG initial-step scales searched by the sweep mode.
pub const R_EPS_GRID: [f64; 3] = [1e-6, 5e-6, 1e-7];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExtensionKind {
    #[default]
    Pf,
    Og,
    NumericReference,
}

/// Axis-aligned coefficient box; `null` bounds are unbounded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionConfig {
    pub lower: Vec<Option<f64>>,
    pub upper: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoefPriorConfig {
    /// Prior mean; zeros when absent.
    pub mean: Option<Vec<f64>>,
    /// Diagonal prior scale used when `scale` is absent.
    pub variance: f64,
    /// Full prior scale matrix, row-major.
    pub scale: Option<Vec<f64>>,
    /// Inverse-Gamma shape of the residual variance.
    pub shape: f64,
    /// Inverse-Gamma rate of the residual variance.
    pub rate: f64,
    pub region: Option<RegionConfig>,
}

impl Default for CoefPriorConfig {
    fn default() -> Self {
        Self { mean: None, variance: 1e4, scale: None, shape: 2.0, rate: 4e-4, region: None }
    }
}

impl CoefPriorConfig {
    pub fn build(&self, dim: usize) -> Result<ConjugatePrior<f64>> {
        let mean = self.mean.clone().unwrap_or_else(|| vec![0.0; dim]);
        if mean.len() != dim {
            return Err(Error::config(format!("prior mean has length {}, expected {dim}", mean.len())));
        }
        let scale = match &self.scale {
            Some(s) => s.clone(),
            None => {
                if !(self.variance > 0.0 && self.variance.is_finite()) {
                    return Err(Error::config(format!("prior variance must be positive, got {}", self.variance)));
                }
                let mut s = vec![0.0; dim * dim];
                for i in 0..dim {
                    s[i * dim + i] = self.variance;
                }
                s
            }
        };
        let prior = ConjugatePrior::new(&mean, &scale, self.shape, self.rate)?;
        match &self.region {
            None => Ok(prior),
            Some(r) => {
                if r.lower.len() != dim || r.upper.len() != dim {
                    return Err(Error::config(format!("coefficient region must have {dim} bounds per side")));
                }
                let mut region = CoefBox::unbounded();
                for i in 0..dim.min(MAX_COEF) {
                    region.lower[i] = r.lower[i].unwrap_or(f64::NEG_INFINITY);
                    region.upper[i] = r.upper[i].unwrap_or(f64::INFINITY);
                }
                prior.with_region(region)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Prior model probability; unset probabilities share the remaining mass.
    #[serde(default)]
    pub prob: Option<f64>,
    #[serde(default)]
    pub coef_prior: CoefPriorConfig,
    /// Defaults to [`default_theta_prior`] for θ models.
    #[serde(default)]
    pub theta_prior: Option<ThetaPrior<f64>>,
}

impl ModelConfig {
    pub fn new(kind: ModelKind) -> Self {
        Self { kind, prob: None, coef_prior: CoefPriorConfig::default(), theta_prior: None }
    }
}

/// θ prior used when a θ model gives none.
pub fn default_theta_prior(kind: ModelKind) -> Option<ThetaPrior<f64>> {
    match kind {
        ModelKind::ExpDecay => Some(ThetaPrior::Uniform { lower: -6.0, upper: -1.5 }),
        ModelKind::Periodic => Some(ThetaPrior::Uniform { lower: 8.0, upper: 30.0 }),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// CSV series with `timestamp,value` columns.
    pub input: Option<PathBuf>,
    pub extension: ExtensionKind,
    pub models: Vec<ModelConfig>,
    pub hazard: f64,
    pub min_seg_len: usize,
    pub n_particles: usize,
    pub shrinkage: f64,
    pub particle_resampling: ResampleScheme,
    pub particle_evidence: EvidenceEstimate,
    pub particle_weighting: LwWeighting,
    pub r_eps: f64,
    /// Run every value of [`R_EPS_GRID`] and keep the best MAP score.
    pub r_eps_sweep: bool,
    pub gradient_order: GradientOrder,
    pub gradient_target: GradientTarget,
    pub curvature_floor: f64,
    pub quadrature: QuadSettings,
    /// `None` disables candidate resampling.
    pub resampling: Option<ResamplingConfig>,
    pub down_sample: usize,
    /// Analyse only the longest block without gaps.
    pub longest_block: bool,
    /// Backward-simulation draws; zero skips the simulation.
    pub backward_draws: usize,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let og = OgConfig::default();
        let pf = PfConfig::default();
        Self {
            input: None,
            extension: ExtensionKind::default(),
            models: Vec::new(),
            hazard: 0.005,
            min_seg_len: 20,
            n_particles: pf.n_particles,
            shrinkage: pf.shrinkage,
            particle_resampling: pf.resample,
            particle_evidence: pf.evidence,
            particle_weighting: pf.weighting,
            r_eps: og.r_eps,
            r_eps_sweep: false,
            gradient_order: og.order,
            gradient_target: og.target,
            curvature_floor: og.curvature_floor,
            quadrature: QuadSettings::default(),
            resampling: Some(ResamplingConfig::default()),
            down_sample: 1,
            longest_block: true,
            backward_draws: 500,
            seed: 0,
            output_dir: None,
        }
    }
}

impl RunConfig {
    /// Calibrated configuration for a preset scenario's candidate models.
    pub fn for_scenario(id: ScenarioId, extension: ExtensionKind) -> Result<Self> {
        let kinds = id.model_kinds().ok_or_else(|| Error::config("the custom scenario has no model set"))?;
        let models = kinds
            .iter()
            .map(|&kind| {
                let mut m = ModelConfig::new(kind);
                if kind == ModelKind::ExpDecay {
                    m.coef_prior.region = Some(RegionConfig { lower: vec![None, Some(0.0)], upper: vec![None, None] });
                }
                m
            })
            .collect();
        let gradient_target =
            if extension == ExtensionKind::Og { GradientTarget::Segment } else { GradientTarget::default() };
        let particle_weighting =
            if extension == ExtensionKind::Pf { LwWeighting::Incremental } else { LwWeighting::default() };
        Ok(Self { extension, models, gradient_target, particle_weighting, ..Self::default() })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::config("the candidate model set is empty"));
        }
        if self.down_sample == 0 {
            return Err(Error::config("down-sample factor must be at least 1"));
        }
        validate_model_set(&self.build_models()?)?;
        self.detector_config(self.r_eps)?.validate()
    }

    /// Model definitions with unset probabilities sharing the remaining mass.
    pub fn build_models(&self) -> Result<Vec<ModelSpec<f64>>> {
        let fixed: f64 = self.models.iter().filter_map(|m| m.prob).sum();
        let unset = self.models.iter().filter(|m| m.prob.is_none()).count();
        let share = if unset > 0 { (1.0 - fixed) / unset as f64 } else { 0.0 };
        self.models
            .iter()
            .map(|m| {
                let theta = m.theta_prior.or_else(|| default_theta_prior(m.kind));
                let theta = if m.kind.has_theta() { theta } else { m.theta_prior };
                ModelSpec::new(m.kind, m.prob.unwrap_or(share), m.coef_prior.build(m.kind.n_coef())?, theta)
            })
            .collect()
    }

    pub fn run_length(&self) -> Result<RunLength> {
        RunLength::geometric(self.hazard)
    }

    /// Detector settings with the given DOG initial-step scale.
    pub fn detector_config(&self, r_eps: f64) -> Result<DetectorConfig> {
        let extension = match self.extension {
            ExtensionKind::Pf => Extension::ParticleFilter(PfConfig {
                n_particles: self.n_particles,
                shrinkage: self.shrinkage,
                resample: self.particle_resampling,
                evidence: self.particle_evidence,
                weighting: self.particle_weighting,
            }),
            ExtensionKind::Og => Extension::OnlineGradient(OgConfig {
                r_eps,
                order: self.gradient_order,
                curvature_floor: self.curvature_floor,
                target: self.gradient_target,
            }),
            ExtensionKind::NumericReference => Extension::NumericReference(self.quadrature),
        };
        Ok(DetectorConfig {
            min_seg_len: self.min_seg_len,
            run_length: self.run_length()?,
            resampling: self.resampling,
            extension,
            seed: self.seed,
        })
    }

    /// DOG scales to run: the sweep grid, or the single configured value.
    pub fn r_eps_values(&self) -> Vec<f64> {
        if self.extension == ExtensionKind::Og && self.r_eps_sweep {
            R_EPS_GRID.to_vec()
        } else {
            vec![self.r_eps]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_documented_settings() {
        let c = RunConfig::default();
        assert_eq!(c.hazard, 0.005);
        assert_eq!(c.n_particles, 1000);
        assert_eq!(c.resampling, Some(ResamplingConfig { high_water: 80, cap: 40, protect_steps: None }));
        assert_eq!(c.r_eps, 1e-6);
    }

    #[test]
    fn empty_model_set_is_rejected() {
        let err = RunConfig::default().validate().unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn unset_probabilities_share_equally() {
        let c = RunConfig::for_scenario(ScenarioId::S4, ExtensionKind::Pf).unwrap();
        let ms = c.build_models().unwrap();
        assert_eq!(ms.len(), 2);
        assert!(ms.iter().all(|m| m.prior_model_prob == 0.5));
        let mut c = c;
        c.models[0].prob = Some(0.7);
        let ms = c.build_models().unwrap();
        assert!((ms[1].prior_model_prob - 0.3).abs() < 1e-15);
    }

    #[test]
    fn json_round_trip_and_validation() {
        let c = RunConfig::for_scenario(ScenarioId::S1, ExtensionKind::Og).unwrap();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), c);
        let minimal = r#"{"extension":"og","models":[{"kind":"mean"},{"kind":"exp_decay","prob":0.5}]}"#;
        let parsed = RunConfig::from_json(minimal).unwrap();
        assert_eq!(parsed.extension, ExtensionKind::Og);
        assert!(RunConfig::from_json(r#"{"models":[{"kind":"mean"}],"hazard":1.5}"#).is_err());
        assert!(RunConfig::from_json(r#"{"models":[{"kind":"mean"}],"bogus":1}"#).is_err());
    }

    #[test]
    fn region_is_applied() {
        let c = RunConfig::for_scenario(ScenarioId::S2, ExtensionKind::Pf).unwrap();
        let ms = c.build_models().unwrap();
        let r = ms[0].coef_prior.region().unwrap();
        assert_eq!(r.lower[1], 0.0);
        assert!(r.upper[1].is_infinite());
    }

    #[test]
    fn sweep_lists_the_grid_only_for_og() {
        let mut c = RunConfig::for_scenario(ScenarioId::S3, ExtensionKind::Og).unwrap();
        c.r_eps_sweep = true;
        assert_eq!(c.r_eps_values(), R_EPS_GRID.to_vec());
        c.extension = ExtensionKind::Pf;
        assert_eq!(c.r_eps_values(), vec![1e-6]);
    }
}
