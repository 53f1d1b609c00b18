// SPDX-License-Identifier: MIT OR Apache-2.0

#![forbid(unsafe_code)]

//! Seeded piecewise-regression series with ground truth.
//!
//! Preset coefficients and noise levels are choices of this crate, made to
//! give visually distinct segments at a soil-moisture-like scale.

use std::path::Path;

use chrono::{DateTime, Duration, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{design_row, ModelKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioId {
    S1,
    S2,
    S3,
    S4,
    Custom,
}

impl ScenarioId {
    pub const PRESETS: [ScenarioId; 4] = [Self::S1, Self::S2, Self::S3, Self::S4];

    /// Candidate model kinds, the θ model first.
    pub fn model_kinds(self) -> Option<[ModelKind; 2]> {
        match self {
            Self::S1 => Some([ModelKind::ExpDecay, ModelKind::Mean]),
            Self::S2 => Some([ModelKind::ExpDecay, ModelKind::LinearTrend]),
            Self::S3 => Some([ModelKind::Periodic, ModelKind::Mean]),
            Self::S4 => Some([ModelKind::Periodic, ModelKind::LinearTrend]),
            Self::Custom => None,
        }
    }
}

/// Generator of one segment, in segment-relative time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentGenerator {
    pub kind: ModelKind,
    pub coefficients: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
}

impl SegmentGenerator {
    fn new(kind: ModelKind, coefficients: &[f64], theta: Option<f64>) -> Self {
        Self { kind, coefficients: coefficients.to_vec(), theta }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: ScenarioId,
    pub n: usize,
    pub changepoints: Vec<usize>,
    pub segments: Vec<SegmentGenerator>,
    pub noise_sd: f64,
    pub seed: u64,
    /// Timestamp of the first observation in CSV exports.
    #[serde(default = "default_start")]
    pub start: DateTime<Utc>,
    #[serde(default = "default_interval")]
    pub interval_hours: f64,
}

fn default_start() -> DateTime<Utc> {
    DateTime::from_timestamp(1_577_836_800, 0).expect("valid epoch")
}

fn default_interval() -> f64 {
    2.0
}

/// Decay parameter for an e-folding time of `samples`.
fn efold(samples: f64) -> f64 {
    -samples.ln()
}

/// Noise level of the presets.
pub const PRESET_NOISE_SD: f64 = 0.02;

impl ScenarioSpec {
    /// One of the four preset layouts with the given seed.
    pub fn preset(id: ScenarioId, seed: u64) -> Result<Self> {
        use ModelKind::*;
        let g = SegmentGenerator::new;
        let (cps, segments) = match id {
            ScenarioId::S1 => (
                vec![205, 489, 782],
                vec![
                    g(Mean, &[0.32], None),
                    g(ExpDecay, &[0.18, 0.22], Some(efold(40.0))),
                    g(ExpDecay, &[0.14, 0.26], Some(efold(60.0))),
                    g(ExpDecay, &[0.20, 0.18], Some(efold(30.0))),
                ],
            ),
            ScenarioId::S2 => (
                vec![252, 524, 766],
                vec![
                    g(LinearTrend, &[0.22, 0.0002], None),
                    g(ExpDecay, &[0.16, 0.24], Some(efold(45.0))),
                    g(LinearTrend, &[0.22, 0.0003], None),
                    g(ExpDecay, &[0.12, 0.28], Some(efold(35.0))),
                ],
            ),
            ScenarioId::S3 => (
                vec![259, 534, 726],
                vec![
                    g(Mean, &[0.30], None),
                    g(Periodic, &[0.22, 0.08], Some(12.0)),
                    g(Mean, &[0.34], None),
                    g(Periodic, &[0.26, 0.09], Some(20.0)),
                ],
            ),
            ScenarioId::S4 => (
                vec![221, 528, 765],
                vec![
                    g(LinearTrend, &[0.30, -0.0002], None),
                    g(Periodic, &[0.24, 0.08], Some(15.0)),
                    g(LinearTrend, &[0.18, 0.0004], None),
                    g(Periodic, &[0.28, 0.09], Some(18.0)),
                ],
            ),
            ScenarioId::Custom => return Err(Error::config("the custom scenario has no preset")),
        };
        Ok(Self {
            id,
            n: 1000,
            changepoints: cps,
            segments,
            noise_sd: PRESET_NOISE_SD,
            seed,
            start: default_start(),
            interval_hours: default_interval(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments.len() != self.changepoints.len() + 1 {
            return Err(Error::config(format!(
                "{} changepoints require {} segments, got {}",
                self.changepoints.len(),
                self.changepoints.len() + 1,
                self.segments.len()
            )));
        }
        let mut prev = 0;
        for &c in &self.changepoints {
            if c <= prev || c >= self.n {
                return Err(Error::config(format!("changepoints must increase strictly within (0, {})", self.n)));
            }
            prev = c;
        }
        if self.n == 0 {
            return Err(Error::config("series length must be positive"));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::config(format!("noise sd must be finite and nonnegative, got {}", self.noise_sd)));
        }
        if !(self.interval_hours > 0.0 && self.interval_hours.is_finite()) {
            return Err(Error::config("sampling interval must be positive"));
        }
        for (i, s) in self.segments.iter().enumerate() {
            if s.coefficients.len() != s.kind.n_coef() {
                return Err(Error::config(format!(
                    "segment {i}: {} takes {} coefficients, got {}",
                    s.kind,
                    s.kind.n_coef(),
                    s.coefficients.len()
                )));
            }
            if s.kind.has_theta() != s.theta.is_some() {
                return Err(Error::config(format!("segment {i}: theta must be given exactly for theta models")));
            }
        }
        Ok(())
    }

    /// Segment boundaries `(start, end]` covering `1..=n`.
    pub fn bounds(&self) -> Vec<(usize, usize)> {
        let mut edges = Vec::with_capacity(self.changepoints.len() + 2);
        edges.push(0);
        edges.extend(&self.changepoints);
        edges.push(self.n);
        edges.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// Ground truth of a generated series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub changepoints: Vec<usize>,
    pub segment_kinds: Vec<ModelKind>,
    pub segment_thetas: Vec<Option<f64>>,
    /// Model kind at every time `1..=n`.
    pub model_track: Vec<ModelKind>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Simulated {
    pub values: Vec<f64>,
    /// Noise-free signal.
    pub signal: Vec<f64>,
    pub truth: Truth,
}

pub fn generate(spec: &ScenarioSpec) -> Result<Simulated> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut signal = Vec::with_capacity(spec.n);
    let mut track = Vec::with_capacity(spec.n);
    for ((start, end), seg) in spec.bounds().into_iter().zip(&spec.segments) {
        for k in 1..=(end - start) {
            let row = design_row(seg.kind, k, seg.theta)?;
            signal.push(row.as_slice().iter().zip(&seg.coefficients).map(|(x, c)| x * c).sum::<f64>());
            track.push(seg.kind);
        }
    }
    let values = signal
        .iter()
        .map(|&s| {
            let z: f64 = StandardNormal.sample(&mut rng);
            s + spec.noise_sd * z
        })
        .collect();
    let truth = Truth {
        changepoints: spec.changepoints.clone(),
        segment_kinds: spec.segments.iter().map(|s| s.kind).collect(),
        segment_thetas: spec.segments.iter().map(|s| s.theta).collect(),
        model_track: track,
    };
    Ok(Simulated { values, signal, truth })
}

/// Timestamp of observation `i` (0-based).
pub fn timestamp(spec: &ScenarioSpec, i: usize) -> DateTime<Utc> {
    let secs = (spec.interval_hours * 3600.0 * i as f64).round() as i64;
    spec.start + Duration::seconds(secs)
}

/// Writes `timestamp,value` rows.
pub fn write_series_csv(path: &Path, spec: &ScenarioSpec, values: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["timestamp", "value"])?;
    for (i, v) in values.iter().enumerate() {
        w.write_record([timestamp(spec, i).to_rfc3339_opts(chrono::SecondsFormat::Secs, true), format!("{v:.17e}")])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_truth_json(path: &Path, truth: &Truth) -> Result<()> {
    let f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(f), truth)?;
    Ok(())
}
