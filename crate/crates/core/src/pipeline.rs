// SPDX-License-Identifier: MIT OR Apache-2.0

#![forbid(unsafe_code)]

//! End-to-end run: detection, decoding, backward simulation and the report bundle.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ExtensionKind, RunConfig};
use crate::engine::{run_detector, Detection, Diagnostics};
use crate::error::{Error, Result};
use crate::inference::{backward_simulate, viterbi_map, BackwardSamples, SegmentationResult};
use crate::ingest::{Gap, TimeSeries};
use crate::model::ModelKind;
use crate::report::{
    write_filtering_csv, write_fit_csv, write_inclusion_csv, write_json, SegmentsReport, SweepEntry,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    /// The numeric reference did not converge within its subdivision cap.
    NotAvailable,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub series: TimeSeries,
    pub kinds: Vec<ModelKind>,
    pub status: RunStatus,
    pub detection: Option<Detection>,
    pub segmentation: Option<SegmentationResult>,
    pub report: Option<SegmentsReport>,
    pub backward: Option<BackwardSamples>,
    pub fitted: Option<Vec<f64>>,
    pub notes: Vec<String>,
}

/// Applies the block selection of the configuration.
pub fn prepare_series(cfg: &RunConfig, series: TimeSeries) -> (TimeSeries, Vec<String>) {
    let mut notes = Vec::new();
    if series.gaps.is_empty() {
        return (series, notes);
    }
    let missing: usize = series.gaps.iter().map(|g| g.missing).sum();
    notes.push(format!("{} gaps with {missing} missing samples", series.gaps.len()));
    if cfg.longest_block {
        let (a, b) = series.longest_block_range();
        notes.push(format!("analysing rows {}..{} of {}, the longest block without gaps", a, b, series.len()));
        (series.longest_block(), notes)
    } else {
        (series, notes)
    }
}

fn decode(cfg: &RunConfig, r_eps: f64, series: &[f64]) -> Result<(Detection, SegmentationResult)> {
    let detection = run_detector(cfg.build_models()?, cfg.detector_config(r_eps)?, series)?;
    let seg = viterbi_map(&detection.history)?;
    Ok((detection, seg))
}

/// Runs the configured detector on `series`.
pub fn run_series(cfg: &RunConfig, series: TimeSeries) -> Result<RunOutput> {
    cfg.validate()?;
    let (series, mut notes) = prepare_series(cfg, series);
    let models = cfg.build_models()?;
    let kinds: Vec<ModelKind> = models.iter().map(|m| m.kind).collect();
    let mut best: Option<(f64, Detection, SegmentationResult)> = None;
    let mut sweep = Vec::new();
    for r_eps in cfg.r_eps_values() {
        match decode(cfg, r_eps, &series.values) {
            Ok((det, seg)) => {
                sweep.push(SweepEntry { r_eps, log_score: seg.log_score });
                if best.as_ref().is_none_or(|b| seg.log_score > b.2.log_score) {
                    best = Some((r_eps, det, seg));
                }
            }
            Err(e @ Error::NonConvergence { .. }) if cfg.extension == ExtensionKind::NumericReference => {
                notes.push(format!("NA: {e}"));
                return Ok(RunOutput {
                    series,
                    kinds,
                    status: RunStatus::NotAvailable,
                    detection: None,
                    segmentation: None,
                    report: None,
                    backward: None,
                    fitted: None,
                    notes,
                });
            }
            Err(e) => return Err(e),
        }
    }
    let (r_eps, detection, mut seg) = best.ok_or_else(|| Error::config("no DOG scale to run"))?;
    if cfg.extension == ExtensionKind::NumericReference {
        notes.push("numeric reference converged within the subdivision cap at every evaluation; no NA for this series".into());
    }
    seg.fit_coefficients(&series.values, &models)?;
    let fitted = seg.fitted_curve(&models)?;
    let backward = if cfg.backward_draws > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        Some(backward_simulate(&detection.history, cfg.backward_draws, &mut rng)?)
    } else {
        None
    };
    let mut report = SegmentsReport::build(&seg, &kinds, &series);
    if cfg.extension == ExtensionKind::Og {
        report.r_eps = Some(r_eps);
        if sweep.len() > 1 {
            report.sweep = sweep;
        }
    }
    notes.extend(detection.diagnostics.warnings.iter().cloned());
    Ok(RunOutput {
        series,
        kinds,
        status: RunStatus::Complete,
        detection: Some(detection),
        segmentation: Some(seg),
        report: Some(report),
        backward,
        fitted: Some(fitted),
        notes,
    })
}

/// Contents of `manifest.json`; `wall_time_seconds` is its only timing field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub crate_version: String,
    pub status: RunStatus,
    /// Outputs written for this run.
    pub complete: bool,
    pub files: Vec<String>,
    pub seed: u64,
    pub n: usize,
    pub interval_hours: f64,
    pub gaps: Vec<Gap>,
    pub diagnostics: Option<Diagnostics>,
    pub notes: Vec<String>,
    pub config: RunConfig,
    pub wall_time_seconds: f64,
}

pub const SEGMENTS_FILE: &str = "segments.json";
pub const FILTERING_FILE: &str = "filtering.csv";
pub const INCLUSION_FILE: &str = "inclusion.csv";
pub const FIT_FILE: &str = "fit.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes the report files into `dir`, then the manifest listing them.
pub fn write_bundle(dir: &Path, cfg: &RunConfig, out: &RunOutput, wall_time_seconds: f64) -> Result<Manifest> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let mut notes = out.notes.clone();
    let written = (|| -> Result<()> {
        if let (Some(report), Some(det), Some(seg), Some(fitted)) =
            (&out.report, &out.detection, &out.segmentation, &out.fitted)
        {
            write_json(&dir.join(SEGMENTS_FILE), report)?;
            files.push(SEGMENTS_FILE.to_string());
            write_filtering_csv(&dir.join(FILTERING_FILE), &det.history)?;
            files.push(FILTERING_FILE.to_string());
            if let Some(b) = &out.backward {
                write_inclusion_csv(&dir.join(INCLUSION_FILE), b, &out.series)?;
                files.push(INCLUSION_FILE.to_string());
            }
            let track: Vec<ModelKind> = seg.model_track().iter().map(|&m| out.kinds[m]).collect();
            write_fit_csv(&dir.join(FIT_FILE), &out.series, fitted, &track)?;
            files.push(FIT_FILE.to_string());
        }
        Ok(())
    })();
    if let Err(e) = &written {
        notes.push(format!("incomplete: {e}"));
    }
    let manifest = Manifest {
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        status: out.status,
        complete: written.is_ok(),
        files,
        seed: cfg.seed,
        n: out.series.len(),
        interval_hours: out.series.interval_hours,
        gaps: out.series.gaps.clone(),
        diagnostics: out.detection.as_ref().map(|d| d.diagnostics.clone()),
        notes,
        config: cfg.clone(),
        wall_time_seconds,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    written.map(|()| manifest)
}
