// SPDX-License-Identifier: MIT OR Apache-2.0

#![forbid(unsafe_code)]

//! Segment reports, drydown summaries and the on-disk report bundle.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::inference::{BackwardSamples, SegmentationResult};
use crate::ingest::TimeSeries;
use crate::model::{drydown_transforms, ModelKind};
use crate::pf::ThetaSummary;
use crate::special::quantile_type7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Option<Self> {
        let mut v: Vec<f64> = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Self { q1: quantile_type7(&v, 0.25)?, median: quantile_type7(&v, 0.5)?, q3: quantile_type7(&v, 0.75)? })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrydownEntry {
    pub decay_rate: f64,
    pub efold_samples: f64,
    pub efold_days: f64,
}

impl DrydownEntry {
    pub fn from_theta(theta: f64, interval_hours: f64) -> Self {
        let d = drydown_transforms(theta, interval_hours);
        Self { decay_rate: d.decay_rate, efold_samples: d.efold_samples, efold_days: d.efold_days }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub start: usize,
    pub end: usize,
    pub model_index: usize,
    pub model: ModelKind,
    pub theta: Option<ThetaSummary>,
    pub coefficients: Vec<f64>,
    /// Decay reading of ExpDecay segments from the θ mean.
    pub drydown: Option<DrydownEntry>,
    pub start_time: Option<String>,
    pub end_time: Option<String>,
}

/// Quartiles of the decay rate and e-folding days across ExpDecay segments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrydownSummary {
    pub segments: usize,
    pub decay_rate: Option<Quartiles>,
    pub efold_days: Option<Quartiles>,
    pub notice: Option<String>,
}

pub fn report_drydown(segments: &[SegmentReport]) -> DrydownSummary {
    let entries: Vec<DrydownEntry> = segments.iter().filter_map(|s| s.drydown).collect();
    if entries.is_empty() {
        return DrydownSummary {
            segments: 0,
            decay_rate: None,
            efold_days: None,
            notice: Some("no exponential-decay segments".into()),
        };
    }
    let rates: Vec<f64> = entries.iter().map(|e| e.decay_rate).collect();
    let days: Vec<f64> = entries.iter().map(|e| e.efold_days).collect();
    DrydownSummary { segments: entries.len(), decay_rate: Quartiles::of(&rates), efold_days: Quartiles::of(&days), notice: None }
}

/// One evaluated DOG initial-step scale of a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub r_eps: f64,
    pub log_score: f64,
}

/// Contents of `segments.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentsReport {
    pub n: usize,
    pub interval_hours: f64,
    pub changepoints: Vec<usize>,
    pub log_score: f64,
    pub segments: Vec<SegmentReport>,
    pub drydown: DrydownSummary,
    /// Selected DOG scale and all evaluated ones, for gradient runs.
    pub r_eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweep: Vec<SweepEntry>,
}

impl SegmentsReport {
    pub fn build(result: &SegmentationResult, kinds: &[ModelKind], series: &TimeSeries) -> Self {
        let stamp = |i: usize| series.timestamps.get(i).map(|t| t.to_rfc3339_opts(chrono::SecondsFormat::Secs, true));
        let segments: Vec<SegmentReport> = result
            .segments
            .iter()
            .map(|s| {
                let model = kinds[s.model];
                SegmentReport {
                    start: s.start,
                    end: s.end,
                    model_index: s.model,
                    model,
                    theta: s.theta,
                    coefficients: s.coefficients.clone(),
                    drydown: (model == ModelKind::ExpDecay)
                        .then_some(s.theta)
                        .flatten()
                        .map(|t| DrydownEntry::from_theta(t.mean, series.interval_hours)),
                    start_time: stamp(s.start),
                    end_time: stamp(s.end - 1),
                }
            })
            .collect();
        Self {
            n: result.n,
            interval_hours: series.interval_hours,
            changepoints: result.changepoints.clone(),
            log_score: result.log_score,
            drydown: report_drydown(&segments),
            segments,
            r_eps: None,
            sweep: Vec::new(),
        }
    }
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// `t,s,probability` rows of the stored filtering distributions.
pub fn write_filtering_csv(path: &Path, history: &crate::history::History) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "s", "probability"])?;
    for rec in &history.records {
        for &(s, lp) in &rec.filtering {
            w.write_record([rec.t.to_string(), s.to_string(), lp.exp().to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `t,timestamp,proportion` rows of backward-simulation inclusion.
pub fn write_inclusion_csv(path: &Path, samples: &BackwardSamples, series: &TimeSeries) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "timestamp", "proportion"])?;
    for (i, p) in samples.inclusion.iter().enumerate() {
        w.write_record([(i + 1).to_string(), timestamp_field(series, i), p.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `t,timestamp,observed,fitted,model` rows for overlay plots.
pub fn write_fit_csv(path: &Path, series: &TimeSeries, fitted: &[f64], track: &[ModelKind]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "timestamp", "observed", "fitted", "model"])?;
    for (i, ((y, f), k)) in series.values.iter().zip(fitted).zip(track).enumerate() {
        w.write_record([(i + 1).to_string(), timestamp_field(series, i), y.to_string(), f.to_string(), k.name().to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn timestamp_field(series: &TimeSeries, i: usize) -> String {
    series
        .timestamps
        .get(i)
        .map(|t| t.to_rfc3339_opts(chrono::SecondsFormat::Secs, true))
        .unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp_segment(theta: f64) -> SegmentReport {
        SegmentReport {
            start: 0,
            end: 10,
            model_index: 0,
            model: ModelKind::ExpDecay,
            theta: Some(ThetaSummary::point(theta)),
            coefficients: vec![],
            drydown: Some(DrydownEntry::from_theta(theta, 24.0)),
            start_time: None,
            end_time: None,
        }
    }

    #[test]
    fn unit_rate_at_daily_sampling_is_one_day() {
        let s = report_drydown(&[exp_segment(0.0)]);
        assert_eq!(s.segments, 1);
        assert!((s.efold_days.unwrap().median - 1.0).abs() < 1e-15);
    }

    #[test]
    fn median_rate_of_three_segments() {
        let segs: Vec<SegmentReport> = [0.98f64, 0.99, 0.995].iter().map(|g| exp_segment((-g.ln()).ln())).collect();
        let s = report_drydown(&segs);
        assert!((s.decay_rate.unwrap().median - 0.99).abs() < 1e-12);
    }

    #[test]
    fn type7_quartiles_on_five_values() {
        let q = Quartiles::of(&[7.0, 1.0, 3.0, 10.0, 4.0]).unwrap();
        assert_eq!((q.q1, q.median, q.q3), (3.0, 4.0, 7.0));
        let q = Quartiles::of(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!((q.q1, q.median, q.q3), (1.75, 2.5, 3.25));
    }

    #[test]
    fn no_decay_segments_gives_a_notice() {
        let mut seg = exp_segment(0.0);
        seg.model = ModelKind::Mean;
        seg.drydown = None;
        let s = report_drydown(&[seg]);
        assert_eq!(s.segments, 0);
        assert!(s.notice.is_some() && s.decay_rate.is_none());
    }
}
