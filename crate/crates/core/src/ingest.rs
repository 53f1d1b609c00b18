// SPDX-License-Identifier: MIT OR Apache-2.0

#![forbid(unsafe_code)]

//! CSV ingestion of timestamped series with down-sampling and gap detection.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniformly sampled observations, possibly with gaps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub timestamps: Vec<DateTime<Utc>>,
    pub values: Vec<f64>,
    /// Modal spacing between consecutive timestamps.
    pub interval_hours: f64,
    pub gaps: Vec<Gap>,
}

/// Spacing wider than the modal interval between rows `index` and `index + 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    pub index: usize,
    pub from: DateTime<Utc>,
    pub to: DateTime<Utc>,
    /// Missing samples at the modal interval.
    pub missing: usize,
}

fn parse_timestamp(text: &str) -> Option<DateTime<Utc>> {
    let text = text.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(text) {
        return Some(t.with_timezone(&Utc));
    }
    const FORMATS: [&str; 4] = ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"];
    for f in FORMATS {
        if let Ok(t) = NaiveDateTime::parse_from_str(text, f) {
            return Some(t.and_utc());
        }
    }
    NaiveDate::parse_from_str(text, "%Y-%m-%d").ok().and_then(|d| d.and_hms_opt(0, 0, 0)).map(|t| t.and_utc())
}

fn column(headers: &csv::StringRecord, name: &str, fallback: usize) -> usize {
    headers.iter().position(|h| h.trim().eq_ignore_ascii_case(name)).unwrap_or(fallback)
}

/// Reads `timestamp,value` rows, keeping every `down_sample`-th row.
pub fn ingest_reader<R: Read>(reader: R, down_sample: usize) -> Result<TimeSeries> {
    if down_sample == 0 {
        return Err(Error::config("down-sample factor must be at least 1"));
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() < 2 {
        return Err(Error::Ingest { line: 1, detail: "expected timestamp and value columns".into() });
    }
    let (ti, vi) = (column(&headers, "timestamp", 0), column(&headers, "value", 1));
    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    let mut prev: Option<DateTime<Utc>> = None;
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(row + 2, |p| p.line() as usize);
        let field = |i: usize| rec.get(i).unwrap_or("");
        let t = parse_timestamp(field(ti))
            .ok_or_else(|| Error::Ingest { line, detail: format!("unparseable timestamp {:?}", field(ti)) })?;
        let v: f64 = field(vi)
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| Error::Ingest { line, detail: format!("unparseable value {:?}", field(vi)) })?;
        if prev.is_some_and(|p| t <= p) {
            return Err(Error::Ingest { line, detail: format!("timestamp {t} does not increase") });
        }
        prev = Some(t);
        if row % down_sample == 0 {
            timestamps.push(t);
            values.push(v);
        }
    }
    if values.is_empty() {
        return Err(Error::Ingest { line: 1, detail: "no observations".into() });
    }
    let (interval_hours, gaps) = spacing(&timestamps);
    Ok(TimeSeries { timestamps, values, interval_hours, gaps })
}

pub fn ingest_csv(path: &Path, down_sample: usize) -> Result<TimeSeries> {
    ingest_reader(std::fs::File::open(path)?, down_sample)
}

/// Modal interval in hours and the gaps wider than it.
fn spacing(ts: &[DateTime<Utc>]) -> (f64, Vec<Gap>) {
    let diffs: Vec<i64> = ts.windows(2).map(|w| (w[1] - w[0]).num_seconds()).collect();
    let mut counts: HashMap<i64, usize> = HashMap::new();
    for &d in &diffs {
        *counts.entry(d).or_default() += 1;
    }
    let Some(modal) = counts.into_iter().max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0))).map(|(d, _)| d) else {
        return (f64::NAN, Vec::new());
    };
    let gaps = diffs
        .iter()
        .enumerate()
        .filter(|&(_, &d)| d > modal)
        .map(|(i, &d)| Gap {
            index: i,
            from: ts[i],
            to: ts[i + 1],
            missing: ((d as f64 / modal as f64).round() as usize).saturating_sub(1).max(1),
        })
        .collect();
    (modal as f64 / 3600.0, gaps)
}

impl TimeSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Row range `[start, end)` of the longest run without gaps.
    pub fn longest_block_range(&self) -> (usize, usize) {
        let mut edges = vec![0];
        edges.extend(self.gaps.iter().map(|g| g.index + 1));
        edges.push(self.len());
        edges.windows(2).map(|w| (w[0], w[1])).fold((0, 0), |best, r| if r.1 - r.0 > best.1 - best.0 { r } else { best })
    }

    /// The longest run without gaps.
    pub fn longest_block(&self) -> Self {
        let (a, b) = self.longest_block_range();
        Self {
            timestamps: self.timestamps[a..b].to_vec(),
            values: self.values[a..b].to_vec(),
            interval_hours: self.interval_hours,
            gaps: Vec::new(),
        }
    }
}
