// SPDX-License-Identifier: MIT OR Apache-2.0

#![forbid(unsafe_code)]

//! Per-step records kept by the detector for offline decoding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pf::ThetaSummary;
use crate::runlength::RunLength;

/// Segment marginal of one (candidate, model) pair at one time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapEntry {
    pub s: usize,
    pub model: usize,
    pub log_l: f64,
    /// θ approximation of the candidate at this time, for θ models.
    pub theta: Option<ThetaSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    /// Every active (candidate, model) marginal before candidate resampling.
    pub entries: Vec<MapEntry>,
    /// `(s, log Pr(C_t = s | y_1..t))` after resampling and renormalisation,
    /// ascending in `s`.
    pub filtering: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub n: usize,
    pub min_seg_len: usize,
    pub ln_model_prior: Vec<f64>,
    pub run_length: RunLength,
    /// Records for `t = min_seg_len ..= n`.
    pub records: Vec<StepRecord>,
}

impl History {
    pub fn new(min_seg_len: usize, ln_model_prior: Vec<f64>, run_length: RunLength) -> Self {
        Self { n: 0, min_seg_len, ln_model_prior, run_length, records: Vec::new() }
    }

    pub fn n_models(&self) -> usize {
        self.ln_model_prior.len()
    }

    pub fn push(&mut self, rec: StepRecord) -> Result<()> {
        let expected = self.min_seg_len + self.records.len();
        if rec.t != expected {
            return Err(Error::History(format!("record for t = {} appended where t = {expected} expected", rec.t)));
        }
        self.n = rec.t;
        self.records.push(rec);
        Ok(())
    }

    /// Record at time `t`.
    pub fn record(&self, t: usize) -> Result<&StepRecord> {
        let rec = t
            .checked_sub(self.min_seg_len)
            .and_then(|i| self.records.get(i))
            .ok_or_else(|| Error::History(format!("no record at t = {t}")))?;
        if rec.t != t {
            return Err(Error::History(format!("record at slot for t = {t} carries t = {}", rec.t)));
        }
        Ok(rec)
    }

    /// Checks that records are contiguous up to `n` and nonempty.
    pub fn validate(&self) -> Result<()> {
        if self.records.is_empty() {
            return Err(Error::History("history holds no records".into()));
        }
        for (i, r) in self.records.iter().enumerate() {
            if r.t != self.min_seg_len + i {
                return Err(Error::History(format!("missing record at t = {}", self.min_seg_len + i)));
            }
            if r.filtering.is_empty() {
                return Err(Error::History(format!("empty filtering distribution at t = {}", r.t)));
            }
        }
        Ok(())
    }
}
