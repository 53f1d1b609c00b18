// SPDX-License-Identifier: MIT OR Apache-2.0

#![forbid(unsafe_code)]

//! Segment-duration distributions and the stay/change transition factors
//! they induce on the last-changepoint chain.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distribution `g` of the segment duration `l >= 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunLength {
    /// `g(l) = h (1 - h)^(l - 1)`.
    Geometric { hazard: f64 },
    /// Explicit probabilities `g(1), g(2), ..`; zero beyond the table.
    Table { pmf: Vec<f64> },
}

/// Transition factors out of `C_t = s`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    pub stay: f64,
    pub change: f64,
    pub ln_stay: f64,
    pub ln_change: f64,
}

impl RunLength {
    pub fn geometric(hazard: f64) -> Result<Self> {
        let rl = Self::Geometric { hazard };
        rl.validate()?;
        Ok(rl)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Geometric { hazard } => {
                if !(*hazard > 0.0 && *hazard < 1.0) {
                    return Err(Error::config(format!("hazard must lie in (0, 1), got {hazard}")));
                }
            }
            Self::Table { pmf } => {
                if pmf.is_empty() || pmf.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
                    return Err(Error::config("run-length table must be a nonempty list of nonnegative values"));
                }
                let total: f64 = pmf.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::config(format!("run-length table sums to {total}, expected 1")));
                }
            }
        }
        Ok(())
    }

    /// `ln g(l)`.
    pub fn ln_pmf(&self, l: usize) -> f64 {
        if l == 0 {
            return f64::NEG_INFINITY;
        }
        match self {
            Self::Geometric { hazard } => hazard.ln() + (l - 1) as f64 * (-hazard).ln_1p(),
            Self::Table { pmf } => pmf.get(l - 1).map_or(f64::NEG_INFINITY, |p| p.ln()),
        }
    }

    /// `ln(1 - G(l))`, the log probability that a segment lasts longer than `l`.
    pub fn ln_survival(&self, l: usize) -> f64 {
        match self {
            Self::Geometric { hazard } => l as f64 * (-hazard).ln_1p(),
            Self::Table { pmf } => {
                let tail: f64 = pmf.iter().skip(l).sum();
                let head: f64 = pmf.iter().take(l).sum();
                // Take whichever sum is better conditioned.
                let s = if tail < 0.5 { tail } else { 1.0 - head };
                if s <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    s.ln()
                }
            }
        }
    }

    /// Factors for moving from `C_t = s` to `C_{t+1}`, with `s < t`.
    pub fn transition(&self, s: usize, t: usize) -> Result<Transition> {
        if s >= t {
            return Err(Error::domain(format!("transition requires s < t, got s = {s}, t = {t}")));
        }
        let l = t - s;
        if let Self::Geometric { hazard } = self {
            return Ok(Transition {
                stay: 1.0 - hazard,
                change: *hazard,
                ln_stay: (-hazard).ln_1p(),
                ln_change: hazard.ln(),
            });
        }
        let ln_prev = self.ln_survival(l - 1);
        if ln_prev == f64::NEG_INFINITY {
            return Err(Error::DegenerateSupport(l - 1));
        }
        let ln_stay = self.ln_survival(l) - ln_prev;
        let ln_change = self.ln_pmf(l) - ln_prev;
        Ok(Transition {
            stay: ln_stay.exp(),
            change: ln_change.exp(),
            ln_stay,
            ln_change,
        })
    }
}
