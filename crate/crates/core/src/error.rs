// SPDX-License-Identifier: MIT OR Apache-2.0

#![forbid(unsafe_code)]

use thiserror::Error;

/// Errors produced by the detection engine and its supporting layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numerical error at segment start {start}, length {len}, theta {theta:?}: {detail}")]
    Numerical {
        start: usize,
        len: usize,
        theta: Option<f64>,
        detail: String,
    },

    #[error("run-length distribution has no remaining support at run length {0}")]
    DegenerateSupport(usize),

    #[error("particle collapse for candidate {candidate}: all particle weights are zero")]
    ParticleCollapse { candidate: usize },

    #[error("sequencing error: {0}")]
    Sequencing(String),

    #[error("candidate set empty at t = {t}: {detail}")]
    EmptyCandidateSet { t: usize, detail: String },

    #[error("quadrature did not converge within {subdivisions} subdivisions (estimate {estimate:e}, error {error:e})")]
    NonConvergence {
        subdivisions: usize,
        estimate: f64,
        error: f64,
    },

    #[error("history integrity error: {0}")]
    History(String),

    #[error("ingestion error at line {line}: {detail}")]
    Ingest { line: usize, detail: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Self::Config(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Self::Domain(msg.into())
    }

    /// Stable machine-readable tag used in CLI error payloads.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Config(_) => "config",
            Self::Domain(_) => "domain",
            Self::Numerical { .. } => "numerical",
            Self::DegenerateSupport(_) => "degenerate_support",
            Self::ParticleCollapse { .. } => "particle_collapse",
            Self::Sequencing(_) => "sequencing",
            Self::EmptyCandidateSet { .. } => "empty_candidate_set",
            Self::NonConvergence { .. } => "non_convergence",
            Self::History(_) => "history",
            Self::Ingest { .. } => "ingest",
            Self::Io(_) => "io",
            Self::Json(_) => "json",
            Self::Csv(_) => "csv",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
