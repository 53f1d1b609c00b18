// SPDX-License-Identifier: MIT OR Apache-2.0

#![forbid(unsafe_code)]

pub mod config;
pub mod engine;
pub mod error;
pub mod history;
pub mod ingest;
pub mod inference;
pub mod model;
pub mod og;
pub mod pipeline;
pub mod pf;
pub mod quadrature;
pub mod reference;
pub mod report;
pub mod runlength;
pub mod scalar;
pub mod simkit;
pub mod sor;
pub mod special;

pub use error::{Error, Result};
pub use scalar::Real;

pub type ModelSpecF64 = model::ModelSpec<f64>;
pub type ConjugatePriorF64 = model::ConjugatePrior<f64>;
pub type ThetaPriorF64 = model::ThetaPrior<f64>;
pub type CoefBoxF64 = model::CoefBox<f64>;
pub type ParticleSetF64 = pf::ParticleSet<f64>;
pub type DogStateF64 = og::DogState<f64>;
pub type DetectorF64 = engine::Detector<f64>;
