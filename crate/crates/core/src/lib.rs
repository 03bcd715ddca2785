//! Post-processing of multi-model gridded precipitation forecasts into
//! calibrated probabilistic exceedance forecasts.
//!
//! The crate is organised along the pipeline: [`grid`] holds the raster model
//! and the synthetic scenario generator, [`features`] derives the tabular
//! and image inputs, [`experiment`] labels and splits them, [`linear`],
//! [`forest`] and [`nn`] fit models, [`verify`] calibrates and scores, and
//! [`ablation`] runs configuration grids and feature-importance studies.

pub mod ablation;
pub mod error;
pub mod cli;
pub mod experiment;
pub mod features;
pub mod forest;
pub mod grid;
pub mod linear;
pub mod nn;
pub mod rng;
pub mod verify;

pub use error::{Error, Result};
