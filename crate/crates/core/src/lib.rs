//! Decoupled operation and topology search for cell-based differentiable
//! architecture search, at desk scale.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: a small reverse-mode autodiff engine over `f64` tensors.
//! * [`space`]: operation sets, edge-combination spaces and genotypes.
//! * [`supernet`]: the relaxed cell, temperature schedules and checkpoints.
//! * [`stages`]: operation search, topology search and genotype derivation,
//!   with the interchangeable strategies held in name-keyed registries.
//! * [`harness`]: synthetic tasks, stand-alone training and rank correlation.
//! * [`config`], [`artifacts`] and [`commands`]: run configuration, emitted
//!   files and the entry points behind the `dots` binary.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod harness;
pub mod rng;
pub mod space;
pub mod stages;
pub mod supernet;
pub mod tensor;

pub use error::{Error, Result};
