//! Simulation and estimation toolkit for a spin-1 color-center quantum sensor
//! embedded in a nanoscale charge and spin noise environment.
//!
//! The crate is organized as forward models ([`spin_model`], [`noise_env`],
//! [`protocols`]) feeding inverse problems ([`estimation`]), with
//! [`scenario`] tying both to declarative input files and tabular output.
//!
//! Units: frequencies in MHz, magnetic fields in G, electric fields in V/cm,
//! lengths in nm and times in s, unless a name says otherwise.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimation;
pub mod noise_env;
pub mod numerics;
pub mod physics;
pub mod protocols;
pub mod scenario;
pub mod seed;
pub mod spectral;
pub mod spin_model;

pub use error::{Error, Result};
