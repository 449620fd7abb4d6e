//! Simulation and analysis toolkit for light storage by recoil-induced
//! resonance in cold two-level atoms.
//!
//! Modules, bottom up:
//! - [`physcore`]: constants, species, beam geometry, optical potential
//! - [`rirspec`]: probe transmission spectra and their linewidth
//! - [`grating`]: density-grating contrast and its ballistic washout
//! - [`protocol`]: write / store / read sequences and retrieval traces
//! - [`pumping`]: Zeeman optical pumping and microwave spectroscopy
//! - [`fitting`]: Levenberg-Marquardt fits and temperature extraction
//! - [`config`], [`sequence`]: scenario and pulse-sequence files
//! - [`cli`]: the `rirsim` front end; [`selftest`]: built-in end-to-end checks

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod fitting;
pub mod grating;
pub mod physcore;
pub mod protocol;
pub mod pumping;
pub mod rirspec;
pub mod selftest;
pub mod sequence;

pub use error::{Error, Result};
