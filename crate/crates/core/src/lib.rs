//! Simulation and analysis of a polarization two-photon interferometer read
//! out by saturating single-photon counters.
//!
//! The crate covers the whole chain: closed-form pair routing and rate
//! predictions ([`pairstats`]), saturating click models with exact small-n
//! behaviour ([`detectors`]), a reproducible Monte Carlo campaign engine
//! ([`simkit`]), the reduction pipeline from raw counts to visibilities and
//! efficiencies ([`analysis`]), and the configuration plus report types the
//! command-line tools are built on ([`config`], [`report`]).
//!
//! The physics in one line: a saturating counter cannot tell one photon from
//! two, so photon bunching at a beamsplitter leaves a shallow nonclassical
//! dip in a *singles* rate, with visibility eta/(4 - eta) relative to the
//! coincidence dip.

// Domain validation uses `!(x > 0.0)`-style comparisons so NaN is rejected
// along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod detectors;
pub mod error;
pub mod pairstats;
pub mod report;
pub mod simkit;

pub use error::{Error, Result};
