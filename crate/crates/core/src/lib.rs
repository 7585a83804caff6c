//! Numerical core for modeling superconducting nanowire single-photon
//! detectors (SNSPDs) embedded in surface-electrode ion traps.
//!
//! The crate is `no_std` and only needs an allocator. Everything here is a
//! pure function of its inputs; file formats, configuration and the command
//! line live in the companion `trapdet` crate.
//!
//! Modules:
//!
//! * [`geometry`]: solid angles of planar detectors, equivalent numerical
//!   aperture, zone-to-zone crosstalk and shared-beam zone arrays.
//! * [`trapfields`]: gapless-plane electrode potentials, rf pseudopotential,
//!   trap location, well depth and secular frequencies.
//! * [`optics`]: thin-film transfer matrices and 1D lamellar-grating
//!   coupled-wave analysis for nanowire absorption.
//! * [`circuit`]: complex nodal analysis and the meander coupling model for
//!   rf currents induced in the nanowire.
//! * [`detector`]: detection efficiency under rf-modulated bias, background
//!   counts, timescales and bright/dark readout fidelity.
//! * [`fit`]: recovery of the rf amplitude and dc offset from bias sweeps.
//!
//! All quantities are SI unless a name says otherwise.

#![no_std]
#![forbid(unsafe_code)]
// test builds link std, whose inherent float methods shadow `num_traits::Float`

extern crate alloc;

pub mod circuit;
pub mod constants;
pub mod detector;
pub mod fit;
pub mod geometry;
pub mod linalg;
pub mod optics;
pub mod trapfields;

pub use geometry::{PlanarPolygon, PlanarRect, Point3};
