//! Harmonic balance toolkit for steady-state vibration of multi-DOF systems
//! with hysteretic friction elements.
//!
//! The crate is organized around a small set of building blocks:
//!
//! * [`harmonic`] — truncated Fourier representations of periodic motion and
//!   the transforms between coefficient and time domains.
//! * [`elements`] — hysteretic force elements (Iwan, linear spring) evaluated
//!   per time instant and through the alternating frequency-time scheme with
//!   analytic Jacobians.
//! * [`solvers`] — Newton / quasi-Newton root finders and pseudo-arclength
//!   continuation.
//! * [`hbm`] — harmonic balance residuals for forced response under constant
//!   force or amplitude control, static prestress, and linear FRF utilities.
//! * [`epmc`] — nonlinear-modal backbones with self-excitation damping.
//! * [`vprnm`] — superharmonic-resonance tracking via phase-resonance
//!   constraints on the internally generated broadband force.
//! * [`rom`] — reduced order models built from modal backbones, including the
//!   superharmonic-resonance ROM that composes two backbones with one
//!   interpolated resonance-tracking point.
//! * [`systems`] — benchmark model builders and model file I/O.

pub mod elements;
pub mod hbm;
pub mod systems;
pub mod linalg;
pub mod solvers;
pub mod harmonic;

pub use harmonic::{HarmonicBasis, HarmonicSet};
pub use hbm::SystemModel;
