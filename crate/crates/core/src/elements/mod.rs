//! Hysteretic nonlinear force elements and their frequency-domain evaluation.
//!
//! Each element variant implements [`HystereticElement`] and is registered by
//! name in [`build_element`], so model files select the force law at runtime.
//! Elements are rate independent: they map a local displacement history to a
//! force, which lets the alternating frequency-time scheme march them on a
//! phase grid without reference to the forcing frequency.

mod aft;
mod iwan;
mod spring;

pub use aft::{aft_force, aft_force_values, AftError, AftResult};
pub use iwan::IwanElement;
pub use spring::LinearSpring;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ElementError {
    #[error("iwan shape exponent chi must exceed -1 for an integrable slider distribution, got {0}")]
    NonIntegrableDistribution(f64),
    #[error("iwan parameter {name} must be positive, got {value}")]
    NonPositiveParameter { name: &'static str, value: f64 },
    #[error("iwan shape parameter beta must be >= 0, got {0}")]
    NegativeBeta(f64),
    #[error("at least one slider is required")]
    NoSliders,
    #[error("element history not initialized; call init_history first")]
    UninitializedHistory,
    #[error("unknown element kind `{0}`")]
    UnknownKind(String),
}

/// Serializable element parameters; the tag selects the registered variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ElementSpec {
    Iwan {
        k_t: f64,
        f_s: f64,
        chi: f64,
        beta: f64,
        n_sliders: usize,
    },
    LinearSpring {
        k: f64,
    },
}

/// Construct a registered element variant from its parameter record.
pub fn build_element(spec: &ElementSpec) -> Result<Box<dyn HystereticElement>, ElementError> {
    match spec {
        ElementSpec::Iwan {
            k_t,
            f_s,
            chi,
            beta,
            n_sliders,
        } => Ok(Box::new(IwanElement::new(*k_t, *f_s, *chi, *beta, *n_sliders)?)),
        ElementSpec::LinearSpring { k } => Ok(Box::new(LinearSpring::new(*k))),
    }
}

/// Element kinds known to [`build_element`].
pub const ELEMENT_KINDS: &[&str] = &["iwan", "linear-spring"];

/// A rate-independent hysteretic force law marched one local displacement
/// sample at a time.
///
/// `step` advances the internal history and returns the force at the new
/// displacement. `sample` is the index of the displacement on the periodic
/// grid; implementations record it so that [`HystereticElement::grad_of_last_step`]
/// can express the exact derivative of the discrete scheme with respect to
/// the periodic samples.
pub trait HystereticElement: Send + Sync {
    fn kind(&self) -> &'static str;

    /// Tangent stiffness in the fully stuck (low amplitude) regime.
    fn stuck_stiffness(&self) -> f64;

    /// Force and tangent under monotonic loading from the virgin state,
    /// used by the static prestress solve.
    fn monotone_force(&self, u: f64) -> (f64, f64);

    /// Reset the history to displacement `x_static` with zero element force.
    fn init_history(&mut self, x_static: f64);

    /// Advance the history to displacement `u` at periodic grid index
    /// `sample` and return the force.
    fn step(&mut self, u: f64, sample: usize) -> Result<f64, ElementError>;

    /// Exact derivative of the force returned by the last `step` with respect
    /// to the periodic displacement samples, as `(sample, d f / d u_sample)`
    /// entries appended to `out`. Entries with the same sample index add.
    fn grad_of_last_step(&self, out: &mut Vec<(usize, f64)>);

    /// Internal state snapshot (per-slider forces) for steady-state checks.
    fn state_fingerprint(&self, out: &mut Vec<f64>);

    fn clone_box(&self) -> Box<dyn HystereticElement>;

    fn spec(&self) -> ElementSpec;
}

impl Clone for Box<dyn HystereticElement> {
    fn clone(&self) -> Self {
        self.clone_box()
    }
}

/// One nonlinear element wired into the model: the local displacement is
/// `q_row . x` and the force is distributed to the DOFs along `t_col`.
#[derive(Clone)]
pub struct ElementSlot {
    pub element: Box<dyn HystereticElement>,
    pub q_row: DVector<f64>,
    pub t_col: DVector<f64>,
}

impl ElementSlot {
    pub fn new(element: Box<dyn HystereticElement>, q_row: DVector<f64>, t_col: DVector<f64>) -> Self {
        Self {
            element,
            q_row,
            t_col,
        }
    }

    pub fn local_displacement(&self, x: &DVector<f64>) -> f64 {
        self.q_row.dot(x)
    }
}

impl std::fmt::Debug for ElementSlot {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ElementSlot")
            .field("element", &self.element.kind())
            .field("q_row", &self.q_row)
            .field("t_col", &self.t_col)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_builds_known_kinds() {
        let iwan = build_element(&ElementSpec::Iwan {
            k_t: 0.6,
            f_s: 10.0,
            chi: -0.5,
            beta: 0.0,
            n_sliders: 100,
        })
        .unwrap();
        assert_eq!(iwan.kind(), "iwan");
        let spring = build_element(&ElementSpec::LinearSpring { k: 2.0 }).unwrap();
        assert_eq!(spring.kind(), "linear-spring");
    }

    #[test]
    fn spec_round_trips_through_element() {
        let spec = ElementSpec::Iwan {
            k_t: 0.6,
            f_s: 10.0,
            chi: -0.5,
            beta: 0.25,
            n_sliders: 40,
        };
        let el = build_element(&spec).unwrap();
        assert_eq!(el.spec(), spec);
    }
}
