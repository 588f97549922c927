//! Alternating frequency-time evaluation of nonlinear forces.
//!
//! Harmonic displacement coefficients are sampled onto one period, each
//! element is marched through two identical cycles starting from the static
//! initialization, and the second cycle's forces are transformed back to
//! harmonic coefficients. The Jacobian of the whole discrete scheme is exact:
//! per-slider stick/slip branch derivatives are propagated through the second
//! cycle's recursion and contracted with the sampling and correlation tables.

use super::{ElementSlot, HystereticElement};
use crate::harmonic::{HarmonicError, HarmonicSet};
use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AftError {
    #[error(transparent)]
    Harmonic(#[from] HarmonicError),
    #[error(transparent)]
    Element(#[from] super::ElementError),
    #[error("slot {slot}: element history differs by {delta:e} between cycle ends; steady hysteresis not reached")]
    UnsteadyHistory { slot: usize, delta: f64 },
}

#[derive(Debug, Clone)]
pub struct AftResult {
    /// Harmonic coefficients of the distributed nonlinear force `T f_nl(Q x)`,
    /// including the static component.
    pub forces: HarmonicSet,
    /// Exact Jacobian of the force coefficients with respect to the
    /// displacement coefficients of the same basis.
    pub jacobian: DMatrix<f64>,
}

/// Maximum allowed drift of per-slider state between the ends of the two
/// marched cycles, relative to the largest slider strength.
const STEADY_STATE_TOL: f64 = 1e-8;

/// Evaluate the nonlinear force coefficients and their Jacobian for a set of
/// element slots.
///
/// `slot_static` holds the local static displacement `q_row . x_s` per slot;
/// element histories are initialized there with zero traction, so the scheme
/// is deterministic and independent of any previous evaluation.
pub fn aft_force(
    slots: &[ElementSlot],
    x: &HarmonicSet,
    n_time: usize,
    slot_static: &[f64],
) -> Result<AftResult, AftError> {
    let (forces, jacobian) = aft_impl(slots, x, n_time, slot_static, true)?;
    Ok(AftResult {
        forces,
        jacobian: jacobian.expect("jacobian requested"),
    })
}

/// Force coefficients only, skipping the Jacobian bookkeeping.
pub fn aft_force_values(
    slots: &[ElementSlot],
    x: &HarmonicSet,
    n_time: usize,
    slot_static: &[f64],
) -> Result<HarmonicSet, AftError> {
    let (forces, _) = aft_impl(slots, x, n_time, slot_static, false)?;
    Ok(forces)
}

fn aft_impl(
    slots: &[ElementSlot],
    x: &HarmonicSet,
    n_time: usize,
    slot_static: &[f64],
    want_jacobian: bool,
) -> Result<(HarmonicSet, Option<DMatrix<f64>>), AftError> {
    assert_eq!(slots.len(), slot_static.len());
    let basis = x.basis();
    let n_dof = basis.num_dof();
    let n_comp = basis.num_components();
    let n_coeff = basis.coeff_len();

    // omega does not enter: elements are rate independent and the grid is a
    // phase grid (derivative order zero).
    let encode = basis.sample_table(n_time, 1.0, 0)?;
    let decode = basis.decode_table(n_time)?;

    let mut forces = HarmonicSet::zeros(basis.clone());
    let mut jacobian = want_jacobian.then(|| DMatrix::<f64>::zeros(n_coeff, n_coeff));

    let mut grad_entries: Vec<(usize, f64)> = Vec::new();
    let mut fp_a: Vec<f64> = Vec::new();
    let mut fp_b: Vec<f64> = Vec::new();

    for (slot_idx, (slot, &x_static)) in slots.iter().zip(slot_static).enumerate() {
        // local displacement coefficients and sampled series
        let alpha = x.extract_row(&slot.q_row);
        let mut u = vec![0.0; n_time];
        for (b, &a) in alpha.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (j, uj) in u.iter_mut().enumerate() {
                *uj += a * encode[b][j];
            }
        }

        let mut element: Box<dyn HystereticElement> = slot.element.clone_box();
        element.init_history(x_static);

        // first cycle settles the hysteresis
        for (j, &uj) in u.iter().enumerate() {
            element.step(uj, j)?;
        }
        fp_a.clear();
        element.state_fingerprint(&mut fp_a);

        // second cycle: forces plus branch derivatives w.r.t. periodic samples
        let mut f = vec![0.0; n_time];
        // w[j][b] = d f_j / d alpha_b
        let mut w = want_jacobian.then(|| DMatrix::<f64>::zeros(n_time, n_comp));
        for (j, &uj) in u.iter().enumerate() {
            f[j] = element.step(uj, j)?;
            if let Some(w) = w.as_mut() {
                grad_entries.clear();
                element.grad_of_last_step(&mut grad_entries);
                for &(s, c) in &grad_entries {
                    for b in 0..n_comp {
                        w[(j, b)] += c * encode[b][s];
                    }
                }
            }
        }
        fp_b.clear();
        element.state_fingerprint(&mut fp_b);

        let scale = fp_a
            .iter()
            .map(|v| v.abs())
            .fold(1.0_f64, f64::max);
        let drift = fp_a
            .iter()
            .zip(&fp_b)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        if drift > STEADY_STATE_TOL * scale {
            return Err(AftError::UnsteadyHistory {
                slot: slot_idx,
                delta: drift,
            });
        }

        // local force coefficients and local Jacobian
        let mut beta = vec![0.0; n_comp];
        let mut j_local = want_jacobian.then(|| DMatrix::<f64>::zeros(n_comp, n_comp));
        for bo in 0..n_comp {
            let row = &decode[bo];
            let mut acc = 0.0;
            for j in 0..n_time {
                acc += row[j] * f[j];
            }
            beta[bo] = acc;
            if let (Some(jl), Some(w)) = (j_local.as_mut(), w.as_ref()) {
                for bi in 0..n_comp {
                    let mut jacc = 0.0;
                    for j in 0..n_time {
                        jacc += row[j] * w[(j, bi)];
                    }
                    jl[(bo, bi)] = jacc;
                }
            }
        }

        // distribute along t_col and chain through q_row
        for bo in 0..n_comp {
            for i in 0..n_dof {
                let t = slot.t_col[i];
                if t == 0.0 {
                    continue;
                }
                forces.coeffs_mut()[bo * n_dof + i] += t * beta[bo];
                if let (Some(jac), Some(jl)) = (jacobian.as_mut(), j_local.as_ref()) {
                    for bi in 0..n_comp {
                        let v = jl[(bo, bi)];
                        if v == 0.0 {
                            continue;
                        }
                        for jd in 0..n_dof {
                            let q = slot.q_row[jd];
                            if q == 0.0 {
                                continue;
                            }
                            jac[(bo * n_dof + i, bi * n_dof + jd)] += t * v * q;
                        }
                    }
                }
            }
        }
    }

    Ok((forces, jacobian))
}
