//! Harmonic balance residuals and frequency response curves.
//!
//! The balance rows for each listed harmonic pair the dynamic stiffness with
//! the AFT nonlinear force coefficients; external forcing enters only the
//! first-harmonic rows. Three control modes are supported: constant force,
//! controlled first-harmonic amplitude (one extra equation, cosine forcing
//! freed), and controlled amplitude plus phase (two extra equations, both
//! forcing scalars freed).

use crate::elements::{aft_force, aft_force_values, AftError, AftResult, ElementSlot};
use crate::harmonic::{Component, HarmonicBasis, HarmonicError, HarmonicSet};
use crate::linalg::{dynamic_solve, generalized_eig, LinalgError};
use crate::solvers::{
    continue_branch, newton_solve, AugEval, ContinuationOptions, SolutionBranch, SolveError,
    SolverOptions, TerminationReason,
};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HbmError {
    #[error("model validation failed: {0}")]
    Model(String),
    #[error("control requires harmonic 1 in the basis")]
    MissingHarmonicOne,
    #[error("control extraction row is orthogonal to the responding shape (near a node); constraint would be singular")]
    DegenerateControlRow,
    #[error("dynamic stiffness is singular at omega = {omega}")]
    SingularDynamicStiffness { omega: f64 },
    #[error("start point did not converge from the linear initial guess: {source}")]
    StartPoint {
        source: SolveError,
        guess: Box<HarmonicSet>,
    },
    #[error(transparent)]
    Aft(#[from] AftError),
    #[error(transparent)]
    Harmonic(#[from] HarmonicError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

/// Linear matrices, nonlinear element slots, and forcing shapes of a system.
#[derive(Debug, Clone)]
pub struct SystemModel {
    pub mass: DMatrix<f64>,
    pub damping: DMatrix<f64>,
    pub stiffness: DMatrix<f64>,
    pub slots: Vec<ElementSlot>,
    pub f_ext: DVector<f64>,
    pub f_ext0: DVector<f64>,
    pub labels: Vec<String>,
}

impl SystemModel {
    pub fn new(
        mass: DMatrix<f64>,
        damping: DMatrix<f64>,
        stiffness: DMatrix<f64>,
        slots: Vec<ElementSlot>,
        f_ext: DVector<f64>,
        f_ext0: DVector<f64>,
        labels: Vec<String>,
    ) -> Result<Self, HbmError> {
        let n = mass.nrows();
        let square = |m: &DMatrix<f64>, name: &str| {
            if m.nrows() != n || m.ncols() != n {
                return Err(HbmError::Model(format!("{name} must be {n}x{n}")));
            }
            Ok(())
        };
        square(&mass, "mass")?;
        square(&damping, "damping")?;
        square(&stiffness, "stiffness")?;
        let sym_tol = 1e-10;
        let check_sym = |m: &DMatrix<f64>, name: &str| {
            let scale = m.amax().max(1e-30);
            if (m - m.transpose()).amax() > sym_tol * scale {
                return Err(HbmError::Model(format!("{name} must be symmetric")));
            }
            Ok(())
        };
        check_sym(&mass, "mass")?;
        check_sym(&stiffness, "stiffness")?;
        if nalgebra::Cholesky::new(mass.clone()).is_none() {
            return Err(HbmError::Model(
                "mass matrix must be positive definite".to_string(),
            ));
        }
        if f_ext.len() != n || f_ext0.len() != n {
            return Err(HbmError::Model(format!("force shapes must have length {n}")));
        }
        for (i, slot) in slots.iter().enumerate() {
            if slot.q_row.len() != n || slot.t_col.len() != n {
                return Err(HbmError::Model(format!("slot {i} maps must have length {n}")));
            }
        }
        let labels = if labels.is_empty() {
            (1..=n).map(|i| format!("dof{i}")).collect()
        } else if labels.len() == n {
            labels
        } else {
            return Err(HbmError::Model(format!("need {n} DOF labels")));
        };
        Ok(Self {
            mass,
            damping,
            stiffness,
            slots,
            f_ext,
            f_ext0,
            labels,
        })
    }

    pub fn num_dof(&self) -> usize {
        self.mass.nrows()
    }

    /// Stiffness with every element linearized at its stuck tangent.
    pub fn stuck_stiffness(&self) -> DMatrix<f64> {
        let mut k = self.stiffness.clone();
        for slot in &self.slots {
            let kt = slot.element.stuck_stiffness();
            for i in 0..self.num_dof() {
                for j in 0..self.num_dof() {
                    k[(i, j)] += kt * slot.t_col[i] * slot.q_row[j];
                }
            }
        }
        k
    }

    /// Mass-normalized modes of the stuck-linearized system:
    /// natural frequencies (rad/s, ascending) and shape columns.
    pub fn stuck_modes(&self) -> Result<(DVector<f64>, DMatrix<f64>), HbmError> {
        let (vals, vecs) = generalized_eig(&self.stuck_stiffness(), &self.mass)?;
        Ok((vals.map(|v| v.max(0.0).sqrt()), vecs))
    }
}

/// Cosine/sine scalings of the external force shape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForcingState {
    pub f_mag_c: f64,
    pub f_mag_s: f64,
}

impl ForcingState {
    pub fn cosine(f_mag_c: f64) -> Self {
        Self {
            f_mag_c,
            f_mag_s: 0.0,
        }
    }

    pub fn f_mag(&self) -> f64 {
        self.f_mag_c.hypot(self.f_mag_s)
    }
}

/// Response control applied on top of the balance rows.
#[derive(Debug, Clone)]
pub enum ControlSpec {
    /// Forcing scalars fixed; no extra rows.
    ConstantForce,
    /// One extra row fixes the first-harmonic amplitude extracted by `row`
    /// (of the `derivative_order`-th time derivative); `f_mag_c` is freed and
    /// `f_mag_s` stays zero.
    AmplitudeOnly {
        row: DVector<f64>,
        amplitude: f64,
        derivative_order: u32,
    },
    /// Two extra rows pin the first-harmonic cosine amplitude and zero the
    /// sine component; both forcing scalars are freed.
    AmplitudePhase {
        row: DVector<f64>,
        amplitude: f64,
        derivative_order: u32,
    },
}

impl ControlSpec {
    pub fn extra_rows(&self) -> usize {
        match self {
            ControlSpec::ConstantForce => 0,
            ControlSpec::AmplitudeOnly { .. } => 1,
            ControlSpec::AmplitudePhase { .. } => 2,
        }
    }

    pub fn amplitude(&self) -> Option<f64> {
        match self {
            ControlSpec::ConstantForce => None,
            ControlSpec::AmplitudeOnly { amplitude, .. }
            | ControlSpec::AmplitudePhase { amplitude, .. } => Some(*amplitude),
        }
    }

    pub fn with_amplitude(&self, a: f64) -> ControlSpec {
        match self {
            ControlSpec::ConstantForce => ControlSpec::ConstantForce,
            ControlSpec::AmplitudeOnly {
                row,
                derivative_order,
                ..
            } => ControlSpec::AmplitudeOnly {
                row: row.clone(),
                amplitude: a,
                derivative_order: *derivative_order,
            },
            ControlSpec::AmplitudePhase {
                row,
                derivative_order,
                ..
            } => ControlSpec::AmplitudePhase {
                row: row.clone(),
                amplitude: a,
                derivative_order: *derivative_order,
            },
        }
    }
}

/// A model bound to a harmonic basis and AFT grid, with the prestress state
/// that seeds every element history.
#[derive(Debug, Clone)]
pub struct HbmSystem {
    pub model: SystemModel,
    pub basis: HarmonicBasis,
    pub n_time: usize,
    pub x_static: DVector<f64>,
    slot_static: Vec<f64>,
}

impl HbmSystem {
    pub fn new(
        model: SystemModel,
        basis: HarmonicBasis,
        n_time: usize,
        sopts: &SolverOptions,
    ) -> Result<Self, HbmError> {
        if basis.num_dof() != model.num_dof() {
            return Err(HbmError::Model(format!(
                "basis has {} DOFs, model has {}",
                basis.num_dof(),
                model.num_dof()
            )));
        }
        basis.validate_time_grid(n_time)?;
        let x_static = prestress_solve(&model, sopts)?;
        let slot_static = model
            .slots
            .iter()
            .map(|s| s.local_displacement(&x_static))
            .collect();
        Ok(Self {
            model,
            basis,
            n_time,
            x_static,
            slot_static,
        })
    }

    pub fn aft(&self, x: &HarmonicSet) -> Result<AftResult, AftError> {
        aft_force(&self.model.slots, x, self.n_time, &self.slot_static)
    }

    pub fn aft_values(&self, x: &HarmonicSet) -> Result<HarmonicSet, AftError> {
        aft_force_values(&self.model.slots, x, self.n_time, &self.slot_static)
    }

    pub fn slot_static(&self) -> &[f64] {
        &self.slot_static
    }

    /// Harmonic set with the static row at the prestress solution and zeros
    /// elsewhere; the canonical template for initial guesses.
    pub fn static_guess(&self) -> HarmonicSet {
        let mut x = HarmonicSet::zeros(self.basis.clone());
        if self.basis.contains(0) {
            x.set_block(Component::Constant, &self.x_static);
        }
        x
    }

    /// Balance rows and, on request, their Jacobians. `damping_shift`
    /// subtracts `shift * M` from the damping matrix (self-excited modal
    /// analysis) and `forced` controls whether the external forcing enters
    /// the first-harmonic rows.
    pub(crate) fn balance_rows(
        &self,
        x: &HarmonicSet,
        omega: f64,
        forcing: &ForcingState,
        damping_shift: f64,
        forced: bool,
        want_jac: bool,
    ) -> Result<BalanceRows, HbmError> {
        let n = self.model.num_dof();
        let basis = &self.basis;
        let comps = basis.components();
        let n_coeff = basis.coeff_len();

        let (f_nl, aft_jac) = if want_jac {
            let aft = self.aft(x)?;
            (aft.forces, Some(aft.jacobian))
        } else {
            (self.aft_values(x)?, None)
        };

        let m = &self.model.mass;
        let k = &self.model.stiffness;
        let c_eff = &self.model.damping - self.model.mass.clone() * damping_shift;

        let mut r = DVector::zeros(n_coeff);
        let mut jac_x = aft_jac;
        let mut jac_omega = DVector::zeros(n_coeff);
        let mut jac_shift = DVector::zeros(n_coeff);
        let mut jac_fc = DVector::zeros(n_coeff);
        let mut jac_fs = DVector::zeros(n_coeff);

        for (b, comp) in comps.iter().enumerate() {
            let rows = b * n;
            let h = f64::from(comp.harmonic());
            match comp {
                Component::Constant => {
                    let x0 = x.block(Component::Constant).unwrap();
                    let f0 = f_nl.block(Component::Constant).unwrap();
                    let v = k * &x0 + &f0 - &self.model.f_ext0;
                    r.rows_mut(rows, n).copy_from(&v);
                    if let Some(j) = jac_x.as_mut() {
                        let bi = basis.component_index(Component::Constant).unwrap();
                        for i in 0..n {
                            for jdx in 0..n {
                                j[(rows + i, bi * n + jdx)] += k[(i, jdx)];
                            }
                        }
                    }
                }
                Component::Cos(hh) => {
                    let xc = x.block(Component::Cos(*hh)).unwrap();
                    let xs = x.block(Component::Sin(*hh)).unwrap();
                    let fc = f_nl.block(Component::Cos(*hh)).unwrap();
                    let mut v = k * &xc - m * &xc * (h * omega).powi(2)
                        + &c_eff * &xs * (h * omega)
                        + &fc;
                    if forced && *hh == 1 {
                        v -= &self.model.f_ext * forcing.f_mag_c;
                    }
                    r.rows_mut(rows, n).copy_from(&v);

                    let domega = m * &xc * (-2.0 * h * h * omega) + &c_eff * &xs * h;
                    jac_omega.rows_mut(rows, n).copy_from(&domega);
                    let dshift = m * &xs * (-h * omega);
                    jac_shift.rows_mut(rows, n).copy_from(&dshift);
                    if forced && *hh == 1 {
                        jac_fc
                            .rows_mut(rows, n)
                            .copy_from(&(-&self.model.f_ext));
                    }
                    if let Some(j) = jac_x.as_mut() {
                        let bc = basis.component_index(Component::Cos(*hh)).unwrap();
                        let bs = basis.component_index(Component::Sin(*hh)).unwrap();
                        for i in 0..n {
                            for jdx in 0..n {
                                j[(rows + i, bc * n + jdx)] +=
                                    k[(i, jdx)] - (h * omega).powi(2) * m[(i, jdx)];
                                j[(rows + i, bs * n + jdx)] += h * omega * c_eff[(i, jdx)];
                            }
                        }
                    }
                }
                Component::Sin(hh) => {
                    let xc = x.block(Component::Cos(*hh)).unwrap();
                    let xs = x.block(Component::Sin(*hh)).unwrap();
                    let fs = f_nl.block(Component::Sin(*hh)).unwrap();
                    let mut v = k * &xs - m * &xs * (h * omega).powi(2)
                        - &c_eff * &xc * (h * omega)
                        + &fs;
                    if forced && *hh == 1 {
                        v -= &self.model.f_ext * forcing.f_mag_s;
                    }
                    r.rows_mut(rows, n).copy_from(&v);

                    let domega = m * &xs * (-2.0 * h * h * omega) - &c_eff * &xc * h;
                    jac_omega.rows_mut(rows, n).copy_from(&domega);
                    let dshift = m * &xc * (h * omega);
                    jac_shift.rows_mut(rows, n).copy_from(&dshift);
                    if forced && *hh == 1 {
                        jac_fs
                            .rows_mut(rows, n)
                            .copy_from(&(-&self.model.f_ext));
                    }
                    if let Some(j) = jac_x.as_mut() {
                        let bc = basis.component_index(Component::Cos(*hh)).unwrap();
                        let bs = basis.component_index(Component::Sin(*hh)).unwrap();
                        for i in 0..n {
                            for jdx in 0..n {
                                j[(rows + i, bs * n + jdx)] +=
                                    k[(i, jdx)] - (h * omega).powi(2) * m[(i, jdx)];
                                j[(rows + i, bc * n + jdx)] -= h * omega * c_eff[(i, jdx)];
                            }
                        }
                    }
                }
            }
        }

        Ok(BalanceRows {
            residual: r,
            jac_x,
            jac_omega,
            jac_shift,
            jac_fc,
            jac_fs,
        })
    }
}

pub(crate) struct BalanceRows {
    pub residual: DVector<f64>,
    pub jac_x: Option<DMatrix<f64>>,
    pub jac_omega: DVector<f64>,
    /// derivative with respect to the mass-proportional damping shift
    pub jac_shift: DVector<f64>,
    pub jac_fc: DVector<f64>,
    pub jac_fs: DVector<f64>,
}

/// Evaluation of the controlled HBM residual.
#[derive(Debug)]
pub struct HbmResidual {
    pub residual: DVector<f64>,
    pub jac_x: DMatrix<f64>,
    pub jac_omega: DVector<f64>,
    pub jac_fc: DVector<f64>,
    pub jac_fs: DVector<f64>,
}

/// Controlled HBM residual: balance rows plus any active control rows.
pub fn hbm_residual(
    x: &HarmonicSet,
    omega: f64,
    forcing: &ForcingState,
    sys: &HbmSystem,
    control: &ControlSpec,
) -> Result<HbmResidual, HbmError> {
    let (r, jx, jo, jfc, jfs) = hbm_residual_impl(x, omega, forcing, sys, control, true)?;
    Ok(HbmResidual {
        residual: r,
        jac_x: jx.expect("jacobian requested"),
        jac_omega: jo,
        jac_fc: jfc,
        jac_fs: jfs,
    })
}

#[allow(clippy::type_complexity)]
pub(crate) fn hbm_residual_impl(
    x: &HarmonicSet,
    omega: f64,
    forcing: &ForcingState,
    sys: &HbmSystem,
    control: &ControlSpec,
    want_jac: bool,
) -> Result<
    (
        DVector<f64>,
        Option<DMatrix<f64>>,
        DVector<f64>,
        DVector<f64>,
        DVector<f64>,
    ),
    HbmError,
> {
    if control.extra_rows() > 0 && !sys.basis.contains(1) {
        return Err(HbmError::MissingHarmonicOne);
    }
    let base = sys.balance_rows(x, omega, forcing, 0.0, true, want_jac)?;
    let n_base = base.residual.len();
    let extra = control.extra_rows();
    let total = n_base + extra;
    let n = sys.model.num_dof();

    let mut r = DVector::zeros(total);
    r.rows_mut(0, n_base).copy_from(&base.residual);
    let mut jac_omega = DVector::zeros(total);
    jac_omega.rows_mut(0, n_base).copy_from(&base.jac_omega);
    let mut jac_fc = DVector::zeros(total);
    jac_fc.rows_mut(0, n_base).copy_from(&base.jac_fc);
    let mut jac_fs = DVector::zeros(total);
    jac_fs.rows_mut(0, n_base).copy_from(&base.jac_fs);
    let mut jac_x = base.jac_x.map(|j| {
        let mut big = DMatrix::zeros(total, n_base);
        big.view_mut((0, 0), (n_base, n_base)).copy_from(&j);
        big
    });

    match control {
        ControlSpec::ConstantForce => {}
        ControlSpec::AmplitudeOnly {
            row,
            amplitude,
            derivative_order,
        } => {
            let k = *derivative_order;
            let rc = row.dot(&x.block(Component::Cos(1)).unwrap());
            let rs = row.dot(&x.block(Component::Sin(1)).unwrap());
            let om2k = omega.powi(2 * k as i32);
            r[n_base] = om2k * (rc * rc + rs * rs) - amplitude * amplitude;
            jac_omega[n_base] = if k == 0 {
                0.0
            } else {
                2.0 * f64::from(k) * omega.powi(2 * k as i32 - 1) * (rc * rc + rs * rs)
            };
            if let Some(j) = jac_x.as_mut() {
                let bc = sys.basis.component_index(Component::Cos(1)).unwrap();
                let bs = sys.basis.component_index(Component::Sin(1)).unwrap();
                for d in 0..n {
                    j[(n_base, bc * n + d)] = 2.0 * om2k * rc * row[d];
                    j[(n_base, bs * n + d)] = 2.0 * om2k * rs * row[d];
                }
            }
        }
        ControlSpec::AmplitudePhase {
            row,
            amplitude,
            derivative_order,
        } => {
            let k = *derivative_order;
            let rc = row.dot(&x.block(Component::Cos(1)).unwrap());
            let rs = row.dot(&x.block(Component::Sin(1)).unwrap());
            let omk = omega.powi(k as i32);
            r[n_base] = omk * rc - amplitude;
            r[n_base + 1] = omk * rs;
            let domk = if k == 0 {
                0.0
            } else {
                f64::from(k) * omega.powi(k as i32 - 1)
            };
            jac_omega[n_base] = domk * rc;
            jac_omega[n_base + 1] = domk * rs;
            if let Some(j) = jac_x.as_mut() {
                let bc = sys.basis.component_index(Component::Cos(1)).unwrap();
                let bs = sys.basis.component_index(Component::Sin(1)).unwrap();
                for d in 0..n {
                    j[(n_base, bc * n + d)] = omk * row[d];
                    j[(n_base + 1, bs * n + d)] = omk * row[d];
                }
            }
        }
    }

    Ok((r, jac_x, jac_omega, jac_fc, jac_fs))
}

/// Static prestress: solve `K x + T f_nl(Q x) = F_ext0` with elements loaded
/// monotonically from their virgin state, then use the result to initialize
/// every element history at zero traction.
pub fn prestress_solve(model: &SystemModel, sopts: &SolverOptions) -> Result<DVector<f64>, HbmError> {
    let n = model.num_dof();
    let mut f = |x: &DVector<f64>, _want: bool| {
        let mut r = &model.stiffness * x - &model.f_ext0;
        let mut jac = model.stiffness.clone();
        for slot in &model.slots {
            let u = slot.local_displacement(x);
            let (force, tangent) = slot.element.monotone_force(u);
            for i in 0..n {
                r[i] += slot.t_col[i] * force;
                for j in 0..n {
                    jac[(i, j)] += slot.t_col[i] * tangent * slot.q_row[j];
                }
            }
        }
        Ok((r, Some(jac)))
    };
    let sol = newton_solve(&mut f, &DVector::zeros(n), sopts)?;
    Ok(sol.x)
}

/// Linearization state for [`linear_frf`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StiffnessState {
    /// All elements at their stuck tangent stiffness.
    Stuck,
    /// Elements removed (fully slipped limit).
    Free,
}

/// Linear receptance `H(omega) F_ext` of the (stuck- or free-) linearized
/// model. The complex convention pairs `x(t) = Re{X exp(i omega t)}` with
/// `X = X_1c - i X_1s`.
pub fn linear_frf(
    model: &SystemModel,
    omega: f64,
    state: StiffnessState,
) -> Result<DVector<Complex<f64>>, HbmError> {
    let k = match state {
        StiffnessState::Stuck => model.stuck_stiffness(),
        StiffnessState::Free => model.stiffness.clone(),
    };
    let rhs = model.f_ext.map(|v| Complex::new(v, 0.0));
    dynamic_solve(&k, &model.mass, &model.damping, omega, &rhs)
        .map_err(|_| HbmError::SingularDynamicStiffness { omega })
}

/// One converged frequency-response point.
#[derive(Debug, Clone)]
pub struct FrcPoint {
    pub omega: f64,
    pub forcing: ForcingState,
    pub x: HarmonicSet,
    pub residual_norm: f64,
    /// Residual of the active control rows, re-evaluated at the point.
    pub control_residual: f64,
}

#[derive(Debug, Clone)]
pub struct FrcBranch {
    pub points: Vec<FrcPoint>,
    pub termination: TerminationReason,
}

impl FrcBranch {
    pub fn truncated(&self) -> bool {
        self.termination == TerminationReason::StepUnderflow
    }
}

fn pack_unknowns(x: &HarmonicSet, forcing: &ForcingState, control: &ControlSpec) -> DVector<f64> {
    let l = x.coeffs().len();
    match control {
        ControlSpec::ConstantForce => x.coeffs().clone(),
        ControlSpec::AmplitudeOnly { .. } => {
            let mut u = DVector::zeros(l + 1);
            u.rows_mut(0, l).copy_from(x.coeffs());
            u[l] = forcing.f_mag_c;
            u
        }
        ControlSpec::AmplitudePhase { .. } => {
            let mut u = DVector::zeros(l + 2);
            u.rows_mut(0, l).copy_from(x.coeffs());
            u[l] = forcing.f_mag_c;
            u[l + 1] = forcing.f_mag_s;
            u
        }
    }
}

fn unpack_unknowns(
    u: &DVector<f64>,
    basis: &HarmonicBasis,
    fixed_forcing: &ForcingState,
    control: &ControlSpec,
) -> (HarmonicSet, ForcingState) {
    let l = basis.coeff_len();
    let x = HarmonicSet::from_coeffs(basis.clone(), u.rows(0, l).into_owned())
        .expect("length by construction");
    let forcing = match control {
        ControlSpec::ConstantForce => *fixed_forcing,
        ControlSpec::AmplitudeOnly { .. } => ForcingState::cosine(u[l]),
        ControlSpec::AmplitudePhase { .. } => ForcingState {
            f_mag_c: u[l],
            f_mag_s: u[l + 1],
        },
    };
    (x, forcing)
}

/// Residual closure over the packed unknown vector `[X; freed forcing]` at
/// fixed `omega` treated externally (continuation parameter).
fn controlled_residual(
    sys: &HbmSystem,
    control: &ControlSpec,
    fixed_forcing: &ForcingState,
    u: &DVector<f64>,
    omega: f64,
    want_jac: bool,
) -> Result<(DVector<f64>, Option<DMatrix<f64>>, DVector<f64>), HbmError> {
    let (x, forcing) = unpack_unknowns(u, &sys.basis, fixed_forcing, control);
    let (r, jac_x, jac_omega, jac_fc, jac_fs) =
        hbm_residual_impl(&x, omega, &forcing, sys, control, want_jac)?;
    let l = sys.basis.coeff_len();
    let extra = match control {
        ControlSpec::ConstantForce => 0,
        ControlSpec::AmplitudeOnly { .. } => 1,
        ControlSpec::AmplitudePhase { .. } => 2,
    };
    let jac_u = jac_x.map(|jx| {
        let rows = jx.nrows();
        let mut j = DMatrix::zeros(rows, l + extra);
        j.view_mut((0, 0), (rows, l)).copy_from(&jx);
        if extra >= 1 {
            j.set_column(l, &jac_fc);
        }
        if extra == 2 {
            j.set_column(l + 1, &jac_fs);
        }
        j
    });
    Ok((r, jac_u, jac_omega))
}

/// Linear initial guess for a controlled run at `omega`: stuck-linear FRF,
/// phase-rotated and scaled to satisfy the active control rows, with the
/// static row at the prestress solution.
pub fn initial_guess(
    sys: &HbmSystem,
    omega: f64,
    forcing: &ForcingState,
    control: &ControlSpec,
) -> Result<(HarmonicSet, ForcingState), HbmError> {
    let mut x = sys.static_guess();
    if !sys.basis.contains(1) {
        return Err(HbmError::MissingHarmonicOne);
    }
    let unit = linear_frf(&sys.model, omega, StiffnessState::Stuck)?;
    match control {
        ControlSpec::ConstantForce => {
            let amp = Complex::new(forcing.f_mag_c, -forcing.f_mag_s);
            let resp = unit.map(|h| h * amp);
            x.set_block(Component::Cos(1), &resp.map(|v| v.re));
            x.set_block(Component::Sin(1), &resp.map(|v| -v.im));
            Ok((x, *forcing))
        }
        ControlSpec::AmplitudeOnly {
            row,
            amplitude,
            derivative_order,
        } => {
            let r_unit: Complex<f64> = (0..sys.model.num_dof()).map(|d| unit[d] * row[d]).sum();
            let denom = omega.powi(*derivative_order as i32) * r_unit.norm();
            if denom < 1e-12 * amplitude.abs().max(1.0) {
                return Err(HbmError::DegenerateControlRow);
            }
            let f_c = amplitude / denom;
            let resp = unit.map(|h| h * f_c);
            x.set_block(Component::Cos(1), &resp.map(|v| v.re));
            x.set_block(Component::Sin(1), &resp.map(|v| -v.im));
            Ok((x, ForcingState::cosine(f_c)))
        }
        ControlSpec::AmplitudePhase {
            row,
            amplitude,
            derivative_order,
        } => {
            let r_unit: Complex<f64> = (0..sys.model.num_dof()).map(|d| unit[d] * row[d]).sum();
            if r_unit.norm() < 1e-14 {
                return Err(HbmError::DegenerateControlRow);
            }
            // rotate the response so the extracted first harmonic is purely
            // cosine and positive, then scale to the target amplitude
            let scale = amplitude / (omega.powi(*derivative_order as i32) * r_unit.norm());
            let phase = r_unit.conj() / r_unit.norm();
            let amp_c = phase * scale;
            let resp = unit.map(|h| h * amp_c);
            x.set_block(Component::Cos(1), &resp.map(|v| v.re));
            x.set_block(Component::Sin(1), &resp.map(|v| -v.im));
            Ok((
                x,
                ForcingState {
                    f_mag_c: amp_c.re,
                    f_mag_s: -amp_c.im,
                },
            ))
        }
    }
}

fn control_residual_value(
    x: &HarmonicSet,
    omega: f64,
    control: &ControlSpec,
) -> f64 {
    match control {
        ControlSpec::ConstantForce => 0.0,
        ControlSpec::AmplitudeOnly {
            row,
            amplitude,
            derivative_order,
        } => {
            let rc = row.dot(&x.block(Component::Cos(1)).unwrap());
            let rs = row.dot(&x.block(Component::Sin(1)).unwrap());
            omega.powi(2 * *derivative_order as i32) * (rc * rc + rs * rs)
                - amplitude * amplitude
        }
        ControlSpec::AmplitudePhase {
            row,
            amplitude,
            derivative_order,
        } => {
            let rc = row.dot(&x.block(Component::Cos(1)).unwrap());
            let rs = row.dot(&x.block(Component::Sin(1)).unwrap());
            let omk = omega.powi(*derivative_order as i32);
            (omk * rc - amplitude).hypot(omk * rs)
        }
    }
}

/// Converge the controlled system at fixed `omega` from the linear guess
/// (optionally seeded through an amplitude ramp when the direct solve fails).
pub fn converge_start_point(
    sys: &HbmSystem,
    omega: f64,
    forcing: &ForcingState,
    control: &ControlSpec,
    sopts: &SolverOptions,
) -> Result<(HarmonicSet, ForcingState), HbmError> {
    let (x0, forcing0) = initial_guess(sys, omega, forcing, control)?;
    let u0 = pack_unknowns(&x0, &forcing0, control);
    let mut f = |u: &DVector<f64>, want: bool| {
        controlled_residual(sys, control, forcing, u, omega, want)
            .map(|(r, j, _)| (r, j))
            .map_err(|e| SolveError::Residual(e.to_string()))
    };
    match newton_solve(&mut f, &u0, sopts) {
        Ok(sol) => {
            let (x, fstate) = unpack_unknowns(&sol.x, &sys.basis, forcing, control);
            Ok((x, fstate))
        }
        Err(err) => {
            // amplitude-controlled runs can be seeded by ramping the target
            // amplitude at this frequency from the linear regime
            if let Some(target) = control.amplitude() {
                if let Ok(seeded) =
                    seed_via_amplitude_ramp(sys, omega, control, target, sopts)
                {
                    return Ok(seeded);
                }
            }
            Err(HbmError::StartPoint {
                source: err,
                guess: Box::new(x0),
            })
        }
    }
}

fn seed_via_amplitude_ramp(
    sys: &HbmSystem,
    omega: f64,
    control: &ControlSpec,
    target: f64,
    sopts: &SolverOptions,
) -> Result<(HarmonicSet, ForcingState), HbmError> {
    let a_low = target / 100.0;
    let branch = amplitude_init_branch(
        sys,
        omega,
        control,
        (a_low, target),
        &ContinuationOptions::default(),
        sopts,
    )?;
    // nearest stored amplitude seeds the final solve at the exact target
    let best = branch
        .points
        .iter()
        .min_by(|a, b| {
            (a.lambda - target)
                .abs()
                .total_cmp(&(b.lambda - target).abs())
        })
        .ok_or_else(|| SolveError::Residual("empty amplitude ramp".to_string()))?;
    if (best.lambda - target).abs() > 0.1 * target.abs() {
        return Err(HbmError::Solve(SolveError::Residual(format!(
            "amplitude ramp stalled at {:.3e}, short of target {:.3e}",
            best.lambda, target
        ))));
    }
    let mut f = |u: &DVector<f64>, want: bool| {
        controlled_residual(sys, control, &ForcingState::cosine(0.0), u, omega, want)
            .map(|(r, j, _)| (r, j))
            .map_err(|e| SolveError::Residual(e.to_string()))
    };
    let sol = newton_solve(&mut f, &best.unknowns, sopts)?;
    Ok(unpack_unknowns(
        &sol.x,
        &sys.basis,
        &ForcingState::cosine(0.0),
        control,
    ))
}

/// Frequency response curve: trace the controlled system over `omega_range`.
pub fn frc(
    sys: &HbmSystem,
    control: &ControlSpec,
    forcing: &ForcingState,
    omega_range: (f64, f64),
    copts: &ContinuationOptions,
    sopts: &SolverOptions,
) -> Result<FrcBranch, HbmError> {
    let omega0 = omega_range.0;
    let (x0, forcing0) = converge_start_point(sys, omega0, forcing, control, sopts)?;
    let u0 = pack_unknowns(&x0, &forcing0, control);

    let mut aug = |u: &DVector<f64>, omega: f64, want: bool| {
        let (r, jac_u, jac_omega) =
            controlled_residual(sys, control, forcing, u, omega, want)
                .map_err(|e| SolveError::Residual(e.to_string()))?;
        Ok(AugEval {
            residual: r,
            jac_u,
            jac_lambda: want.then_some(jac_omega),
        })
    };
    let copts = ContinuationOptions {
        direction: if omega_range.1 >= omega_range.0 { 1.0 } else { -1.0 },
        ..copts.clone()
    };
    let branch = continue_branch(&mut aug, &u0, omega0, omega_range, &copts, sopts)?;

    let points = branch
        .points
        .iter()
        .map(|p| {
            let (x, fstate) = unpack_unknowns(&p.unknowns, &sys.basis, forcing, control);
            let control_residual = control_residual_value(&x, p.lambda, control);
            FrcPoint {
                omega: p.lambda,
                forcing: fstate,
                x,
                residual_norm: p.residual_norm,
                control_residual,
            }
        })
        .collect();
    Ok(FrcBranch {
        points,
        termination: branch.termination,
    })
}

/// Branch over the control amplitude at fixed frequency, used to seed
/// high-amplitude frequency sweeps.
pub fn amplitude_init_branch(
    sys: &HbmSystem,
    omega: f64,
    control: &ControlSpec,
    amplitude_range: (f64, f64),
    copts: &ContinuationOptions,
    sopts: &SolverOptions,
) -> Result<SolutionBranch, HbmError> {
    let a0 = amplitude_range.0;
    let control0 = control.with_amplitude(a0);
    let (x0, forcing0) = {
        let (x0, f0) = initial_guess(sys, omega, &ForcingState::cosine(0.0), &control0)?;
        let u0 = pack_unknowns(&x0, &f0, &control0);
        let mut f = |u: &DVector<f64>, want: bool| {
            controlled_residual(sys, &control0, &ForcingState::cosine(0.0), u, omega, want)
                .map(|(r, j, _)| (r, j))
                .map_err(|e| SolveError::Residual(e.to_string()))
        };
        let sol = newton_solve(&mut f, &u0, sopts).map_err(|source| HbmError::StartPoint {
            source,
            guess: Box::new(x0.clone()),
        })?;
        unpack_unknowns(&sol.x, &sys.basis, &ForcingState::cosine(0.0), &control0)
    };
    let u0 = pack_unknowns(&x0, &forcing0, control);

    let mut aug = |u: &DVector<f64>, a: f64, want: bool| {
        let control_a = control.with_amplitude(a);
        let (r, jac_u, _) =
            controlled_residual(sys, &control_a, &ForcingState::cosine(0.0), u, omega, want)
                .map_err(|e| SolveError::Residual(e.to_string()))?;
        let jac_lambda = want.then(|| {
            let mut d = DVector::zeros(r.len());
            let n_base = sys.basis.coeff_len();
            match control_a {
                ControlSpec::ConstantForce => {}
                ControlSpec::AmplitudeOnly { .. } => d[n_base] = -2.0 * a,
                ControlSpec::AmplitudePhase { .. } => d[n_base] = -1.0,
            }
            d
        });
        Ok(AugEval {
            residual: r,
            jac_u,
            jac_lambda,
        })
    };
    let copts = ContinuationOptions {
        direction: if amplitude_range.1 >= amplitude_range.0 { 1.0 } else { -1.0 },
        ..copts.clone()
    };
    Ok(continue_branch(
        &mut aug,
        &u0,
        a0,
        amplitude_range,
        &copts,
        sopts,
    )?)
}
