//! Pseudo-arclength continuation with a tangent predictor and an orthogonal
//! corrector.
//!
//! The augmented system `r(u, lambda) = 0` has one more unknown than
//! equations; each step predicts along the unit tangent of the bordered
//! Jacobian and corrects in the hyperplane orthogonal to that tangent. All
//! inner products are taken on scaled unknowns so that vectors mixing
//! displacement, force, and frequency stay well conditioned.

use super::{solver_by_name, SolveError, SolverOptions};
use nalgebra::{DMatrix, DVector};

/// Evaluation of the augmented residual `r(u, lambda)`.
pub struct AugEval {
    pub residual: DVector<f64>,
    /// d r / d u, present when requested
    pub jac_u: Option<DMatrix<f64>>,
    /// d r / d lambda, present when requested
    pub jac_lambda: Option<DVector<f64>>,
}

/// Residual of `n` equations in `n` unknowns plus the control parameter.
pub type AugmentedFn<'a> =
    dyn FnMut(&DVector<f64>, f64, bool) -> Result<AugEval, SolveError> + 'a;

#[derive(Debug, Clone)]
pub struct ContinuationOptions {
    /// Step sizes in scaled arclength units.
    pub initial_step: f64,
    pub min_step: f64,
    pub max_step: f64,
    /// Step adaptation drives corrector iteration counts toward this value.
    pub target_corrector_iters: usize,
    /// Fixed per-component conditioning weights for `(u, lambda)`; when absent
    /// the scale of each component is `max(|value at last point|, floor)` with
    /// the floor taken relative to the largest component, so near-zero entries
    /// neither dominate the arclength nor amplify roundoff.
    pub fixed_scaling: Option<DVector<f64>>,
    /// Relative scaling floor (fraction of the state's largest component).
    pub scaling_floor: f64,
    /// Initial sign of the tangent's parameter component.
    pub direction: f64,
    pub max_steps: usize,
    /// Corrector strategy name, resolved through the solver registry.
    pub corrector: String,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        Self {
            initial_step: 0.05,
            min_step: 1e-8,
            max_step: 0.5,
            target_corrector_iters: 3,
            fixed_scaling: None,
            scaling_floor: 1e-2,
            direction: 1.0,
            max_steps: 20_000,
            corrector: "newton".to_string(),
        }
    }
}

impl ContinuationOptions {
    fn validate(&self) -> Result<(), SolveError> {
        if !(self.min_step > 0.0 && self.min_step <= self.initial_step
            && self.initial_step <= self.max_step)
        {
            return Err(SolveError::Residual(
                "continuation steps must satisfy 0 < min <= initial <= max".to_string(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct BranchPoint {
    pub unknowns: DVector<f64>,
    pub lambda: f64,
    pub residual_norm: f64,
    pub corrector_iterations: usize,
    /// Scaled arclength step that led to this point (zero for the start).
    pub step_length: f64,
    /// Normalized inner product of the accepted correction with the
    /// predictor tangent (zero for the start point).
    pub predictor_orthogonality: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminationReason {
    /// The control parameter left the requested range.
    ParameterRangeExhausted,
    /// Corrector failures shrank the step below the minimum.
    StepUnderflow,
    MaxSteps,
}

#[derive(Debug, Clone)]
pub struct SolutionBranch {
    pub points: Vec<BranchPoint>,
    pub termination: TerminationReason,
}

impl SolutionBranch {
    pub fn truncated(&self) -> bool {
        self.termination == TerminationReason::StepUnderflow
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.lambda).collect()
    }
}

fn scale_vector(
    w: &DVector<f64>,
    opts: &ContinuationOptions,
) -> DVector<f64> {
    match &opts.fixed_scaling {
        Some(d) => d.clone(),
        None => {
            let floor = opts.scaling_floor * w.amax().max(1e-12);
            w.map(|v| v.abs().max(floor))
        }
    }
}

/// Unit tangent (in scaled coordinates) of the bordered Jacobian at `(u, lambda)`.
fn tangent(
    f: &mut AugmentedFn,
    u: &DVector<f64>,
    lambda: f64,
    scale: &DVector<f64>,
    border_row: &DVector<f64>,
) -> Result<DVector<f64>, SolveError> {
    let n = u.len();
    let eval = f(u, lambda, true)?;
    let jac_u = eval
        .jac_u
        .ok_or_else(|| SolveError::Residual("jacobian missing".to_string()))?;
    let jac_l = eval
        .jac_lambda
        .ok_or_else(|| SolveError::Residual("parameter jacobian missing".to_string()))?;

    let mut bordered = DMatrix::zeros(n + 1, n + 1);
    for i in 0..n {
        for j in 0..n {
            bordered[(i, j)] = jac_u[(i, j)] * scale[j];
        }
        bordered[(i, n)] = jac_l[i] * scale[n];
    }
    for j in 0..=n {
        bordered[(n, j)] = border_row[j];
    }
    let mut rhs = DVector::zeros(n + 1);
    rhs[n] = 1.0;
    let t = bordered
        .lu()
        .solve(&rhs)
        .filter(|t| t.iter().all(|v| v.is_finite()))
        .ok_or(SolveError::SingularJacobian { iteration: 0 })?;
    let norm = t.norm();
    if norm == 0.0 {
        return Err(SolveError::SingularJacobian { iteration: 0 });
    }
    Ok(t / norm)
}

/// Trace a branch of `r(u, lambda) = 0` from a converged start point until
/// `lambda` leaves `lambda_range`, the step underflows, or `max_steps` points
/// are accepted. Folds in `lambda` are traversed transparently.
pub fn continue_branch(
    f: &mut AugmentedFn,
    start_unknowns: &DVector<f64>,
    start_lambda: f64,
    lambda_range: (f64, f64),
    copts: &ContinuationOptions,
    sopts: &SolverOptions,
) -> Result<SolutionBranch, SolveError> {
    copts.validate()?;
    let solver = solver_by_name(&copts.corrector)?;
    let n = start_unknowns.len();
    let (lambda_lo, lambda_hi) = (
        lambda_range.0.min(lambda_range.1),
        lambda_range.0.max(lambda_range.1),
    );

    // polish the start point at fixed lambda
    let mut fixed = |x: &DVector<f64>, want: bool| {
        let eval = f(x, start_lambda, want)?;
        Ok((eval.residual, eval.jac_u))
    };
    let polished = solver.solve(&mut fixed, start_unknowns, sopts)?;
    let mut u = polished.x;
    let mut lambda = start_lambda;

    let mut points = vec![BranchPoint {
        unknowns: u.clone(),
        lambda,
        residual_norm: polished.diagnostics.final_norm,
        corrector_iterations: polished.diagnostics.iterations,
        step_length: 0.0,
        predictor_orthogonality: 0.0,
    }];

    // tangent bookkeeping in physical coordinates so rescaling between steps
    // stays consistent
    let mut w_phys = DVector::zeros(n + 1);
    w_phys.rows_mut(0, n).copy_from(&u);
    w_phys[n] = lambda;
    let mut scale = scale_vector(&w_phys, copts);

    let mut lambda_row = DVector::zeros(n + 1);
    lambda_row[n] = 1.0;
    let mut t_scaled = tangent(f, &u, lambda, &scale, &lambda_row)?;
    if t_scaled[n] * copts.direction < 0.0 {
        t_scaled = -t_scaled;
    }
    let mut t_phys = t_scaled.component_mul(&scale);

    let mut step = copts.initial_step;
    let mut termination = TerminationReason::MaxSteps;

    while points.len() < copts.max_steps {
        // predictor in the scaled coordinates of the current point
        let w_pred_scaled = w_phys.component_div(&scale) + &t_scaled * step;

        // corrector over (u, lambda): residual rows plus the hyperplane
        // orthogonal to the predictor tangent; the constraint subtracts in
        // physical coordinates before scaling to avoid cancellation noise
        let w_pred_phys = w_pred_scaled.component_mul(&scale);
        let t_for_constraint = t_scaled.clone();
        let scale_for_constraint = scale.clone();
        let w_pred_for_constraint = w_pred_phys.clone();
        let mut corrector_fn = |w: &DVector<f64>, want: bool| {
            let u_w = w.rows(0, n).into_owned();
            let lambda_w = w[n];
            let eval = f(&u_w, lambda_w, want)?;
            let mut r = DVector::zeros(n + 1);
            r.rows_mut(0, n).copy_from(&eval.residual);
            let corr = (w - &w_pred_for_constraint).component_div(&scale_for_constraint);
            r[n] = t_for_constraint.dot(&corr);
            let jac = if want {
                let ju = eval
                    .jac_u
                    .ok_or_else(|| SolveError::Residual("jacobian missing".to_string()))?;
                let jl = eval
                    .jac_lambda
                    .ok_or_else(|| SolveError::Residual("parameter jacobian missing".to_string()))?;
                let mut j = DMatrix::zeros(n + 1, n + 1);
                j.view_mut((0, 0), (n, n)).copy_from(&ju);
                for i in 0..n {
                    j[(i, n)] = jl[i];
                }
                for col in 0..=n {
                    j[(n, col)] = t_for_constraint[col] / scale_for_constraint[col];
                }
                Some(j)
            } else {
                None
            };
            Ok((r, jac))
        };

        match solver.solve(&mut corrector_fn, &w_pred_phys, sopts) {
            Ok(sol) => {
                let w_new = sol.x;
                let u_new = w_new.rows(0, n).into_owned();
                let lambda_new = w_new[n];

                let correction = (&w_new - &w_pred_phys).component_div(&scale);
                // corrections below this norm mean the prediction was
                // accepted as-is; the normalized quotient is then noise
                let orth = if correction.norm() > 1e-11 {
                    t_scaled.dot(&correction).abs() / correction.norm()
                } else {
                    0.0
                };

                points.push(BranchPoint {
                    unknowns: u_new.clone(),
                    lambda: lambda_new,
                    residual_norm: sol.diagnostics.final_norm,
                    corrector_iterations: sol.diagnostics.iterations,
                    step_length: step,
                    predictor_orthogonality: orth,
                });

                u = u_new;
                lambda = lambda_new;
                w_phys.rows_mut(0, n).copy_from(&u);
                w_phys[n] = lambda;

                if lambda < lambda_lo || lambda > lambda_hi {
                    termination = TerminationReason::ParameterRangeExhausted;
                    break;
                }

                // rescale, recompute the tangent, keep orientation
                scale = scale_vector(&w_phys, copts);
                let prev_dir = {
                    let v = t_phys.component_div(&scale);
                    let nv = v.norm();
                    if nv > 0.0 {
                        v / nv
                    } else {
                        lambda_row.clone()
                    }
                };
                let t_new = tangent(f, &u, lambda, &scale, &prev_dir)?;
                let t_new = if t_new.dot(&prev_dir) < 0.0 { -t_new } else { t_new };
                t_scaled = t_new;
                t_phys = t_scaled.component_mul(&scale);

                let iters = sol.diagnostics.iterations.max(1);
                let growth = (copts.target_corrector_iters as f64 / iters as f64).clamp(0.5, 2.0);
                step = (step * growth).clamp(copts.min_step, copts.max_step);
            }
            Err(SolveError::NonConvergence { .. }) | Err(SolveError::SingularJacobian { .. }) => {
                step *= 0.5;
                if step < copts.min_step {
                    termination = TerminationReason::StepUnderflow;
                    break;
                }
            }
            Err(other) => return Err(other),
        }
    }

    log::debug!(
        "continuation finished with {} points ({:?})",
        points.len(),
        termination
    );
    Ok(SolutionBranch { points, termination })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn circle_residual(u: &DVector<f64>, lambda: f64, _want: bool) -> Result<AugEval, SolveError> {
        let x = u[0];
        Ok(AugEval {
            residual: DVector::from_row_slice(&[x * x + lambda * lambda - 1.0]),
            jac_u: Some(DMatrix::from_row_slice(1, 1, &[2.0 * x])),
            jac_lambda: Some(DVector::from_row_slice(&[2.0 * lambda])),
        })
    }

    #[test]
    fn circle_is_traced_through_the_fold() {
        let sopts = SolverOptions {
            abs_tol: 1e-12,
            ..Default::default()
        };
        let copts = ContinuationOptions {
            initial_step: 0.05,
            max_step: 0.1,
            direction: 1.0,
            ..Default::default()
        };
        let branch = continue_branch(
            &mut circle_residual,
            &DVector::from_row_slice(&[1.0]),
            0.0,
            (-0.9, 2.0),
            &copts,
            &sopts,
        )
        .unwrap();

        assert!(branch.points.len() > 20);
        for p in &branch.points {
            let r = p.unknowns[0].powi(2) + p.lambda.powi(2) - 1.0;
            assert!(r.abs() < 1e-10, "off-circle point with residual {r:e}");
        }
        // passes through the fold at (0, 1): lambda rises to ~1 then x goes
        // negative while lambda decreases
        let max_lambda = branch.lambdas().iter().cloned().fold(f64::MIN, f64::max);
        assert!(max_lambda > 0.999);
        assert!(branch.points.iter().any(|p| p.unknowns[0] < -0.5));
    }

    #[test]
    fn corrector_is_orthogonal_to_predictor() {
        let sopts = SolverOptions {
            abs_tol: 1e-14,
            rel_tol: 0.0,
            ..Default::default()
        };
        let copts = ContinuationOptions::default();
        let branch = continue_branch(
            &mut circle_residual,
            &DVector::from_row_slice(&[1.0]),
            0.0,
            (-0.9, 2.0),
            &copts,
            &sopts,
        )
        .unwrap();
        for p in branch.points.iter().skip(1) {
            assert!(
                p.predictor_orthogonality < 1e-10,
                "orthogonality {:.3e}",
                p.predictor_orthogonality
            );
        }
    }

    #[test]
    fn linear_frf_matches_analytic_receptance() {
        // 1-DOF: (k - omega^2 m) xc + omega c xs = f ; (k - omega^2 m) xs - omega c xc = 0
        let (m, c, k, fmag) = (1.0, 0.05, 4.0, 1.0);
        let mut f = move |u: &DVector<f64>, omega: f64, _want: bool| {
            let (xc, xs) = (u[0], u[1]);
            let kd = k - omega * omega * m;
            Ok(AugEval {
                residual: DVector::from_row_slice(&[
                    kd * xc + omega * c * xs - fmag,
                    kd * xs - omega * c * xc,
                ]),
                jac_u: Some(DMatrix::from_row_slice(
                    2,
                    2,
                    &[kd, omega * c, -omega * c, kd],
                )),
                jac_lambda: Some(DVector::from_row_slice(&[
                    -2.0 * omega * m * xc + c * xs,
                    -2.0 * omega * m * xs - c * xc,
                ])),
            })
        };
        let omega0 = 0.5;
        let kd0 = k - omega0 * omega0 * m;
        let denom = kd0 * kd0 + (omega0 * c).powi(2);
        let start = DVector::from_row_slice(&[fmag * kd0 / denom, fmag * omega0 * c / denom]);
        let branch = continue_branch(
            &mut f,
            &start,
            omega0,
            (0.5, 4.0),
            &ContinuationOptions {
                initial_step: 0.02,
                max_step: 0.2,
                ..Default::default()
            },
            &SolverOptions {
                abs_tol: 1e-12,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(branch.points.len() > 10);
        for p in &branch.points {
            let om = p.lambda;
            let kd = k - om * om * m;
            let denom = kd * kd + (om * c).powi(2);
            assert_abs_diff_eq!(p.unknowns[0], fmag * kd / denom, epsilon = 1e-8);
            assert_abs_diff_eq!(p.unknowns[1], fmag * om * c / denom, epsilon = 1e-8);
        }
        assert_eq!(
            branch.termination,
            TerminationReason::ParameterRangeExhausted
        );
    }

    #[test]
    fn direction_reversal_traces_the_other_way() {
        let sopts = SolverOptions {
            abs_tol: 1e-12,
            ..Default::default()
        };
        let mk_opts = |dir: f64| ContinuationOptions {
            initial_step: 0.05,
            max_step: 0.05,
            direction: dir,
            ..Default::default()
        };
        let fwd = continue_branch(
            &mut circle_residual,
            &DVector::from_row_slice(&[1.0]),
            0.0,
            (-0.7, 0.7),
            &mk_opts(1.0),
            &sopts,
        )
        .unwrap();
        let rev = continue_branch(
            &mut circle_residual,
            &DVector::from_row_slice(&[1.0]),
            0.0,
            (-0.7, 0.7),
            &mk_opts(-1.0),
            &sopts,
        )
        .unwrap();
        // forward leaves through lambda = +0.7, reverse through -0.7
        assert!(fwd.points.last().unwrap().lambda > 0.7);
        assert!(rev.points.last().unwrap().lambda < -0.7);
        // mirrored paths: compare lambda sets after reflecting
        let fwd_l: Vec<f64> = fwd.lambdas();
        let rev_l: Vec<f64> = rev.lambdas().iter().map(|l| -l).collect();
        assert_eq!(fwd_l.len(), rev_l.len());
        for (a, b) in fwd_l.iter().zip(&rev_l) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-8);
        }
    }

    #[test]
    fn step_underflow_flags_truncation() {
        // residual solvable only at lambda <= 0.5: corrector must fail beyond
        let mut f = |u: &DVector<f64>, lambda: f64, _want: bool| {
            let x = u[0];
            let cap = if lambda > 0.5 { f64::NAN } else { 0.0 };
            Ok(AugEval {
                residual: DVector::from_row_slice(&[x - lambda + cap]),
                jac_u: Some(DMatrix::from_row_slice(1, 1, &[1.0])),
                jac_lambda: Some(DVector::from_row_slice(&[-1.0])),
            })
        };
        let branch = continue_branch(
            &mut f,
            &DVector::from_row_slice(&[0.0]),
            0.0,
            (-1.0, 1.0),
            &ContinuationOptions {
                initial_step: 0.1,
                min_step: 1e-6,
                ..Default::default()
            },
            &SolverOptions {
                abs_tol: 1e-12,
                max_iter: 10,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(branch.truncated());
        assert!(branch.points.last().unwrap().lambda <= 0.5);
    }
}
