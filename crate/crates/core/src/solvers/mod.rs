//! Root finding and numerical continuation.
//!
//! Two interchangeable root-finding strategies sit behind the
//! [`RootSolver`] trait and are selected by name through [`solver_by_name`]:
//! full Newton-Raphson (`"newton"`) and a quasi-Newton scheme (`"bfgs"`) that
//! factors the Jacobian periodically and applies rank-two inverse updates on
//! the steps in between. Pseudo-arclength continuation drives either solver
//! through folds with a tangent predictor and an orthogonal corrector.

mod bfgs;
mod continuation;
mod newton;

pub use bfgs::BfgsSolver;
pub use continuation::{
    continue_branch, AugEval, AugmentedFn, BranchPoint, ContinuationOptions, SolutionBranch,
    TerminationReason,
};
pub use newton::NewtonSolver;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("solver did not converge in {iterations} iterations (best residual norm {best_norm:e})")]
    NonConvergence {
        iterations: usize,
        best_norm: f64,
        best_iterate: DVector<f64>,
    },
    #[error("jacobian factorization is singular at iteration {iteration}")]
    SingularJacobian { iteration: usize },
    #[error("residual evaluation failed: {0}")]
    Residual(String),
    #[error("unknown solver strategy `{0}`")]
    UnknownStrategy(String),
}

/// Residual evaluation. The flag asks for the square Jacobian alongside the
/// residual; implementations may skip the (often dominant) Jacobian assembly
/// when it is `false`. Returning `None` despite `true` is an error.
pub type ResidualFn<'a> = dyn FnMut(&DVector<f64>, bool) -> Result<(DVector<f64>, Option<DMatrix<f64>>), SolveError>
    + 'a;

/// Adapt a plain `(residual, jacobian)` closure to the [`ResidualFn`] shape.
pub fn with_jacobian<'a, F>(mut f: F) -> impl FnMut(&DVector<f64>, bool) -> Result<(DVector<f64>, Option<DMatrix<f64>>), SolveError> + 'a
where
    F: FnMut(&DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>), SolveError> + 'a,
{
    move |x, _want| {
        let (r, j) = f(x)?;
        Ok((r, Some(j)))
    }
}

pub(crate) fn eval_full(
    residual: &mut ResidualFn,
    x: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>), SolveError> {
    let (r, j) = residual(x, true)?;
    let j = j.ok_or_else(|| {
        SolveError::Residual("jacobian requested but not provided".to_string())
    })?;
    Ok((r, j))
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iter: usize,
    /// Backtracking line search on the residual 2-norm.
    pub line_search: bool,
    pub max_backtracks: usize,
    /// Steps between full Jacobian factorizations: 1 reproduces full Newton,
    /// 2 factors every other step starting from the first.
    pub jacobian_refresh_period: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-9,
            rel_tol: 1e-12,
            max_iter: 40,
            line_search: false,
            max_backtracks: 8,
            jacobian_refresh_period: 2,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<(), SolveError> {
        if self.abs_tol <= 0.0 || self.rel_tol < 0.0 {
            return Err(SolveError::Residual(
                "tolerances must be positive".to_string(),
            ));
        }
        if self.jacobian_refresh_period == 0 {
            return Err(SolveError::Residual(
                "jacobian refresh period must be >= 1".to_string(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct SolveDiagnostics {
    pub iterations: usize,
    pub final_norm: f64,
    pub jacobian_factorizations: usize,
    /// Iterates visited, including the start point.
    pub iterate_norms: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub x: DVector<f64>,
    pub diagnostics: SolveDiagnostics,
}

/// A root-finding strategy for square nonlinear systems.
pub trait RootSolver: Send + Sync {
    fn name(&self) -> &'static str;

    fn solve(
        &self,
        residual: &mut ResidualFn,
        x0: &DVector<f64>,
        opts: &SolverOptions,
    ) -> Result<Solution, SolveError>;
}

/// Look up a registered solver strategy by name.
pub fn solver_by_name(name: &str) -> Result<Box<dyn RootSolver>, SolveError> {
    match name {
        "newton" => Ok(Box::new(NewtonSolver)),
        "bfgs" => Ok(Box::new(BfgsSolver)),
        other => Err(SolveError::UnknownStrategy(other.to_string())),
    }
}

/// Solver strategies known to [`solver_by_name`].
pub const SOLVER_KINDS: &[&str] = &["newton", "bfgs"];

/// Full Newton-Raphson solve; see [`NewtonSolver`].
pub fn newton_solve(
    residual: &mut ResidualFn,
    x0: &DVector<f64>,
    opts: &SolverOptions,
) -> Result<Solution, SolveError> {
    NewtonSolver.solve(residual, x0, opts)
}

/// Quasi-Newton solve with periodic factorization; see [`BfgsSolver`].
pub fn bfgs_solve(
    residual: &mut ResidualFn,
    x0: &DVector<f64>,
    opts: &SolverOptions,
) -> Result<Solution, SolveError> {
    BfgsSolver.solve(residual, x0, opts)
}

/// Backtracking line search shared by the solver strategies: halve the step
/// until the residual norm decreases (or the backtrack budget is spent).
/// Candidates are evaluated without Jacobians.
pub(crate) fn backtrack(
    residual: &mut ResidualFn,
    x: &DVector<f64>,
    step: &DVector<f64>,
    current_norm: f64,
    opts: &SolverOptions,
) -> Result<(DVector<f64>, DVector<f64>), SolveError> {
    let mut alpha = 1.0;
    let mut last = None;
    for _ in 0..=opts.max_backtracks {
        let candidate = x + step * alpha;
        let (r, _) = residual(&candidate, false)?;
        if r.norm() < current_norm {
            return Ok((candidate, r));
        }
        last = Some((candidate, r));
        alpha *= 0.5;
    }
    // no improvement found: accept the smallest step and let the outer
    // iteration (or its caller) judge convergence
    Ok(last.expect("at least one candidate evaluated"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn quadratic(
        x: &DVector<f64>,
        _want: bool,
    ) -> Result<(DVector<f64>, Option<DMatrix<f64>>), SolveError> {
        let r = DVector::from_row_slice(&[x[0] * x[0] - 4.0]);
        let j = DMatrix::from_row_slice(1, 1, &[2.0 * x[0]]);
        Ok((r, Some(j)))
    }

    #[test]
    fn newton_finds_quadratic_root() {
        let sol = newton_solve(
            &mut quadratic,
            &DVector::from_row_slice(&[3.0]),
            &SolverOptions {
                abs_tol: 1e-13,
                ..Default::default()
            },
        )
        .unwrap();
        assert_abs_diff_eq!(sol.x[0], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn bfgs_finds_same_root() {
        let sol = bfgs_solve(
            &mut quadratic,
            &DVector::from_row_slice(&[3.0]),
            &SolverOptions {
                abs_tol: 1e-13,
                ..Default::default()
            },
        )
        .unwrap();
        assert_abs_diff_eq!(sol.x[0], 2.0, epsilon = 1e-10);
    }

    #[test]
    fn linear_system_converges_in_one_iteration() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.5, 3.0]);
        let b = DVector::from_row_slice(&[1.0, -2.0]);
        let mut f = with_jacobian(|x: &DVector<f64>| {
            let r = &a * x - &b;
            Ok((r, a.clone()))
        });
        let sol = newton_solve(&mut f, &DVector::zeros(2), &SolverOptions::default()).unwrap();
        assert_eq!(sol.diagnostics.iterations, 1);
        assert!((a.clone() * &sol.x - &b).norm() < 1e-12);
    }

    #[test]
    fn bfgs_counts_alternating_factorizations() {
        // a mildly nonlinear 2d system that needs several iterations
        let mut f = with_jacobian(|x: &DVector<f64>| {
            let r = DVector::from_row_slice(&[
                x[0] + 0.3 * (x[1].sin()) - 0.5,
                x[1] + 0.3 * (x[0].cos()) - 1.0,
            ]);
            let j = DMatrix::from_row_slice(
                2,
                2,
                &[1.0, 0.3 * x[1].cos(), -0.3 * x[0].sin(), 1.0],
            );
            Ok((r, j))
        });
        let sol = bfgs_solve(
            &mut f,
            &DVector::from_row_slice(&[5.0, -5.0]),
            &SolverOptions {
                abs_tol: 1e-12,
                ..Default::default()
            },
        )
        .unwrap();
        let iters = sol.diagnostics.iterations;
        assert_eq!(
            sol.diagnostics.jacobian_factorizations,
            iters.div_ceil(2),
            "expected a factorization on every other step (iters = {iters})"
        );
    }

    #[test]
    fn refresh_period_one_reduces_to_newton() {
        let f1 = |x: &DVector<f64>| {
            let r: DVector<f64> =
                DVector::from_row_slice(&[x[0].powi(3) - x[1] - 1.0, x[1].exp() - 2.0]);
            let j = DMatrix::from_row_slice(2, 2, &[3.0 * x[0] * x[0], -1.0, 0.0, x[1].exp()]);
            Ok((r, j))
        };
        let opts = SolverOptions {
            jacobian_refresh_period: 1,
            abs_tol: 1e-13,
            ..Default::default()
        };
        let x0 = DVector::from_row_slice(&[2.0, 0.2]);
        let newton = newton_solve(&mut with_jacobian(f1), &x0, &opts).unwrap();
        let bfgs = bfgs_solve(&mut with_jacobian(f1), &x0, &opts).unwrap();
        assert_eq!(
            newton.diagnostics.iterate_norms.len(),
            bfgs.diagnostics.iterate_norms.len()
        );
        for (a, b) in newton
            .diagnostics
            .iterate_norms
            .iter()
            .zip(&bfgs.diagnostics.iterate_norms)
        {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
        assert_abs_diff_eq!(newton.x[0], bfgs.x[0], epsilon = 1e-14);
        assert_abs_diff_eq!(newton.x[1], bfgs.x[1], epsilon = 1e-14);
    }

    #[test]
    fn bfgs_skips_jacobians_off_refresh_steps() {
        let mut jacobian_calls = 0usize;
        {
            let mut f = |x: &DVector<f64>, want: bool| {
                if want {
                    jacobian_calls += 1;
                }
                let r = DVector::from_row_slice(&[
                    x[0].powi(3) - x[1] - 1.0,
                    x[1] + 0.5 * x[0] - 2.0,
                ]);
                let j = want.then(|| {
                    DMatrix::from_row_slice(2, 2, &[3.0 * x[0] * x[0], -1.0, 0.5, 1.0])
                });
                Ok((r, j))
            };
            let sol = bfgs_solve(
                &mut f,
                &DVector::from_row_slice(&[2.0, 0.0]),
                &SolverOptions::default(),
            )
            .unwrap();
            assert!(sol.diagnostics.iterations > 2);
        }
        assert!(jacobian_calls >= 1);
    }

    #[test]
    fn nonconvergence_carries_best_iterate() {
        // no real root: x^2 + 1 = 0
        let mut f = with_jacobian(|x: &DVector<f64>| {
            let r = DVector::from_row_slice(&[x[0] * x[0] + 1.0]);
            let j = DMatrix::from_row_slice(1, 1, &[2.0 * x[0]]);
            Ok((r, j))
        });
        let err = newton_solve(
            &mut f,
            &DVector::from_row_slice(&[1.5]),
            &SolverOptions {
                max_iter: 6,
                ..Default::default()
            },
        )
        .unwrap_err();
        match err {
            SolveError::NonConvergence {
                iterations,
                best_norm,
                ..
            } => {
                assert_eq!(iterations, 6);
                assert!(best_norm >= 1.0);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn singular_jacobian_is_reported_distinctly() {
        let mut f = with_jacobian(|x: &DVector<f64>| {
            let r = DVector::from_row_slice(&[x[0] + 1.0]);
            let j = DMatrix::from_row_slice(1, 1, &[0.0]);
            Ok((r, j))
        });
        let err = newton_solve(
            &mut f,
            &DVector::from_row_slice(&[1.0]),
            &SolverOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, SolveError::SingularJacobian { .. }));
    }

    #[test]
    fn registry_exposes_both_strategies() {
        for kind in SOLVER_KINDS {
            let solver = solver_by_name(kind).unwrap();
            assert_eq!(&solver.name(), kind);
        }
        assert!(solver_by_name("secant").is_err());
    }
}
