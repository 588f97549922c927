//! Full Newton-Raphson with optional backtracking line search.

use super::{
    backtrack, eval_full, ResidualFn, RootSolver, Solution, SolveDiagnostics, SolveError,
    SolverOptions,
};
use nalgebra::DVector;

pub struct NewtonSolver;

impl RootSolver for NewtonSolver {
    fn name(&self) -> &'static str {
        "newton"
    }

    fn solve(
        &self,
        residual: &mut ResidualFn,
        x0: &DVector<f64>,
        opts: &SolverOptions,
    ) -> Result<Solution, SolveError> {
        opts.validate()?;
        let mut x = x0.clone();
        let (mut r, mut jac) = eval_full(residual, &x)?;
        let norm0 = r.norm();
        let mut best = (x.clone(), norm0);
        let mut diag = SolveDiagnostics {
            iterate_norms: vec![norm0],
            ..Default::default()
        };

        for iter in 0..=opts.max_iter {
            let norm = r.norm();
            if norm < best.1 {
                best = (x.clone(), norm);
            }
            if norm <= opts.abs_tol || norm <= opts.rel_tol * norm0 {
                diag.final_norm = norm;
                return Ok(Solution { x, diagnostics: diag });
            }
            if iter == opts.max_iter {
                break;
            }

            let lu = jac.clone().lu();
            diag.jacobian_factorizations += 1;
            let step = lu
                .solve(&(-&r))
                .filter(|s| s.iter().all(|v| v.is_finite()))
                .ok_or(SolveError::SingularJacobian { iteration: iter })?;

            if opts.line_search {
                let (x_new, _) = backtrack(residual, &x, &step, norm, opts)?;
                x = x_new;
            } else {
                x += &step;
            }
            let (r_new, j_new) = eval_full(residual, &x)?;
            r = r_new;
            jac = j_new;
            diag.iterations += 1;
            diag.iterate_norms.push(r.norm());
        }

        Err(SolveError::NonConvergence {
            iterations: diag.iterations,
            best_norm: best.1,
            best_iterate: best.0,
        })
    }
}
