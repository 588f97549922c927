//! Quasi-Newton root finding: the Jacobian is evaluated and factored every
//! `jacobian_refresh_period` steps starting from the first, and rank-two
//! inverse updates carry the factorization across the steps in between.

use super::{
    backtrack, eval_full, ResidualFn, RootSolver, Solution, SolveDiagnostics, SolveError,
    SolverOptions,
};
use nalgebra::{DVector, Dyn, LU};

pub struct BfgsSolver;

struct UpdatePair {
    s: DVector<f64>,
    y: DVector<f64>,
    rho: f64,
}

/// Apply the rank-two-updated inverse Jacobian:
/// `H_m = (I - rho s y^T) H_{m-1} (I - rho y s^T) + rho s s^T`
/// with `H_0` the factored Jacobian inverse.
fn apply_inverse(
    lu: &LU<f64, Dyn, Dyn>,
    pairs: &[UpdatePair],
    v: &DVector<f64>,
) -> Option<DVector<f64>> {
    match pairs.split_last() {
        None => lu.solve(v),
        Some((p, rest)) => {
            let a = p.s.dot(v);
            let u = v - &p.y * (p.rho * a);
            let w = apply_inverse(lu, rest, &u)?;
            Some(&w - &p.s * (p.rho * p.y.dot(&w)) + &p.s * (p.rho * a))
        }
    }
}

impl RootSolver for BfgsSolver {
    fn name(&self) -> &'static str {
        "bfgs"
    }

    fn solve(
        &self,
        residual: &mut ResidualFn,
        x0: &DVector<f64>,
        opts: &SolverOptions,
    ) -> Result<Solution, SolveError> {
        opts.validate()?;
        let mut x = x0.clone();
        let mut diag = SolveDiagnostics::default();
        let mut lu: Option<LU<f64, Dyn, Dyn>> = None;
        let mut pairs: Vec<UpdatePair> = Vec::new();
        let mut prev: Option<(DVector<f64>, DVector<f64>)> = None;
        let mut norm0 = 0.0;
        let mut best: Option<(DVector<f64>, f64)> = None;

        for k in 0..=opts.max_iter {
            let refresh = k % opts.jacobian_refresh_period == 0;
            let (r, jac) = if refresh {
                let (r, jac) = eval_full(residual, &x)?;
                (r, Some(jac))
            } else {
                let (r, _) = residual(&x, false)?;
                if let Some((px, pr)) = &prev {
                    let s = &x - px;
                    let y = &r - pr;
                    let ys = y.dot(&s);
                    if ys > 1e-12 * y.norm() * s.norm() {
                        pairs.push(UpdatePair {
                            rho: 1.0 / ys,
                            s,
                            y,
                        });
                    }
                }
                (r, None)
            };

            let norm = r.norm();
            if k == 0 {
                norm0 = norm;
            }
            diag.iterate_norms.push(norm);
            if best.as_ref().map_or(true, |(_, b)| norm < *b) {
                best = Some((x.clone(), norm));
            }
            if norm <= opts.abs_tol || norm <= opts.rel_tol * norm0 {
                diag.final_norm = norm;
                return Ok(Solution { x, diagnostics: diag });
            }
            if k == opts.max_iter {
                break;
            }

            if let Some(jac) = jac {
                lu = Some(jac.lu());
                pairs.clear();
                diag.jacobian_factorizations += 1;
            }

            let step = apply_inverse(lu.as_ref().expect("factored"), &pairs, &(-&r))
                .filter(|s| s.iter().all(|v| v.is_finite()))
                .ok_or(SolveError::SingularJacobian { iteration: k })?;

            let x_new = if opts.line_search {
                backtrack(residual, &x, &step, norm, opts)?.0
            } else {
                &x + &step
            };
            prev = Some((x.clone(), r));
            x = x_new;
            diag.iterations += 1;
        }

        let (best_iterate, best_norm) = best.expect("at least one iterate evaluated");
        Err(SolveError::NonConvergence {
            iterations: diag.iterations,
            best_norm,
            best_iterate,
        })
    }
}
