//! Shared fitting machinery: design assembly, collinearity screening, and
//! the Newton loop with step-halving.

use nalgebra::{DMatrix, DVector};

use crate::dataset::TwoPhaseDesign;
use crate::error::{Error, Result};
use crate::record::ParticipantRecord;
use crate::riskreg::encoding::DesignEncoding;

pub(crate) const MAX_ITER: usize = 100;
pub(crate) const MAX_HALVINGS: usize = 10;
pub(crate) const SCORE_TOL: f64 = 1e-8;
pub(crate) const LL_TOL: f64 = 1e-9;
pub(crate) const SEPARATION_BOUND: f64 = 30.0;

/// Standardized design matrix plus weights for a fitting subset.
pub(crate) struct FitData {
    pub z: DMatrix<f64>,
    pub w: Vec<f64>,
}

pub(crate) fn assemble(
    records: &[&ParticipantRecord],
    design: &TwoPhaseDesign,
    encoding: &DesignEncoding,
) -> Result<FitData> {
    let n = records.len();
    let p = encoding.n_columns();
    let mut z = DMatrix::zeros(n, p);
    let mut row = vec![0.0; p];
    let mut w = Vec::with_capacity(n);
    for (i, rec) in records.iter().enumerate() {
        encoding.fill_row_standardized(rec, rec.marker, &mut row)?;
        for (j, v) in row.iter().enumerate() {
            z[(i, j)] = *v;
        }
        w.push(design.weight(rec)?);
    }
    Ok(FitData { z, w })
}

/// Modified Gram-Schmidt rank screen. Columns whose residual against the
/// span of earlier columns is below tolerance are reported as aliased, named
/// by their owning term.
pub(crate) fn check_collinearity(z: &DMatrix<f64>, names: &[String]) -> Result<()> {
    let n = z.nrows();
    let p = z.ncols();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(p);
    let mut aliased = Vec::new();
    for j in 0..p {
        let mut col = DVector::from_fn(n, |i, _| z[(i, j)]);
        let orig_norm = col.norm();
        if orig_norm == 0.0 {
            aliased.push(names[j].clone());
            continue;
        }
        for b in &basis {
            let proj = b.dot(&col);
            col.axpy(-proj, b, 1.0);
        }
        let resid = col.norm();
        if resid <= 1e-8 * orig_norm {
            aliased.push(names[j].clone());
        } else {
            basis.push(col / resid);
        }
    }
    if aliased.is_empty() {
        Ok(())
    } else {
        Err(Error::Collinearity { terms: aliased })
    }
}

/// One fitted state in standardized coefficient space.
pub(crate) struct NewtonResult {
    pub beta: DVector<f64>,
    pub iterations: usize,
    pub score_norm: f64,
    pub log_likelihood: f64,
}

/// Objective interface for the Newton loop: log-likelihood, score, and
/// observed information at a coefficient vector.
pub(crate) trait NewtonObjective {
    fn family(&self) -> &'static str;
    fn log_likelihood(&self, beta: &DVector<f64>) -> f64;
    /// Score and observed information (negative Hessian of -ll).
    fn score_info(&self, beta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>);
}

/// Maximize by Newton-Raphson with step-halving. Convergence requires the
/// scaled score criterion; the relative log-likelihood change acts as a
/// stagnation guard.
pub(crate) fn newton_solve<O: NewtonObjective>(obj: &O, init: DVector<f64>) -> Result<NewtonResult> {
    let mut beta = init;
    let mut ll = obj.log_likelihood(&beta);
    if !ll.is_finite() {
        return Err(Error::Convergence {
            family: obj.family().into(),
            iterations: 0,
            message: "log-likelihood not finite at the starting point".into(),
        });
    }
    for iter in 1..=MAX_ITER {
        let (score, info) = obj.score_info(&beta);
        let score_norm = score.norm();
        let scale = 1.0 + beta.amax();
        if score_norm <= SCORE_TOL * scale {
            return Ok(NewtonResult { beta, iterations: iter - 1, score_norm, log_likelihood: ll });
        }
        let chol = info.clone().cholesky().ok_or_else(|| Error::Convergence {
            family: obj.family().into(),
            iterations: iter,
            message: "observed information is not positive definite".into(),
        })?;
        let delta = chol.solve(&score);

        let mut step = 1.0;
        let mut accepted = false;
        let mut new_beta = beta.clone();
        let mut new_ll = ll;
        // Near the optimum the true improvement can round below one ulp of
        // the log-likelihood; the slack keeps such steps acceptable.
        let slack = 1e-10 * (1.0 + ll.abs());
        for _ in 0..=MAX_HALVINGS {
            new_beta = &beta + step * &delta;
            new_ll = obj.log_likelihood(&new_beta);
            if new_ll.is_finite() && new_ll >= ll - slack {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // No acceptable step even within the rounding slack: converged
            // only if the score criterion itself already holds.
            let (score, _) = obj.score_info(&beta);
            let score_norm = score.norm();
            if score_norm <= SCORE_TOL * scale {
                return Ok(NewtonResult {
                    beta,
                    iterations: iter,
                    score_norm,
                    log_likelihood: ll,
                });
            }
            return Err(Error::Convergence {
                family: obj.family().into(),
                iterations: iter,
                message: format!("step-halving stalled with score norm {score_norm:.3e}"),
            });
        }
        let ll_change = (new_ll - ll).abs();
        beta = new_beta;
        if beta.amax() > SEPARATION_BOUND {
            return Err(Error::Separation(format!(
                "coefficient magnitude {:.1} exceeds {SEPARATION_BOUND} on the standardized scale",
                beta.amax()
            )));
        }
        let stagnated = ll_change <= LL_TOL * (1.0 + new_ll.abs());
        ll = new_ll;
        if stagnated {
            let (score, _) = obj.score_info(&beta);
            let score_norm = score.norm();
            if score_norm <= SCORE_TOL * (1.0 + beta.amax()) {
                return Ok(NewtonResult { beta, iterations: iter, score_norm, log_likelihood: ll });
            }
        }
    }
    let (score, _) = obj.score_info(&beta);
    Err(Error::Convergence {
        family: obj.family().into(),
        iterations: MAX_ITER,
        message: format!(
            "score norm {:.3e} after {MAX_ITER} iterations (log-likelihood {ll:.6})",
            score.norm()
        ),
    })
}
