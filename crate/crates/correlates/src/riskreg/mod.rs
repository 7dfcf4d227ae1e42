//! Conditional risk models r(s, x) = P(Y=1 | S=s, A=1, X=x): weighted
//! logistic regression and case-cohort Cox regression with a weighted
//! Breslow baseline.

mod cox;
mod encoding;
mod fit;
mod logistic;

pub use cox::fit_casecohort_cox;
pub use encoding::{DesignEncoding, EncodedTerm, Formula, MarkerTerm, NumericStd};
pub use logistic::fit_weighted_logistic;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::{Covariate, ParticipantRecord};
use crate::stats::expit;

use encoding::tertile_code_of;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelFamily {
    WeightedLogistic,
    CaseCohortCox,
}

/// Solver trace recorded with every fitted model.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceInfo {
    pub iterations: usize,
    pub final_score_norm: f64,
    pub converged: bool,
    pub log_likelihood: f64,
}

/// Nondecreasing step function, zero before its first jump. Used for the
/// weighted Breslow cumulative baseline hazard.
#[derive(Debug, Clone, Serialize)]
pub struct StepFunction {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl StepFunction {
    pub fn eval(&self, t: f64) -> f64 {
        let idx = self.times.partition_point(|&x| x <= t);
        if idx == 0 {
            0.0
        } else {
            self.values[idx - 1]
        }
    }
}

/// Linear-predictor evaluator on the original covariate scale, split into a
/// covariate part and a marker part so curve evaluation over a marker grid
/// can reuse per-record covariate contributions.
#[derive(Debug, Clone, Serialize)]
pub(crate) enum MarkerCoef {
    Linear(f64),
    Tertile { c1: f64, c2: f64 },
}

#[derive(Debug, Clone, Serialize)]
pub(crate) enum CovCoef {
    Numeric { name: String, coef: f64 },
    Categorical { name: String, levels: Vec<String>, coefs: Vec<f64> },
}

/// A fitted conditional risk model.
#[derive(Debug, Clone, Serialize)]
pub struct RiskModel {
    pub family: ModelFamily,
    /// Coefficients on the original scale, keyed by column name.
    pub coefficients: BTreeMap<String, f64>,
    pub encoding: DesignEncoding,
    pub baseline_cumhaz: Option<StepFunction>,
    pub t_horizon: Option<f64>,
    pub convergence: ConvergenceInfo,
    pub(crate) intercept: f64,
    pub(crate) marker_coef: Option<MarkerCoef>,
    pub(crate) cov_coefs: Vec<CovCoef>,
}

impl RiskModel {
    /// Intercept plus covariate contributions for one record (marker
    /// excluded). For the Cox family the intercept is zero.
    pub fn covariate_eta(&self, rec: &ParticipantRecord) -> Result<f64> {
        let mut eta = self.intercept;
        for cov in &self.cov_coefs {
            match cov {
                CovCoef::Numeric { name, coef } => match rec.covariate(name)? {
                    Covariate::Numeric(v) => eta += coef * v,
                    Covariate::Categorical(_) => {
                        return Err(Error::Data(format!(
                            "record {}: covariate `{name}` expected numeric",
                            rec.id
                        )))
                    }
                },
                CovCoef::Categorical { name, levels, coefs } => {
                    let level = match rec.covariate(name)? {
                        Covariate::Categorical(l) => l,
                        Covariate::Numeric(_) => {
                            return Err(Error::Data(format!(
                                "record {}: covariate `{name}` expected categorical",
                                rec.id
                            )))
                        }
                    };
                    match levels.iter().position(|l| l == level) {
                        Some(0) => {}
                        Some(k) => eta += coefs[k - 1],
                        None => {
                            return Err(Error::Prediction(format!(
                                "unseen level `{level}` for covariate `{name}`"
                            )))
                        }
                    }
                }
            }
        }
        Ok(eta)
    }

    pub fn marker_eta(&self, s: f64) -> Result<f64> {
        match &self.marker_coef {
            None => Ok(0.0),
            Some(MarkerCoef::Linear(b)) => Ok(b * s),
            Some(MarkerCoef::Tertile { c1, c2 }) => match tertile_code_of(s, "(prediction)")? {
                0 => Ok(0.0),
                1 => Ok(*c1),
                _ => Ok(*c2),
            },
        }
    }

    /// Risk from a precomputed covariate part and a marker value.
    pub fn risk_from_parts(&self, cov_eta: f64, s: f64) -> Result<f64> {
        let eta = cov_eta + self.marker_eta(s)?;
        Ok(match self.family {
            ModelFamily::WeightedLogistic => expit(eta),
            ModelFamily::CaseCohortCox => {
                let t = self.t_horizon.expect("cox model carries a horizon");
                let cumhaz = self
                    .baseline_cumhaz
                    .as_ref()
                    .expect("cox model carries a baseline")
                    .eval(t);
                1.0 - (-cumhaz * eta.exp()).exp()
            }
        })
    }

    /// Predicted risk at marker value `s` with covariates taken from `rec`.
    pub fn predict_risk(&self, s: f64, rec: &ParticipantRecord) -> Result<f64> {
        let cov = self.covariate_eta(rec)?;
        self.risk_from_parts(cov, s)
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::CovCoef;

    pub fn categorical(name: &str, levels: &[&str], coefs: &[f64]) -> CovCoef {
        CovCoef::Categorical {
            name: name.into(),
            levels: levels.iter().map(|s| s.to_string()).collect(),
            coefs: coefs.to_vec(),
        }
    }
}
