//! Weighted logistic regression solving the IPW score equations
//! sum_i w_i (y_i - expit(beta' z_i)) z_i = 0.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::dataset::TwoPhaseDesign;
use crate::error::{Error, Result};
use crate::record::ParticipantRecord;
use crate::stats::{expit, log1pexp, logit};

use super::encoding::{DesignEncoding, EncodedTerm, Formula};
use super::fit::{assemble, check_collinearity, newton_solve, NewtonObjective};
use super::{ConvergenceInfo, CovCoef, MarkerCoef, ModelFamily, RiskModel};

struct LogisticObjective<'a> {
    z: &'a DMatrix<f64>,
    y: &'a [f64],
    w: &'a [f64],
}

impl NewtonObjective for LogisticObjective<'_> {
    fn family(&self) -> &'static str {
        "weighted-logistic"
    }

    fn log_likelihood(&self, beta: &DVector<f64>) -> f64 {
        let eta = self.z * beta;
        let mut ll = 0.0;
        for i in 0..eta.len() {
            ll += self.w[i] * (self.y[i] * eta[i] - log1pexp(eta[i]));
        }
        ll
    }

    fn score_info(&self, beta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.z.nrows();
        let p = self.z.ncols();
        let eta = self.z * beta;
        let mut score = DVector::zeros(p);
        let mut info = DMatrix::zeros(p, p);
        for i in 0..n {
            let pi = expit(eta[i]);
            let wi = self.w[i];
            let resid = wi * (self.y[i] - pi);
            let curvature = wi * pi * (1.0 - pi);
            for j in 0..p {
                let zij = self.z[(i, j)];
                score[j] += resid * zij;
                for k in j..p {
                    info[(j, k)] += curvature * zij * self.z[(i, k)];
                }
            }
        }
        for j in 0..p {
            for k in 0..j {
                info[(j, k)] = info[(k, j)];
            }
        }
        (score, info)
    }
}

/// Fit the conditional risk model on phase-two vaccine recipients (or, with a
/// complete design, on any record subset) by weighted maximum likelihood.
pub fn fit_weighted_logistic(
    records: &[&ParticipantRecord],
    design: &TwoPhaseDesign,
    formula: &Formula,
) -> Result<RiskModel> {
    if records.is_empty() {
        return Err(Error::Estimation("empty fitting subset".into()));
    }
    let y: Vec<f64> = records
        .iter()
        .map(|r| Ok(f64::from(r.is_case(design.t_horizon)?)))
        .collect::<Result<_>>()?;
    let n_cases = y.iter().filter(|&&v| v == 1.0).count();
    if n_cases == 0 || n_cases == records.len() {
        return Err(Error::NotEstimable(
            "logistic fit needs at least one case and one non-case".into(),
        ));
    }

    let encoding = DesignEncoding::build(records, formula)?;
    let data = assemble(records, design, &encoding)?;
    check_collinearity(&data.z, &encoding.column_names())?;

    // Warm start the intercept at the weighted logit of the case fraction.
    let total_w: f64 = data.w.iter().sum();
    let mean_y: f64 = y.iter().zip(&data.w).map(|(yi, wi)| yi * wi).sum::<f64>() / total_w;
    let mut init = DVector::zeros(encoding.n_columns());
    init[0] = logit(mean_y.clamp(1e-6, 1.0 - 1e-6));

    let objective = LogisticObjective { z: &data.z, y: &y, w: &data.w };
    let solved = newton_solve(&objective, init)?;

    let beta_std: Vec<f64> = solved.beta.iter().copied().collect();
    let (intercept, coefs) = encoding.destandardize(&beta_std);

    let mut coefficients = BTreeMap::new();
    coefficients.insert("(intercept)".to_string(), intercept);
    for (name, c) in encoding.columns.iter().zip(&coefs) {
        coefficients.insert(name.clone(), *c);
    }

    let (marker_coef, cov_coefs) = split_coefs(&encoding, &coefs);
    Ok(RiskModel {
        family: ModelFamily::WeightedLogistic,
        coefficients,
        encoding,
        baseline_cumhaz: None,
        t_horizon: design.t_horizon,
        convergence: ConvergenceInfo {
            iterations: solved.iterations,
            final_score_norm: solved.score_norm,
            converged: true,
            log_likelihood: solved.log_likelihood,
        },
        intercept,
        marker_coef,
        cov_coefs,
    })
}

/// Split original-scale column coefficients into marker and covariate parts,
/// following the encoding's column layout.
pub(crate) fn split_coefs(
    encoding: &DesignEncoding,
    coefs: &[f64],
) -> (Option<MarkerCoef>, Vec<CovCoef>) {
    let mut marker = None;
    let mut covs = Vec::new();
    let mut j = 0;
    for term in &encoding.terms {
        match term {
            EncodedTerm::MarkerLinear(_) => {
                marker = Some(MarkerCoef::Linear(coefs[j]));
                j += 1;
            }
            EncodedTerm::MarkerTertile => {
                marker = Some(MarkerCoef::Tertile { c1: coefs[j], c2: coefs[j + 1] });
                j += 2;
            }
            EncodedTerm::Numeric { name, .. } => {
                covs.push(CovCoef::Numeric { name: name.clone(), coef: coefs[j] });
                j += 1;
            }
            EncodedTerm::Categorical { name, levels } => {
                let k = levels.len() - 1;
                covs.push(CovCoef::Categorical {
                    name: name.clone(),
                    levels: levels.clone(),
                    coefs: coefs[j..j + k].to_vec(),
                });
                j += k;
            }
        }
    }
    (marker, covs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::ix_tests::make_record;
    use approx::assert_relative_eq;

    /// Records forming a 2x2 table of binary marker (0/1) by outcome.
    fn two_by_two(a: usize, b: usize, c: usize, d: usize) -> Vec<ParticipantRecord> {
        // marker=0: a non-cases, b cases; marker=1: c non-cases, d cases.
        let mut out = Vec::new();
        let mut push = |n: usize, s: f64, case: bool, tag: &str| {
            for i in 0..n {
                out.push(make_record(&format!("{tag}{i}"), 1, Some(s), case, &[]));
            }
        };
        push(a, 0.0, false, "a");
        push(b, 0.0, true, "b");
        push(c, 1.0, false, "c");
        push(d, 1.0, true, "d");
        out
    }

    #[test]
    fn saturated_fit_recovers_table_log_odds_ratio() {
        // Closed-form oracle: beta_marker = log((d/c) / (b/a)).
        let (a, b, c, d) = (40usize, 10usize, 55usize, 5usize);
        let records = two_by_two(a, b, c, d);
        let refs: Vec<&ParticipantRecord> = records.iter().collect();
        let design = TwoPhaseDesign::complete(None);
        let model = fit_weighted_logistic(&refs, &design, &Formula::quantitative(&[])).unwrap();
        let want = ((d as f64 / c as f64) / (b as f64 / a as f64)).ln();
        assert_relative_eq!(model.coefficients["marker"], want, epsilon = 1e-8);
        let want_icept = (b as f64 / a as f64).ln();
        assert_relative_eq!(model.coefficients["(intercept)"], want_icept, epsilon = 1e-8);
    }

    #[test]
    fn integer_weights_match_record_duplication() {
        // Weight-2 records duplicated into an unweighted dataset must give
        // identical coefficients.
        let mut weighted = Vec::new();
        let mut expanded = Vec::new();
        let specs = [
            (0.5, false, 1.0, 30),
            (0.5, true, 2.0, 4),
            (1.5, false, 2.0, 40),
            (1.5, true, 1.0, 3),
            (2.5, false, 1.0, 35),
            (2.5, true, 2.0, 2),
        ];
        for (k, (s, case, w, n)) in specs.iter().enumerate() {
            for i in 0..*n {
                let mut rec = make_record(&format!("w{k}_{i}"), 1, Some(*s), *case, &[]);
                rec.weight_override = Some(*w);
                weighted.push(rec);
                for dup in 0..(*w as usize) {
                    expanded.push(make_record(&format!("e{k}_{i}_{dup}"), 1, Some(*s), *case, &[]));
                }
            }
        }
        let design = TwoPhaseDesign::complete(None);
        let refs_w: Vec<&ParticipantRecord> = weighted.iter().collect();
        let refs_e: Vec<&ParticipantRecord> = expanded.iter().collect();
        let f = Formula::quantitative(&[]);
        let m_w = fit_weighted_logistic(&refs_w, &design, &f).unwrap();
        let m_e = fit_weighted_logistic(&refs_e, &design, &f).unwrap();
        for key in ["(intercept)", "marker"] {
            assert_relative_eq!(m_w.coefficients[key], m_e.coefficients[key], epsilon = 1e-8);
        }
    }

    #[test]
    fn rescaling_weights_leaves_coefficients_unchanged() {
        let records = two_by_two(40, 10, 55, 5);
        let design = TwoPhaseDesign::complete(None);
        let f = Formula::quantitative(&[]);
        let refs: Vec<&ParticipantRecord> = records.iter().collect();
        let m1 = fit_weighted_logistic(&refs, &design, &f).unwrap();
        let scaled: Vec<ParticipantRecord> = records
            .iter()
            .map(|r| {
                let mut c = r.clone();
                c.weight_override = Some(7.25);
                c
            })
            .collect();
        let refs2: Vec<&ParticipantRecord> = scaled.iter().collect();
        let m2 = fit_weighted_logistic(&refs2, &design, &f).unwrap();
        for key in ["(intercept)", "marker"] {
            assert_relative_eq!(m1.coefficients[key], m2.coefficients[key], epsilon = 1e-10);
        }
    }

    #[test]
    fn separated_data_is_reported() {
        // Perfect separation: all cases above marker 1, all non-cases below.
        let mut records = Vec::new();
        for i in 0..20 {
            records.push(make_record(&format!("n{i}"), 1, Some(i as f64 / 20.0), false, &[]));
            records.push(make_record(&format!("c{i}"), 1, Some(2.0 + i as f64 / 20.0), true, &[]));
        }
        let refs: Vec<&ParticipantRecord> = records.iter().collect();
        let design = TwoPhaseDesign::complete(None);
        let err = fit_weighted_logistic(&refs, &design, &Formula::quantitative(&[])).unwrap_err();
        assert!(matches!(err, Error::Separation(_)), "{err}");
    }

    #[test]
    fn finite_difference_gradient_vanishes_at_solution() {
        // Centered finite differences of the weighted log-likelihood at the
        // returned coefficients, on data that is already near unit scale.
        let records = two_by_two(50, 12, 60, 6);
        let refs: Vec<&ParticipantRecord> = records.iter().collect();
        let design = TwoPhaseDesign::complete(None);
        let model = fit_weighted_logistic(&refs, &design, &Formula::quantitative(&[])).unwrap();
        let beta = [model.coefficients["(intercept)"], model.coefficients["marker"]];
        let ll = |b: &[f64]| -> f64 {
            records
                .iter()
                .map(|r| {
                    let eta = b[0] + b[1] * r.marker.unwrap();
                    let y = f64::from(matches!(r.outcome, crate::record::Outcome::Binary(true)));
                    y * eta - log1pexp(eta)
                })
                .sum()
        };
        let h = 1e-5;
        let mut norm2 = 0.0;
        for j in 0..2 {
            let mut up = beta;
            let mut dn = beta;
            up[j] += h;
            dn[j] -= h;
            let g = (ll(&up) - ll(&dn)) / (2.0 * h);
            norm2 += g * g;
        }
        assert!(norm2.sqrt() <= 1e-5, "finite-difference gradient norm {}", norm2.sqrt());
    }

    #[test]
    fn all_case_subset_is_not_estimable() {
        let records: Vec<ParticipantRecord> =
            (0..5).map(|i| make_record(&format!("r{i}"), 1, Some(i as f64), true, &[])).collect();
        let refs: Vec<&ParticipantRecord> = records.iter().collect();
        let design = TwoPhaseDesign::complete(None);
        let err = fit_weighted_logistic(&refs, &design, &Formula::quantitative(&[])).unwrap_err();
        assert!(matches!(err, Error::NotEstimable(_)));
    }
}
