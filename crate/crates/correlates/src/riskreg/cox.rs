//! Case-cohort Cox regression: weighted partial likelihood with Breslow tie
//! handling and a weighted Breslow baseline cumulative hazard. Phase-two
//! weights 1/pi_hat enter the risk sets; cases carry weight one and are
//! always members of their own risk set.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::dataset::TwoPhaseDesign;
use crate::error::{Error, Result};
use crate::record::{Outcome, ParticipantRecord};

use super::encoding::{DesignEncoding, Formula};
use super::fit::{assemble, check_collinearity, newton_solve, NewtonObjective, NewtonResult};
use super::logistic::split_coefs;
use super::{ConvergenceInfo, ModelFamily, RiskModel, StepFunction};

struct CoxData {
    /// Record indices sorted by truncated time, descending.
    order: Vec<usize>,
    times: Vec<f64>,
    /// Distinct event times descending, with the indices of events at each.
    event_groups: Vec<(f64, Vec<usize>)>,
}

fn prepare(records: &[&ParticipantRecord], t_horizon: f64) -> Result<CoxData> {
    let n = records.len();
    let mut times = Vec::with_capacity(n);
    let mut events = Vec::with_capacity(n);
    for rec in records {
        match rec.outcome {
            Outcome::Survival { time, event } => {
                // Administrative truncation at the analysis horizon.
                if time <= t_horizon {
                    times.push(time);
                    events.push(event);
                } else {
                    times.push(t_horizon);
                    events.push(false);
                }
            }
            Outcome::Binary(_) => {
                return Err(Error::Data(format!(
                    "record {}: cox family requires survival outcomes",
                    rec.id
                )))
            }
        }
    }
    if !events.iter().any(|&e| e) {
        return Err(Error::NoInformation(format!(
            "no events observed before t_horizon = {t_horizon}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| times[b].partial_cmp(&times[a]).unwrap());
    let mut event_groups: Vec<(f64, Vec<usize>)> = Vec::new();
    let mut event_idx: Vec<usize> = (0..n).filter(|&i| events[i]).collect();
    event_idx.sort_by(|&a, &b| times[b].partial_cmp(&times[a]).unwrap());
    for i in event_idx {
        match event_groups.last_mut() {
            Some((t, group)) if *t == times[i] => group.push(i),
            _ => event_groups.push((times[i], vec![i])),
        }
    }
    Ok(CoxData { order, times, event_groups })
}

struct CoxObjective<'a> {
    z: &'a DMatrix<f64>,
    w: &'a [f64],
    data: &'a CoxData,
}

impl CoxObjective<'_> {
    /// Sweep risk sets from the largest time down, calling `visit` at each
    /// distinct event time with (weighted death count, weighted eta sum of
    /// deaths, s0, s1, s2). s1/s2 accumulation is skipped when `need_info`
    /// is false.
    fn sweep<F>(&self, beta: &DVector<f64>, need_info: bool, mut visit: F) -> bool
    where
        F: FnMut(&[usize], f64, f64, &DVector<f64>, &DMatrix<f64>),
    {
        let p = self.z.ncols();
        let eta = self.z * beta;
        let shift = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max).max(0.0);
        let mut s0 = 0.0;
        let mut s1 = DVector::zeros(p);
        let mut s2 = DMatrix::zeros(p, p);
        let mut ptr = 0;
        for (t, deaths) in &self.data.event_groups {
            while ptr < self.data.order.len() {
                let i = self.data.order[ptr];
                if self.data.times[i] < *t {
                    break;
                }
                let r = self.w[i] * (eta[i] - shift).exp();
                s0 += r;
                if need_info {
                    for j in 0..p {
                        let zij = self.z[(i, j)];
                        s1[j] += r * zij;
                        for k in j..p {
                            s2[(j, k)] += r * zij * self.z[(i, k)];
                        }
                    }
                }
                ptr += 1;
            }
            if !s0.is_finite() || s0 <= 0.0 {
                return false;
            }
            let d_w: f64 = deaths.iter().map(|&i| self.w[i]).sum();
            visit(deaths, d_w, s0, &s1, &s2);
        }
        true
    }

    /// Per-event-time s0 values at beta, in ascending time order, with the
    /// log shift used. Drives the Breslow baseline.
    fn baseline_terms(&self, beta: &DVector<f64>) -> (Vec<(f64, f64, f64)>, f64) {
        let eta = self.z * beta;
        let shift = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max).max(0.0);
        let mut out = Vec::with_capacity(self.data.event_groups.len());
        let mut s0 = 0.0;
        let mut ptr = 0;
        for (t, deaths) in &self.data.event_groups {
            while ptr < self.data.order.len() {
                let i = self.data.order[ptr];
                if self.data.times[i] < *t {
                    break;
                }
                s0 += self.w[i] * (eta[i] - shift).exp();
                ptr += 1;
            }
            let d_w: f64 = deaths.iter().map(|&i| self.w[i]).sum();
            out.push((*t, d_w, s0));
        }
        out.reverse();
        (out, shift)
    }
}

impl NewtonObjective for CoxObjective<'_> {
    fn family(&self) -> &'static str {
        "case-cohort-cox"
    }

    fn log_likelihood(&self, beta: &DVector<f64>) -> f64 {
        let eta = self.z * beta;
        let mut ll = 0.0;
        let shift = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max).max(0.0);
        let ok = self.sweep(beta, false, |deaths, d_w, s0, _, _| {
            for &i in deaths {
                ll += self.w[i] * (eta[i] - shift);
            }
            ll -= d_w * s0.ln();
        });
        if ok {
            ll
        } else {
            f64::NEG_INFINITY
        }
    }

    fn score_info(&self, beta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let p = self.z.ncols();
        let mut score = DVector::zeros(p);
        let mut info = DMatrix::zeros(p, p);
        self.sweep(beta, true, |deaths, d_w, s0, s1, s2| {
            for &i in deaths {
                for j in 0..p {
                    score[j] += self.w[i] * self.z[(i, j)];
                }
            }
            for j in 0..p {
                let mj = s1[j] / s0;
                score[j] -= d_w * mj;
                for k in j..p {
                    info[(j, k)] += d_w * (s2[(j, k)] / s0 - mj * s1[k] / s0);
                }
            }
        });
        for j in 0..p {
            for k in 0..j {
                info[(j, k)] = info[(k, j)];
            }
        }
        (score, info)
    }
}

/// Fit the case-cohort Cox model on phase-two vaccine recipients and
/// predict risk through `r(s,x) = 1 - exp(-Lambda0(t_horizon) exp(beta'z))`.
pub fn fit_casecohort_cox(
    records: &[&ParticipantRecord],
    design: &TwoPhaseDesign,
    formula: &Formula,
    t_horizon: f64,
) -> Result<RiskModel> {
    if records.is_empty() {
        return Err(Error::Estimation("empty fitting subset".into()));
    }
    if !(t_horizon > 0.0) {
        return Err(Error::Data("t_horizon must be positive".into()));
    }
    let data = prepare(records, t_horizon)?;
    let encoding = DesignEncoding::build_no_intercept(records, formula)?;
    let fitdata = assemble(records, design, &encoding)?;
    if encoding.n_columns() > 0 {
        check_collinearity(&fitdata.z, &encoding.column_names())?;
    }

    let objective = CoxObjective { z: &fitdata.z, w: &fitdata.w, data: &data };
    let solved: NewtonResult = if encoding.n_columns() == 0 {
        NewtonResult {
            beta: DVector::zeros(0),
            iterations: 0,
            score_norm: 0.0,
            log_likelihood: objective.log_likelihood(&DVector::zeros(0)),
        }
    } else {
        newton_solve(&objective, DVector::zeros(encoding.n_columns()))?
    };

    let beta_std: Vec<f64> = solved.beta.iter().copied().collect();
    let (log_base_shift, coefs) = encoding.destandardize(&beta_std);

    // Weighted Breslow baseline in standardized space, then rescaled so that
    // Lambda0(t) exp(beta_orig' z) is invariant.
    let (terms, eta_shift) = objective.baseline_terms(&solved.beta);
    let scale = (log_base_shift - eta_shift).exp();
    let mut times = Vec::with_capacity(terms.len());
    let mut values = Vec::with_capacity(terms.len());
    let mut cum = 0.0;
    for (t, d_w, s0) in terms {
        cum += d_w / s0 * scale;
        times.push(t);
        values.push(cum);
    }
    let baseline = StepFunction { times, values };

    let mut coefficients = BTreeMap::new();
    for (name, c) in encoding.columns.iter().zip(&coefs) {
        coefficients.insert(name.clone(), *c);
    }
    let (marker_coef, cov_coefs) = split_coefs(&encoding, &coefs);
    Ok(RiskModel {
        family: ModelFamily::CaseCohortCox,
        coefficients,
        encoding,
        baseline_cumhaz: Some(baseline),
        t_horizon: Some(t_horizon),
        convergence: ConvergenceInfo {
            iterations: solved.iterations,
            final_score_norm: solved.score_norm,
            converged: true,
            log_likelihood: solved.log_likelihood,
        },
        intercept: 0.0,
        marker_coef,
        cov_coefs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::Arm;
    use approx::assert_relative_eq;
    use std::collections::BTreeMap as Map;

    fn survival_record(id: &str, time: f64, event: bool, marker: f64, age: f64) -> ParticipantRecord {
        ParticipantRecord {
            id: id.into(),
            arm: Arm::Vaccine,
            covariates: Map::from([(
                "age".to_string(),
                crate::record::Covariate::Numeric(age),
            )]),
            marker: Some(marker),
            sampled: true,
            outcome: Outcome::Survival { time, event },
            weight_override: None,
        }
    }

    #[test]
    fn null_model_baseline_is_nelson_aalen() {
        // 6-subject fixture, hand Nelson-Aalen:
        //   t=2: 6 at risk, 1 event -> 1/6
        //   t=4: 5 at risk, 1 event -> 1/5 (one censored at 4)
        //   t=7: 3 at risk, 1 event -> 1/3
        let spec = [(2.0, true), (4.0, true), (4.0, false), (7.0, true), (9.0, false), (10.0, false)];
        let records: Vec<ParticipantRecord> = spec
            .iter()
            .enumerate()
            .map(|(i, (t, e))| survival_record(&format!("s{i}"), *t, *e, 0.0, 0.0))
            .collect();
        let refs: Vec<&ParticipantRecord> = records.iter().collect();
        let design = TwoPhaseDesign::complete(Some(10.0));
        let model =
            fit_casecohort_cox(&refs, &design, &Formula::covariates_only(&[]), 10.0).unwrap();
        let base = model.baseline_cumhaz.as_ref().unwrap();
        let na = |t: f64| -> f64 {
            let mut cum = 0.0;
            for (tj, d) in [(2.0, 1.0), (4.0, 1.0), (7.0, 1.0)] {
                if tj <= t {
                    let at_risk = spec.iter().filter(|(ti, _)| *ti >= tj).count() as f64;
                    cum += d / at_risk;
                }
            }
            cum
        };
        for t in [1.0, 2.0, 3.0, 4.0, 6.9, 7.0, 10.0] {
            assert_relative_eq!(base.eval(t), na(t), epsilon = 1e-12);
        }
        // Null-model risk equals the Nelson-Aalen transform at every time.
        let rec = &records[0];
        assert_relative_eq!(
            model.predict_risk(0.0, rec).unwrap(),
            1.0 - (-na(10.0)).exp(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn risk_is_zero_before_first_event() {
        let records: Vec<ParticipantRecord> = (0..8)
            .map(|i| {
                survival_record(
                    &format!("s{i}"),
                    50.0 + i as f64,
                    i % 2 == 0,
                    1.0 + (i % 3) as f64 * 0.3,
                    0.0,
                )
            })
            .collect();
        let refs: Vec<&ParticipantRecord> = records.iter().collect();
        let design = TwoPhaseDesign::complete(Some(30.0));
        // Horizon before the first event time: no information at all.
        let err = fit_casecohort_cox(&refs, &design, &Formula::quantitative(&[]), 30.0).unwrap_err();
        assert!(matches!(err, Error::NoInformation(_)));
        // With a horizon between events, risk before the first event is zero.
        let model = fit_casecohort_cox(&refs, &design, &Formula::quantitative(&[]), 60.0).unwrap();
        let base = model.baseline_cumhaz.as_ref().unwrap();
        assert_eq!(base.eval(49.0), 0.0);
    }

    /// Independent partial-likelihood score on the original scale: a direct
    /// double loop over events and risk sets, no shared code with the fitter.
    fn oracle_score(records: &[ParticipantRecord], beta: &[f64], horizon: f64) -> Vec<f64> {
        let covs: Vec<Vec<f64>> = records
            .iter()
            .map(|r| {
                let age = match r.covariates["age"] {
                    crate::record::Covariate::Numeric(v) => v,
                    _ => unreachable!(),
                };
                vec![r.marker.unwrap(), age]
            })
            .collect();
        let time = |r: &ParticipantRecord| match r.outcome {
            Outcome::Survival { time, .. } => time.min(horizon),
            _ => unreachable!(),
        };
        let event = |r: &ParticipantRecord| match r.outcome {
            Outcome::Survival { time, event } => event && time <= horizon,
            _ => unreachable!(),
        };
        let mut score = vec![0.0; beta.len()];
        for (i, r) in records.iter().enumerate() {
            if !event(r) {
                continue;
            }
            let ti = time(r);
            let mut s0 = 0.0;
            let mut s1 = vec![0.0; beta.len()];
            for (k, rk) in records.iter().enumerate() {
                if time(rk) >= ti {
                    let eta: f64 = beta.iter().zip(&covs[k]).map(|(b, z)| b * z).sum();
                    let e = eta.exp();
                    s0 += e;
                    for j in 0..beta.len() {
                        s1[j] += e * covs[k][j];
                    }
                }
            }
            for j in 0..beta.len() {
                score[j] += covs[i][j] - s1[j] / s0;
            }
        }
        score
    }

    #[test]
    fn full_sampling_no_ties_matches_independent_score_oracle() {
        // Deterministic fixture with distinct times and two terms.
        let mut records = Vec::new();
        for i in 0..60usize {
            let marker = 1.0 + (i as f64 * 0.37) % 2.0;
            let age = ((i as f64 * 0.61) % 3.0) - 1.5;
            let time = 10.0 + ((i as f64 * 7.3) % 700.0) + i as f64 * 1e-3;
            let event = (i * 2654435761usize) % 97 < 30;
            records.push(survival_record(&format!("s{i}"), time, event, marker, age));
        }
        let refs: Vec<&ParticipantRecord> = records.iter().collect();
        let design = TwoPhaseDesign::complete(Some(720.0));
        let model =
            fit_casecohort_cox(&refs, &design, &Formula::quantitative(&["age".into()]), 720.0)
                .unwrap();
        let beta = [model.coefficients["marker"], model.coefficients["age"]];
        let score = oracle_score(&records, &beta, 720.0);
        let norm = score.iter().map(|s| s * s).sum::<f64>().sqrt();
        assert!(norm <= 1e-6, "oracle score norm {norm}");
    }

    #[test]
    fn integer_weights_match_record_duplication() {
        let mut weighted = Vec::new();
        let mut expanded = Vec::new();
        for i in 0..40usize {
            let marker = 1.0 + (i as f64 * 0.53) % 1.8;
            let age = ((i as f64 * 0.29) % 2.0) - 1.0;
            let time = 5.0 + ((i as f64 * 13.7) % 400.0) + i as f64 * 1e-3;
            let event = (i * 40503usize) % 89 < 35;
            let w = 1.0 + (i % 2) as f64; // weights alternate 1, 2
            let mut rec = survival_record(&format!("w{i}"), time, event, marker, age);
            rec.weight_override = Some(w);
            weighted.push(rec);
            for dup in 0..w as usize {
                expanded.push(survival_record(&format!("e{i}_{dup}"), time, event, marker, age));
            }
        }
        let design = TwoPhaseDesign::complete(Some(500.0));
        let f = Formula::quantitative(&["age".into()]);
        let refs_w: Vec<&ParticipantRecord> = weighted.iter().collect();
        let refs_e: Vec<&ParticipantRecord> = expanded.iter().collect();
        let m_w = fit_casecohort_cox(&refs_w, &design, &f, 500.0).unwrap();
        let m_e = fit_casecohort_cox(&refs_e, &design, &f, 500.0).unwrap();
        for key in ["marker", "age"] {
            assert_relative_eq!(m_w.coefficients[key], m_e.coefficients[key], epsilon = 1e-6);
        }
        // Baselines must agree too: the duplicated risk sets double S0 and
        // the death mass identically.
        let b_w = m_w.baseline_cumhaz.as_ref().unwrap();
        let b_e = m_e.baseline_cumhaz.as_ref().unwrap();
        for t in [50.0, 150.0, 400.0] {
            assert_relative_eq!(b_w.eval(t), b_e.eval(t), epsilon = 1e-6);
        }
    }

    #[test]
    fn tied_events_use_breslow_likelihood() {
        // Independent Breslow log-likelihood on a tiny tied fixture.
        let spec: [(f64, bool, f64); 5] =
            [(3.0, true, 0.2), (3.0, true, -0.4), (5.0, false, 0.1), (6.0, true, 0.5), (8.0, false, -0.2)];
        let records: Vec<ParticipantRecord> = spec
            .iter()
            .enumerate()
            .map(|(i, (t, e, z))| survival_record(&format!("s{i}"), *t, *e, *z, 0.0))
            .collect();
        let refs: Vec<&ParticipantRecord> = records.iter().collect();
        let design = TwoPhaseDesign::complete(Some(10.0));
        let model = fit_casecohort_cox(&refs, &design, &Formula::quantitative(&[]), 10.0).unwrap();
        let b = model.coefficients["marker"];
        // Breslow ll(b) = sum_events b*z_i - sum over event times of d_t * ln(sum_risk e^{b z}).
        let breslow_ll = |b: f64| -> f64 {
            let mut ll = 0.0;
            for t in [3.0, 6.0] {
                let deaths: Vec<&(f64, bool, f64)> =
                    spec.iter().filter(|(ti, e, _)| *ti == t && *e).collect();
                let risk: f64 =
                    spec.iter().filter(|(ti, _, _)| *ti >= t).map(|(_, _, z)| (b * z).exp()).sum();
                for (_, _, z) in &deaths {
                    ll += b * z;
                }
                ll -= deaths.len() as f64 * risk.ln();
            }
            ll
        };
        // b maximizes the Breslow likelihood: finite-difference derivative ~ 0.
        let h = 1e-6;
        let deriv = (breslow_ll(b + h) - breslow_ll(b - h)) / (2.0 * h);
        assert!(deriv.abs() < 1e-5, "Breslow score at fitted beta: {deriv}");
    }
}
