//! Two-phase sampling design: empirical sampling probabilities and weights.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::record::{Arm, Covariate, ParticipantRecord};
use crate::stats::weighted_quantile;

/// Estimated sampling rate within one design stratum.
#[derive(Debug, Clone, Serialize)]
pub struct StratumRate {
    pub case: bool,
    pub stratum: Option<String>,
    pub n: usize,
    pub n_sampled: usize,
    pub pi_hat: f64,
}

/// Sampling design for the vaccine arm of a case-cohort / two-phase trial.
///
/// Cases are sampled with probability one by convention; non-case rates are
/// estimated empirically per stratum, so Horvitz-Thompson weights `1/pi_hat`
/// reconstruct the full vaccine-arm size from the phase-two subset.
#[derive(Debug, Clone)]
pub struct TwoPhaseDesign {
    rates: BTreeMap<(bool, Option<String>), StratumRate>,
    pub design_stratum: Option<String>,
    pub t_horizon: Option<f64>,
    complete: bool,
}

impl TwoPhaseDesign {
    /// A design in which every record is weighted 1 (full measurement).
    pub fn complete(t_horizon: Option<f64>) -> Self {
        TwoPhaseDesign {
            rates: BTreeMap::new(),
            design_stratum: None,
            t_horizon,
            complete: true,
        }
    }

    pub fn estimate(
        records: &[&ParticipantRecord],
        design_stratum: Option<&str>,
        t_horizon: Option<f64>,
    ) -> Result<Self> {
        let mut groups: BTreeMap<(bool, Option<String>), (usize, usize)> = BTreeMap::new();
        for rec in records {
            if rec.arm != Arm::Vaccine {
                return Err(Error::Data(
                    "sampling probabilities are estimated on the vaccine arm only".into(),
                ));
            }
            let case = rec.is_case(t_horizon)?;
            let stratum = stratum_label(rec, design_stratum)?;
            let entry = groups.entry((case, stratum)).or_insert((0, 0));
            entry.0 += 1;
            if rec.sampled {
                entry.1 += 1;
            }
        }
        let mut rates = BTreeMap::new();
        for ((case, stratum), (n, n_sampled)) in groups {
            let pi_hat = if case {
                1.0
            } else {
                if n_sampled == 0 {
                    return Err(Error::SamplingPositivity {
                        stratum: stratum.clone().unwrap_or_else(|| "(all)".into()),
                    });
                }
                n_sampled as f64 / n as f64
            };
            rates.insert(
                (case, stratum.clone()),
                StratumRate { case, stratum, n, n_sampled, pi_hat },
            );
        }
        Ok(TwoPhaseDesign {
            rates,
            design_stratum: design_stratum.map(str::to_string),
            t_horizon,
            complete: false,
        })
    }

    pub fn pi_hat(&self, rec: &ParticipantRecord) -> Result<f64> {
        if self.complete {
            return Ok(1.0);
        }
        let case = rec.is_case(self.t_horizon)?;
        let stratum = stratum_label(rec, self.design_stratum.as_deref())?;
        self.rates
            .get(&(case, stratum.clone()))
            .map(|r| r.pi_hat)
            .ok_or_else(|| {
                Error::Estimation(format!(
                    "record {} falls in a stratum with no estimated sampling rate",
                    rec.id
                ))
            })
    }

    /// Analysis weight: the record's override if present, else `1/pi_hat`.
    pub fn weight(&self, rec: &ParticipantRecord) -> Result<f64> {
        if let Some(w) = rec.weight_override {
            return Ok(w);
        }
        Ok(1.0 / self.pi_hat(rec)?)
    }

    pub fn rates(&self) -> impl Iterator<Item = &StratumRate> {
        self.rates.values()
    }
}

fn stratum_label(rec: &ParticipantRecord, design_stratum: Option<&str>) -> Result<Option<String>> {
    match design_stratum {
        None => Ok(None),
        Some(name) => match rec.covariate(name)? {
            Covariate::Categorical(level) => Ok(Some(level.clone())),
            Covariate::Numeric(v) => Ok(Some(format!("{v}"))),
        },
    }
}

/// Convenience alias matching the operation name used in configs and docs.
pub fn estimate_sampling_probs(
    records: &[&ParticipantRecord],
    design_stratum: Option<&str>,
    t_horizon: Option<f64>,
) -> Result<TwoPhaseDesign> {
    TwoPhaseDesign::estimate(records, design_stratum, t_horizon)
}

/// Headline counts and weighted marker quantiles for a loaded trial.
#[derive(Debug, Clone, Serialize)]
pub struct CohortSummary {
    pub n_total: usize,
    pub n_vaccine: usize,
    pub n_placebo: usize,
    pub n_cases_vaccine: usize,
    pub n_phase2: usize,
    pub overall_vaccine_risk: f64,
    /// Weighted phase-two marker quantiles, keyed by probability.
    pub marker_quantiles: Vec<(f64, f64)>,
}

pub const SUMMARY_QUANTILES: [f64; 5] = [0.025, 0.15, 0.5, 0.85, 0.975];

pub fn summarize_cohort(
    records: &[ParticipantRecord],
    design: &TwoPhaseDesign,
) -> Result<CohortSummary> {
    let n_total = records.len();
    let mut n_vaccine = 0;
    let mut n_placebo = 0;
    let mut n_cases_vaccine = 0;
    let mut n_phase2 = 0;
    let mut markers = Vec::new();
    let mut weights = Vec::new();
    for rec in records {
        match rec.arm {
            Arm::Vaccine => {
                n_vaccine += 1;
                if rec.is_case(design.t_horizon)? {
                    n_cases_vaccine += 1;
                }
                if rec.in_phase_two() {
                    n_phase2 += 1;
                    markers.push(rec.marker.unwrap());
                    weights.push(design.weight(rec)?);
                }
            }
            Arm::Placebo => n_placebo += 1,
        }
    }
    if n_vaccine == 0 {
        return Err(Error::Data("no vaccine-arm records".into()));
    }
    let overall_vaccine_risk = n_cases_vaccine as f64 / n_vaccine as f64;
    let marker_quantiles = if markers.is_empty() {
        Vec::new()
    } else {
        SUMMARY_QUANTILES
            .iter()
            .map(|&p| Ok((p, weighted_quantile(&markers, &weights, p)?)))
            .collect::<Result<_>>()?
    };
    Ok(CohortSummary {
        n_total,
        n_vaccine,
        n_placebo,
        n_cases_vaccine,
        n_phase2,
        overall_vaccine_risk,
        marker_quantiles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::Outcome;
    use std::collections::BTreeMap;

    fn rec(id: &str, case: bool, sampled: bool, stratum: Option<&str>) -> ParticipantRecord {
        let mut covariates = BTreeMap::new();
        if let Some(s) = stratum {
            covariates.insert("site".to_string(), Covariate::Categorical(s.to_string()));
        }
        ParticipantRecord {
            id: id.into(),
            arm: Arm::Vaccine,
            covariates,
            marker: if sampled { Some(2.0) } else { None },
            sampled,
            outcome: Outcome::Binary(case),
            weight_override: None,
        }
    }

    #[test]
    fn single_stratum_rate_matches_hand_count() {
        // 1000 non-cases with 195 sampled -> pi_hat = 0.195.
        let mut records = Vec::new();
        for i in 0..1000 {
            records.push(rec(&format!("n{i}"), false, i < 195, None));
        }
        for i in 0..40 {
            records.push(rec(&format!("c{i}"), true, true, None));
        }
        let refs: Vec<&ParticipantRecord> = records.iter().collect();
        let design = TwoPhaseDesign::estimate(&refs, None, None).unwrap();
        assert_eq!(design.pi_hat(&records[0]).unwrap(), 0.195);
        assert_eq!(design.pi_hat(&records[1000]).unwrap(), 1.0);
        assert_eq!(design.weight(&records[0]).unwrap(), 1.0 / 0.195);
    }

    #[test]
    fn complete_sampling_gives_unit_weights() {
        let records: Vec<ParticipantRecord> =
            (0..10).map(|i| rec(&format!("r{i}"), i == 0, true, None)).collect();
        let refs: Vec<&ParticipantRecord> = records.iter().collect();
        let design = TwoPhaseDesign::estimate(&refs, None, None).unwrap();
        for r in &records {
            assert_eq!(design.weight(r).unwrap(), 1.0);
        }
    }

    #[test]
    fn two_strata_rates_match_hand_counts() {
        // Stratum a: 200 non-cases, 40 sampled -> 0.20. Stratum b: 300/30 -> 0.10.
        let mut records = Vec::new();
        for i in 0..200 {
            records.push(rec(&format!("a{i}"), false, i < 40, Some("a")));
        }
        for i in 0..300 {
            records.push(rec(&format!("b{i}"), false, i < 30, Some("b")));
        }
        let refs: Vec<&ParticipantRecord> = records.iter().collect();
        let design = TwoPhaseDesign::estimate(&refs, Some("site"), None).unwrap();
        assert_eq!(design.pi_hat(&records[0]).unwrap(), 0.20);
        assert_eq!(design.pi_hat(&records[250]).unwrap(), 0.10);
    }

    #[test]
    fn empty_sampled_stratum_is_positivity_error() {
        let mut records = Vec::new();
        for i in 0..50 {
            records.push(rec(&format!("a{i}"), false, true, Some("a")));
        }
        for i in 0..50 {
            records.push(rec(&format!("b{i}"), false, false, Some("b")));
        }
        let refs: Vec<&ParticipantRecord> = records.iter().collect();
        let err = TwoPhaseDesign::estimate(&refs, Some("site"), None).unwrap_err();
        match err {
            Error::SamplingPositivity { stratum } => assert_eq!(stratum, "b"),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn estimation_is_deterministic_and_idempotent() {
        let mut records = Vec::new();
        for i in 0..100 {
            records.push(rec(&format!("n{i}"), i % 10 == 0, i % 3 == 0, None));
        }
        let refs: Vec<&ParticipantRecord> = records.iter().collect();
        let d1 = TwoPhaseDesign::estimate(&refs, None, None).unwrap();
        let d2 = TwoPhaseDesign::estimate(&refs, None, None).unwrap();
        for r in &records {
            assert_eq!(d1.pi_hat(r).unwrap(), d2.pi_hat(r).unwrap());
        }
    }

    #[test]
    fn weight_override_takes_precedence() {
        let mut records: Vec<ParticipantRecord> =
            (0..10).map(|i| rec(&format!("r{i}"), false, true, None)).collect();
        records[0].weight_override = Some(7.5);
        let refs: Vec<&ParticipantRecord> = records.iter().collect();
        let design = TwoPhaseDesign::estimate(&refs, None, None).unwrap();
        assert_eq!(design.weight(&records[0]).unwrap(), 7.5);
        assert_eq!(design.weight(&records[1]).unwrap(), 1.0);
    }
}
