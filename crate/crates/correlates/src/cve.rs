//! Controlled vaccine efficacy: `CVE(s) = 1 - risk(s) / P{Y(0)=1}` with the
//! placebo-arm denominator estimated by covariate marginalization, plus the
//! full-mediation probe at marker values below the assay detection limit.

use serde::Serialize;

use crate::dataset::TwoPhaseDesign;
use crate::error::{Error, Result};
use crate::marginal::{CurveEstimate, CurveKind};
use crate::record::{Arm, ParticipantRecord};
use crate::riskreg::{fit_casecohort_cox, fit_weighted_logistic, Formula, ModelFamily, RiskModel};

/// Placebo-arm marginalized risk: a scalar by randomization, so a single
/// denominator serves the whole CVE curve.
#[derive(Debug, Clone, Serialize)]
pub struct PlaceboRisk {
    pub estimate: f64,
    pub model: RiskModel,
    pub n_at_risk: usize,
}

/// Fit a covariate-only risk model on the placebo arm (full data, unit
/// weights, same family as the vaccine-arm analysis) and average the fitted
/// risks over placebo recipients at risk at the biomarker visit. Survival
/// times are measured from that visit, so every record with nonnegative time
/// is at risk; the logistic family uses all placebo records.
pub fn placebo_marginalized_risk(
    placebo: &[&ParticipantRecord],
    family: ModelFamily,
    covariates: &[String],
    t_horizon: Option<f64>,
) -> Result<PlaceboRisk> {
    if placebo.is_empty() {
        return Err(Error::NotEstimable("placebo arm is empty".into()));
    }
    if placebo.iter().any(|r| r.arm != Arm::Placebo) {
        return Err(Error::Data("placebo risk must be fit on placebo-arm records".into()));
    }
    let mut events = 0usize;
    for rec in placebo {
        if rec.is_case(t_horizon)? {
            events += 1;
        }
    }
    if events == 0 {
        return Err(Error::NotEstimable("no placebo-arm events".into()));
    }
    let design = TwoPhaseDesign::complete(t_horizon);
    let formula = Formula::covariates_only(covariates);
    let model = match family {
        ModelFamily::WeightedLogistic => fit_weighted_logistic(placebo, &design, &formula)?,
        ModelFamily::CaseCohortCox => {
            let t = t_horizon
                .ok_or_else(|| Error::Data("t_horizon required for the survival family".into()))?;
            fit_casecohort_cox(placebo, &design, &formula, t)?
        }
    };
    let mut sum = 0.0;
    for rec in placebo {
        sum += model.predict_risk(0.0, rec)?;
    }
    let estimate = sum / placebo.len() as f64;
    if !(estimate > 0.0) {
        return Err(Error::NotEstimable("placebo marginalized risk is zero".into()));
    }
    Ok(PlaceboRisk { estimate, model, n_at_risk: placebo.len() })
}

/// Transform a risk curve into a CVE curve: pointwise `1 - risk / placebo`.
/// Bands are intentionally dropped; valid CVE intervals require the placebo
/// arm to be resampled too, so they are attached by the bootstrap.
pub fn cve_curve(risk_curve: &CurveEstimate, placebo: &PlaceboRisk) -> Result<CurveEstimate> {
    if !(placebo.estimate > 0.0) {
        return Err(Error::Domain("placebo risk must be positive".into()));
    }
    let kind = match risk_curve.kind {
        CurveKind::MarginalizedRisk => CurveKind::CveNaive,
        CurveKind::ControlledRiskBound => CurveKind::CveConservative,
        other => {
            return Err(Error::Data(format!(
                "cve transform expects a risk curve, got {}",
                other.label()
            )))
        }
    };
    let point = risk_curve.point.iter().map(|r| 1.0 - r / placebo.estimate).collect();
    Ok(CurveEstimate {
        grid: risk_curve.grid.clone(),
        point,
        ci_lo: None,
        ci_hi: None,
        kind,
        meta: risk_curve.meta.clone(),
    })
}

/// CVE evaluated below the assay detection limit. When the cohort is naive
/// to the pathogen this is the natural direct effect, and a confidence
/// interval containing zero means full mediation through the marker cannot
/// be rejected.
#[derive(Debug, Clone, Serialize)]
pub struct MediationProbe {
    pub s: f64,
    pub cve: f64,
    pub ci: Option<(f64, f64)>,
    pub full_mediation_not_rejected: Option<bool>,
}

pub fn mediation_probe(cve: &CurveEstimate, llod: f64) -> Result<MediationProbe> {
    if !matches!(cve.kind, CurveKind::CveNaive | CurveKind::CveConservative) {
        return Err(Error::Data("mediation probe expects a cve curve".into()));
    }
    if cve.grid.is_empty() || cve.grid[0] > llod {
        return Err(Error::NotEstimable(format!(
            "no grid point at or below the detection limit {llod}"
        )));
    }
    let ci = match (&cve.ci_lo, &cve.ci_hi) {
        (Some(lo), Some(hi)) => Some((lo[0], hi[0])),
        _ => None,
    };
    Ok(MediationProbe {
        s: cve.grid[0],
        cve: cve.point[0],
        ci,
        full_mediation_not_rejected: ci.map(|(lo, hi)| lo <= 0.0 && 0.0 <= hi),
    })
}
