//! Marginalized risk: the conditional risk model averaged over the observed
//! covariate distribution with inverse-probability weights,
//! `r_M(s) = sum_i r(s, X_i)/pi_i / sum_i 1/pi_i` over phase-two vaccine
//! recipients.

use serde::Serialize;

use crate::dataset::TwoPhaseDesign;
use crate::error::{Error, Result};
use crate::record::ParticipantRecord;
use crate::riskreg::RiskModel;
use crate::stats::weighted_quantile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurveKind {
    MarginalizedRisk,
    ControlledRiskBound,
    CveNaive,
    CveConservative,
}

impl CurveKind {
    pub fn is_risk(self) -> bool {
        matches!(self, CurveKind::MarginalizedRisk | CurveKind::ControlledRiskBound)
    }

    pub fn label(self) -> &'static str {
        match self {
            CurveKind::MarginalizedRisk => "marginalized-risk",
            CurveKind::ControlledRiskBound => "controlled-risk-bound",
            CurveKind::CveNaive => "cve-naive",
            CurveKind::CveConservative => "cve-conservative",
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct CurveMeta {
    pub scent: Option<f64>,
    pub scent_warning: Option<String>,
    pub sensitivity_fingerprint: Option<String>,
    pub n_bootstrap: Option<usize>,
    /// Grid points clamped into [0,1] by the conservative transformation.
    pub clamped_points: usize,
    /// Grid points dropped for lying outside the observed marker support.
    pub trimmed_points: Vec<f64>,
}

/// A curve over marker values with optional pointwise 95% bands.
#[derive(Debug, Clone, Serialize)]
pub struct CurveEstimate {
    pub grid: Vec<f64>,
    pub point: Vec<f64>,
    pub ci_lo: Option<Vec<f64>>,
    pub ci_hi: Option<Vec<f64>>,
    pub kind: CurveKind,
    pub meta: CurveMeta,
}

impl CurveEstimate {
    /// Structural invariants: strictly increasing grid, matching lengths,
    /// risks inside [0,1], bands bracketing the point estimates.
    pub fn validate(&self) -> Result<()> {
        if self.grid.len() != self.point.len() {
            return Err(Error::Data("curve grid/point length mismatch".into()));
        }
        if self.grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Data("curve grid must be strictly increasing".into()));
        }
        if self.kind.is_risk() && self.point.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Data("risk curve outside [0,1]".into()));
        }
        match (&self.ci_lo, &self.ci_hi) {
            (Some(lo), Some(hi)) => {
                if lo.len() != self.point.len() || hi.len() != self.point.len() {
                    return Err(Error::Data("curve band length mismatch".into()));
                }
                for ((l, p), h) in lo.iter().zip(&self.point).zip(hi) {
                    if !(l <= p && p <= h) {
                        return Err(Error::Data(format!(
                            "curve band does not bracket point estimate ({l} / {p} / {h})"
                        )));
                    }
                }
            }
            (None, None) => {}
            _ => return Err(Error::Data("curve has only one band side".into())),
        }
        Ok(())
    }
}

fn phase2_weights(
    records: &[&ParticipantRecord],
    design: &TwoPhaseDesign,
) -> Result<Vec<f64>> {
    if records.is_empty() {
        return Err(Error::Estimation("empty phase-two set".into()));
    }
    records.iter().map(|r| design.weight(r)).collect()
}

/// IPW g-computation estimate of the marginalized risk at one marker value.
pub fn marginalized_risk(
    model: &RiskModel,
    records: &[&ParticipantRecord],
    design: &TwoPhaseDesign,
    s: f64,
) -> Result<f64> {
    let weights = phase2_weights(records, design)?;
    let mut num = 0.0;
    let mut den = 0.0;
    for (rec, w) in records.iter().zip(&weights) {
        num += w * model.predict_risk(s, rec)?;
        den += w;
    }
    Ok(num / den)
}

/// Default evaluation grid: `n_points` equally spaced marker values between
/// the weighted `lo_q` and `hi_q` phase-two quantiles.
pub fn default_grid(
    records: &[&ParticipantRecord],
    design: &TwoPhaseDesign,
    n_points: usize,
    lo_q: f64,
    hi_q: f64,
) -> Result<Vec<f64>> {
    if n_points < 2 {
        return Err(Error::Domain("grid needs at least 2 points".into()));
    }
    if !(lo_q < hi_q) {
        return Err(Error::Domain("grid quantiles must be ordered".into()));
    }
    let weights = phase2_weights(records, design)?;
    let markers: Vec<f64> = records.iter().map(|r| r.marker.unwrap()).collect();
    let lo = weighted_quantile(&markers, &weights, lo_q)?;
    let hi = weighted_quantile(&markers, &weights, hi_q)?;
    if !(lo < hi) {
        return Err(Error::DegenerateMarker(
            "weighted marker quantiles collapse to a point".into(),
        ));
    }
    let step = (hi - lo) / (n_points - 1) as f64;
    Ok((0..n_points).map(|i| lo + step * i as f64).collect())
}

/// Pointwise marginalized risk over a grid. Grid points outside the observed
/// phase-two marker support are trimmed and recorded as a warning in the
/// curve metadata. Bands are attached later by the bootstrap.
pub fn marginalized_risk_curve(
    model: &RiskModel,
    records: &[&ParticipantRecord],
    design: &TwoPhaseDesign,
    grid: &[f64],
) -> Result<CurveEstimate> {
    let markers: Vec<f64> = records.iter().map(|r| r.marker.unwrap()).collect();
    let lo = markers.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = markers.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (kept, trimmed): (Vec<f64>, Vec<f64>) =
        grid.iter().partition(|&&s| (lo..=hi).contains(&s));
    if kept.is_empty() {
        return Err(Error::Estimation(
            "entire grid lies outside the observed marker support".into(),
        ));
    }
    let mut curve = evaluate_curve(model, records, design, &kept)?;
    curve.meta.trimmed_points = trimmed;
    Ok(curve)
}

/// Curve evaluation at fixed grid points with no support trimming; bootstrap
/// replicates use this so every replicate reports the same grid.
pub fn evaluate_curve(
    model: &RiskModel,
    records: &[&ParticipantRecord],
    design: &TwoPhaseDesign,
    grid: &[f64],
) -> Result<CurveEstimate> {
    let weights = phase2_weights(records, design)?;
    let total: f64 = weights.iter().sum();
    let cov_etas: Vec<f64> = records
        .iter()
        .map(|r| model.covariate_eta(r))
        .collect::<Result<_>>()?;
    let mut point = Vec::with_capacity(grid.len());
    for &s in grid {
        let mut num = 0.0;
        for (eta, w) in cov_etas.iter().zip(&weights) {
            num += w * model.risk_from_parts(*eta, s)?;
        }
        point.push(num / total);
    }
    Ok(CurveEstimate {
        grid: grid.to_vec(),
        point,
        ci_lo: None,
        ci_hi: None,
        kind: CurveKind::MarginalizedRisk,
        meta: CurveMeta::default(),
    })
}

/// Marginalized risk ratio between two marker values (`s1 < s2`).
pub fn marginalized_rr(
    model: &RiskModel,
    records: &[&ParticipantRecord],
    design: &TwoPhaseDesign,
    s1: f64,
    s2: f64,
) -> Result<f64> {
    if !(s1 < s2) {
        return Err(Error::Domain(format!("need s1 < s2, got {s1} >= {s2}")));
    }
    let r1 = marginalized_risk(model, records, design, s1)?;
    let r2 = marginalized_risk(model, records, design, s2)?;
    if r1 <= 0.0 {
        return Err(Error::NotEstimable(format!(
            "marginalized risk at s1 = {s1} is zero; risk ratio undefined"
        )));
    }
    Ok(r2 / r1)
}

/// Marginalized odds ratio between two marker values.
pub fn marginalized_or(
    model: &RiskModel,
    records: &[&ParticipantRecord],
    design: &TwoPhaseDesign,
    s1: f64,
    s2: f64,
) -> Result<f64> {
    if !(s1 < s2) {
        return Err(Error::Domain(format!("need s1 < s2, got {s1} >= {s2}")));
    }
    let r1 = marginalized_risk(model, records, design, s1)?;
    let r2 = marginalized_risk(model, records, design, s2)?;
    if r1 <= 0.0 || r1 >= 1.0 || r2 <= 0.0 || r2 >= 1.0 {
        return Err(Error::NotEstimable(
            "marginalized odds ratio needs risks strictly inside (0,1)".into(),
        ));
    }
    Ok((r2 / (1.0 - r2)) / (r1 / (1.0 - r1)))
}

/// Anchor point selection: the grid value whose marginalized risk is closest
/// to the observed overall vaccine-arm risk.
#[derive(Debug, Clone, Serialize)]
pub struct ScentResult {
    pub s: f64,
    pub index: usize,
    pub gap: f64,
    pub warning: Option<String>,
}

pub fn find_scent(curve: &CurveEstimate, overall_risk: f64) -> Result<ScentResult> {
    if curve.grid.is_empty() {
        return Err(Error::Estimation("empty curve".into()));
    }
    let mut best = 0usize;
    let mut best_gap = f64::INFINITY;
    for (i, p) in curve.point.iter().enumerate() {
        let gap = (p - overall_risk).abs();
        // Strict improvement keeps ties at the smaller grid value.
        if gap < best_gap {
            best_gap = gap;
            best = i;
        }
    }
    let warning = if overall_risk > 0.0 && best_gap / overall_risk > 0.10 {
        Some(format!(
            "marginalized risk never approximates the overall risk: closest gap {:.3e} at s = {} exceeds 10% of {:.3e}",
            best_gap, curve.grid[best], overall_risk
        ))
    } else {
        None
    };
    Ok(ScentResult { s: curve.grid[best], index: best, gap: best_gap, warning })
}
