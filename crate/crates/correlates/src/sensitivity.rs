//! Robustness to unmeasured confounding: E-values, the bias factor
//! `B = RR_UD * RR_EU / (RR_UD + RR_EU - 1)`, a log-linear common
//! confounding-strength schedule across marker distances, conservative
//! controlled-risk ratios and curve bounds anchored at `s_cent`, and the
//! (s1, s2) surfaces used for plotting.

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::marginal::{CurveEstimate, CurveKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SensitivityMode {
    /// RR_UD = RR_EU = RR_U(s1,s2), with log RR_U linear in s2 - s1 and
    /// calibrated at a fixed marker pair. Supports curve bounds.
    CommonRruLoglinear,
    /// Confounding magnitudes supplied only at the fixed pair; scalar bounds
    /// only.
    FixedPairOnly,
}

/// User-supplied confounding magnitudes plus the derived log-linear slope.
#[derive(Debug, Clone, Serialize)]
pub struct SensitivitySpec {
    pub rr_ud_fix: f64,
    pub rr_eu_fix: f64,
    pub s1_fix: f64,
    pub s2_fix: f64,
    /// log RR_U per unit of marker distance (common mode).
    pub gamma: f64,
    pub mode: SensitivityMode,
}

impl SensitivitySpec {
    /// Common-value specification: `RR_UD = RR_EU = rr_u_fix` at the fixed
    /// pair, interpolated log-linearly elsewhere.
    pub fn common_loglinear(rr_u_fix: f64, s1_fix: f64, s2_fix: f64) -> Result<Self> {
        if !(rr_u_fix >= 1.0) {
            return Err(Error::Domain(format!("rr_u_fix must be >= 1, got {rr_u_fix}")));
        }
        if !(s1_fix < s2_fix) {
            return Err(Error::Domain(format!(
                "fixed marker pair must satisfy s1 < s2, got ({s1_fix}, {s2_fix})"
            )));
        }
        Ok(SensitivitySpec {
            rr_ud_fix: rr_u_fix,
            rr_eu_fix: rr_u_fix,
            s1_fix,
            s2_fix,
            gamma: rr_u_fix.ln() / (s2_fix - s1_fix),
            mode: SensitivityMode::CommonRruLoglinear,
        })
    }

    /// Separate RR_UD / RR_EU at the fixed pair, no interpolation.
    pub fn fixed_pair(rr_ud: f64, rr_eu: f64, s1_fix: f64, s2_fix: f64) -> Result<Self> {
        if !(rr_ud >= 1.0 && rr_eu >= 1.0) {
            return Err(Error::Domain("confounding magnitudes must be >= 1".into()));
        }
        if !(s1_fix < s2_fix) {
            return Err(Error::Domain(format!(
                "fixed marker pair must satisfy s1 < s2, got ({s1_fix}, {s2_fix})"
            )));
        }
        Ok(SensitivitySpec {
            rr_ud_fix: rr_ud,
            rr_eu_fix: rr_eu,
            s1_fix,
            s2_fix,
            gamma: 0.0,
            mode: SensitivityMode::FixedPairOnly,
        })
    }

    /// Bias factor at the fixed pair.
    pub fn bias_at_fixed_pair(&self) -> f64 {
        bias_factor(self.rr_ud_fix, self.rr_eu_fix).expect("validated at construction")
    }

    /// Stable fingerprint recorded in curve metadata and manifests.
    pub fn fingerprint(&self) -> String {
        let repr = format!(
            "mode={:?};rr_ud={:.17e};rr_eu={:.17e};s1={:.17e};s2={:.17e}",
            self.mode, self.rr_ud_fix, self.rr_eu_fix, self.s1_fix, self.s2_fix
        );
        let digest = Sha256::digest(repr.as_bytes());
        let mut hex = String::with_capacity(16);
        for b in &digest[..8] {
            hex.push_str(&format!("{b:02x}"));
        }
        hex
    }
}

/// E-value for a protective risk-ratio point estimate (`0 < rr <= 1`):
/// `(1 + sqrt(1 - rr)) / rr`.
pub fn evalue_point(rr: f64) -> Result<f64> {
    if !(rr > 0.0) {
        return Err(Error::Domain(format!("risk ratio must be positive, got {rr}")));
    }
    if rr > 1.0 {
        return Err(Error::Domain(format!(
            "risk ratio {rr} > 1: apply the E-value to its reciprocal (see evalue_result)"
        )));
    }
    Ok((1.0 + (1.0 - rr).sqrt()) / rr)
}

/// E-value for the upper 95% confidence limit: 1 when the interval already
/// crosses the null, otherwise the point formula at the limit.
pub fn evalue_ul(rr_ul: f64) -> Result<f64> {
    if !(rr_ul > 0.0) {
        return Err(Error::Domain(format!("upper limit must be positive, got {rr_ul}")));
    }
    if rr_ul >= 1.0 {
        Ok(1.0)
    } else {
        Ok((1.0 + (1.0 - rr_ul).sqrt()) / rr_ul)
    }
}

/// E-values for a risk ratio and its confidence interval. Estimates at or
/// above one are reported through the reciprocal with `flipped` set rather
/// than silently.
#[derive(Debug, Clone, Serialize)]
pub struct EvalueResult {
    pub e_point: f64,
    pub e_ul: Option<f64>,
    pub rr_point: f64,
    pub rr_ul: Option<f64>,
    pub flipped: bool,
}

pub fn evalue_result(rr: f64, ci: Option<(f64, f64)>) -> Result<EvalueResult> {
    if !(rr > 0.0) {
        return Err(Error::Domain(format!("risk ratio must be positive, got {rr}")));
    }
    if rr <= 1.0 {
        let rr_ul = ci.map(|(_, hi)| hi);
        let e_ul = rr_ul.map(evalue_ul).transpose()?;
        Ok(EvalueResult { e_point: evalue_point(rr)?, e_ul, rr_point: rr, rr_ul, flipped: false })
    } else {
        // Harmful direction: explain away 1/rr, whose relevant limit is the
        // reciprocal of the lower limit.
        let flipped_rr = 1.0 / rr;
        let rr_ul = match ci {
            Some((lo, _)) if lo > 0.0 => Some(1.0 / lo),
            Some(_) => None,
            None => None,
        };
        let e_ul = rr_ul.map(evalue_ul).transpose()?;
        Ok(EvalueResult {
            e_point: evalue_point(flipped_rr)?,
            e_ul,
            rr_point: flipped_rr,
            rr_ul,
            flipped: true,
        })
    }
}

/// Ding-VanderWeele bias factor.
pub fn bias_factor(rr_ud: f64, rr_eu: f64) -> Result<f64> {
    if !(rr_ud >= 1.0 && rr_eu >= 1.0) {
        return Err(Error::Domain(format!(
            "bias factor arguments must be >= 1, got ({rr_ud}, {rr_eu})"
        )));
    }
    Ok(rr_ud * rr_eu / (rr_ud + rr_eu - 1.0))
}

/// Common confounding strength at an arbitrary marker pair under the
/// log-linear schedule: `exp(gamma * (s2 - s1))`.
pub fn rru_at(spec: &SensitivitySpec, s1: f64, s2: f64) -> Result<f64> {
    if spec.mode != SensitivityMode::CommonRruLoglinear {
        return Err(Error::Domain(
            "confounding interpolation requires the common log-linear specification".into(),
        ));
    }
    if s1 > s2 {
        return Err(Error::Domain(format!("need s1 <= s2, got {s1} > {s2}")));
    }
    Ok((spec.gamma * (s2 - s1)).exp())
}

/// Bias factor at an arbitrary pair under the log-linear schedule.
pub fn bias_factor_at(spec: &SensitivitySpec, s1: f64, s2: f64) -> Result<f64> {
    let rr_u = rru_at(spec, s1, s2)?;
    bias_factor(rr_u, rr_u)
}

/// Conservative (upper bound) controlled risk ratio: estimate times bias
/// factor, applied identically to point estimates and confidence limits.
pub fn conservative_rr(rr_m: f64, b: f64) -> Result<f64> {
    if !(rr_m > 0.0) {
        return Err(Error::Domain(format!("risk ratio must be positive, got {rr_m}")));
    }
    if !(b >= 1.0) {
        return Err(Error::Domain(format!("bias factor must be >= 1, got {b}")));
    }
    Ok(rr_m * b)
}

/// Conservative controlled-risk curve: multiply by `B(s_cent, s)` right of
/// the anchor and divide by `B(s, s_cent)` left of it, pulling the curve
/// toward the null. Identical transformation applied to any bands; outputs
/// clamped to [0,1] with clamp events counted in the metadata.
pub fn conservative_risk_curve(
    curve: &CurveEstimate,
    scent: f64,
    spec: &SensitivitySpec,
) -> Result<CurveEstimate> {
    if curve.kind != CurveKind::MarginalizedRisk {
        return Err(Error::Data("conservative transform expects a marginalized-risk curve".into()));
    }
    if !curve.grid.iter().any(|&g| (g - scent).abs() <= 1e-9) {
        return Err(Error::Anchoring(format!("s_cent = {scent} is not on the curve grid")));
    }
    let factors: Vec<f64> = curve
        .grid
        .iter()
        .map(|&s| {
            if s >= scent {
                bias_factor_at(spec, scent, s)
            } else {
                Ok(1.0 / bias_factor_at(spec, s, scent)?)
            }
        })
        .collect::<Result<_>>()?;
    let mut clamped = 0usize;
    let mut transform = |values: &[f64]| -> Vec<f64> {
        values
            .iter()
            .zip(&factors)
            .map(|(v, f)| {
                let t = v * f;
                if t > 1.0 {
                    clamped += 1;
                    1.0
                } else if t < 0.0 {
                    clamped += 1;
                    0.0
                } else {
                    t
                }
            })
            .collect()
    };
    let point = transform(&curve.point);
    let ci_lo = curve.ci_lo.as_ref().map(|v| transform(v));
    let ci_hi = curve.ci_hi.as_ref().map(|v| transform(v));
    let mut meta = curve.meta.clone();
    meta.scent = Some(scent);
    meta.sensitivity_fingerprint = Some(spec.fingerprint());
    meta.clamped_points = clamped;
    Ok(CurveEstimate { grid: curve.grid.clone(), point, ci_lo, ci_hi, kind: CurveKind::ControlledRiskBound, meta })
}

/// Long-format RR_U and B surfaces over ordered grid pairs (s1 <= s2).
#[derive(Debug, Clone, Serialize)]
pub struct RruSurface {
    pub rows: Vec<SurfaceRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SurfaceRow {
    pub s1: f64,
    pub s2: f64,
    pub rr_u: f64,
    pub b: f64,
}

pub fn rru_surface(spec: &SensitivitySpec, grid: &[f64]) -> Result<RruSurface> {
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Domain("surface grid must be strictly increasing".into()));
    }
    let mut rows = Vec::new();
    for (i, &s1) in grid.iter().enumerate() {
        for &s2 in &grid[i..] {
            let rr_u = rru_at(spec, s1, s2)?;
            rows.push(SurfaceRow { s1, s2, rr_u, b: bias_factor(rr_u, rr_u)? });
        }
    }
    Ok(RruSurface { rows })
}
