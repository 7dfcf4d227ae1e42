//! End-to-end analysis pipeline: design weights, conditional risk model,
//! marginalized and conservative curves, CVE, contrasts with E-values, and
//! bootstrap confidence bands. The command-line front end is a thin wrapper
//! around this module, and bootstrap replicates rerun the same pipeline on
//! resampled data with the grid, anchor, tertile cuts, and bias schedule
//! held fixed from the original analysis.

use serde::{Deserialize, Serialize};

use crate::bootstrap::{run_bootstrap, BootstrapPlan, BootstrapRun, ResamplingStrata};
use crate::cve::{cve_curve, mediation_probe, placebo_marginalized_risk, MediationProbe, PlaceboRisk};
use crate::dataset::{
    confounder_association_table, positivity_report, summarize_cohort,
    tertile_code, CohortSummary, ConfounderTable, PositivityReport, StratumRate, TwoPhaseDesign,
};
use crate::error::{Error, Result};
use crate::marginal::{
    default_grid, evaluate_curve, find_scent, marginalized_or, marginalized_rr,
    marginalized_risk_curve, CurveEstimate, ScentResult,
};
use crate::record::{Arm, ParticipantRecord};
use crate::riskreg::{
    fit_casecohort_cox, fit_weighted_logistic, Formula, ModelFamily, RiskModel,
};
use crate::sensitivity::{
    bias_factor_at, conservative_risk_curve, evalue_result, rru_surface, EvalueResult,
    RruSurface, SensitivitySpec,
};
use crate::stats::weighted_quantile;

pub const DEFAULT_GRID_POINTS: usize = 101;
pub const DEFAULT_GRID_LO: f64 = 0.025;
pub const DEFAULT_GRID_HI: f64 = 0.975;
pub const DEFAULT_CONTRAST_QUANTILES: (f64, f64) = (0.15, 0.85);

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSpec {
    #[serde(default = "default_grid_points")]
    pub n_points: usize,
    #[serde(default = "default_grid_lo")]
    pub lo_quantile: f64,
    #[serde(default = "default_grid_hi")]
    pub hi_quantile: f64,
    /// Explicit grid overriding the quantile rule.
    #[serde(default)]
    pub explicit: Option<Vec<f64>>,
}

fn default_grid_points() -> usize {
    DEFAULT_GRID_POINTS
}
fn default_grid_lo() -> f64 {
    DEFAULT_GRID_LO
}
fn default_grid_hi() -> f64 {
    DEFAULT_GRID_HI
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            n_points: DEFAULT_GRID_POINTS,
            lo_quantile: DEFAULT_GRID_LO,
            hi_quantile: DEFAULT_GRID_HI,
            explicit: None,
        }
    }
}

/// Confounding-strength configuration: a common RR_U at a fixed marker pair
/// given either as weighted marker quantiles or as explicit values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensitivityConfig {
    pub rr_u_fix: f64,
    #[serde(default)]
    pub s1_fix_quantile: Option<f64>,
    #[serde(default)]
    pub s2_fix_quantile: Option<f64>,
    #[serde(default)]
    pub s1_fix: Option<f64>,
    #[serde(default)]
    pub s2_fix: Option<f64>,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        SensitivityConfig {
            rr_u_fix: 4.0,
            s1_fix_quantile: Some(DEFAULT_CONTRAST_QUANTILES.0),
            s2_fix_quantile: Some(DEFAULT_CONTRAST_QUANTILES.1),
            s1_fix: None,
            s2_fix: None,
        }
    }
}

impl SensitivityConfig {
    fn resolve(&self, markers: &[f64], weights: &[f64]) -> Result<SensitivitySpec> {
        let pick = |q: Option<f64>, v: Option<f64>, which: &str| -> Result<f64> {
            match (q, v) {
                (Some(q), None) => weighted_quantile(markers, weights, q),
                (None, Some(v)) => Ok(v),
                (None, None) => Err(Error::Schema(format!(
                    "sensitivity spec needs {which}_fix or {which}_fix_quantile"
                ))),
                (Some(_), Some(_)) => Err(Error::Schema(format!(
                    "sensitivity spec has both {which}_fix and {which}_fix_quantile"
                ))),
            }
        };
        let s1 = pick(self.s1_fix_quantile, self.s1_fix, "s1")?;
        let s2 = pick(self.s2_fix_quantile, self.s2_fix, "s2")?;
        SensitivitySpec::common_loglinear(self.rr_u_fix, s1, s2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarkerMode {
    Quantitative,
    Tertile,
}

/// Statistical configuration of one analysis run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisSpec {
    pub family: ModelFamily,
    #[serde(default)]
    pub t_horizon: Option<f64>,
    #[serde(default)]
    pub covariates: Vec<String>,
    pub marker_mode: MarkerMode,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub sensitivity: SensitivityConfig,
    #[serde(default = "default_contrasts")]
    pub contrast_quantiles: (f64, f64),
    #[serde(default)]
    pub design_stratum: Option<String>,
    #[serde(default)]
    pub llod: Option<f64>,
}

fn default_contrasts() -> (f64, f64) {
    DEFAULT_CONTRAST_QUANTILES
}

impl AnalysisSpec {
    pub fn validate(&self) -> Result<()> {
        let (q1, q2) = self.contrast_quantiles;
        if !(0.0 < q1 && q1 < q2 && q2 < 1.0) {
            return Err(Error::Schema(format!(
                "contrast quantiles must be ordered inside (0,1), got ({q1}, {q2})"
            )));
        }
        if self.family == ModelFamily::CaseCohortCox && self.t_horizon.is_none() {
            return Err(Error::Schema("cox family requires t_horizon".into()));
        }
        Ok(())
    }

    fn formula(&self) -> Formula {
        match self.marker_mode {
            MarkerMode::Quantitative => Formula::quantitative(&self.covariates),
            MarkerMode::Tertile => Formula::tertile(&self.covariates),
        }
    }

    fn fit(
        &self,
        records: &[&ParticipantRecord],
        design: &TwoPhaseDesign,
        formula: &Formula,
    ) -> Result<RiskModel> {
        match self.family {
            ModelFamily::WeightedLogistic => fit_weighted_logistic(records, design, formula),
            ModelFamily::CaseCohortCox => {
                fit_casecohort_cox(records, design, formula, self.t_horizon.expect("validated"))
            }
        }
    }
}

/// Scalar contrast between the configured marker quantiles.
#[derive(Debug, Clone, Serialize)]
pub struct ContrastSummary {
    pub s1: f64,
    pub s2: f64,
    pub rr_m: f64,
    pub rr_m_ci: Option<(f64, f64)>,
    pub or_m: Option<f64>,
    pub or_m_ci: Option<(f64, f64)>,
    /// Bias factor applied to this contrast under the log-linear schedule.
    pub bias_factor: f64,
    pub rr_c_bound: f64,
    pub rr_c_ci: Option<(f64, f64)>,
    pub evalues: EvalueResult,
}

/// Upper-vs-lower tertile contrast (the coded 0/2 comparison).
#[derive(Debug, Clone, Serialize)]
pub struct TertileAnalysis {
    pub cuts: (f64, f64),
    pub model: RiskModel,
    pub rr_m: f64,
    pub rr_m_ci: Option<(f64, f64)>,
    pub bias_factor: f64,
    pub rr_c_bound: f64,
    pub rr_c_ci: Option<(f64, f64)>,
    pub evalues: EvalueResult,
}

#[derive(Debug, Clone, Serialize)]
pub struct BootstrapSummary {
    pub n_requested: usize,
    pub n_failed: usize,
    pub warning: Option<String>,
}

#[derive(Debug)]
pub struct AnalysisOutput {
    pub summary: CohortSummary,
    pub design_rates: Vec<StratumRate>,
    pub positivity: PositivityReport,
    pub confounders: ConfounderTable,
    pub model: RiskModel,
    pub grid: Vec<f64>,
    pub rm_curve: CurveEstimate,
    pub rc_bound: CurveEstimate,
    pub cve_naive: CurveEstimate,
    pub cve_cons: CurveEstimate,
    pub overall_risk: f64,
    pub scent: ScentResult,
    pub sens: SensitivitySpec,
    pub placebo: PlaceboRisk,
    pub contrasts: ContrastSummary,
    pub tertile: Option<TertileAnalysis>,
    pub surface: RruSurface,
    pub mediation: Option<MediationProbe>,
    pub warnings: Vec<String>,
    pub bootstrap: Option<BootstrapSummary>,
}

/// Everything held fixed across bootstrap replicates: the curve grid (so
/// pointwise bands align), the anchor point, and the bias schedule. Contrast
/// quantiles and tertile cut-points are re-estimated inside each replicate
/// so their sampling noise propagates into the intervals.
struct FixedFrame {
    grid: Vec<f64>,
    scent: f64,
    sens: SensitivitySpec,
    contrast_bias: f64,
    tertile_enabled: bool,
    tertile_bias: f64,
}

/// Point-estimate analysis without confidence bands.
pub fn run(records: &[ParticipantRecord], spec: &AnalysisSpec) -> Result<AnalysisOutput> {
    run_inner(records, spec, None)
}

/// Full analysis with bootstrap percentile bands on every curve and scalar
/// contrast; the placebo arm is resampled alongside the vaccine arm.
pub fn run_with_bootstrap(
    records: &[ParticipantRecord],
    spec: &AnalysisSpec,
    plan: &BootstrapPlan,
) -> Result<(AnalysisOutput, BootstrapRun)> {
    plan.validate()?;
    let mut out = run_inner(records, spec, Some(plan))?;
    let frame = FixedFrame {
        grid: out.grid.clone(),
        scent: out.scent.s,
        sens: out.sens.clone(),
        contrast_bias: out.contrasts.bias_factor,
        tertile_enabled: out.tertile.is_some(),
        tertile_bias: out.sens.bias_at_fixed_pair(),
    };
    let strata =
        ResamplingStrata::build(records, spec.t_horizon, spec.design_stratum.as_deref())?;

    let g = frame.grid.len();
    let mut names = Vec::new();
    for prefix in ["rm", "rc", "cve_naive", "cve_cons"] {
        for i in 0..g {
            names.push(format!("{prefix}[{i}]"));
        }
    }
    names.extend(["rr_m", "or_m", "rr_c", "rr_m_tertile", "rr_c_tertile", "placebo_risk"].map(String::from));

    let spec_ref = spec;
    let frame_ref = &frame;
    let run_result = run_bootstrap(records, &strata, plan, names, move |sample| {
        replicate_stats(sample, spec_ref, frame_ref)
    })?;

    // Attach percentile bands. Curve bands are clipped to contain the point
    // estimate so the interval invariant holds even in skewed corners.
    let curve_ci = |run: &BootstrapRun, offset: usize, curve: &mut CurveEstimate| -> Result<()> {
        let mut lo = Vec::with_capacity(g);
        let mut hi = Vec::with_capacity(g);
        for i in 0..g {
            let (l, h) = run.ci(offset + i)?;
            lo.push(l.min(curve.point[i]));
            hi.push(h.max(curve.point[i]));
        }
        curve.ci_lo = Some(lo);
        curve.ci_hi = Some(hi);
        curve.meta.n_bootstrap = Some(run.replicates.len());
        Ok(())
    };
    curve_ci(&run_result, 0, &mut out.rm_curve)?;
    curve_ci(&run_result, g, &mut out.rc_bound)?;
    curve_ci(&run_result, 2 * g, &mut out.cve_naive)?;
    curve_ci(&run_result, 3 * g, &mut out.cve_cons)?;

    let scalar = |idx: usize| run_result.ci(4 * g + idx).ok();
    out.contrasts.rr_m_ci = scalar(0);
    out.contrasts.or_m_ci = scalar(1);
    out.contrasts.rr_c_ci = scalar(2);
    if let Some(t) = out.tertile.as_mut() {
        t.rr_m_ci = scalar(3);
        t.rr_c_ci = scalar(4);
        t.evalues = evalue_result(t.rr_m, t.rr_m_ci)?;
    }
    out.contrasts.evalues = evalue_result(out.contrasts.rr_m, out.contrasts.rr_m_ci)?;

    if let Some(llod) = spec.llod {
        match mediation_probe(&out.cve_cons, llod) {
            Ok(p) => out.mediation = Some(p),
            Err(Error::NotEstimable(msg)) => out.warnings.push(format!("mediation probe: {msg}")),
            Err(e) => return Err(e),
        }
    }
    if let Some(w) = &run_result.failure_warning {
        out.warnings.push(w.clone());
    }
    out.bootstrap = Some(BootstrapSummary {
        n_requested: run_result.n_requested,
        n_failed: run_result.n_failed,
        warning: run_result.failure_warning.clone(),
    });
    Ok((out, run_result))
}

fn run_inner(
    records: &[ParticipantRecord],
    spec: &AnalysisSpec,
    confounder_plan: Option<&BootstrapPlan>,
) -> Result<AnalysisOutput> {
    spec.validate()?;
    let mut warnings = Vec::new();
    let vaccine: Vec<&ParticipantRecord> =
        records.iter().filter(|r| r.arm == Arm::Vaccine).collect();
    let placebo: Vec<&ParticipantRecord> =
        records.iter().filter(|r| r.arm == Arm::Placebo).collect();
    if vaccine.is_empty() {
        return Err(Error::Data("no vaccine-arm records".into()));
    }

    let design =
        TwoPhaseDesign::estimate(&vaccine, spec.design_stratum.as_deref(), spec.t_horizon)?;
    let summary = summarize_cohort(records, &design)?;

    let phase2: Vec<&ParticipantRecord> =
        vaccine.iter().copied().filter(|r| r.in_phase_two()).collect();
    if phase2.is_empty() {
        return Err(Error::Estimation("no phase-two vaccine records".into()));
    }
    let positivity = positivity_report(
        &phase2,
        &vaccine,
        &design,
        &spec.covariates,
        crate::dataset::DEFAULT_COVERAGE_THRESHOLD,
    )?;
    if positivity.any_flagged() {
        warnings.push(
            "positivity diagnostic flagged strata with restricted marker range".to_string(),
        );
    }
    let confounders =
        confounder_association_table(&vaccine, &design, &spec.covariates, confounder_plan)?;

    let markers: Vec<f64> = phase2.iter().map(|r| r.marker.unwrap()).collect();
    let weights: Vec<f64> = phase2.iter().map(|r| design.weight(r)).collect::<Result<_>>()?;

    // Tertile coding always runs for the upper-vs-lower tertile contrast; in
    // tertile marker mode it also drives the curves.
    let tertile_coding = match tertile_code(records, &design) {
        Ok(c) => Some(c),
        Err(Error::DegenerateMarker(msg)) => {
            warnings.push(format!("tertile analysis skipped: {msg}"));
            None
        }
        Err(e) => return Err(e),
    };

    // Curve-driving model and grid. In tertile mode the coded copy replaces
    // the raw records for everything downstream of the coding.
    let curve_base: &[ParticipantRecord] = match spec.marker_mode {
        MarkerMode::Quantitative => records,
        MarkerMode::Tertile => {
            &tertile_coding
                .as_ref()
                .ok_or_else(|| Error::DegenerateMarker("tertile mode needs a codable marker".into()))?
                .records
        }
    };
    let curve_phase2: Vec<&ParticipantRecord> = curve_base
        .iter()
        .filter(|r| r.arm == Arm::Vaccine && r.in_phase_two())
        .collect();
    let (model, grid): (RiskModel, Vec<f64>) = match spec.marker_mode {
        MarkerMode::Quantitative => {
            let model = spec.fit(&phase2, &design, &spec.formula())?;
            let grid = match &spec.grid.explicit {
                Some(g) => {
                    let mut g = g.clone();
                    g.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    g.dedup();
                    g
                }
                None => default_grid(
                    &phase2,
                    &design,
                    spec.grid.n_points,
                    spec.grid.lo_quantile,
                    spec.grid.hi_quantile,
                )?,
            };
            (model, grid)
        }
        MarkerMode::Tertile => {
            let model = spec.fit(&curve_phase2, &design, &spec.formula())?;
            (model, vec![0.0, 1.0, 2.0])
        }
    };

    let rm_curve = marginalized_risk_curve(&model, &curve_phase2, &design, &grid)?;
    if !rm_curve.meta.trimmed_points.is_empty() {
        warnings.push(format!(
            "{} grid point(s) outside the observed marker support were trimmed: {:?}",
            rm_curve.meta.trimmed_points.len(),
            rm_curve.meta.trimmed_points
        ));
    }
    let grid = rm_curve.grid.clone();

    let overall_risk = summary.overall_vaccine_risk;
    let scent = find_scent(&rm_curve, overall_risk)?;
    if let Some(w) = &scent.warning {
        warnings.push(w.clone());
    }

    // Sensitivity schedule on the analysis marker scale.
    let (cal_markers, cal_weights): (Vec<f64>, Vec<f64>) = match spec.marker_mode {
        MarkerMode::Quantitative => (markers.clone(), weights.clone()),
        MarkerMode::Tertile => (
            curve_phase2.iter().map(|r| r.marker.unwrap()).collect(),
            curve_phase2.iter().map(|r| design.weight(r)).collect::<Result<_>>()?,
        ),
    };
    let sens = spec.sensitivity.resolve(&cal_markers, &cal_weights)?;

    let rc_bound = conservative_risk_curve(&rm_curve, scent.s, &sens)?;

    let placebo_risk = placebo_marginalized_risk(
        &placebo,
        spec.family,
        &spec.covariates,
        spec.t_horizon,
    )?;
    let cve_naive = cve_curve(&rm_curve, &placebo_risk)?;
    let cve_cons = cve_curve(&rc_bound, &placebo_risk)?;

    // Contrast between the configured quantiles (coded levels in tertile mode).
    let (s1, s2) = match spec.marker_mode {
        MarkerMode::Quantitative => (
            weighted_quantile(&markers, &weights, spec.contrast_quantiles.0)?,
            weighted_quantile(&markers, &weights, spec.contrast_quantiles.1)?,
        ),
        MarkerMode::Tertile => (0.0, 2.0),
    };
    if !(s1 < s2) {
        return Err(Error::DegenerateMarker(
            "contrast quantiles collapse to a single marker value".into(),
        ));
    }
    let rr_m = marginalized_rr(&model, &curve_phase2, &design, s1, s2)?;
    let or_m = match marginalized_or(&model, &curve_phase2, &design, s1, s2) {
        Ok(v) => Some(v),
        Err(e) => {
            warnings.push(format!("marginalized odds ratio not estimable: {e}"));
            None
        }
    };
    let contrast_bias = bias_factor_at(&sens, s1, s2)?;
    let contrasts = ContrastSummary {
        s1,
        s2,
        rr_m,
        rr_m_ci: None,
        or_m,
        or_m_ci: None,
        bias_factor: contrast_bias,
        rr_c_bound: rr_m * contrast_bias,
        rr_c_ci: None,
        evalues: evalue_result(rr_m, None)?,
    };

    // Upper-vs-lower tertile contrast with the bias factor posited directly
    // at the fixed-pair magnitude.
    let tertile = match (&tertile_coding, spec.marker_mode) {
        (Some(coding), _) => {
            match tertile_contrast(spec, &design, coding, sens.bias_at_fixed_pair()) {
                Ok(t) => Some(t),
                Err(e) => {
                    warnings.push(format!("tertile contrast not estimable: {e}"));
                    None
                }
            }
        }
        (None, _) => None,
    };

    let surface = rru_surface(&sens, &grid)?;

    let mediation = match spec.llod {
        Some(llod) => match mediation_probe(&cve_cons, llod) {
            Ok(p) => Some(p),
            Err(Error::NotEstimable(msg)) => {
                warnings.push(format!("mediation probe: {msg}"));
                None
            }
            Err(e) => return Err(e),
        },
        None => None,
    };

    Ok(AnalysisOutput {
        summary,
        design_rates: design.rates().cloned().collect(),
        positivity,
        confounders,
        model,
        grid,
        rm_curve,
        rc_bound,
        cve_naive,
        cve_cons,
        overall_risk,
        scent,
        sens,
        placebo: placebo_risk,
        contrasts,
        tertile,
        surface,
        mediation,
        warnings,
        bootstrap: None,
    })
}

fn tertile_contrast(
    spec: &AnalysisSpec,
    design: &TwoPhaseDesign,
    coding: &crate::dataset::TertileCoding,
    bias: f64,
) -> Result<TertileAnalysis> {
    let coded_phase2: Vec<&ParticipantRecord> = coding
        .records
        .iter()
        .filter(|r| r.arm == Arm::Vaccine && r.in_phase_two())
        .collect();
    let formula = Formula::tertile(&spec.covariates);
    let model = spec.fit(&coded_phase2, design, &formula)?;
    let rr_m = marginalized_rr(&model, &coded_phase2, design, 0.0, 2.0)?;
    Ok(TertileAnalysis {
        cuts: coding.cuts,
        model,
        rr_m,
        rr_m_ci: None,
        bias_factor: bias,
        rr_c_bound: rr_m * bias,
        rr_c_ci: None,
        evalues: evalue_result(rr_m, None)?,
    })
}

/// One bootstrap replicate: re-estimate the design, refit every model, and
/// evaluate all statistics on the frame fixed by the original analysis.
fn replicate_stats(
    sample: &[ParticipantRecord],
    spec: &AnalysisSpec,
    frame: &FixedFrame,
) -> Result<Vec<f64>> {
    let vaccine: Vec<&ParticipantRecord> =
        sample.iter().filter(|r| r.arm == Arm::Vaccine).collect();
    let placebo: Vec<&ParticipantRecord> =
        sample.iter().filter(|r| r.arm == Arm::Placebo).collect();
    let design =
        TwoPhaseDesign::estimate(&vaccine, spec.design_stratum.as_deref(), spec.t_horizon)?;

    // Tertile cut-points are re-derived on the resample, mirroring the full
    // estimation procedure.
    let coded_holder: Option<Vec<ParticipantRecord>> = match spec.marker_mode {
        MarkerMode::Quantitative => None,
        MarkerMode::Tertile => Some(tertile_code(sample, &design)?.records),
    };
    let curve_base: &[ParticipantRecord] = coded_holder.as_deref().unwrap_or(sample);
    let curve_phase2: Vec<&ParticipantRecord> = curve_base
        .iter()
        .filter(|r| r.arm == Arm::Vaccine && r.in_phase_two())
        .collect();
    let model = spec.fit(&curve_phase2, &design, &spec.formula())?;

    let rm = evaluate_curve(&model, &curve_phase2, &design, &frame.grid)?;
    let rc = conservative_risk_curve(&rm, frame.scent, &frame.sens)?;
    let placebo_risk =
        placebo_marginalized_risk(&placebo, spec.family, &spec.covariates, spec.t_horizon)?;
    let cvn = cve_curve(&rm, &placebo_risk)?;
    let cvc = cve_curve(&rc, &placebo_risk)?;

    // Contrast marker values re-estimated from this replicate's weighted
    // phase-two distribution (coded levels in tertile mode).
    let (s1, s2) = match spec.marker_mode {
        MarkerMode::Quantitative => {
            let markers: Vec<f64> = curve_phase2.iter().map(|r| r.marker.unwrap()).collect();
            let weights: Vec<f64> =
                curve_phase2.iter().map(|r| design.weight(r)).collect::<Result<_>>()?;
            (
                weighted_quantile(&markers, &weights, spec.contrast_quantiles.0)?,
                weighted_quantile(&markers, &weights, spec.contrast_quantiles.1)?,
            )
        }
        MarkerMode::Tertile => (0.0, 2.0),
    };
    if !(s1 < s2) {
        return Err(Error::DegenerateMarker(
            "contrast quantiles collapse in a bootstrap replicate".into(),
        ));
    }
    let rr_m = marginalized_rr(&model, &curve_phase2, &design, s1, s2)?;
    let or_m = marginalized_or(&model, &curve_phase2, &design, s1, s2).unwrap_or(f64::NAN);

    // Upper-vs-lower tertile contrast with cuts re-derived on the resample;
    // failures inside a replicate degrade to NaN rather than dropping the
    // whole replicate.
    let rr_t = if frame.tertile_enabled {
        tertile_code(sample, &design)
            .and_then(|coding| {
                let coded_phase2: Vec<&ParticipantRecord> = coding
                    .records
                    .iter()
                    .filter(|r| r.arm == Arm::Vaccine && r.in_phase_two())
                    .collect();
                let formula = Formula::tertile(&spec.covariates);
                let m = spec.fit(&coded_phase2, &design, &formula)?;
                marginalized_rr(&m, &coded_phase2, &design, 0.0, 2.0)
            })
            .unwrap_or(f64::NAN)
    } else {
        f64::NAN
    };

    let g = frame.grid.len();
    let mut stats = Vec::with_capacity(4 * g + 6);
    stats.extend_from_slice(&rm.point);
    stats.extend_from_slice(&rc.point);
    stats.extend_from_slice(&cvn.point);
    stats.extend_from_slice(&cvc.point);
    stats.push(rr_m);
    stats.push(or_m);
    stats.push(rr_m * frame.contrast_bias);
    stats.push(rr_t);
    stats.push(rr_t * frame.tertile_bias);
    stats.push(placebo_risk.estimate);
    Ok(stats)
}
