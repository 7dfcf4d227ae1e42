//! Design diagnostics: marker positivity by covariate stratum and a
//! confounder association table.

use serde::Serialize;

use crate::bootstrap::{run_bootstrap, BootstrapPlan, ResamplingStrata};
use crate::dataset::TwoPhaseDesign;
use crate::error::{Error, Result};
use crate::record::{Covariate, ParticipantRecord};
use crate::stats::{weighted_mean, weighted_quantile};

pub const DEFAULT_COVERAGE_THRESHOLD: f64 = 0.80;

#[derive(Debug, Clone, Serialize)]
pub struct PositivityRow {
    pub covariate: String,
    pub level: String,
    pub n: usize,
    pub min: Option<f64>,
    pub q05: Option<f64>,
    pub q50: Option<f64>,
    pub q95: Option<f64>,
    pub max: Option<f64>,
    /// Fraction of the pooled 5-95% marker range covered by this stratum.
    pub coverage: Option<f64>,
    pub flagged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct PositivityReport {
    pub pooled_q05: f64,
    pub pooled_q95: f64,
    pub threshold: f64,
    pub rows: Vec<PositivityRow>,
}

impl PositivityReport {
    pub fn any_flagged(&self) -> bool {
        self.rows.iter().any(|r| r.flagged)
    }
}

/// Marker range and quantiles per covariate level among phase-two vaccine
/// recipients. Levels are enumerated from the full vaccine arm so strata with
/// no phase-two data still appear (with `n = 0` and no flag). A stratum is
/// flagged when its observed marker range covers less than `threshold` of the
/// pooled 5-95% range.
pub fn positivity_report(
    phase2: &[&ParticipantRecord],
    all_vaccine: &[&ParticipantRecord],
    design: &TwoPhaseDesign,
    covariates: &[String],
    threshold: f64,
) -> Result<PositivityReport> {
    if phase2.is_empty() {
        return Err(Error::Estimation("no phase-two vaccine records".into()));
    }
    let markers: Vec<f64> = phase2.iter().map(|r| r.marker.unwrap()).collect();
    let weights: Vec<f64> = phase2.iter().map(|r| design.weight(r)).collect::<Result<_>>()?;
    let pooled_q05 = weighted_quantile(&markers, &weights, 0.05)?;
    let pooled_q95 = weighted_quantile(&markers, &weights, 0.95)?;
    let pooled_span = pooled_q95 - pooled_q05;

    let mut rows = Vec::new();
    for cov in covariates {
        let splitter = LevelSplitter::build(cov, all_vaccine)?;
        for level in splitter.levels() {
            let sub: Vec<&&ParticipantRecord> = phase2
                .iter()
                .filter(|r| splitter.level_of(r).as_deref() == Some(level.as_str()))
                .collect();
            if sub.is_empty() {
                rows.push(PositivityRow {
                    covariate: cov.clone(),
                    level: level.clone(),
                    n: 0,
                    min: None,
                    q05: None,
                    q50: None,
                    q95: None,
                    max: None,
                    coverage: None,
                    flagged: false,
                });
                continue;
            }
            let xs: Vec<f64> = sub.iter().map(|r| r.marker.unwrap()).collect();
            let ws: Vec<f64> = sub.iter().map(|r| design.weight(r)).collect::<Result<_>>()?;
            let min = xs.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let coverage = if pooled_span > 0.0 {
                let overlap = (max.min(pooled_q95) - min.max(pooled_q05)).max(0.0);
                Some(overlap / pooled_span)
            } else {
                Some(1.0)
            };
            rows.push(PositivityRow {
                covariate: cov.clone(),
                level: level.clone(),
                n: sub.len(),
                min: Some(min),
                q05: Some(weighted_quantile(&xs, &ws, 0.05)?),
                q50: Some(weighted_quantile(&xs, &ws, 0.50)?),
                q95: Some(weighted_quantile(&xs, &ws, 0.95)?),
                max: Some(max),
                coverage,
                flagged: coverage.map(|c| c < threshold).unwrap_or(false),
            });
        }
    }
    Ok(PositivityReport { pooled_q05, pooled_q95, threshold, rows })
}

#[derive(Debug, Clone, Serialize)]
pub struct ConfounderRow {
    pub covariate: String,
    pub level: String,
    /// Outcome risk ratio vs the reference (first) level.
    pub outcome_rr: Option<f64>,
    pub rr_ci: Option<(f64, f64)>,
    /// Difference in weighted mean marker vs the reference level.
    pub marker_mean_diff: Option<f64>,
    pub md_ci: Option<(f64, f64)>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConfounderTable {
    pub rows: Vec<ConfounderRow>,
}

/// Associations of each covariate with the outcome (risk ratio across levels,
/// full vaccine arm) and with the marker (weighted mean difference, phase-two
/// subset). Numeric covariates are dichotomized at their vaccine-arm median.
/// Bootstrap percentile CIs are attached when a plan is supplied.
pub fn confounder_association_table(
    vaccine: &[&ParticipantRecord],
    design: &TwoPhaseDesign,
    covariates: &[String],
    plan: Option<&BootstrapPlan>,
) -> Result<ConfounderTable> {
    let splitters: Vec<LevelSplitter> = covariates
        .iter()
        .map(|c| LevelSplitter::build(c, vaccine))
        .collect::<Result<_>>()?;

    let point = confounder_stats(vaccine, design, &splitters)?;

    type CiPair = (Option<(f64, f64)>, Option<(f64, f64)>);
    let mut cis: Vec<CiPair> = vec![(None, None); point.len()];
    if let Some(plan) = plan {
        let owned: Vec<ParticipantRecord> = vaccine.iter().map(|r| (*r).clone()).collect();
        let strata = ResamplingStrata::build(&owned, design.t_horizon, None)?;
        let splitters_ref = &splitters;
        let t_horizon = design.t_horizon;
        let stratum_name = design.design_stratum.clone();
        let names: Vec<String> = point
            .iter()
            .flat_map(|p| [format!("{}:{}:rr", p.covariate, p.level), format!("{}:{}:md", p.covariate, p.level)])
            .collect();
        let run = run_bootstrap(&owned, &strata, plan, names, move |sample| {
            let refs: Vec<&ParticipantRecord> = sample.iter().collect();
            let d = TwoPhaseDesign::estimate(&refs, stratum_name.as_deref(), t_horizon)?;
            let stats = confounder_stats(&refs, &d, splitters_ref)?;
            Ok(stats
                .iter()
                .flat_map(|s| {
                    [s.outcome_rr.unwrap_or(f64::NAN), s.marker_mean_diff.unwrap_or(f64::NAN)]
                })
                .collect())
        })?;
        for (i, ci) in cis.iter_mut().enumerate() {
            ci.0 = run.ci(2 * i).ok();
            ci.1 = run.ci(2 * i + 1).ok();
        }
    }

    let rows = point
        .into_iter()
        .zip(cis)
        .map(|(p, (rr_ci, md_ci))| ConfounderRow { rr_ci, md_ci, ..p })
        .collect();
    Ok(ConfounderTable { rows })
}

fn confounder_stats(
    vaccine: &[&ParticipantRecord],
    design: &TwoPhaseDesign,
    splitters: &[LevelSplitter],
) -> Result<Vec<ConfounderRow>> {
    let mut rows = Vec::new();
    for splitter in splitters {
        let levels = splitter.levels();
        if levels.len() < 2 {
            rows.push(ConfounderRow {
                covariate: splitter.name.clone(),
                level: levels.first().cloned().unwrap_or_default(),
                outcome_rr: None,
                rr_ci: None,
                marker_mean_diff: None,
                md_ci: None,
                note: Some("not estimable: single level".into()),
            });
            continue;
        }
        let risk_of = |level: &str| -> Result<Option<f64>> {
            let mut n = 0usize;
            let mut cases = 0usize;
            for r in vaccine {
                if splitter.level_of(r).as_deref() == Some(level) {
                    n += 1;
                    if r.is_case(design.t_horizon)? {
                        cases += 1;
                    }
                }
            }
            Ok(if n == 0 { None } else { Some(cases as f64 / n as f64) })
        };
        let marker_mean_of = |level: &str| -> Result<Option<f64>> {
            let mut xs = Vec::new();
            let mut ws = Vec::new();
            for r in vaccine {
                if r.in_phase_two() && splitter.level_of(r).as_deref() == Some(level) {
                    xs.push(r.marker.unwrap());
                    ws.push(design.weight(r)?);
                }
            }
            Ok(if xs.is_empty() { None } else { Some(weighted_mean(&xs, &ws)?) })
        };

        let ref_level = &levels[0];
        let ref_risk = risk_of(ref_level)?;
        let ref_mean = marker_mean_of(ref_level)?;
        for level in levels.iter().skip(1) {
            let risk = risk_of(level)?;
            let mean = marker_mean_of(level)?;
            let outcome_rr = match (ref_risk, risk) {
                (Some(r0), Some(r1)) if r0 > 0.0 => Some(r1 / r0),
                _ => None,
            };
            let marker_mean_diff = match (ref_mean, mean) {
                (Some(m0), Some(m1)) => Some(m1 - m0),
                _ => None,
            };
            let note = if outcome_rr.is_none() && marker_mean_diff.is_none() {
                Some("not estimable".into())
            } else {
                None
            };
            rows.push(ConfounderRow {
                covariate: splitter.name.clone(),
                level: level.clone(),
                outcome_rr,
                rr_ci: None,
                marker_mean_diff,
                md_ci: None,
                note,
            });
        }
    }
    Ok(rows)
}

/// Maps a covariate to discrete levels: categorical values as-is
/// (lexicographic order, first level = reference), numeric values split at
/// the vaccine-arm median.
struct LevelSplitter {
    name: String,
    kind: SplitKind,
}

enum SplitKind {
    Categorical(Vec<String>),
    NumericMedian(f64),
}

const NUMERIC_LOW: &str = "<=median";
const NUMERIC_HIGH: &str = ">median";

impl LevelSplitter {
    fn build(name: &str, records: &[&ParticipantRecord]) -> Result<Self> {
        let mut numeric = Vec::new();
        let mut cats = Vec::new();
        for r in records {
            match r.covariate(name)? {
                Covariate::Numeric(v) => numeric.push(*v),
                Covariate::Categorical(level) => cats.push(level.clone()),
            }
        }
        if !numeric.is_empty() && !cats.is_empty() {
            return Err(Error::Data(format!(
                "covariate `{name}` mixes numeric and categorical values"
            )));
        }
        if !cats.is_empty() {
            cats.sort();
            cats.dedup();
            Ok(LevelSplitter { name: name.into(), kind: SplitKind::Categorical(cats) })
        } else {
            let ws = vec![1.0; numeric.len()];
            let median = weighted_quantile(&numeric, &ws, 0.5)?;
            Ok(LevelSplitter { name: name.into(), kind: SplitKind::NumericMedian(median) })
        }
    }

    fn levels(&self) -> Vec<String> {
        match &self.kind {
            SplitKind::Categorical(levels) => levels.clone(),
            SplitKind::NumericMedian(_) => vec![NUMERIC_LOW.into(), NUMERIC_HIGH.into()],
        }
    }

    fn level_of(&self, rec: &ParticipantRecord) -> Option<String> {
        match (&self.kind, rec.covariates.get(&self.name)) {
            (SplitKind::Categorical(_), Some(Covariate::Categorical(l))) => Some(l.clone()),
            (SplitKind::NumericMedian(m), Some(Covariate::Numeric(v))) => {
                Some(if *v <= *m { NUMERIC_LOW.into() } else { NUMERIC_HIGH.into() })
            }
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::ix_tests::make_record;

    fn design() -> TwoPhaseDesign {
        TwoPhaseDesign::complete(None)
    }

    #[test]
    fn single_stratum_report_equals_pooled_summary() {
        let records: Vec<ParticipantRecord> = (0..40)
            .map(|i| make_record(&format!("r{i}"), 1, Some(i as f64 / 10.0), false, &[("site", "a")]))
            .collect();
        let refs: Vec<&ParticipantRecord> = records.iter().collect();
        let report =
            positivity_report(&refs, &refs, &design(), &["site".into()], DEFAULT_COVERAGE_THRESHOLD)
                .unwrap();
        assert_eq!(report.rows.len(), 1);
        let row = &report.rows[0];
        assert_eq!(row.n, 40);
        assert_eq!(row.q05, Some(report.pooled_q05));
        assert_eq!(row.q95, Some(report.pooled_q95));
        assert!(!row.flagged);
    }

    #[test]
    fn stratum_spanning_half_range_is_flagged() {
        // Stratum a spans the whole pooled range, stratum b only the lower half.
        let mut records = Vec::new();
        for i in 0..50 {
            records.push(make_record(&format!("a{i}"), 1, Some(i as f64 / 10.0), false, &[("site", "a")]));
        }
        for i in 0..50 {
            records.push(make_record(&format!("b{i}"), 1, Some(i as f64 / 25.0), false, &[("site", "b")]));
        }
        let refs: Vec<&ParticipantRecord> = records.iter().collect();
        let report =
            positivity_report(&refs, &refs, &design(), &["site".into()], DEFAULT_COVERAGE_THRESHOLD)
                .unwrap();
        let a = report.rows.iter().find(|r| r.level == "a").unwrap();
        let b = report.rows.iter().find(|r| r.level == "b").unwrap();
        assert!(!a.flagged);
        assert!(b.flagged, "coverage {:?}", b.coverage);
    }

    #[test]
    fn level_without_phase2_data_reports_n0() {
        let mut records = vec![make_record("v0", 1, None, false, &[("site", "empty")])];
        for i in 0..20 {
            records.push(make_record(&format!("a{i}"), 1, Some(i as f64), false, &[("site", "a")]));
        }
        let refs: Vec<&ParticipantRecord> = records.iter().collect();
        let phase2: Vec<&ParticipantRecord> = records.iter().filter(|r| r.in_phase_two()).collect();
        let report =
            positivity_report(&phase2, &refs, &design(), &["site".into()], DEFAULT_COVERAGE_THRESHOLD)
                .unwrap();
        let empty = report.rows.iter().find(|r| r.level == "empty").unwrap();
        assert_eq!(empty.n, 0);
        assert!(!empty.flagged);
    }

    #[test]
    fn constant_covariate_not_estimable() {
        let records: Vec<ParticipantRecord> = (0..10)
            .map(|i| make_record(&format!("r{i}"), 1, Some(i as f64), i == 0, &[("site", "only")]))
            .collect();
        let refs: Vec<&ParticipantRecord> = records.iter().collect();
        let table = confounder_association_table(&refs, &design(), &["site".into()], None).unwrap();
        assert_eq!(table.rows.len(), 1);
        assert!(table.rows[0].note.as_deref().unwrap().contains("not estimable"));
    }

    #[test]
    fn doubled_risk_covariate_shows_rr_two() {
        // Level b has exactly twice the case fraction of level a.
        let mut records = Vec::new();
        for i in 0..200 {
            records.push(make_record(&format!("a{i}"), 1, Some(2.0), i < 20, &[("g", "a")]));
        }
        for i in 0..200 {
            records.push(make_record(&format!("b{i}"), 1, Some(2.0), i < 40, &[("g", "b")]));
        }
        let refs: Vec<&ParticipantRecord> = records.iter().collect();
        let table = confounder_association_table(&refs, &design(), &["g".into()], None).unwrap();
        let row = &table.rows[0];
        assert_eq!(row.level, "b");
        approx::assert_relative_eq!(row.outcome_rr.unwrap(), 2.0, epsilon = 1e-12);
        approx::assert_relative_eq!(row.marker_mean_diff.unwrap(), 0.0, epsilon = 1e-12);
    }
}
