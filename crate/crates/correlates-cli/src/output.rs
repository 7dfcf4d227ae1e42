//! CSV and manifest writers. Files are written atomically (temp + rename)
//! and floats are serialized in shortest round-trip form so byte-identical
//! reruns are achievable at any thread count.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use correlates::analysis::AnalysisOutput;
use correlates::bootstrap::BootstrapRun;
use correlates::{Error, Result};

pub fn fmt_f(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        String::new()
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f).unwrap_or_default()
}

pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn write_csv(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(header)?;
        for row in rows {
            w.write_record(&row)?;
        }
        w.flush()?;
    }
    atomic_write(path, &buf)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Write every analysis artifact into `out_dir`; returns the file list.
pub fn write_analysis_outputs(
    out_dir: &Path,
    out: &AnalysisOutput,
    run: Option<&BootstrapRun>,
    keep_replicates: bool,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let mut files = Vec::new();
    let emit = |name: &str, header: &[&str], rows: Vec<Vec<String>>| -> Result<PathBuf> {
        let path = out_dir.join(name);
        write_csv(&path, header, rows)?;
        Ok(path)
    };

    // cohort_summary.csv
    {
        let s = &out.summary;
        let mut header = vec![
            "n_total".to_string(),
            "n_vaccine".to_string(),
            "n_placebo".to_string(),
            "n_cases_vaccine".to_string(),
            "n_phase2".to_string(),
            "overall_vaccine_risk".to_string(),
        ];
        let mut row = vec![
            s.n_total.to_string(),
            s.n_vaccine.to_string(),
            s.n_placebo.to_string(),
            s.n_cases_vaccine.to_string(),
            s.n_phase2.to_string(),
            fmt_f(s.overall_vaccine_risk),
        ];
        for (p, v) in &s.marker_quantiles {
            header.push(format!("marker_q{}", (p * 1000.0).round() as u32));
            row.push(fmt_f(*v));
        }
        let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
        files.push(emit("cohort_summary.csv", &header_refs, vec![row])?);
    }

    // weights.csv
    files.push(emit(
        "weights.csv",
        &["case", "stratum", "n", "n_sampled", "pi_hat", "weight"],
        out.design_rates
            .iter()
            .map(|r| {
                vec![
                    u8::from(r.case).to_string(),
                    r.stratum.clone().unwrap_or_default(),
                    r.n.to_string(),
                    r.n_sampled.to_string(),
                    fmt_f(r.pi_hat),
                    fmt_f(1.0 / r.pi_hat),
                ]
            })
            .collect(),
    )?);

    // positivity.csv
    files.push(emit(
        "positivity.csv",
        &["covariate", "level", "n", "min", "q05", "q50", "q95", "max", "coverage", "flagged"],
        out.positivity
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.covariate.clone(),
                    r.level.clone(),
                    r.n.to_string(),
                    fmt_opt(r.min),
                    fmt_opt(r.q05),
                    fmt_opt(r.q50),
                    fmt_opt(r.q95),
                    fmt_opt(r.max),
                    fmt_opt(r.coverage),
                    u8::from(r.flagged).to_string(),
                ]
            })
            .collect(),
    )?);

    // confounder_table.csv
    files.push(emit(
        "confounder_table.csv",
        &["covariate", "level", "outcome_rr", "rr_lo", "rr_hi", "marker_mean_diff", "md_lo", "md_hi", "note"],
        out.confounders
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.covariate.clone(),
                    r.level.clone(),
                    fmt_opt(r.outcome_rr),
                    fmt_opt(r.rr_ci.map(|c| c.0)),
                    fmt_opt(r.rr_ci.map(|c| c.1)),
                    fmt_opt(r.marker_mean_diff),
                    fmt_opt(r.md_ci.map(|c| c.0)),
                    fmt_opt(r.md_ci.map(|c| c.1)),
                    r.note.clone().unwrap_or_default(),
                ]
            })
            .collect(),
    )?);

    // Risk curves.
    let scent_index = out.scent.index;
    let risk_curve_rows = |curve: &correlates::marginal::CurveEstimate| -> Vec<Vec<String>> {
        curve
            .grid
            .iter()
            .enumerate()
            .map(|(i, s)| {
                vec![
                    fmt_f(*s),
                    fmt_f(curve.point[i]),
                    fmt_opt(curve.ci_lo.as_ref().map(|v| v[i])),
                    fmt_opt(curve.ci_hi.as_ref().map(|v| v[i])),
                    curve.kind.label().to_string(),
                    u8::from(i == scent_index).to_string(),
                ]
            })
            .collect()
    };
    let curve_header = ["s", "estimate", "ci_lo", "ci_hi", "kind", "scent_flag"];
    files.push(emit("curve_rm.csv", &curve_header, risk_curve_rows(&out.rm_curve))?);
    files.push(emit("curve_rc_bound.csv", &curve_header, risk_curve_rows(&out.rc_bound))?);

    // CVE curves.
    let cve_rows = |curve: &correlates::marginal::CurveEstimate| -> Vec<Vec<String>> {
        curve
            .grid
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let llod_flag = out.mediation.as_ref().is_some_and(|m| m.s == *s);
                vec![
                    fmt_f(*s),
                    fmt_f(curve.point[i]),
                    fmt_opt(curve.ci_lo.as_ref().map(|v| v[i])),
                    fmt_opt(curve.ci_hi.as_ref().map(|v| v[i])),
                    curve.kind.label().to_string(),
                    u8::from(llod_flag).to_string(),
                ]
            })
            .collect()
    };
    let cve_header = ["s", "cve", "ci_lo", "ci_hi", "kind", "llod_flag"];
    files.push(emit("curve_cve_naive.csv", &cve_header, cve_rows(&out.cve_naive))?);
    files.push(emit("curve_cve_cons.csv", &cve_header, cve_rows(&out.cve_cons))?);

    // contrasts.csv
    {
        let c = &out.contrasts;
        let mut rows: Vec<Vec<String>> = Vec::new();
        let mut push = |name: &str, est: Option<f64>, ci: Option<(f64, f64)>, note: String| {
            rows.push(vec![
                name.to_string(),
                fmt_opt(est),
                fmt_opt(ci.map(|c| c.0)),
                fmt_opt(ci.map(|c| c.1)),
                note,
            ]);
        };
        push("s1", Some(c.s1), None, String::new());
        push("s2", Some(c.s2), None, String::new());
        push("rr_m", Some(c.rr_m), c.rr_m_ci, String::new());
        push("or_m", c.or_m, c.or_m_ci, String::new());
        push("bias_factor", Some(c.bias_factor), None, String::new());
        push("rr_c_bound", Some(c.rr_c_bound), c.rr_c_ci, String::new());
        let orientation = |flipped: bool| {
            if flipped { "reciprocal (harmful direction)".to_string() } else { String::new() }
        };
        push("e_point", Some(c.evalues.e_point), None, orientation(c.evalues.flipped));
        push("e_ul", c.evalues.e_ul, None, orientation(c.evalues.flipped));
        if let Some(t) = &out.tertile {
            push("tertile_cut1", Some(t.cuts.0), None, String::new());
            push("tertile_cut2", Some(t.cuts.1), None, String::new());
            push("rr_m_tertile", Some(t.rr_m), t.rr_m_ci, String::new());
            push("rr_c_bound_tertile", Some(t.rr_c_bound), t.rr_c_ci, String::new());
            push("e_point_tertile", Some(t.evalues.e_point), None, orientation(t.evalues.flipped));
            push("e_ul_tertile", t.evalues.e_ul, None, orientation(t.evalues.flipped));
        }
        push("placebo_risk", Some(out.placebo.estimate), None, String::new());
        push("overall_vaccine_risk", Some(out.overall_risk), None, String::new());
        push("scent", Some(out.scent.s), None, String::new());
        if let Some(m) = &out.mediation {
            push("cve_at_llod", Some(m.cve), m.ci, format!("s = {}", fmt_f(m.s)));
            if let Some(nr) = m.full_mediation_not_rejected {
                push(
                    "full_mediation_not_rejected",
                    Some(f64::from(u8::from(nr))),
                    None,
                    String::new(),
                );
            }
        }
        files.push(emit("contrasts.csv", &["name", "estimate", "ci_lo", "ci_hi", "note"], rows)?);
    }

    // surface_rru.csv
    files.push(emit(
        "surface_rru.csv",
        &["s1", "s2", "rr_u", "b"],
        out.surface
            .rows
            .iter()
            .map(|r| vec![fmt_f(r.s1), fmt_f(r.s2), fmt_f(r.rr_u), fmt_f(r.b)])
            .collect(),
    )?);

    if keep_replicates {
        if let Some(run) = run {
            let mut header: Vec<String> = vec!["replicate".to_string()];
            header.extend(run.statistic_names.iter().cloned());
            let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
            let rows: Vec<Vec<String>> = run
                .replicate_ids
                .iter()
                .zip(&run.replicates)
                .map(|(id, stats)| {
                    let mut row = vec![id.to_string()];
                    row.extend(stats.iter().map(|v| fmt_f(*v)));
                    row
                })
                .collect();
            files.push(emit("replicates.csv", &header_refs, rows)?);
        }
    }

    Ok(files)
}

/// Reproducibility manifest: hashes of the inputs, the seed, versions, and
/// run health. Thread count is intentionally excluded so reruns at any
/// parallelism compare byte-identical.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub input_hash: String,
    pub schema_hash: Option<String>,
    pub seed: u64,
    pub n_replicates: Option<usize>,
    pub versions: Versions,
    pub outputs: Vec<String>,
    pub warnings: Vec<String>,
    pub bootstrap_failed_replicates: Option<usize>,
}

#[derive(Debug, Serialize)]
pub struct Versions {
    pub correlates: String,
    pub cli: String,
}

impl Versions {
    pub fn current() -> Self {
        Versions {
            correlates: env!("CARGO_PKG_VERSION").to_string(),
            cli: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

pub fn write_manifest(out_dir: &Path, manifest: &RunManifest) -> Result<PathBuf> {
    let path = out_dir.join("run_manifest.json");
    let mut text = serde_json::to_string_pretty(manifest).map_err(Error::Json)?;
    text.push('\n');
    atomic_write(&path, text.as_bytes())?;
    Ok(path)
}
