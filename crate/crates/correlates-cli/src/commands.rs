//! Command implementations behind the CLI surface.

use std::fs;
use std::path::{Path, PathBuf};

use correlates::analysis::run_with_bootstrap;
use correlates::dataset::{load_trial_csv, CovariateColumn, CovariateKind, CsvSchema, OutcomeColumns};
use correlates::record::{Arm, Covariate, Outcome, ParticipantRecord};
use correlates::sensitivity::evalue_result;
use correlates::sim::{
    confounding_strength, generate_trial, true_controlled_risk, true_overall_ve,
    true_placebo_risk, SimFamily, SimScenario,
};
use correlates::stats::weighted_quantile;
use correlates::{Error, Result};

use crate::config::AnalysisConfig;
use crate::output::{
    atomic_write, fmt_f, sha256_file, sha256_hex, write_analysis_outputs, write_manifest,
    RunManifest, Versions,
};

#[derive(Debug, Clone, Default)]
pub struct GlobalOpts {
    pub seed: Option<u64>,
    pub keep_replicates: bool,
}

/// Full analysis pipeline: load, weight, fit, bound, bootstrap, write.
pub fn cmd_analyze(config_path: &Path, out_override: Option<&Path>, opts: &GlobalOpts) -> Result<()> {
    let mut config = AnalysisConfig::from_path(config_path)?;
    if let Some(seed) = opts.seed {
        config.bootstrap.seed = seed;
    }
    if let Some(out) = out_override {
        config.out_dir = out.to_path_buf();
    }
    let schema = CsvSchema::from_path(&config.schema)?;
    let loaded = load_trial_csv(&config.trial_csv, &schema)?;
    if !loaded.rejected.is_empty() {
        let preview: Vec<String> =
            loaded.rejected.iter().take(5).map(|e| e.to_string()).collect();
        return Err(Error::Data(format!(
            "{} row(s) rejected during load; first errors: {}",
            loaded.rejected.len(),
            preview.join("; ")
        )));
    }
    let spec = config.to_spec();
    let (out, run) = run_with_bootstrap(&loaded.records, &spec, &config.bootstrap)?;

    fs::create_dir_all(&config.out_dir)?;
    let files =
        write_analysis_outputs(&config.out_dir, &out, Some(&run), opts.keep_replicates)?;
    let manifest = RunManifest {
        command: "analyze".into(),
        config_hash: sha256_file(config_path)?,
        input_hash: sha256_file(&config.trial_csv)?,
        schema_hash: Some(sha256_file(&config.schema)?),
        seed: config.bootstrap.seed,
        n_replicates: Some(config.bootstrap.n_replicates),
        versions: Versions::current(),
        outputs: file_names(&files),
        warnings: out.warnings.clone(),
        bootstrap_failed_replicates: out.bootstrap.as_ref().map(|b| b.n_failed),
    };
    write_manifest(&config.out_dir, &manifest)?;
    Ok(())
}

/// Generate a synthetic trial plus its exact truth tables.
pub fn cmd_simulate(
    scenario_path: Option<&Path>,
    preset: Option<&str>,
    out_dir: &Path,
    opts: &GlobalOpts,
) -> Result<()> {
    let mut scenario = match (scenario_path, preset) {
        (Some(path), None) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Data(format!("cannot read scenario {}: {e}", path.display())))?;
            SimScenario::from_json(&text)?
        }
        (None, Some(name)) => SimScenario::preset(name)?,
        _ => return Err(Error::Schema("provide exactly one of --scenario or --preset".into())),
    };
    if let Some(seed) = opts.seed {
        scenario.seed = seed;
    }
    let records = generate_trial(&scenario)?;
    fs::create_dir_all(out_dir)?;

    write_trial_csv(&out_dir.join("trial.csv"), &records, &scenario)?;
    write_schema_json(&out_dir.join("schema.json"), &scenario)?;
    write_truth_csv(&out_dir.join("truth.csv"), &scenario)?;

    // Realized confounding strengths at the empirical 15th/85th percentiles
    // of the vaccine-arm marker distribution.
    let markers: Vec<f64> = records
        .iter()
        .filter(|r| r.arm == Arm::Vaccine && r.marker.is_some())
        .map(|r| r.marker.unwrap())
        .collect();
    let unit = vec![1.0; markers.len()];
    let (s15, s85) = (
        weighted_quantile(&markers, &unit, 0.15)?,
        weighted_quantile(&markers, &unit, 0.85)?,
    );
    let strengths = confounding_strength(&scenario, s15, s85);

    let scenario_json = serde_json::to_string_pretty(&scenario).map_err(Error::Json)?;
    let manifest = serde_json::json!({
        "command": "simulate",
        "scenario_name": scenario.name,
        "scenario_hash": sha256_hex(scenario_json.as_bytes()),
        "seed": scenario.seed,
        "n": scenario.n,
        "versions": { "correlates": env!("CARGO_PKG_VERSION"), "cli": env!("CARGO_PKG_VERSION") },
        "truth": {
            "placebo_risk": true_placebo_risk(&scenario),
            "overall_ve": true_overall_ve(&scenario),
            "marker_q15": s15,
            "marker_q85": s85,
            "rr_c_q15_q85": true_controlled_risk(&scenario, s85) / true_controlled_risk(&scenario, s15),
            "realized_rr_ud": strengths.rr_ud,
            "realized_rr_eu": strengths.rr_eu,
        },
        "outputs": ["trial.csv", "schema.json", "truth.csv"],
    });
    let mut text = serde_json::to_string_pretty(&manifest).map_err(Error::Json)?;
    text.push('\n');
    atomic_write(&out_dir.join("manifest.json"), text.as_bytes())?;
    Ok(())
}

/// E-values for a risk ratio and optional upper confidence limit, printed as
/// JSON (4 decimal places).
pub fn cmd_evalue(rr: f64, rr_ul: Option<f64>) -> Result<String> {
    let ci = rr_ul.map(|ul| (f64::NEG_INFINITY, ul));
    let res = evalue_result(rr, ci)?;
    let round4 = |v: f64| (v * 1e4).round() / 1e4;
    let mut obj = serde_json::Map::new();
    obj.insert("e_point".into(), serde_json::json!(round4(res.e_point)));
    if let Some(e_ul) = res.e_ul {
        obj.insert("e_ul".into(), serde_json::json!(round4(e_ul)));
    }
    if res.flipped {
        obj.insert("flipped".into(), serde_json::json!(true));
    }
    Ok(serde_json::Value::Object(obj).to_string())
}

fn file_names(files: &[PathBuf]) -> Vec<String> {
    let mut names: Vec<String> = files
        .iter()
        .filter_map(|f| f.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect();
    names.sort();
    names
}

fn write_trial_csv(path: &Path, records: &[ParticipantRecord], scenario: &SimScenario) -> Result<()> {
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let cov = scenario.covariate.name.as_str();
        match scenario.family {
            SimFamily::Binary => {
                w.write_record(["id", "arm", "y", "sampled", "marker", cov])?;
            }
            SimFamily::Survival => {
                w.write_record(["id", "arm", "time", "event", "sampled", "marker", cov])?;
            }
        }
        for rec in records {
            let marker = rec.marker.map(fmt_f).unwrap_or_default();
            let level = match &rec.covariates[cov] {
                Covariate::Categorical(l) => l.clone(),
                Covariate::Numeric(v) => fmt_f(*v),
            };
            match &rec.outcome {
                Outcome::Binary(y) => w.write_record([
                    rec.id.as_str(),
                    &rec.arm.code().to_string(),
                    &u8::from(*y).to_string(),
                    &u8::from(rec.sampled).to_string(),
                    &marker,
                    &level,
                ])?,
                Outcome::Survival { time, event } => w.write_record([
                    rec.id.as_str(),
                    &rec.arm.code().to_string(),
                    &fmt_f(*time),
                    &u8::from(*event).to_string(),
                    &u8::from(rec.sampled).to_string(),
                    &marker,
                    &level,
                ])?,
            }
        }
        w.flush()?;
    }
    atomic_write(path, &buf)
}

fn write_schema_json(path: &Path, scenario: &SimScenario) -> Result<()> {
    let schema = CsvSchema {
        id: "id".into(),
        arm: "arm".into(),
        outcome: match scenario.family {
            SimFamily::Binary => OutcomeColumns::Binary { y: "y".into() },
            SimFamily::Survival => {
                OutcomeColumns::Survival { time: "time".into(), event: "event".into() }
            }
        },
        sampled: "sampled".into(),
        marker: "marker".into(),
        covariates: vec![CovariateColumn {
            name: scenario.covariate.name.clone(),
            column: None,
            kind: CovariateKind::Categorical,
        }],
        weight_override: None,
    };
    let mut text = serde_json::to_string_pretty(&schema).map_err(Error::Json)?;
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

fn write_truth_csv(path: &Path, scenario: &SimScenario) -> Result<()> {
    let sd = scenario.marker.sd;
    let lo = (0..scenario.covariate.levels.len())
        .flat_map(|x| [scenario.marker_mean(x, 0), scenario.marker_mean(x, 1)])
        .fold(f64::INFINITY, f64::min)
        - 3.0 * sd;
    let hi = (0..scenario.covariate.levels.len())
        .flat_map(|x| [scenario.marker_mean(x, 0), scenario.marker_mean(x, 1)])
        .fold(f64::NEG_INFINITY, f64::max)
        + 3.0 * sd;
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(["s", "true_rc"])?;
        let n = 101;
        for i in 0..n {
            let s = lo + (hi - lo) * i as f64 / (n - 1) as f64;
            w.write_record([fmt_f(s), fmt_f(true_controlled_risk(scenario, s))])?;
        }
        w.flush()?;
    }
    atomic_write(path, &buf)
}
