//! CSV ingestion with a user-supplied column mapping.
//!
//! The input is UTF-8 with a header row. Column names are mapped through a
//! JSON schema file so arbitrary trial exports can be loaded without
//! renaming. An empty marker cell means "not measured"; decimal commas are
//! rejected. Rows that violate record invariants are rejected individually
//! with a row-level report rather than failing the whole file.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::{Arm, Covariate, Outcome, ParticipantRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovariateKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovariateColumn {
    pub name: String,
    /// CSV column holding the values; defaults to `name`.
    #[serde(default)]
    pub column: Option<String>,
    pub kind: CovariateKind,
}

impl CovariateColumn {
    fn column(&self) -> &str {
        self.column.as_deref().unwrap_or(&self.name)
    }
}

/// Outcome columns: a single binary endpoint or a survival pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OutcomeColumns {
    Binary { y: String },
    Survival { time: String, event: String },
}

/// Column mapping for a trial CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsvSchema {
    pub id: String,
    pub arm: String,
    pub outcome: OutcomeColumns,
    pub sampled: String,
    pub marker: String,
    #[serde(default)]
    pub covariates: Vec<CovariateColumn>,
    #[serde(default)]
    pub weight_override: Option<String>,
}

impl CsvSchema {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let schema: CsvSchema = serde_json::from_str(&text)?;
        Ok(schema)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RowError {
    /// 1-based data row number (header excluded).
    pub row: usize,
    pub message: String,
}

impl fmt::Display for RowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "row {}: {}", self.row, self.message)
    }
}

#[derive(Debug)]
pub struct LoadedTrial {
    pub records: Vec<ParticipantRecord>,
    pub rejected: Vec<RowError>,
}

pub fn load_trial_csv(path: &Path, schema: &CsvSchema) -> Result<LoadedTrial> {
    let file = File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    parse_trial(file, schema)
}

/// Parse trial records from any reader. Split out from [`load_trial_csv`] so
/// in-memory CSVs can be parsed in tests and pipelines.
pub fn parse_trial<R: Read>(reader: R, schema: &CsvSchema) -> Result<LoadedTrial> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing required column `{name}`")))
    };

    let id_ix = col(&schema.id)?;
    let arm_ix = col(&schema.arm)?;
    let sampled_ix = col(&schema.sampled)?;
    let marker_ix = col(&schema.marker)?;
    let outcome_ix = match &schema.outcome {
        OutcomeColumns::Binary { y } => (col(y)?, None),
        OutcomeColumns::Survival { time, event } => (col(time)?, Some(col(event)?)),
    };
    let weight_ix = match &schema.weight_override {
        Some(c) => Some(col(c)?),
        None => None,
    };
    let cov_ix: Vec<(usize, &CovariateColumn)> = schema
        .covariates
        .iter()
        .map(|c| Ok((col(c.column())?, c)))
        .collect::<Result<_>>()?;

    let mut records = Vec::new();
    let mut rejected = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let rownum = i + 1;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                rejected.push(RowError { row: rownum, message: format!("malformed row: {e}") });
                continue;
            }
        };
        match parse_row(&row, rownum, id_ix, arm_ix, sampled_ix, marker_ix, outcome_ix, weight_ix, &cov_ix, schema) {
            Ok(rec) => records.push(rec),
            Err(msg) => rejected.push(RowError { row: rownum, message: msg }),
        }
    }
    Ok(LoadedTrial { records, rejected })
}

#[allow(clippy::too_many_arguments)]
fn parse_row(
    row: &csv::StringRecord,
    rownum: usize,
    id_ix: usize,
    arm_ix: usize,
    sampled_ix: usize,
    marker_ix: usize,
    outcome_ix: (usize, Option<usize>),
    weight_ix: Option<usize>,
    cov_ix: &[(usize, &CovariateColumn)],
    schema: &CsvSchema,
) -> std::result::Result<ParticipantRecord, String> {
    let cell = |ix: usize| row.get(ix).unwrap_or("");

    let id = cell(id_ix).to_string();
    if id.is_empty() {
        return Err("empty id".into());
    }
    let arm = parse_arm(cell(arm_ix))?;
    let sampled = parse_bool(cell(sampled_ix)).map_err(|e| format!("sampled: {e}"))?;

    let marker_raw = cell(marker_ix);
    let marker = if marker_raw.is_empty() {
        None
    } else {
        Some(parse_f64(marker_raw).map_err(|e| format!("non-numeric marker: {e}"))?)
    };
    if marker.is_some() && !sampled {
        return Err("marker without sampling".into());
    }
    if marker.is_none() && sampled && arm == Arm::Vaccine {
        return Err("sampled without marker".into());
    }

    let outcome = match outcome_ix {
        (y_ix, None) => Outcome::Binary(parse_bool(cell(y_ix)).map_err(|e| format!("outcome: {e}"))?),
        (time_ix, Some(event_ix)) => {
            let time = parse_f64(cell(time_ix)).map_err(|e| format!("time: {e}"))?;
            if !(time >= 0.0) {
                return Err(format!("negative time {time}"));
            }
            let event = parse_bool(cell(event_ix)).map_err(|e| format!("event: {e}"))?;
            Outcome::Survival { time, event }
        }
    };

    let weight_override = match weight_ix {
        Some(ix) if !cell(ix).is_empty() => {
            let w = parse_f64(cell(ix)).map_err(|e| format!("weight: {e}"))?;
            if !(w > 0.0) {
                return Err(format!("non-positive weight {w}"));
            }
            Some(w)
        }
        _ => None,
    };

    let mut covariates = BTreeMap::new();
    for (ix, c) in cov_ix {
        let raw = cell(*ix);
        if raw.is_empty() {
            return Err(format!("missing covariate `{}`", c.name));
        }
        let value = match c.kind {
            CovariateKind::Numeric => Covariate::Numeric(
                parse_f64(raw).map_err(|e| format!("covariate `{}`: {e}", c.name))?,
            ),
            CovariateKind::Categorical => Covariate::Categorical(raw.to_string()),
        };
        covariates.insert(c.name.clone(), value);
    }
    let _ = (rownum, schema);

    let rec = ParticipantRecord { id, arm, covariates, marker, sampled, outcome, weight_override };
    rec.validate().map_err(|e| e.to_string())?;
    Ok(rec)
}

fn parse_arm(s: &str) -> std::result::Result<Arm, String> {
    match s.to_ascii_lowercase().as_str() {
        "1" | "vaccine" => Ok(Arm::Vaccine),
        "0" | "placebo" => Ok(Arm::Placebo),
        other => Err(format!("arm must be 0/1 or placebo/vaccine, got `{other}`")),
    }
}

fn parse_bool(s: &str) -> std::result::Result<bool, String> {
    match s.to_ascii_lowercase().as_str() {
        "1" | "true" => Ok(true),
        "0" | "false" => Ok(false),
        other => Err(format!("expected 0/1/true/false, got `{other}`")),
    }
}

fn parse_f64(s: &str) -> std::result::Result<f64, String> {
    s.parse::<f64>().map_err(|_| format!("`{s}` is not a number"))
}
