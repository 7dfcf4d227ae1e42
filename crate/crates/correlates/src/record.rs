//! Trial data model: one record per randomized participant.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Randomization arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Placebo,
    Vaccine,
}

impl Arm {
    pub fn code(self) -> u8 {
        match self {
            Arm::Placebo => 0,
            Arm::Vaccine => 1,
        }
    }
}

/// A baseline covariate value. Categorical levels are kept as strings and
/// ordered lexicographically wherever a stable level order is needed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Covariate {
    Numeric(f64),
    Categorical(String),
}

/// Clinical endpoint: either a final binary status or a survival pair
/// (time in days from the biomarker visit, event indicator).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Outcome {
    Binary(bool),
    Survival { time: f64, event: bool },
}

/// One trial participant as observed: `(X, Y, M, M·S)` plus arm.
///
/// `marker` is the biomarker on the log10 scale and is only present when the
/// participant was sampled for measurement (`sampled`, the two-phase
/// indicator `M`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantRecord {
    pub id: String,
    pub arm: Arm,
    pub covariates: BTreeMap<String, Covariate>,
    pub marker: Option<f64>,
    pub sampled: bool,
    pub outcome: Outcome,
    pub weight_override: Option<f64>,
}

impl ParticipantRecord {
    /// Case status at the analysis horizon. Binary outcomes ignore the
    /// horizon; survival outcomes require one (`Y = I(time <= t AND event)`).
    pub fn is_case(&self, t_horizon: Option<f64>) -> Result<bool> {
        match &self.outcome {
            Outcome::Binary(y) => Ok(*y),
            Outcome::Survival { time, event } => {
                let t = t_horizon.ok_or_else(|| {
                    Error::Data("t_horizon is required for survival outcomes".into())
                })?;
                Ok(*event && *time <= t)
            }
        }
    }

    /// Phase-two membership: sampled with the marker actually measured.
    pub fn in_phase_two(&self) -> bool {
        self.sampled && self.marker.is_some()
    }

    /// Structural invariants that do not depend on the analysis config.
    pub fn validate(&self) -> Result<()> {
        if self.marker.is_some() && !self.sampled {
            return Err(Error::Data(format!(
                "record {}: marker without sampling",
                self.id
            )));
        }
        if let Some(m) = self.marker {
            if !m.is_finite() {
                return Err(Error::Data(format!("record {}: non-finite marker", self.id)));
            }
        }
        if let Outcome::Survival { time, .. } = self.outcome {
            if !(time >= 0.0) {
                return Err(Error::Data(format!(
                    "record {}: negative or non-finite time",
                    self.id
                )));
            }
        }
        if let Some(w) = self.weight_override {
            if !(w > 0.0) {
                return Err(Error::Data(format!(
                    "record {}: weight override must be positive",
                    self.id
                )));
            }
        }
        Ok(())
    }

    pub fn covariate(&self, name: &str) -> Result<&Covariate> {
        self.covariates
            .get(name)
            .ok_or_else(|| Error::Data(format!("record {}: missing covariate `{name}`", self.id)))
    }
}

/// Split a record slice by arm, preserving order.
pub fn split_arms(records: &[ParticipantRecord]) -> (Vec<&ParticipantRecord>, Vec<&ParticipantRecord>) {
    let mut vaccine = Vec::new();
    let mut placebo = Vec::new();
    for r in records {
        match r.arm {
            Arm::Vaccine => vaccine.push(r),
            Arm::Placebo => placebo.push(r),
        }
    }
    (vaccine, placebo)
}

/// Test-only record builder shared by unit tests across modules.
#[cfg(test)]
pub mod ix_tests {
    use super::*;

    pub fn make_record(
        id: &str,
        arm: u8,
        marker: Option<f64>,
        case: bool,
        cats: &[(&str, &str)],
    ) -> ParticipantRecord {
        let covariates = cats
            .iter()
            .map(|(k, v)| (k.to_string(), Covariate::Categorical(v.to_string())))
            .collect();
        ParticipantRecord {
            id: id.into(),
            arm: if arm == 1 { Arm::Vaccine } else { Arm::Placebo },
            covariates,
            marker,
            sampled: marker.is_some(),
            outcome: Outcome::Binary(case),
            weight_override: None,
        }
    }
}
