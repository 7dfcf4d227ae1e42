//! Design-matrix encoding shared by the logistic and Cox fitters.
//!
//! Terms are declared by name. The marker enters either linearly (`marker`)
//! or as a tertile factor (`marker_cat`, coded 0/1/2 with 0 as reference).
//! Categorical covariates are one-hot encoded against the lexicographically
//! first level. Numeric terms are standardized internally for optimization;
//! reported coefficients are always on the original scale.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::record::{Covariate, ParticipantRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MarkerTerm {
    Linear,
    Tertile,
}

/// Ordered model terms: an optional marker term plus covariate names.
#[derive(Debug, Clone, Serialize)]
pub struct Formula {
    pub marker: Option<MarkerTerm>,
    pub covariates: Vec<String>,
}

impl Formula {
    pub fn from_terms(terms: &[String]) -> Result<Self> {
        let mut marker = None;
        let mut covariates = Vec::new();
        for t in terms {
            match t.as_str() {
                "marker" | "marker_cat" => {
                    if marker.is_some() {
                        return Err(Error::Schema("duplicate marker term in formula".into()));
                    }
                    marker = Some(if t == "marker" { MarkerTerm::Linear } else { MarkerTerm::Tertile });
                }
                name => covariates.push(name.to_string()),
            }
        }
        Ok(Formula { marker, covariates })
    }

    pub fn quantitative(covariates: &[String]) -> Self {
        Formula { marker: Some(MarkerTerm::Linear), covariates: covariates.to_vec() }
    }

    pub fn tertile(covariates: &[String]) -> Self {
        Formula { marker: Some(MarkerTerm::Tertile), covariates: covariates.to_vec() }
    }

    pub fn covariates_only(covariates: &[String]) -> Self {
        Formula { marker: None, covariates: covariates.to_vec() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NumericStd {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, Serialize)]
pub enum EncodedTerm {
    MarkerLinear(NumericStd),
    /// Tertile-coded marker: dummy columns for codes 1 and 2.
    MarkerTertile,
    Numeric { name: String, std: NumericStd },
    Categorical { name: String, levels: Vec<String> },
}

impl EncodedTerm {
    pub fn n_columns(&self) -> usize {
        match self {
            EncodedTerm::MarkerLinear(_) | EncodedTerm::Numeric { .. } => 1,
            EncodedTerm::MarkerTertile => 2,
            EncodedTerm::Categorical { levels, .. } => levels.len() - 1,
        }
    }

    pub fn display_name(&self) -> &str {
        match self {
            EncodedTerm::MarkerLinear(_) => "marker",
            EncodedTerm::MarkerTertile => "marker_cat",
            EncodedTerm::Numeric { name, .. } | EncodedTerm::Categorical { name, .. } => name,
        }
    }
}

/// Fitted design encoding, recorded with the model so predictions are
/// reproducible.
#[derive(Debug, Clone, Serialize)]
pub struct DesignEncoding {
    pub intercept: bool,
    pub terms: Vec<EncodedTerm>,
    /// Column names excluding the intercept, in design order.
    pub columns: Vec<String>,
}

impl DesignEncoding {
    /// Derive the encoding from the fitting subset. Zero-variance numeric
    /// terms and single-level factors are rejected as collinear here, before
    /// any linear algebra runs.
    pub fn build(records: &[&ParticipantRecord], formula: &Formula) -> Result<Self> {
        Self::build_inner(records, formula, true)
    }

    pub fn build_no_intercept(records: &[&ParticipantRecord], formula: &Formula) -> Result<Self> {
        Self::build_inner(records, formula, false)
    }

    fn build_inner(records: &[&ParticipantRecord], formula: &Formula, intercept: bool) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Estimation("empty fitting subset".into()));
        }
        let mut terms = Vec::new();
        if let Some(marker) = formula.marker {
            match marker {
                MarkerTerm::Linear => {
                    let values: Vec<f64> = records
                        .iter()
                        .map(|r| {
                            r.marker.ok_or_else(|| {
                                Error::Data(format!("record {}: marker required by formula", r.id))
                            })
                        })
                        .collect::<Result<_>>()?;
                    let std = standardizer(&values, "marker")?;
                    terms.push(EncodedTerm::MarkerLinear(std));
                }
                MarkerTerm::Tertile => {
                    for r in records {
                        let code = r.marker.ok_or_else(|| {
                            Error::Data(format!("record {}: marker required by formula", r.id))
                        })?;
                        tertile_code_of(code, &r.id)?;
                    }
                    terms.push(EncodedTerm::MarkerTertile);
                }
            }
        }
        for name in &formula.covariates {
            let mut numeric = Vec::new();
            let mut cats: Vec<String> = Vec::new();
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
                if cats.len() < 2 {
                    return Err(Error::Collinearity { terms: vec![name.clone()] });
                }
                terms.push(EncodedTerm::Categorical { name: name.clone(), levels: cats });
            } else {
                let std = standardizer(&numeric, name)?;
                terms.push(EncodedTerm::Numeric { name: name.clone(), std });
            }
        }
        let mut columns = Vec::new();
        for term in &terms {
            match term {
                EncodedTerm::MarkerLinear(_) => columns.push("marker".to_string()),
                EncodedTerm::MarkerTertile => {
                    columns.push("marker_cat[1]".to_string());
                    columns.push("marker_cat[2]".to_string());
                }
                EncodedTerm::Numeric { name, .. } => columns.push(name.clone()),
                EncodedTerm::Categorical { name, levels } => {
                    for level in &levels[1..] {
                        columns.push(format!("{name}[{level}]"));
                    }
                }
            }
        }
        Ok(DesignEncoding { intercept, terms, columns })
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len() + usize::from(self.intercept)
    }

    /// Column names including the intercept when present.
    pub fn column_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.n_columns());
        if self.intercept {
            names.push("(intercept)".to_string());
        }
        names.extend(self.columns.iter().cloned());
        names
    }

    /// Fill one standardized design row for a record at marker value `s`.
    pub fn fill_row_standardized(
        &self,
        rec: &ParticipantRecord,
        s: Option<f64>,
        out: &mut [f64],
    ) -> Result<()> {
        debug_assert_eq!(out.len(), self.n_columns());
        let mut j = 0;
        if self.intercept {
            out[j] = 1.0;
            j += 1;
        }
        for term in &self.terms {
            match term {
                EncodedTerm::MarkerLinear(std) => {
                    let s = s.ok_or_else(|| Error::Data("marker value required".into()))?;
                    out[j] = (s - std.mean) / std.sd;
                    j += 1;
                }
                EncodedTerm::MarkerTertile => {
                    let s = s.ok_or_else(|| Error::Data("marker value required".into()))?;
                    let code = tertile_code_of(s, &rec.id)?;
                    out[j] = f64::from(code == 1);
                    out[j + 1] = f64::from(code == 2);
                    j += 2;
                }
                EncodedTerm::Numeric { name, std } => {
                    match rec.covariate(name)? {
                        Covariate::Numeric(v) => out[j] = (v - std.mean) / std.sd,
                        Covariate::Categorical(_) => {
                            return Err(Error::Data(format!(
                                "record {}: covariate `{name}` expected numeric",
                                rec.id
                            )))
                        }
                    }
                    j += 1;
                }
                EncodedTerm::Categorical { name, levels } => {
                    let level = match rec.covariate(name)? {
                        Covariate::Categorical(l) => l,
                        Covariate::Numeric(_) => {
                            return Err(Error::Data(format!(
                                "record {}: covariate `{name}` expected categorical",
                                rec.id
                            )))
                        }
                    };
                    if !levels.iter().any(|l| l == level) {
                        return Err(Error::Prediction(format!(
                            "unseen level `{level}` for covariate `{name}`"
                        )));
                    }
                    for (k, lvl) in levels[1..].iter().enumerate() {
                        out[j + k] = f64::from(lvl == level);
                    }
                    j += levels.len() - 1;
                }
            }
        }
        Ok(())
    }

    /// Map standardized-space coefficients back to the original scale.
    /// Returns (intercept, per-column original coefficients).
    pub fn destandardize(&self, beta_std: &[f64]) -> (f64, Vec<f64>) {
        let mut j = usize::from(self.intercept);
        let mut intercept = if self.intercept { beta_std[0] } else { 0.0 };
        let mut coefs = Vec::with_capacity(self.columns.len());
        for term in &self.terms {
            match term {
                EncodedTerm::MarkerLinear(std) | EncodedTerm::Numeric { std, .. } => {
                    coefs.push(beta_std[j] / std.sd);
                    intercept -= beta_std[j] * std.mean / std.sd;
                    j += 1;
                }
                EncodedTerm::MarkerTertile => {
                    coefs.push(beta_std[j]);
                    coefs.push(beta_std[j + 1]);
                    j += 2;
                }
                EncodedTerm::Categorical { levels, .. } => {
                    for k in 0..levels.len() - 1 {
                        coefs.push(beta_std[j + k]);
                    }
                    j += levels.len() - 1;
                }
            }
        }
        (intercept, coefs)
    }
}

fn standardizer(values: &[f64], term: &str) -> Result<NumericStd> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if !(sd > 0.0) {
        return Err(Error::Collinearity { terms: vec![term.to_string()] });
    }
    Ok(NumericStd { mean, sd })
}

pub fn tertile_code_of(s: f64, id: &str) -> Result<u8> {
    let code = s.round();
    if (s - code).abs() > 1e-9 || !(0.0..=2.0).contains(&code) {
        return Err(Error::Prediction(format!(
            "record {id}: tertile-coded marker must be 0, 1, or 2 (got {s})"
        )));
    }
    Ok(code as u8)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::ix_tests::make_record;

    #[test]
    fn formula_recognizes_marker_terms() {
        let f = Formula::from_terms(&["marker".into(), "age".into(), "sex".into()]).unwrap();
        assert_eq!(f.marker, Some(MarkerTerm::Linear));
        assert_eq!(f.covariates, vec!["age", "sex"]);
        let f = Formula::from_terms(&["marker_cat".into()]).unwrap();
        assert_eq!(f.marker, Some(MarkerTerm::Tertile));
    }

    #[test]
    fn categorical_levels_are_lexicographic_with_first_as_reference() {
        let records = [
            make_record("a", 1, Some(1.0), false, &[("country", "peru")]),
            make_record("b", 1, Some(2.0), false, &[("country", "brazil")]),
            make_record("c", 1, Some(3.0), true, &[("country", "colombia")]),
        ];
        let refs: Vec<&ParticipantRecord> = records.iter().collect();
        let enc =
            DesignEncoding::build(&refs, &Formula::quantitative(&["country".into()])).unwrap();
        assert_eq!(enc.columns, vec!["marker", "country[colombia]", "country[peru]"]);
    }

    #[test]
    fn zero_variance_marker_is_collinear() {
        let records = [
            make_record("a", 1, Some(2.0), false, &[]),
            make_record("b", 1, Some(2.0), true, &[]),
        ];
        let refs: Vec<&ParticipantRecord> = records.iter().collect();
        let err = DesignEncoding::build(&refs, &Formula::quantitative(&[])).unwrap_err();
        match err {
            Error::Collinearity { terms } => assert_eq!(terms, vec!["marker"]),
            other => panic!("unexpected error {other}"),
        }
    }
}
