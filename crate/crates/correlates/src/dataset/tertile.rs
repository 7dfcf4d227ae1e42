//! Tertile coding of the marker on the weighted phase-two distribution.

use crate::dataset::TwoPhaseDesign;
use crate::error::{Error, Result};
use crate::record::{Arm, ParticipantRecord};
use crate::stats::weighted_quantile;

/// Result of tertile coding: cut-points plus a recoded copy of the input.
/// Markers in the copy take values 0/1/2; ties at a cut-point go to the
/// lower tertile.
#[derive(Debug, Clone)]
pub struct TertileCoding {
    pub cuts: (f64, f64),
    pub records: Vec<ParticipantRecord>,
}

/// Compute weighted tertile cut-points from the phase-two vaccine arm and
/// return a recoded copy of all records. The input is left untouched.
pub fn tertile_code(
    records: &[ParticipantRecord],
    design: &TwoPhaseDesign,
) -> Result<TertileCoding> {
    let mut markers = Vec::new();
    let mut weights = Vec::new();
    for rec in records {
        if rec.arm == Arm::Vaccine && rec.in_phase_two() {
            markers.push(rec.marker.unwrap());
            weights.push(design.weight(rec)?);
        }
    }
    let mut distinct = markers.clone();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::DegenerateMarker(format!(
            "need at least 3 distinct marker values, found {}",
            distinct.len()
        )));
    }
    let cut1 = weighted_quantile(&markers, &weights, 1.0 / 3.0)?;
    let cut2 = weighted_quantile(&markers, &weights, 2.0 / 3.0)?;
    let cuts = (cut1, cut2);
    Ok(TertileCoding { cuts, records: apply_tertiles(records, cuts) })
}

/// Recode markers against fixed cut-points (used to hold the tertile
/// definition constant across bootstrap replicates).
pub fn apply_tertiles(records: &[ParticipantRecord], cuts: (f64, f64)) -> Vec<ParticipantRecord> {
    records
        .iter()
        .map(|rec| {
            let mut copy = rec.clone();
            copy.marker = rec.marker.map(|s| {
                if s <= cuts.0 {
                    0.0
                } else if s <= cuts.1 {
                    1.0
                } else {
                    2.0
                }
            });
            copy
        })
        .collect()
}
