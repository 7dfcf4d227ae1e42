//! Design-respecting nonparametric bootstrap. Participants are resampled
//! with replacement within arm x case-status (x design stratum) cells, so
//! every replicate preserves the original stratum sizes; sampling
//! probabilities and all models are re-estimated per replicate.
//!
//! Determinism: replicate r draws from a ChaCha12 stream derived from the
//! master seed with `set_stream(r + 1)`, and results are stored by replicate
//! index, so output is independent of thread count and scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::{Covariate, ParticipantRecord};
use crate::stats::quantile_type7;

pub const DEFAULT_REPLICATES: usize = 1000;
pub const DEFAULT_LEVEL: f64 = 0.95;
/// Replicate failure fraction above which a quality warning is attached.
pub const FAILURE_WARN_FRACTION: f64 = 0.05;
/// Replicate failure fraction above which the whole bootstrap fails.
pub const FAILURE_ABORT_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapPlan {
    pub n_replicates: usize,
    pub seed: u64,
    #[serde(default = "default_level")]
    pub level: f64,
}

fn default_level() -> f64 {
    DEFAULT_LEVEL
}

impl Default for BootstrapPlan {
    fn default() -> Self {
        BootstrapPlan { n_replicates: DEFAULT_REPLICATES, seed: 0, level: DEFAULT_LEVEL }
    }
}

impl BootstrapPlan {
    pub fn validate(&self) -> Result<()> {
        if self.n_replicates < 2 {
            return Err(Error::Domain("bootstrap needs at least 2 replicates".into()));
        }
        if !(0.0 < self.level && self.level < 1.0) {
            return Err(Error::Domain(format!("level {} outside (0,1)", self.level)));
        }
        Ok(())
    }
}

/// Resampling cells: arm x case-status, refined by the design stratum when
/// one is configured. Together the cells partition the dataset.
#[derive(Debug, Clone)]
pub struct ResamplingStrata {
    pub labels: Vec<String>,
    pub indices: Vec<Vec<usize>>,
}

impl ResamplingStrata {
    pub fn build(
        records: &[ParticipantRecord],
        t_horizon: Option<f64>,
        design_stratum: Option<&str>,
    ) -> Result<Self> {
        let mut map: std::collections::BTreeMap<String, Vec<usize>> = Default::default();
        for (i, rec) in records.iter().enumerate() {
            let case = rec.is_case(t_horizon)?;
            let extra = match design_stratum {
                None => String::new(),
                Some(name) => match rec.covariate(name)? {
                    Covariate::Categorical(l) => format!(":{l}"),
                    Covariate::Numeric(v) => format!(":{v}"),
                },
            };
            let label = format!("arm{}:case{}{}", rec.arm.code(), u8::from(case), extra);
            map.entry(label).or_default().push(i);
        }
        let mut labels = Vec::new();
        let mut indices = Vec::new();
        for (label, idx) in map {
            labels.push(label);
            indices.push(idx);
        }
        Ok(ResamplingStrata { labels, indices })
    }
}

/// Replicate matrices for a fixed set of named statistics.
#[derive(Debug, Clone)]
pub struct BootstrapRun {
    pub statistic_names: Vec<String>,
    /// Successful replicates in replicate-index order.
    pub replicates: Vec<Vec<f64>>,
    pub replicate_ids: Vec<usize>,
    pub n_requested: usize,
    pub n_failed: usize,
    pub level: f64,
    pub failure_warning: Option<String>,
}

impl BootstrapRun {
    /// All successful draws of one statistic.
    pub fn column(&self, stat: usize) -> Vec<f64> {
        self.replicates.iter().map(|r| r[stat]).collect()
    }

    /// Percentile interval for one statistic at the plan's level.
    pub fn ci(&self, stat: usize) -> Result<(f64, f64)> {
        percentile_ci(&self.column(stat), self.level)
    }
}

fn replicate_rng(seed: u64, replicate: usize) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64 + 1);
    rng
}

/// Draw one stratified resample (with replacement, sizes preserved).
pub fn resample(
    records: &[ParticipantRecord],
    strata: &ResamplingStrata,
    rng: &mut ChaCha12Rng,
) -> Vec<ParticipantRecord> {
    let mut out = Vec::with_capacity(records.len());
    for stratum in &strata.indices {
        let m = stratum.len();
        for _ in 0..m {
            let pick = stratum[rng.random_range(0..m)];
            out.push(records[pick].clone());
        }
    }
    out
}

/// Run the bootstrap: `stat_fn` maps a resampled dataset to the statistic
/// vector. Replicates that return an error are dropped and counted; more
/// than half failing aborts, more than 5% failing attaches a warning.
pub fn run_bootstrap<F>(
    records: &[ParticipantRecord],
    strata: &ResamplingStrata,
    plan: &BootstrapPlan,
    statistic_names: Vec<String>,
    stat_fn: F,
) -> Result<BootstrapRun>
where
    F: Fn(&[ParticipantRecord]) -> Result<Vec<f64>> + Sync,
{
    plan.validate()?;
    let n_stats = statistic_names.len();
    let results: Vec<Option<Vec<f64>>> = (0..plan.n_replicates)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replicate_rng(plan.seed, rep);
            let sample = resample(records, strata, &mut rng);
            stat_fn(&sample).ok()
        })
        .collect();

    let mut replicates = Vec::new();
    let mut replicate_ids = Vec::new();
    let mut n_failed = 0usize;
    for (rep, res) in results.into_iter().enumerate() {
        match res {
            Some(stats) => {
                if stats.len() != n_stats {
                    return Err(Error::Data(format!(
                        "statistic vector length {} != {} names",
                        stats.len(),
                        n_stats
                    )));
                }
                replicates.push(stats);
                replicate_ids.push(rep);
            }
            None => n_failed += 1,
        }
    }
    let frac = n_failed as f64 / plan.n_replicates as f64;
    if frac > FAILURE_ABORT_FRACTION {
        return Err(Error::BootstrapFailure { failed: n_failed, total: plan.n_replicates });
    }
    let failure_warning = (frac > FAILURE_WARN_FRACTION).then(|| {
        format!(
            "{n_failed} of {} bootstrap replicates failed to converge ({:.1}%)",
            plan.n_replicates,
            100.0 * frac
        )
    });
    Ok(BootstrapRun {
        statistic_names,
        replicates,
        replicate_ids,
        n_requested: plan.n_replicates,
        n_failed,
        level: plan.level,
        failure_warning,
    })
}

/// Pointwise percentile interval: linear-interpolation quantiles of the
/// finite replicate values at (1-level)/2 and 1-(1-level)/2.
pub fn percentile_ci(values: &[f64], level: f64) -> Result<(f64, f64)> {
    if !(0.0 < level && level < 1.0) {
        return Err(Error::Domain(format!("level {level} outside (0,1)")));
    }
    let mut finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.len() < 2 {
        return Err(Error::Ci(format!(
            "need at least 2 finite replicate values, got {}",
            finite.len()
        )));
    }
    finite.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let alpha = (1.0 - level) / 2.0;
    Ok((quantile_type7(&finite, alpha)?, quantile_type7(&finite, 1.0 - alpha)?))
}
