//! The estimator families: naive (no correction), baseline (plug-in
//! inverse of the empirical error rates) and Bayesian (posterior
//! distribution of the corrected aggregate, with or without constraints).

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::constraints::ConstraintRegion;
use crate::error::{Error, Result};
use crate::inference::{posterior_update, PosteriorSpec, PriorChoice};
use crate::model::{
    aggregate_by_predicted, invert_transpose, AggregateVector, ConfusionCounts, ContingencyMatrix,
    TargetRecord,
};
use crate::sampling::{rejection_sample, SamplerConfig};

/// Probabilities reported by [`summarize`].
pub const QUANTILES: [f64; 5] = [0.025, 0.25, 0.5, 0.75, 0.975];

/// Per-class sums over predicted classes.
pub fn naive_estimate(records: &[TargetRecord], k: usize) -> Result<AggregateVector> {
    Ok(aggregate_by_predicted(records, k)?.0)
}

/// Plug-in error rates `n_gh / n_g`. Rows without observations are an error.
pub fn empirical_contingency(counts: &ConfusionCounts) -> Result<ContingencyMatrix> {
    let k = counts.k();
    let mut data = Vec::with_capacity(k * k);
    for g in 0..k {
        let n_g = counts.row_total(g);
        if n_g == 0 {
            return Err(Error::EmptyRow(g));
        }
        data.extend(counts.row(g).iter().map(|&n| n as f64 / n_g as f64));
    }
    Ok(ContingencyMatrix::from_simplex_rows(k, data))
}

/// `Q̂·û`. Components may be negative; they are returned as computed.
pub fn baseline_estimate(
    p_hat: &ContingencyMatrix,
    u_hat: &AggregateVector,
) -> Result<AggregateVector> {
    if u_hat.k() != p_hat.k() {
        return Err(Error::DimensionMismatch {
            expected: p_hat.k(),
            found: u_hat.k(),
        });
    }
    let q = invert_transpose(p_hat)?;
    AggregateVector::new(q.apply(u_hat.as_slice()))
}

/// `R` posterior samples of the corrected aggregate vector `Q(P)·û`.
#[derive(Debug, Clone)]
pub struct CorrectedAggregateDistribution {
    samples: Vec<Vec<f64>>,
    pub attempted: usize,
    pub singular: usize,
}

impl CorrectedAggregateDistribution {
    pub fn from_samples(samples: Vec<Vec<f64>>) -> Self {
        let attempted = samples.len();
        Self {
            samples,
            attempted,
            singular: 0,
        }
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn k(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn class_samples(&self, h: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s[h]).collect()
    }

    pub fn acceptance_rate(&self) -> f64 {
        self.samples.len() as f64 / self.attempted as f64
    }

    /// Posterior mean of the class-`h` aggregate.
    pub fn mean(&self, h: usize) -> f64 {
        self.samples.iter().map(|s| s[h]).sum::<f64>() / self.samples.len() as f64
    }
}

/// Samples the (optionally constrained) posterior and maps every accepted
/// draw through its own correction matrix. `û` is held fixed.
pub fn bayes_estimate(
    spec: &PosteriorSpec,
    u_hat: &AggregateVector,
    region: Option<&ConstraintRegion>,
    cfg: &SamplerConfig,
) -> Result<CorrectedAggregateDistribution> {
    if u_hat.k() != spec.k() {
        return Err(Error::DimensionMismatch {
            expected: spec.k(),
            found: u_hat.k(),
        });
    }
    let draws = rejection_sample(spec, region, cfg)?;
    let correct = |d: &crate::sampling::PosteriorDraw| -> Result<Vec<f64>> {
        Ok(invert_transpose(&d.contingency)?.apply(u_hat.as_slice()))
    };
    let samples = if cfg.workers() > 1 {
        draws
            .draws
            .par_iter()
            .map(correct)
            .collect::<Result<Vec<_>>>()?
    } else {
        draws
            .draws
            .iter()
            .map(correct)
            .collect::<Result<Vec<_>>>()?
    };
    Ok(CorrectedAggregateDistribution {
        samples,
        attempted: draws.attempted,
        singular: draws.singular,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassSummary {
    pub mean: f64,
    pub sd: f64,
    pub skewness: f64,
    pub q025: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub q975: f64,
}

/// Quantile of sorted data by linear interpolation between order statistics.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize_values(values: &[f64]) -> Result<ClassSummary> {
    if values.is_empty() {
        return Err(Error::EmptySamples);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (m2, m3) = values.iter().fold((0.0, 0.0), |(m2, m3), x| {
        let d = x - mean;
        (m2 + d * d, m3 + d * d * d)
    });
    let sd = if values.len() > 1 {
        (m2 / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let skewness = if m2 > 0.0 {
        (m3 / n) / (m2 / n).powf(1.5)
    } else {
        0.0
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = QUANTILES.map(|p| quantile_sorted(&sorted, p));
    Ok(ClassSummary {
        mean,
        sd,
        skewness,
        q025: q[0],
        q25: q[1],
        median: q[2],
        q75: q[3],
        q975: q[4],
    })
}

/// Per-class mean, standard deviation, skewness and quantiles.
pub fn summarize(dist: &CorrectedAggregateDistribution) -> Result<Vec<ClassSummary>> {
    if dist.is_empty() {
        return Err(Error::EmptySamples);
    }
    (0..dist.k())
        .map(|h| summarize_values(&dist.class_samples(h)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum BaselineOutcome {
    Ok {
        estimate: Vec<f64>,
        /// Some component is negative (an impermissible count).
        negative: bool,
    },
    Failed {
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabeledSummary {
    pub class: String,
    #[serde(flatten)]
    pub summary: ClassSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportMetadata {
    pub version: String,
    pub prior: String,
    pub constraints: bool,
    pub resolution: usize,
    pub seed: u64,
    pub workers: usize,
    pub accepted: usize,
    pub attempted: usize,
    pub acceptance_rate: f64,
    pub test_set_size: u64,
    pub population_size: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timestamp_unix: Option<u64>,
}

/// Everything a correction run produces, ready for serialization.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorReport {
    pub classes: Vec<String>,
    pub naive: Vec<f64>,
    pub baseline: BaselineOutcome,
    pub bayes: Vec<LabeledSummary>,
    pub metadata: ReportMetadata,
}

impl EstimatorReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned plain-text table.
    pub fn to_text(&self) -> String {
        let width = self
            .classes
            .iter()
            .map(String::len)
            .max()
            .unwrap_or(5)
            .max(5);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$} {:>14} {:>14} {:>14} {:>14} {:>14} {:>14} {:>14}",
            "class", "naive", "baseline", "bayes_mean", "bayes_sd", "q2.5%", "median", "q97.5%"
        );
        for (h, class) in self.classes.iter().enumerate() {
            let baseline = match &self.baseline {
                BaselineOutcome::Ok { estimate, .. } => format!("{:.4}", estimate[h]),
                BaselineOutcome::Failed { .. } => "n/a".to_string(),
            };
            let s = &self.bayes[h].summary;
            let _ = writeln!(
                out,
                "{:<width$} {:>14.4} {:>14} {:>14.4} {:>14.4} {:>14.4} {:>14.4} {:>14.4}",
                class, self.naive[h], baseline, s.mean, s.sd, s.q025, s.median, s.q975
            );
        }
        match &self.baseline {
            BaselineOutcome::Ok { negative: true, .. } => {
                let _ = writeln!(out, "warning: baseline estimate has negative components");
            }
            BaselineOutcome::Failed { reason } => {
                let _ = writeln!(out, "warning: baseline unavailable: {reason}");
            }
            _ => {}
        }
        let m = &self.metadata;
        let _ =
            writeln!(
            out,
            "prior={} constraints={} R={} seed={} accepted={} attempted={} acceptance_rate={:.6}",
            m.prior, m.constraints, m.resolution, m.seed, m.accepted, m.attempted, m.acceptance_rate
        );
        out
    }
}

/// Inputs of a complete correction run.
#[derive(Debug, Clone)]
pub struct CorrectionRequest<'a> {
    pub labels: &'a [String],
    pub counts: &'a ConfusionCounts,
    pub records: &'a [TargetRecord],
    pub prior: &'a PriorChoice,
    pub constrained: bool,
    pub sampler: SamplerConfig,
}

/// Runs naive, baseline and Bayesian estimation on one dataset.
pub fn correct(
    req: &CorrectionRequest<'_>,
) -> Result<(EstimatorReport, CorrectedAggregateDistribution)> {
    let k = req.labels.len();
    if req.counts.k() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: req.counts.k(),
        });
    }
    let (u_hat, v_hat) = aggregate_by_predicted(req.records, k)?;
    let baseline =
        match empirical_contingency(req.counts).and_then(|p| baseline_estimate(&p, &u_hat)) {
            Ok(estimate) => {
                let estimate = estimate.into_vec();
                BaselineOutcome::Ok {
                    negative: estimate.iter().any(|&x| x < 0.0),
                    estimate,
                }
            }
            Err(e) => BaselineOutcome::Failed {
                reason: e.to_string(),
            },
        };

    let spec = posterior_update(&req.prior.build(k)?, req.counts)?;
    let region = if req.constrained {
        Some(ConstraintRegion::new(v_hat.clone())?)
    } else {
        None
    };
    let dist = bayes_estimate(&spec, &u_hat, region.as_ref(), &req.sampler)?;
    let bayes = summarize(&dist)?
        .into_iter()
        .zip(req.labels)
        .map(|(summary, class)| LabeledSummary {
            class: class.clone(),
            summary,
        })
        .collect();

    let report = EstimatorReport {
        classes: req.labels.to_vec(),
        naive: u_hat.into_vec(),
        baseline,
        bayes,
        metadata: ReportMetadata {
            version: env!("CARGO_PKG_VERSION").to_string(),
            prior: req.prior.name().to_string(),
            constraints: req.constrained,
            resolution: req.sampler.resolution(),
            seed: req.sampler.seed(),
            workers: req.sampler.workers(),
            accepted: dist.len(),
            attempted: dist.attempted,
            acceptance_rate: dist.acceptance_rate(),
            test_set_size: req.counts.total(),
            population_size: v_hat.total(),
            timestamp_unix: None,
        },
    };
    Ok((report, dist))
}
