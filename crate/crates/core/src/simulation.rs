//! Synthetic data from the classification error model and the Monte Carlo
//! harness that scores the estimators by bias, variance and MSE.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::constraints::ConstraintRegion;
use crate::error::{Error, Result};
use crate::estimators::{
    baseline_estimate, bayes_estimate, correct, empirical_contingency,
    CorrectedAggregateDistribution, CorrectionRequest, EstimatorReport,
};
use crate::inference::{posterior_update, prior_jeffreys, prior_uniform, PriorChoice};
use crate::model::{
    AggregateVector, ClassIndex, ConfusionCounts, ContingencyMatrix, CountsVector, LabeledPair,
    TargetRecord,
};
use crate::sampling::{derive_seed, stream_rng, SamplerConfig};

const DOMAIN_POPULATION: u64 = 1;
const DOMAIN_PREDICTIONS: u64 = 2;
const DOMAIN_TEST_SET: u64 = 3;
const DOMAIN_SAMPLER: u64 = 4;

fn mix(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(seed, |s, &p| derive_seed(s, p))
}

/// How the target variable `y` is generated for the population.
#[derive(Debug, Clone, PartialEq)]
pub enum YModel {
    Constant(f64),
    LogNormal {
        mu: f64,
        sigma: f64,
    },
    /// Resampled with replacement from the given values.
    Empirical(Vec<f64>),
}

impl YModel {
    fn validate(&self) -> Result<()> {
        match self {
            YModel::Constant(c) if !c.is_finite() => Err(Error::InvalidConfig(format!(
                "constant y must be finite, got {c}"
            ))),
            YModel::LogNormal { mu, sigma }
                if !mu.is_finite() || !sigma.is_finite() || *sigma < 0.0 =>
            {
                Err(Error::InvalidConfig(format!(
                    "lognormal y needs finite mu and sigma >= 0, got mu={mu}, sigma={sigma}"
                )))
            }
            YModel::Empirical(values) if values.is_empty() => Err(Error::InvalidConfig(
                "empirical y needs at least one value".into(),
            )),
            YModel::Empirical(values) => match values.iter().position(|v| !v.is_finite()) {
                Some(position) => Err(Error::NonFiniteY {
                    position,
                    value: values[position],
                }),
                None => Ok(()),
            },
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationSpec {
    pub size: usize,
    pub beta: Vec<f64>,
    pub y_model: YModel,
    pub contingency: ContingencyMatrix,
    pub seed: u64,
}

impl PopulationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(Error::InvalidConfig(
                "population size must be at least 1".into(),
            ));
        }
        if self.beta.len() != self.contingency.k() {
            return Err(Error::DimensionMismatch {
                expected: self.contingency.k(),
                found: self.beta.len(),
            });
        }
        if self.beta.iter().any(|b| b.is_nan() || *b < 0.0) {
            return Err(Error::InvalidConfig(
                "base rates must be non-negative".into(),
            ));
        }
        let sum: f64 = self.beta.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "base rates sum to {sum}, not 1"
            )));
        }
        self.y_model.validate()
    }
}

/// Number of objects per class: `N·β` rounded by largest remainder so the
/// total is exactly `N`.
pub fn allocate_classes(size: usize, beta: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = beta.iter().map(|b| b * size as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..beta.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &g in order.iter().take(size.saturating_sub(assigned)) {
        counts[g] += 1;
    }
    counts
}

/// A fixed population: true classes and target values.
#[derive(Debug, Clone)]
pub struct Population {
    true_classes: Vec<ClassIndex>,
    y: Vec<f64>,
    truth: AggregateVector,
    k: usize,
}

impl Population {
    pub fn generate(spec: &PopulationSpec) -> Result<Self> {
        spec.validate()?;
        let k = spec.contingency.k();
        let true_classes: Vec<ClassIndex> = allocate_classes(spec.size, &spec.beta)
            .into_iter()
            .enumerate()
            .flat_map(|(g, n)| std::iter::repeat_n(ClassIndex(g), n))
            .collect();
        let mut rng = stream_rng(mix(spec.seed, &[DOMAIN_POPULATION]), 0);
        let y: Vec<f64> = match &spec.y_model {
            YModel::Constant(c) => vec![*c; spec.size],
            YModel::LogNormal { mu, sigma } => {
                let d = LogNormal::new(*mu, *sigma)
                    .map_err(|e| Error::InvalidConfig(format!("lognormal: {e}")))?;
                (0..spec.size).map(|_| d.sample(&mut rng)).collect()
            }
            YModel::Empirical(values) => (0..spec.size)
                .map(|_| values[rng.random_range(0..values.len())])
                .collect(),
        };
        let mut sums = vec![0.0; k];
        for (s, y) in true_classes.iter().zip(&y) {
            sums[s.get()] += y;
        }
        Ok(Self {
            true_classes,
            y,
            truth: AggregateVector::new(sums)?,
            k,
        })
    }

    pub fn size(&self) -> usize {
        self.true_classes.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn true_classes(&self) -> &[ClassIndex] {
        &self.true_classes
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// True per-class aggregates `u`.
    pub fn truth(&self) -> &AggregateVector {
        &self.truth
    }

    /// Naive aggregates `û` and predicted counts `v̂` under `predictions`.
    pub fn aggregate(&self, predictions: &[ClassIndex]) -> (AggregateVector, CountsVector) {
        let mut sums = vec![0.0; self.k];
        let mut counts = vec![0.0; self.k];
        for (h, y) in predictions.iter().zip(&self.y) {
            sums[h.get()] += y;
            counts[h.get()] += 1.0;
        }
        (
            AggregateVector::new(sums).expect("finite y"),
            CountsVector::new(counts).expect("non-negative counts"),
        )
    }
}

fn cumulative_rows(p: &ContingencyMatrix) -> Vec<Vec<f64>> {
    (0..p.k())
        .map(|g| {
            let mut acc = 0.0;
            p.row(g)
                .into_iter()
                .map(|x| {
                    acc += x;
                    acc
                })
                .collect()
        })
        .collect()
}

fn draw_categorical<R: Rng + ?Sized>(cumulative: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>() * cumulative[cumulative.len() - 1];
    cumulative
        .iter()
        .position(|&c| u < c)
        .unwrap_or(cumulative.len() - 1)
}

/// Draws each prediction independently from the row of `p` selected by the
/// true class.
pub fn simulate_predictions<R: Rng + ?Sized>(
    true_classes: &[ClassIndex],
    p: &ContingencyMatrix,
    rng: &mut R,
) -> Result<Vec<ClassIndex>> {
    let k = p.k();
    if let Some(bad) = true_classes.iter().find(|s| s.get() >= k) {
        return Err(Error::IndexOutOfRange {
            index: bad.get(),
            k,
        });
    }
    let cumulative = cumulative_rows(p);
    Ok(true_classes
        .iter()
        .map(|s| ClassIndex(draw_categorical(&cumulative[s.get()], rng)))
        .collect())
}

/// A test set of `n` objects drawn with replacement from the population,
/// each with an independently simulated prediction.
pub fn simulate_labeled_pairs<R: Rng + ?Sized>(
    population: &Population,
    p: &ContingencyMatrix,
    n: usize,
    rng: &mut R,
) -> Result<Vec<LabeledPair>> {
    if p.k() != population.k() {
        return Err(Error::DimensionMismatch {
            expected: population.k(),
            found: p.k(),
        });
    }
    let cumulative = cumulative_rows(p);
    Ok((0..n)
        .map(|_| {
            let s = population.true_classes[rng.random_range(0..population.size())];
            let h = draw_categorical(&cumulative[s.get()], rng);
            LabeledPair {
                true_class: s,
                predicted_class: ClassIndex(h),
            }
        })
        .collect())
}

/// Covariance of the predicted base rates given the true classes:
/// `(diag(Pᵀβ) − Pᵀ·diag(β)·P) / N`.
pub fn base_rate_covariance(p: &ContingencyMatrix, beta: &[f64], n: usize) -> Result<DMatrix<f64>> {
    let k = p.k();
    if beta.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: beta.len(),
        });
    }
    if n == 0 {
        return Err(Error::InvalidConfig(
            "population size must be at least 1".into(),
        ));
    }
    let m = p.as_matrix();
    let b = DVector::from_column_slice(beta);
    let predicted = m.transpose() * &b;
    let cov = DMatrix::from_diagonal(&predicted) - m.transpose() * DMatrix::from_diagonal(&b) * m;
    Ok(cov / n as f64)
}

/// Estimation methods compared by [`run_experiment`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    None,
    Baseline,
    BayesUniform,
    BayesJeffreys,
    BayesUniformConstrained,
    BayesJeffreysConstrained,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::None,
        Method::Baseline,
        Method::BayesUniform,
        Method::BayesJeffreys,
        Method::BayesUniformConstrained,
        Method::BayesJeffreysConstrained,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::None => "none",
            Method::Baseline => "baseline",
            Method::BayesUniform => "bayes-uniform",
            Method::BayesJeffreys => "bayes-jeffreys",
            Method::BayesUniformConstrained => "bayes-uniform-constrained",
            Method::BayesJeffreysConstrained => "bayes-jeffreys-constrained",
        }
    }

    fn bayes(self) -> Option<(bool, bool)> {
        match self {
            Method::BayesUniform => Some((false, false)),
            Method::BayesJeffreys => Some((true, false)),
            Method::BayesUniformConstrained => Some((false, true)),
            Method::BayesJeffreysConstrained => Some((true, true)),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method '{s}'")))
    }
}

impl Serialize for Method {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub population: PopulationSpec,
    pub test_sizes: Vec<usize>,
    pub methods: Vec<Method>,
    pub replications: usize,
    /// Resolution and attempt budget of every Bayesian fit; its seed is
    /// ignored in favour of per-replication seeds derived from the
    /// population seed.
    pub sampler: SamplerConfig,
    /// Class whose aggregate is scored.
    pub target_class: usize,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        self.population.validate()?;
        if self.replications == 0 {
            return Err(Error::InvalidConfig(
                "replications must be at least 1".into(),
            ));
        }
        if self.test_sizes.is_empty() || self.methods.is_empty() {
            return Err(Error::InvalidConfig(
                "need at least one test size and one method".into(),
            ));
        }
        if let Some(n) = self.test_sizes.iter().find(|&&n| n > self.population.size) {
            return Err(Error::InvalidConfig(format!(
                "test size {n} exceeds population size {}",
                self.population.size
            )));
        }
        if self.target_class >= self.population.contingency.k() {
            return Err(Error::IndexOutOfRange {
                index: self.target_class,
                k: self.population.contingency.k(),
            });
        }
        Ok(())
    }
}

/// Scores of one method at one test-set size.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodScore {
    pub method: Method,
    pub n: usize,
    pub truth: f64,
    pub mean_estimate: f64,
    pub bias: f64,
    pub variance: f64,
    pub mse: f64,
    pub replications: usize,
    /// Replications without an estimate (empty test-set row, singular
    /// matrix or constraint starvation).
    pub excluded: usize,
}

impl MethodScore {
    fn from_estimates(
        method: Method,
        n: usize,
        truth: f64,
        estimates: &[f64],
        excluded: usize,
    ) -> Self {
        let used = estimates.len();
        if used == 0 {
            return Self {
                method,
                n,
                truth,
                mean_estimate: f64::NAN,
                bias: f64::NAN,
                variance: f64::NAN,
                mse: f64::NAN,
                replications: 0,
                excluded,
            };
        }
        let b = used as f64;
        let mean = estimates.iter().sum::<f64>() / b;
        let variance = estimates.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / b;
        let bias = mean - truth;
        Self {
            method,
            n,
            truth,
            mean_estimate: mean,
            bias,
            variance,
            mse: bias * bias + variance,
            replications: used,
            excluded,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentResult {
    pub truth: Vec<f64>,
    pub scores: Vec<MethodScore>,
}

impl ExperimentResult {
    pub fn score(&self, method: Method, n: usize) -> Option<&MethodScore> {
        self.scores.iter().find(|s| s.method == method && s.n == n)
    }
}

fn estimate_once(
    method: Method,
    counts: &ConfusionCounts,
    u_hat: &AggregateVector,
    v_hat: &CountsVector,
    sampler: &SamplerConfig,
    target: usize,
) -> Result<f64> {
    match method {
        Method::None => Ok(u_hat.as_slice()[target]),
        Method::Baseline => {
            let p_hat = empirical_contingency(counts)?;
            Ok(baseline_estimate(&p_hat, u_hat)?.as_slice()[target])
        }
        _ => {
            let (jeffreys, constrained) = method.bayes().expect("bayes method");
            let k = counts.k();
            let prior = if jeffreys {
                prior_jeffreys(k)?
            } else {
                prior_uniform(k)?
            };
            let spec = posterior_update(&prior, counts)?;
            let region = if constrained {
                Some(ConstraintRegion::new(v_hat.clone())?)
            } else {
                None
            };
            Ok(bayes_estimate(&spec, u_hat, region.as_ref(), sampler)?.mean(target))
        }
    }
}

fn recoverable(e: &Error) -> bool {
    matches!(
        e,
        Error::EmptyRow(_) | Error::SingularMatrix { .. } | Error::ConstraintStarvation { .. }
    )
}

/// One replication: estimates indexed by `[test size][method]`.
fn replicate(
    spec: &ExperimentSpec,
    population: &Population,
    b: usize,
) -> Result<Vec<Vec<Option<f64>>>> {
    let seed = spec.population.seed;
    let p = &spec.population.contingency;
    let mut rng = stream_rng(mix(seed, &[DOMAIN_PREDICTIONS]), b as u64);
    let predictions = simulate_predictions(population.true_classes(), p, &mut rng)?;
    let (u_hat, v_hat) = population.aggregate(&predictions);

    let mut out = Vec::with_capacity(spec.test_sizes.len());
    for &n in &spec.test_sizes {
        let mut rng = stream_rng(mix(seed, &[DOMAIN_TEST_SET, n as u64]), b as u64);
        let pairs = simulate_labeled_pairs(population, p, n, &mut rng)?;
        let counts = crate::model::confusion_from_pairs(&pairs, p.k())?;
        let sampler_seed = mix(seed, &[DOMAIN_SAMPLER, n as u64, b as u64]);
        let sampler = spec.sampler.with_seed(sampler_seed).with_workers(1)?;
        let mut row = Vec::with_capacity(spec.methods.len());
        for &method in &spec.methods {
            match estimate_once(method, &counts, &u_hat, &v_hat, &sampler, spec.target_class) {
                Ok(x) => row.push(Some(x)),
                Err(e) if recoverable(&e) => row.push(None),
                Err(e) => return Err(e),
            }
        }
        out.push(row);
    }
    Ok(out)
}

/// Runs every method on `B` replications per test-set size and scores the
/// estimates of the target class aggregate against the truth.
///
/// Population predictions depend only on the replication index, so the
/// `none` method scores identically for every test-set size.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    spec.validate()?;
    let population = Population::generate(&spec.population)?;
    let run = |b| replicate(spec, &population, b);
    let results: Vec<Vec<Vec<Option<f64>>>> = if spec.sampler.workers() > 1 {
        (0..spec.replications)
            .into_par_iter()
            .map(run)
            .collect::<Result<_>>()?
    } else {
        (0..spec.replications).map(run).collect::<Result<_>>()?
    };

    let truth = population.truth().as_slice()[spec.target_class];
    let mut scores = Vec::new();
    for (i, &n) in spec.test_sizes.iter().enumerate() {
        for (j, &method) in spec.methods.iter().enumerate() {
            let estimates: Vec<f64> = results.iter().filter_map(|r| r[i][j]).collect();
            let excluded = spec.replications - estimates.len();
            scores.push(MethodScore::from_estimates(
                method, n, truth, &estimates, excluded,
            ));
        }
    }
    Ok(ExperimentResult {
        truth: population.truth().as_slice().to_vec(),
        scores,
    })
}

/// Confusion counts of the built-in two-class scenario: 4 true positives,
/// 1 false negative, 2 false positives and 3 true negatives.
pub const PECULIAR_COUNTS: [[u64; 2]; 2] = [[4, 1], [2, 3]];

/// The built-in two-class scenario: 10 of 100 objects predicted positive,
/// `y ≡ 1`, error rates estimated from a 10-item test set, Jeffreys prior
/// with constraints.
pub fn peculiar_example(resolution: usize, seed: u64) -> Result<EstimatorReport> {
    Ok(peculiar_run(resolution, seed)?.0)
}

/// [`peculiar_example`] together with the posterior samples.
pub fn peculiar_run(
    resolution: usize,
    seed: u64,
) -> Result<(EstimatorReport, CorrectedAggregateDistribution)> {
    let counts = ConfusionCounts::from_rows(&PECULIAR_COUNTS.map(|r| r.to_vec()))?;
    let records: Vec<TargetRecord> = (0..100)
        .map(|i| TargetRecord::new(usize::from(i >= 10), 1.0))
        .collect();
    let labels = ["positive".to_string(), "negative".to_string()];
    correct(&CorrectionRequest {
        labels: &labels,
        counts: &counts,
        records: &records,
        prior: &PriorChoice::Jeffreys,
        constrained: true,
        sampler: SamplerConfig::new(resolution, seed)?,
    })
}
