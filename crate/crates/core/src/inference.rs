//! Likelihood of the test set, the product-Dirichlet conjugate family and
//! its closed-form posterior.
//!
//! The model parameters are the `K` rows of the contingency matrix plus the
//! base-rate vector `β`, each a point on the `(K-1)`-simplex. A prior in the
//! conjugate family puts an independent Dirichlet on each of those `K + 1`
//! vectors; observing confusion counts `n_gh` adds `n_gh` to the row
//! concentrations and the row totals `n_g` to the base-rate concentrations.

use std::fmt;

use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::model::{ConfusionCounts, ContingencyMatrix};

/// Log density of `Dir(alpha)` at `x`, with respect to Lebesgue measure on
/// the first `K - 1` coordinates.
pub fn dirichlet_log_density(x: &[f64], alpha: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), alpha.len());
    let norm = ln_gamma(alpha.iter().sum()) - alpha.iter().map(|&a| ln_gamma(a)).sum::<f64>();
    norm + x
        .iter()
        .zip(alpha)
        .map(|(&xi, &a)| if a == 1.0 { 0.0 } else { (a - 1.0) * xi.ln() })
        .sum::<f64>()
}

/// Hyperparameters of a product of `K + 1` independent Dirichlet
/// distributions: one per contingency row (`alpha[g]`) and one for the
/// base rates (`gamma`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DirichletProduct {
    alpha: Vec<Vec<f64>>,
    gamma: Vec<f64>,
}

impl DirichletProduct {
    /// All hyperparameters must be finite and strictly positive.
    pub fn new(alpha: Vec<Vec<f64>>, gamma: Vec<f64>) -> Result<Self> {
        let k = alpha.len();
        if k < 2 {
            return Err(Error::InvalidK(k));
        }
        for (g, row) in alpha.iter().enumerate() {
            if row.len() != k {
                return Err(Error::NotSquare {
                    rows: k,
                    row: g,
                    len: row.len(),
                });
            }
        }
        if gamma.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: gamma.len(),
            });
        }
        for (position, &value) in alpha.iter().flatten().chain(&gamma).enumerate() {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::NonPositiveConcentration { position, value });
            }
        }
        Ok(Self { alpha, gamma })
    }

    pub fn k(&self) -> usize {
        self.gamma.len()
    }

    pub fn alpha(&self) -> &[Vec<f64>] {
        &self.alpha
    }

    pub fn alpha_row(&self, g: usize) -> &[f64] {
        &self.alpha[g]
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    /// Joint log density at `(P, β)`.
    pub fn log_density(&self, p: &ContingencyMatrix, beta: &[f64]) -> Result<f64> {
        check_dims(self.k(), p, beta)?;
        let rows: f64 = (0..self.k())
            .map(|g| dirichlet_log_density(&p.row(g), &self.alpha[g]))
            .sum();
        Ok(rows + dirichlet_log_density(beta, &self.gamma))
    }

    /// Component-wise Dirichlet means.
    pub fn mean(&self) -> (ContingencyMatrix, Vec<f64>) {
        let k = self.k();
        let mut data = Vec::with_capacity(k * k);
        for row in &self.alpha {
            let s: f64 = row.iter().sum();
            data.extend(row.iter().map(|a| a / s));
        }
        let s: f64 = self.gamma.iter().sum();
        (
            ContingencyMatrix::from_simplex_rows(k, data),
            self.gamma.iter().map(|c| c / s).collect(),
        )
    }
}

fn check_dims(k: usize, p: &ContingencyMatrix, beta: &[f64]) -> Result<()> {
    if p.k() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: p.k(),
        });
    }
    if beta.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: beta.len(),
        });
    }
    Ok(())
}

/// All hyperparameters equal to 1.
pub fn prior_uniform(k: usize) -> Result<DirichletProduct> {
    if k < 2 {
        return Err(Error::InvalidK(k));
    }
    DirichletProduct::new(vec![vec![1.0; k]; k], vec![1.0; k])
}

/// Jeffreys prior of the joint (true class, predicted class) likelihood:
/// `α_gh = 1/2` and `γ_g = K/2`.
///
/// The base-rate concentration is `K/2` rather than `1/2` because each
/// `β_g` multiplies a whole contingency row in the likelihood.
pub fn prior_jeffreys(k: usize) -> Result<DirichletProduct> {
    if k < 2 {
        return Err(Error::InvalidK(k));
    }
    DirichletProduct::new(vec![vec![0.5; k]; k], vec![k as f64 / 2.0; k])
}

/// Prior selected by name or supplied explicitly.
#[derive(Debug, Clone, PartialEq)]
pub enum PriorChoice {
    Uniform,
    Jeffreys,
    Custom(DirichletProduct),
}

impl PriorChoice {
    pub fn build(&self, k: usize) -> Result<DirichletProduct> {
        match self {
            PriorChoice::Uniform => prior_uniform(k),
            PriorChoice::Jeffreys => prior_jeffreys(k),
            PriorChoice::Custom(prior) if prior.k() == k => Ok(prior.clone()),
            PriorChoice::Custom(prior) => Err(Error::DimensionMismatch {
                expected: k,
                found: prior.k(),
            }),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PriorChoice::Uniform => "uniform",
            PriorChoice::Jeffreys => "jeffreys",
            PriorChoice::Custom(_) => "custom",
        }
    }
}

impl fmt::Display for PriorChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `Σ_gh n_gh (ln p_gh + ln β_g)`; `-inf` when an observed cell has zero
/// probability.
pub fn log_likelihood(
    p: &ContingencyMatrix,
    beta: &[f64],
    counts: &ConfusionCounts,
) -> Result<f64> {
    check_dims(counts.k(), p, beta)?;
    let mut total = 0.0;
    for (g, &b) in beta.iter().enumerate() {
        for h in 0..counts.k() {
            let n = counts.get(g, h);
            if n == 0 {
                continue;
            }
            let prob = p.get(g, h) * b;
            if prob <= 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            total += n as f64 * (p.get(g, h).ln() + beta[g].ln());
        }
    }
    Ok(total)
}

/// Prior, data and the resulting conjugate posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSpec {
    prior: DirichletProduct,
    counts: ConfusionCounts,
    posterior: DirichletProduct,
}

impl PosteriorSpec {
    pub fn prior(&self) -> &DirichletProduct {
        &self.prior
    }

    pub fn counts(&self) -> &ConfusionCounts {
        &self.counts
    }

    pub fn posterior(&self) -> &DirichletProduct {
        &self.posterior
    }

    pub fn k(&self) -> usize {
        self.prior.k()
    }
}

/// `α'_gh = α_gh + n_gh`, `γ'_g = γ_g + n_g`.
pub fn posterior_update(
    prior: &DirichletProduct,
    counts: &ConfusionCounts,
) -> Result<PosteriorSpec> {
    let k = prior.k();
    if counts.k() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: counts.k(),
        });
    }
    let alpha = (0..k)
        .map(|g| {
            (0..k)
                .map(|h| prior.alpha[g][h] + counts.get(g, h) as f64)
                .collect()
        })
        .collect();
    let gamma = (0..k)
        .map(|g| prior.gamma[g] + counts.row_total(g) as f64)
        .collect();
    Ok(PosteriorSpec {
        prior: prior.clone(),
        counts: counts.clone(),
        posterior: DirichletProduct::new(alpha, gamma)?,
    })
}

/// Posterior mean of `(P, β)`. A reporting summary only; the corrected
/// aggregate estimate uses the full set of posterior draws.
pub fn posterior_mean(spec: &PosteriorSpec) -> (ContingencyMatrix, Vec<f64>) {
    spec.posterior.mean()
}

/// `ln det I(P, β) = -Σ_gh ln p_gh + (K-2) Σ_g ln β_g`, the log determinant
/// of the Fisher information of one labeled observation in the free
/// parameterization (off-diagonal rates and `β_1..β_{K-1}`).
pub fn fim_log_det(p: &ContingencyMatrix, beta: &[f64]) -> Result<f64> {
    let k = p.k();
    check_dims(k, p, beta)?;
    let mut log_det = 0.0;
    for g in 0..k {
        for h in 0..k {
            let x = p.get(g, h);
            if x <= 0.0 {
                return Err(Error::BoundaryParameter(format!("p[{g}][{h}] = {x}")));
            }
            log_det -= x.ln();
        }
    }
    for (g, &b) in beta.iter().enumerate() {
        if b <= 0.0 {
            return Err(Error::BoundaryParameter(format!("beta[{g}] = {b}")));
        }
        log_det += (k as f64 - 2.0) * b.ln();
    }
    Ok(log_det)
}
