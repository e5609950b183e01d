//! Posterior draws and constrained rejection sampling.
//!
//! Draws are generated in fixed-size chunks of attempts. Chunk `c` uses its
//! own ChaCha8 stream derived from `(seed, c)`, and accepted draws are merged
//! in chunk order, so the output depends only on the seed and the
//! configuration, never on the number of worker threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;

use crate::constraints::{ConstraintRegion, Membership};
use crate::error::{Error, Result};
use crate::inference::{DirichletProduct, PosteriorSpec};
use crate::model::{invert_transpose, ContingencyMatrix};

/// Attempts per RNG chunk.
pub const CHUNK_ATTEMPTS: usize = 1024;
/// Default cap on attempts, as a multiple of the resolution.
pub const DEFAULT_MAX_ATTEMPTS_FACTOR: usize = 10_000;
pub const DEFAULT_RESOLUTION: usize = 10_000;

/// SplitMix64 finalizer; spreads `(seed, domain)` into an unrelated seed.
pub fn derive_seed(seed: u64, domain: u64) -> u64 {
    let mut z = seed ^ domain.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent deterministic stream `stream` of generator `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

enum GammaComponent {
    Direct(Gamma<f64>),
    // G(a) = G(a + 1) · U^(1/a) for a < 1
    Boosted { gamma: Gamma<f64>, inv_shape: f64 },
}

/// Dirichlet sampler working in log space, exact for every positive shape.
pub struct Dirichlet {
    components: Vec<GammaComponent>,
}

impl Dirichlet {
    pub fn new(concentrations: &[f64]) -> Result<Self> {
        if concentrations.len() < 2 {
            return Err(Error::InvalidK(concentrations.len()));
        }
        let components = concentrations
            .iter()
            .enumerate()
            .map(|(position, &a)| {
                if !(a.is_finite() && a > 0.0) {
                    return Err(Error::NonPositiveConcentration { position, value: a });
                }
                let component = if a < 1.0 {
                    GammaComponent::Boosted {
                        gamma: Gamma::new(a + 1.0, 1.0).expect("shape > 1"),
                        inv_shape: 1.0 / a,
                    }
                } else {
                    GammaComponent::Direct(Gamma::new(a, 1.0).expect("shape >= 1"))
                };
                Ok(component)
            })
            .collect::<Result<_>>()?;
        Ok(Self { components })
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.len());
        let mut max = f64::NEG_INFINITY;
        for (slot, component) in out.iter_mut().zip(&self.components) {
            let log_g = match component {
                GammaComponent::Direct(g) => g.sample(rng).ln(),
                GammaComponent::Boosted { gamma, inv_shape } => {
                    let u = 1.0 - rng.random::<f64>();
                    gamma.sample(rng).ln() + u.ln() * inv_shape
                }
            };
            *slot = log_g;
            max = max.max(log_g);
        }
        let mut sum = 0.0;
        for x in out.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        for x in out.iter_mut() {
            *x /= sum;
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.sample_into(rng, &mut out);
        out
    }
}

/// One draw from `Dir(concentrations)`.
pub fn sample_dirichlet<R: Rng + ?Sized>(concentrations: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    Ok(Dirichlet::new(concentrations)?.sample(rng))
}

/// One joint draw of the contingency matrix and the base rates.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraw {
    pub contingency: ContingencyMatrix,
    pub base_rates: Vec<f64>,
}

/// Samples a whole [`DirichletProduct`]: every row and the base rates,
/// mutually independent.
pub struct ProductSampler {
    k: usize,
    rows: Vec<Dirichlet>,
    base: Dirichlet,
}

impl ProductSampler {
    pub fn new(product: &DirichletProduct) -> Result<Self> {
        Ok(Self {
            k: product.k(),
            rows: product
                .alpha()
                .iter()
                .map(|row| Dirichlet::new(row))
                .collect::<Result<_>>()?,
            base: Dirichlet::new(product.gamma())?,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> PosteriorDraw {
        let k = self.k;
        let mut data = vec![0.0; k * k];
        for (row, dirichlet) in data.chunks_mut(k).zip(&self.rows) {
            dirichlet.sample_into(rng, row);
        }
        PosteriorDraw {
            contingency: ContingencyMatrix::from_simplex_rows(k, data),
            base_rates: self.base.sample(rng),
        }
    }
}

pub fn sample_posterior_product<R: Rng + ?Sized>(
    spec: &PosteriorSpec,
    rng: &mut R,
) -> Result<PosteriorDraw> {
    Ok(ProductSampler::new(spec.posterior())?.sample(rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplerConfig {
    resolution: usize,
    max_total_attempts: usize,
    seed: u64,
    workers: usize,
}

impl SamplerConfig {
    pub fn new(resolution: usize, seed: u64) -> Result<Self> {
        if resolution == 0 {
            return Err(Error::InvalidConfig("resolution must be at least 1".into()));
        }
        Ok(Self {
            resolution,
            max_total_attempts: resolution.saturating_mul(DEFAULT_MAX_ATTEMPTS_FACTOR),
            seed,
            workers: 1,
        })
    }

    pub fn with_max_attempts_factor(self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::InvalidConfig(
                "max attempts factor must be at least 1".into(),
            ));
        }
        self.with_max_total_attempts(self.resolution.saturating_mul(factor))
    }

    pub fn with_max_total_attempts(mut self, max: usize) -> Result<Self> {
        if max < self.resolution {
            return Err(Error::InvalidConfig(format!(
                "max total attempts {max} is below the resolution {}",
                self.resolution
            )));
        }
        self.max_total_attempts = max;
        Ok(self)
    }

    pub fn with_workers(mut self, workers: usize) -> Result<Self> {
        if workers == 0 {
            return Err(Error::InvalidConfig("workers must be at least 1".into()));
        }
        self.workers = workers;
        Ok(self)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn max_total_attempts(&self) -> usize {
        self.max_total_attempts
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn workers(&self) -> usize {
        self.workers
    }
}

/// Accepted draws plus the bookkeeping needed to diagnose the sampler.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub draws: Vec<PosteriorDraw>,
    pub attempted: usize,
    /// Rejections caused by a singular `Pᵀ` (a subset of all rejections).
    pub singular: usize,
}

impl PosteriorDraws {
    pub fn accepted(&self) -> usize {
        self.draws.len()
    }

    pub fn rejected(&self) -> usize {
        self.attempted - self.accepted()
    }

    pub fn acceptance_rate(&self) -> f64 {
        self.accepted() as f64 / self.attempted as f64
    }
}

struct ChunkOutcome {
    accepted: Vec<(usize, PosteriorDraw)>,
    singular_offsets: Vec<usize>,
    attempts: usize,
}

fn run_chunk(
    sampler: &ProductSampler,
    region: Option<&ConstraintRegion>,
    seed: u64,
    chunk: usize,
    attempts: usize,
) -> Result<ChunkOutcome> {
    let mut rng = stream_rng(seed, chunk as u64);
    let mut accepted = Vec::new();
    let mut singular_offsets = Vec::new();
    for offset in 0..attempts {
        let draw = sampler.sample(&mut rng);
        let membership = match region {
            Some(region) => region.classify(&draw.contingency)?,
            None => match invert_transpose(&draw.contingency) {
                Ok(_) => Membership::Inside,
                Err(Error::SingularMatrix { .. }) => Membership::Singular,
                Err(e) => return Err(e),
            },
        };
        match membership {
            Membership::Inside => accepted.push((offset, draw)),
            Membership::Singular => singular_offsets.push(offset),
            Membership::Outside => {}
        }
    }
    Ok(ChunkOutcome {
        accepted,
        singular_offsets,
        attempts,
    })
}

/// Draws from the posterior until `resolution` draws fall inside `region`
/// (or, with no region, have an invertible `Pᵀ`).
///
/// Fails with [`Error::ConstraintStarvation`] when the attempt budget runs
/// out first.
pub fn rejection_sample(
    spec: &PosteriorSpec,
    region: Option<&ConstraintRegion>,
    cfg: &SamplerConfig,
) -> Result<PosteriorDraws> {
    if let Some(region) = region {
        if region.k() != spec.k() {
            return Err(Error::DimensionMismatch {
                expected: spec.k(),
                found: region.k(),
            });
        }
    }
    let sampler = ProductSampler::new(spec.posterior())?;
    let required = cfg.resolution;
    let budget = cfg.max_total_attempts;
    let total_chunks = budget.div_ceil(CHUNK_ATTEMPTS);
    let chunk_len = |c: usize| CHUNK_ATTEMPTS.min(budget - c * CHUNK_ATTEMPTS);
    let batch = if cfg.workers > 1 { cfg.workers * 4 } else { 1 };

    let mut draws = Vec::with_capacity(required);
    let mut attempted = 0;
    let mut singular = 0;
    let mut next = 0;
    while next < total_chunks {
        let end = (next + batch).min(total_chunks);
        let outcomes: Vec<Result<ChunkOutcome>> = if cfg.workers > 1 {
            (next..end)
                .into_par_iter()
                .map(|c| run_chunk(&sampler, region, cfg.seed, c, chunk_len(c)))
                .collect()
        } else {
            (next..end)
                .map(|c| run_chunk(&sampler, region, cfg.seed, c, chunk_len(c)))
                .collect()
        };
        for outcome in outcomes {
            let outcome = outcome?;
            let needed = required - draws.len();
            if outcome.accepted.len() >= needed {
                let cutoff = outcome.accepted[needed - 1].0 + 1;
                singular += outcome
                    .singular_offsets
                    .iter()
                    .filter(|&&s| s < cutoff)
                    .count();
                draws.extend(outcome.accepted.into_iter().take(needed).map(|(_, d)| d));
                return Ok(PosteriorDraws {
                    draws,
                    attempted: attempted + cutoff,
                    singular,
                });
            }
            singular += outcome.singular_offsets.len();
            attempted += outcome.attempts;
            draws.extend(outcome.accepted.into_iter().map(|(_, d)| d));
        }
        next = end;
    }

    if draws.is_empty() && singular == attempted {
        return Err(Error::SingularMatrix {
            det: 0.0,
            condition: f64::INFINITY,
        });
    }
    Err(Error::ConstraintStarvation {
        required,
        accepted: draws.len(),
        attempted,
        acceptance_rate: draws.len() as f64 / attempted as f64,
    })
}
