//! The admissible parameter region: contingency matrices whose correction
//! maps the observed predicted counts `v̂` to non-negative counts.
//!
//! Geometrically, `Q·v̂ ≥ 0` says that the predicted base rates `v̂/N` are
//! a convex combination of the rows of `P`. Both characterizations are
//! available here and are computed along independent routes: [`contains`]
//! inverts `Pᵀ`, [`convex_hull_membership`] solves a non-negative least
//! squares problem and never forms an inverse.
//!
//! [`contains`]: ConstraintRegion::contains
//! [`convex_hull_membership`]: ConstraintRegion::convex_hull_membership

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{invert_transpose, ContingencyMatrix, CountsVector};

/// Default slack on non-negativity, relative to `N`.
pub const DEFAULT_TOLERANCE: f64 = 1e-12;
/// Maximum residual for a point to count as inside the hull of the rows.
pub const HULL_TOLERANCE: f64 = 1e-9;

/// Outcome of testing one contingency matrix against the region.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Membership {
    Inside,
    Outside,
    /// `Pᵀ` is singular, so no correction exists.
    Singular,
}

/// The region `{P : Q(P)·v̂ ≥ -tolerance·N}` for fixed predicted counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintRegion {
    v_hat: CountsVector,
    tolerance: f64,
}

impl ConstraintRegion {
    pub fn new(v_hat: CountsVector) -> Result<Self> {
        if v_hat.k() < 2 {
            return Err(Error::InvalidK(v_hat.k()));
        }
        if v_hat.counts().iter().any(|&c| c < 0.0) {
            return Err(Error::InvalidCounts(
                "predicted counts must be non-negative".into(),
            ));
        }
        if v_hat.total() <= 0.0 {
            return Err(Error::InvalidCounts(
                "predicted counts must have a positive total".into(),
            ));
        }
        Ok(Self {
            v_hat,
            tolerance: DEFAULT_TOLERANCE,
        })
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn k(&self) -> usize {
        self.v_hat.k()
    }

    pub fn v_hat(&self) -> &CountsVector {
        &self.v_hat
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    fn check_k(&self, p: &ContingencyMatrix) -> Result<()> {
        if p.k() != self.k() {
            return Err(Error::DimensionMismatch {
                expected: self.k(),
                found: p.k(),
            });
        }
        Ok(())
    }

    pub fn classify(&self, p: &ContingencyMatrix) -> Result<Membership> {
        self.check_k(p)?;
        let q = match invert_transpose(p) {
            Ok(q) => q,
            Err(Error::SingularMatrix { .. }) => return Ok(Membership::Singular),
            Err(e) => return Err(e),
        };
        let floor = -self.tolerance * self.v_hat.total();
        let inside = q.apply(self.v_hat.counts()).iter().all(|&c| c >= floor);
        Ok(if inside {
            Membership::Inside
        } else {
            Membership::Outside
        })
    }

    /// True iff `Pᵀ` is invertible and every corrected count is
    /// non-negative (up to the tolerance). Singular matrices are outside.
    pub fn contains(&self, p: &ContingencyMatrix) -> Result<bool> {
        Ok(self.classify(p)? == Membership::Inside)
    }

    /// Binary closed form in terms of `p = P[0][1]`, `q = P[1][0]` and the
    /// predicted base rates `β̂ = v̂/N`:
    /// `(p ≤ β̂₁ ∧ q ≤ β̂₀) ∨ (p ≥ β̂₁ ∧ q ≥ β̂₀)`.
    pub fn contains_binary_closed_form(&self, p: f64, q: f64) -> Result<bool> {
        if self.k() != 2 {
            return Err(Error::NotBinary(self.k()));
        }
        for (col, value) in [(1, p), (0, q)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::NegativeEntry {
                    row: 1 - col,
                    col,
                    value,
                });
            }
        }
        let beta = self.v_hat.base_rates();
        Ok((p <= beta[1] && q <= beta[0]) || (p >= beta[1] && q >= beta[0]))
    }

    /// True iff `v̂/N` is a convex combination of the rows of `P`.
    pub fn convex_hull_membership(&self, p: &ContingencyMatrix) -> Result<bool> {
        self.check_k(p)?;
        let k = self.k();
        // [Pᵀ; 1ᵀ] λ = [β̂; 1], λ ≥ 0
        let a = DMatrix::from_fn(k + 1, k, |i, j| if i < k { p.get(j, i) } else { 1.0 });
        let beta = self.v_hat.base_rates();
        let b = DVector::from_fn(k + 1, |i, _| if i < k { beta[i] } else { 1.0 });
        let lambda = nnls(&a, &b);
        let residual = (&a * &lambda - &b).amax();
        Ok(residual <= HULL_TOLERANCE)
    }
}

/// Lawson-Hanson active-set solver for `min ‖Ax - b‖₂` subject to `x ≥ 0`.
pub(crate) fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    const TOL: f64 = 1e-13;
    let n = a.ncols();
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];

    for _ in 0..3 * n + 3 {
        let w = a.transpose() * (b - a * &x);
        let candidate = (0..n)
            .filter(|&j| !passive[j] && w[j] > TOL)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = candidate else { break };
        passive[j] = true;

        for _ in 0..3 * n + 3 {
            let idx: Vec<usize> = (0..n).filter(|&i| passive[i]).collect();
            let z_p = least_squares(&a.select_columns(&idx), b);
            if z_p.iter().all(|&z| z > 0.0) {
                x.fill(0.0);
                for (&i, &z) in idx.iter().zip(z_p.iter()) {
                    x[i] = z;
                }
                break;
            }
            let mut step = f64::INFINITY;
            for (&i, &z) in idx.iter().zip(z_p.iter()) {
                if z <= 0.0 {
                    step = step.min(x[i] / (x[i] - z));
                }
            }
            for (&i, &z) in idx.iter().zip(z_p.iter()) {
                x[i] += step * (z - x[i]);
                if x[i] <= TOL {
                    x[i] = 0.0;
                    passive[i] = false;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    x
}

fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    a.clone()
        .svd(true, true)
        .solve(b, 1e-14)
        .expect("SVD computed with both U and V")
}
