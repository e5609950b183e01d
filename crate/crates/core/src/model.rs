//! Domain types of the classification error model and the small dense
//! linear algebra shared by every other module.
//!
//! Classes are indexed from 0. In the binary case index 0 is the
//! "positive" class, `p = P(predict 1 | true 0)` is the false negative
//! rate and `q = P(predict 0 | true 1)` the false positive rate, so
//!
//! ```text
//! P = | 1-p   p  |
//!     |  q   1-q |
//! ```

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

/// Maximum allowed deviation of a contingency row sum from 1.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;
/// `|det Pᵀ|` below this is treated as singular.
pub const SINGULAR_DET: f64 = 1e-12;
/// 1-norm condition numbers above this are treated as singular.
pub const SINGULAR_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct ClassIndex(pub usize);

impl ClassIndex {
    pub fn new(value: usize, k: usize) -> Result<Self> {
        if value >= k {
            return Err(Error::IndexOutOfRange { index: value, k });
        }
        Ok(ClassIndex(value))
    }

    pub fn get(self) -> usize {
        self.0
    }
}

/// Row-stochastic `K×K` matrix of classification probabilities;
/// entry `(g, h)` is the probability of predicting `h` for true class `g`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContingencyMatrix {
    m: DMatrix<f64>,
}

impl ContingencyMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        validate_contingency(rows)
    }

    pub fn identity(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidK(k));
        }
        Ok(Self {
            m: DMatrix::identity(k, k),
        })
    }

    /// Binary matrix from the false negative rate `p` and false positive rate `q`.
    pub fn binary(p: f64, q: f64) -> Result<Self> {
        validate_contingency(&[vec![1.0 - p, p], vec![q, 1.0 - q]])
    }

    /// Builds a matrix from row-major data whose rows are already on the
    /// simplex (sampler output).
    pub(crate) fn from_simplex_rows(k: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), k * k);
        Self {
            m: DMatrix::from_row_slice(k, k, &data),
        }
    }

    pub fn k(&self) -> usize {
        self.m.nrows()
    }

    pub fn get(&self, g: usize, h: usize) -> f64 {
        self.m[(g, h)]
    }

    pub fn row(&self, g: usize) -> Vec<f64> {
        self.m.row(g).iter().copied().collect()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.k()).map(|g| self.row(g)).collect()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    /// `(p, q)` for a binary matrix, `None` otherwise.
    pub fn binary_rates(&self) -> Option<(f64, f64)> {
        (self.k() == 2).then(|| (self.m[(0, 1)], self.m[(1, 0)]))
    }
}

/// Checks that `rows` form a square row-stochastic matrix with `K ≥ 2`.
pub fn validate_contingency(rows: &[Vec<f64>]) -> Result<ContingencyMatrix> {
    let k = rows.len();
    if k < 2 {
        return Err(Error::InvalidK(k));
    }
    for (g, row) in rows.iter().enumerate() {
        if row.len() != k {
            return Err(Error::NotSquare {
                rows: k,
                row: g,
                len: row.len(),
            });
        }
        for (h, &value) in row.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::NegativeEntry {
                    row: g,
                    col: h,
                    value,
                });
            }
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(Error::RowSumViolation { row: g, sum });
        }
    }
    Ok(ContingencyMatrix {
        m: DMatrix::from_fn(k, k, |g, h| rows[g][h]),
    })
}

/// `Q = (Pᵀ)⁻¹`, the matrix that removes misclassification bias from
/// predicted aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionMatrix {
    q: DMatrix<f64>,
    condition_number: f64,
}

impl CorrectionMatrix {
    pub fn k(&self) -> usize {
        self.q.nrows()
    }

    pub fn get(&self, g: usize, h: usize) -> f64 {
        self.q[(g, h)]
    }

    /// 1-norm condition number of `Pᵀ`.
    pub fn condition_number(&self) -> f64 {
        self.condition_number
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// `Q·x`. Panics if `x.len() != K`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.k(), "vector length must equal K");
        (0..self.k())
            .map(|g| (0..self.k()).map(|h| self.q[(g, h)] * x[h]).sum())
            .collect()
    }
}

fn norm_1(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Inverts `Pᵀ`, rejecting matrices that are singular or too badly
/// conditioned to correct with.
pub fn invert_transpose(p: &ContingencyMatrix) -> Result<CorrectionMatrix> {
    let pt = p.m.transpose();
    let lu = pt.clone().lu();
    let det = lu.determinant();
    if !det.is_finite() || det.abs() < SINGULAR_DET {
        return Err(Error::SingularMatrix {
            det,
            condition: f64::INFINITY,
        });
    }
    let q = lu.try_inverse().ok_or(Error::SingularMatrix {
        det,
        condition: f64::INFINITY,
    })?;
    let condition = norm_1(&pt) * norm_1(&q);
    if !condition.is_finite() || condition > SINGULAR_CONDITION {
        return Err(Error::SingularMatrix { det, condition });
    }
    Ok(CorrectionMatrix {
        q,
        condition_number: condition,
    })
}

/// Per-class counts (`v` or `v̂`) together with the population size `N`.
///
/// Observed counts are non-negative. Corrected counts (`Q·v̂`) reuse the
/// type through [`CountsVector::corrected`], where only finiteness holds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountsVector {
    counts: Vec<f64>,
    n_total: f64,
}

impl CountsVector {
    pub fn new(counts: Vec<f64>) -> Result<Self> {
        if let Some((i, &c)) = counts
            .iter()
            .enumerate()
            .find(|(_, c)| !c.is_finite() || **c < 0.0)
        {
            return Err(Error::InvalidCounts(format!(
                "count {c} at position {i} is negative or not finite"
            )));
        }
        let n_total = counts.iter().sum();
        Ok(Self { counts, n_total })
    }

    pub fn corrected(counts: Vec<f64>) -> Result<Self> {
        if let Some((i, &c)) = counts.iter().enumerate().find(|(_, c)| !c.is_finite()) {
            return Err(Error::InvalidCounts(format!(
                "count {c} at position {i} is not finite"
            )));
        }
        let n_total = counts.iter().sum();
        Ok(Self { counts, n_total })
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn total(&self) -> f64 {
        self.n_total
    }

    /// `counts / N`; all zeros when `N = 0`.
    pub fn base_rates(&self) -> Vec<f64> {
        if self.n_total == 0.0 {
            return vec![0.0; self.k()];
        }
        self.counts.iter().map(|c| c / self.n_total).collect()
    }
}

/// Per-class sums of the target variable (`u` or `û`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateVector {
    sums: Vec<f64>,
}

impl AggregateVector {
    pub fn new(sums: Vec<f64>) -> Result<Self> {
        if let Some((position, &value)) = sums.iter().enumerate().find(|(_, s)| !s.is_finite()) {
            return Err(Error::NonFiniteY { position, value });
        }
        Ok(Self { sums })
    }

    pub fn k(&self) -> usize {
        self.sums.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.sums
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.sums
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.sums.iter().map(|s| s * factor).collect())
    }
}

impl From<&CountsVector> for AggregateVector {
    fn from(v: &CountsVector) -> Self {
        Self {
            sums: v.counts.clone(),
        }
    }
}

/// One labeled test-set observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabeledPair {
    pub true_class: ClassIndex,
    pub predicted_class: ClassIndex,
}

impl LabeledPair {
    pub fn new(true_class: usize, predicted_class: usize) -> Self {
        Self {
            true_class: ClassIndex(true_class),
            predicted_class: ClassIndex(predicted_class),
        }
    }
}

/// One object of the unlabeled population: its predicted class and `y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetRecord {
    pub predicted_class: ClassIndex,
    pub y: f64,
}

impl TargetRecord {
    pub fn new(predicted_class: usize, y: f64) -> Self {
        Self {
            predicted_class: ClassIndex(predicted_class),
            y,
        }
    }
}

/// Test-set confusion counts `n_gh` (true `g`, predicted `h`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    k: usize,
    cells: Vec<u64>,
}

impl ConfusionCounts {
    pub fn zeros(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidK(k));
        }
        Ok(Self {
            k,
            cells: vec![0; k * k],
        })
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        let mut counts = Self::zeros(k)?;
        for (g, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::NotSquare {
                    rows: k,
                    row: g,
                    len: row.len(),
                });
            }
            counts.cells[g * k..(g + 1) * k].copy_from_slice(row);
        }
        Ok(counts)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, g: usize, h: usize) -> u64 {
        self.cells[g * self.k + h]
    }

    pub fn row(&self, g: usize) -> &[u64] {
        &self.cells[g * self.k..(g + 1) * self.k]
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        (0..self.k).map(|g| self.row(g).to_vec()).collect()
    }

    /// `n_g`, the number of observations with true class `g`.
    pub fn row_total(&self, g: usize) -> u64 {
        self.row(g).iter().sum()
    }

    pub fn row_totals(&self) -> Vec<u64> {
        (0..self.k).map(|g| self.row_total(g)).collect()
    }

    /// `n`, the test-set size.
    pub fn total(&self) -> u64 {
        self.cells.iter().sum()
    }

    pub(crate) fn increment(&mut self, g: usize, h: usize) {
        self.cells[g * self.k + h] += 1;
    }

    /// Cell-wise sum of two count tables.
    pub fn merged(&self, other: &ConfusionCounts) -> Result<Self> {
        if other.k != self.k {
            return Err(Error::DimensionMismatch {
                expected: self.k,
                found: other.k,
            });
        }
        Ok(Self {
            k: self.k,
            cells: self
                .cells
                .iter()
                .zip(&other.cells)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }
}

pub fn confusion_from_pairs(pairs: &[LabeledPair], k: usize) -> Result<ConfusionCounts> {
    let mut counts = ConfusionCounts::zeros(k)?;
    for pair in pairs {
        let g = ClassIndex::new(pair.true_class.0, k)?.0;
        let h = ClassIndex::new(pair.predicted_class.0, k)?.0;
        counts.increment(g, h);
    }
    Ok(counts)
}

/// Naive classification-based aggregation: sums `y` (and counts objects)
/// per predicted class.
pub fn aggregate_by_predicted(
    records: &[TargetRecord],
    k: usize,
) -> Result<(AggregateVector, CountsVector)> {
    if k < 2 {
        return Err(Error::InvalidK(k));
    }
    let mut sums = vec![0.0; k];
    let mut counts = vec![0.0; k];
    for (position, record) in records.iter().enumerate() {
        let h = ClassIndex::new(record.predicted_class.0, k)?.0;
        if !record.y.is_finite() {
            return Err(Error::NonFiniteY {
                position,
                value: record.y,
            });
        }
        sums[h] += record.y;
        counts[h] += 1.0;
    }
    Ok((AggregateVector::new(sums)?, CountsVector::new(counts)?))
}

/// `Pᵀu`, the expectation of the naive aggregate when the truth is `u`.
pub fn expected_naive_aggregate(
    p: &ContingencyMatrix,
    u: &AggregateVector,
) -> Result<AggregateVector> {
    if u.k() != p.k() {
        return Err(Error::DimensionMismatch {
            expected: p.k(),
            found: u.k(),
        });
    }
    let out = p.m.transpose() * DVector::from_column_slice(u.as_slice());
    AggregateVector::new(out.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn validates_base_rate_example_matrix() {
        let p = validate_contingency(&[vec![0.99, 0.01], vec![0.005, 0.995]]).unwrap();
        assert_eq!(p.binary_rates(), Some((0.01, 0.005)));
        assert!(validate_contingency(&[vec![1.0, 0.0], vec![0.0, 1.0]]).is_ok());
    }

    #[test]
    fn rejects_bad_row_sums_and_entries() {
        assert!(matches!(
            validate_contingency(&[vec![0.9, 0.2], vec![0.1, 0.9]]),
            Err(Error::RowSumViolation { row: 0, .. })
        ));
        assert!(matches!(
            validate_contingency(&[vec![1.2, -0.2], vec![0.1, 0.9]]),
            Err(Error::NegativeEntry { row: 0, col: 0, .. })
        ));
        assert!(matches!(
            validate_contingency(&[vec![1.0]]),
            Err(Error::InvalidK(1))
        ));
        assert!(matches!(
            validate_contingency(&[vec![1.0, 0.0], vec![1.0]]),
            Err(Error::NotSquare { row: 1, .. })
        ));
    }

    #[test]
    fn inverts_small_test_set_matrix() {
        let p = ContingencyMatrix::binary(0.2, 0.4).unwrap();
        let q = invert_transpose(&p).unwrap();
        let expected = [[1.5, -1.0], [-0.5, 2.0]];
        for g in 0..2 {
            for h in 0..2 {
                assert_close(q.get(g, h), expected[g][h], 1e-12);
            }
        }
        let corrected = q.apply(&[10.0, 90.0]);
        assert_close(corrected[0], -75.0, 1e-9);
        assert_close(corrected[1], 175.0, 1e-9);
    }

    #[test]
    fn identity_inverts_to_identity() {
        let q = invert_transpose(&ContingencyMatrix::identity(4).unwrap()).unwrap();
        assert_eq!(q.as_matrix(), &DMatrix::<f64>::identity(4, 4));
        assert_eq!(q.condition_number(), 1.0);
    }

    #[test]
    fn p_plus_q_one_is_singular() {
        let p = ContingencyMatrix::binary(0.6, 0.4).unwrap();
        assert!(matches!(
            invert_transpose(&p),
            Err(Error::SingularMatrix { .. })
        ));
    }

    #[test]
    fn counts_pairs() {
        // TP=4, FN=2, FP=1, TN=2 with class 0 positive.
        let mut pairs = vec![LabeledPair::new(0, 0); 4];
        pairs.extend(vec![LabeledPair::new(0, 1); 2]);
        pairs.push(LabeledPair::new(1, 0));
        pairs.extend(vec![LabeledPair::new(1, 1); 2]);
        let c = confusion_from_pairs(&pairs, 2).unwrap();
        assert_eq!(c.rows(), vec![vec![4, 2], vec![1, 2]]);
        assert_eq!(c.row_totals(), vec![6, 3]);
        assert_eq!(c.total(), 9);

        let empty = confusion_from_pairs(&[], 2).unwrap();
        assert_eq!(empty.total(), 0);

        let three = confusion_from_pairs(
            &[
                LabeledPair::new(0, 0),
                LabeledPair::new(1, 2),
                LabeledPair::new(2, 2),
            ],
            3,
        )
        .unwrap();
        assert_eq!(
            three.rows(),
            vec![vec![1, 0, 0], vec![0, 0, 1], vec![0, 0, 1]]
        );

        assert!(matches!(
            confusion_from_pairs(&[LabeledPair::new(2, 0)], 2),
            Err(Error::IndexOutOfRange { index: 2, k: 2 })
        ));
    }

    #[test]
    fn aggregates_by_predicted_class() {
        let mut records = vec![TargetRecord::new(0, 1.0); 10];
        records.extend(vec![TargetRecord::new(1, 1.0); 90]);
        let (u, v) = aggregate_by_predicted(&records, 2).unwrap();
        assert_eq!(v.counts(), &[10.0, 90.0]);
        assert_eq!(u.as_slice(), &[10.0, 90.0]);
        assert_eq!(v.total(), 100.0);

        let (u, v) = aggregate_by_predicted(&[], 2).unwrap();
        assert_eq!(u.as_slice(), &[0.0, 0.0]);
        assert_eq!(v.total(), 0.0);

        let (u, _) = aggregate_by_predicted(
            &[
                TargetRecord::new(0, 2.5),
                TargetRecord::new(1, -1.0),
                TargetRecord::new(0, 0.5),
            ],
            2,
        )
        .unwrap();
        assert_eq!(u.as_slice(), &[3.0, -1.0]);

        assert!(matches!(
            aggregate_by_predicted(&[TargetRecord::new(0, f64::NAN)], 2),
            Err(Error::NonFiniteY { position: 0, .. })
        ));
        assert!(matches!(
            aggregate_by_predicted(&[TargetRecord::new(5, 1.0)], 2),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn base_rate_example_expectation() {
        let p = ContingencyMatrix::binary(0.01, 0.005).unwrap();
        let u = AggregateVector::new(vec![10_000.0, 90_000.0]).unwrap();
        let e = expected_naive_aggregate(&p, &u).unwrap();
        assert_eq!(e.as_slice(), &[10_350.0, 89_650.0]);
    }

    #[test]
    fn expectation_fixed_points() {
        let u = AggregateVector::new(vec![3.0, -7.0, 11.0]).unwrap();
        let i = ContingencyMatrix::identity(3).unwrap();
        assert_eq!(expected_naive_aggregate(&i, &u).unwrap(), u);

        // Base rate q/(p+q) is invariant under Pᵀ.
        let (p, q) = (0.3, 0.1);
        let m = ContingencyMatrix::binary(p, q).unwrap();
        let n = 1000.0;
        let u = AggregateVector::new(vec![n * q / (p + q), n * p / (p + q)]).unwrap();
        let e = expected_naive_aggregate(&m, &u).unwrap();
        assert_close(e.as_slice()[0], u.as_slice()[0], 1e-9);
        assert_close(e.as_slice()[1], u.as_slice()[1], 1e-9);

        assert!(matches!(
            expected_naive_aggregate(&m, &AggregateVector::new(vec![1.0; 3]).unwrap()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    fn stochastic_matrix(k: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(0.01f64..1.0, k), k).prop_map(|rows| {
            rows.into_iter()
                .enumerate()
                .map(|(g, mut row)| {
                    // Diagonal dominance keeps the draws well conditioned.
                    row[g] += row.len() as f64;
                    let s: f64 = row.iter().sum();
                    row.iter().map(|x| x / s).collect()
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn validated_rows_are_stochastic(rows in (2usize..6).prop_flat_map(stochastic_matrix)) {
            let p = validate_contingency(&rows).unwrap();
            for g in 0..p.k() {
                prop_assert!((p.row(g).iter().sum::<f64>() - 1.0).abs() <= ROW_SUM_TOLERANCE);
            }
        }

        #[test]
        fn inverse_round_trip(rows in (2usize..7).prop_flat_map(stochastic_matrix)) {
            let p = validate_contingency(&rows).unwrap();
            let q = invert_transpose(&p).unwrap();
            let prod = q.as_matrix() * p.as_matrix().transpose();
            let k = p.k();
            let err = (prod - DMatrix::<f64>::identity(k, k)).abs().max();
            prop_assert!(err <= 1e-8, "max error {}", err);
        }

        #[test]
        fn unit_y_reproduces_histogram(classes in prop::collection::vec(0usize..4, 0..200)) {
            let records: Vec<_> = classes.iter().map(|&c| TargetRecord::new(c, 1.0)).collect();
            let (u, v) = aggregate_by_predicted(&records, 4).unwrap();
            let mut hist = [0.0; 4];
            for &c in &classes {
                hist[c] += 1.0;
            }
            prop_assert_eq!(v.counts(), &hist[..]);
            prop_assert_eq!(u.as_slice(), &hist[..]);
            prop_assert_eq!(v.total(), classes.len() as f64);
        }

        #[test]
        fn relative_bias_is_scale_free(
            rows in stochastic_matrix(3),
            beta in prop::collection::vec(0.05f64..1.0, 3),
            n in 1usize..100_000,
        ) {
            let p = validate_contingency(&rows).unwrap();
            let s: f64 = beta.iter().sum();
            let relative_bias = |n: f64| {
                let u = AggregateVector::new(beta.iter().map(|b| b / s * n).collect()).unwrap();
                let e = expected_naive_aggregate(&p, &u).unwrap();
                e.as_slice().iter().zip(u.as_slice()).map(|(a, b)| (a - b) / n).collect::<Vec<_>>()
            };
            let small = relative_bias(n as f64);
            let large = relative_bias(10.0 * n as f64);
            for (a, b) in small.iter().zip(&large) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}
