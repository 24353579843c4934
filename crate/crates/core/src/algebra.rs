//! Numerical kernel: the three coordinate systems of the output space
//! (probabilities, logits, centered log-ratios), the additive log-ratio
//! chart, singular spectra and the small dense solves used by the image
//! operations.
//!
//! Everything here is a pure function over immutable values.

use std::sync::atomic::{AtomicU64, Ordering};

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on the sum of a probability vector.
pub const PROB_SUM_TOLERANCE: f64 = 1e-9;
/// Absolute tolerance on the sum of a clr vector.
pub const CLR_SUM_TOLERANCE: f64 = 1e-6;
/// Floor applied to API-derived probabilities before any log transform.
pub const PROB_FLOOR: f64 = 1e-300;
/// Default relative singular-value cutoff for numerical rank.
pub const DEFAULT_RANK_TOLERANCE: f64 = 1e-6;
/// Relative cutoff used by [`lstsq_residual`] to drop null directions.
pub const LSTSQ_RCOND: f64 = 1e-10;
/// Condition estimate above which a square image system is rejected.
pub const MAX_CONDITION: f64 = 1e12;

static CLAMP_WARNINGS: AtomicU64 = AtomicU64::new(0);

/// Number of probability entries raised to [`PROB_FLOOR`] since process start.
pub fn clamp_warnings() -> u64 {
    CLAMP_WARNINGS.load(Ordering::Relaxed)
}

/// A point of the open probability simplex.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Domain(format!(
                "probability vector needs at least 2 entries, got {}",
                values.len()
            )));
        }
        if let Some((i, p)) = values
            .iter()
            .enumerate()
            .find(|(_, p)| !(p.is_finite() && **p > 0.0 && **p <= 1.0))
        {
            return Err(Error::Domain(format!("entry {i} = {p} is not in (0, 1]")));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(Error::Domain(format!("entries sum to {sum}, not 1")));
        }
        Ok(Self(values))
    }

    /// Builds a vector from reconstructed probabilities: entries below
    /// [`PROB_FLOOR`] are raised to it, and the result is renormalized
    /// provided the raw sum is within `sum_tolerance` of one.
    pub fn from_reconstructed(mut values: Vec<f64>, sum_tolerance: f64) -> Result<Self> {
        let mut clamped = 0u64;
        for p in values.iter_mut() {
            if !p.is_finite() || *p < 0.0 {
                return Err(Error::NumericalInstability(format!(
                    "reconstructed probability {p} is not a finite non-negative number"
                )));
            }
            if *p < PROB_FLOOR {
                *p = PROB_FLOOR;
                clamped += 1;
            }
        }
        if clamped > 0 {
            CLAMP_WARNINGS.fetch_add(clamped, Ordering::Relaxed);
            tracing::warn!(clamped, "probabilities clamped to floor");
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > sum_tolerance {
            return Err(Error::NumericalInstability(format!(
                "reconstructed probabilities sum to {sum}"
            )));
        }
        values.iter_mut().for_each(|p| *p /= sum);
        Self::new(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

impl TryFrom<Vec<f64>> for ProbVector {
    type Error = Error;
    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<ProbVector> for Vec<f64> {
    fn from(p: ProbVector) -> Self {
        p.0
    }
}

/// Unnormalized log-odds scores.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Domain(format!(
                "logit vector needs at least 2 entries, got {}",
                values.len()
            )));
        }
        if values.iter().any(|l| !l.is_finite()) {
            return Err(Error::Domain("logits must be finite".into()));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// A point of the zero-sum hyperplane, isomorphic to the open simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct ClrVector(Vec<f64>);

impl ClrVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("clr entries must be finite".into()));
        }
        let sum: f64 = values.iter().sum();
        if sum.abs() > CLR_SUM_TOLERANCE {
            return Err(Error::Domain(format!("clr entries sum to {sum}, not 0")));
        }
        Ok(Self(values))
    }

    /// Projects arbitrary finite scores onto the zero-sum hyperplane.
    pub fn centered(mut values: Vec<f64>) -> Result<Self> {
        let mean = values.iter().sum::<f64>() / values.len().max(1) as f64;
        values.iter_mut().for_each(|x| *x -= mean);
        Self::new(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Singular values of a matrix, sorted descending.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingularSpectrum {
    pub values: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
}

impl SingularSpectrum {
    /// Count of singular values strictly above `relative_tol * sigma_1`.
    pub fn rank(&self, relative_tol: f64) -> usize {
        match self.values.first() {
            Some(&top) if top > 0.0 => self
                .values
                .iter()
                .take_while(|&&s| s / top > relative_tol)
                .count(),
            _ => 0,
        }
    }

    /// Number of singular values preceding the largest consecutive drop in
    /// log magnitude. Values below `sigma_1 * max(rows, cols) * eps` are
    /// numerically zero and clamped to that level, so drops inside the
    /// rounding-noise tail cannot win.
    pub fn largest_log_gap_index(&self) -> usize {
        let top = match self.values.first() {
            Some(&t) if t > 0.0 && self.values.len() >= 2 => t,
            Some(&t) if t > 0.0 => return 1,
            _ => return 0,
        };
        let floor = top * self.rows.max(self.cols) as f64 * f64::EPSILON;
        let logs: Vec<f64> = self.values.iter().map(|s| s.max(floor).ln()).collect();
        let mut best = (self.values.len(), 0.0);
        for (i, w) in logs.windows(2).enumerate() {
            let gap = w[0] - w[1];
            if gap > best.1 {
                best = (i + 1, gap);
            }
        }
        best.0
    }

    /// `sigma_{i+1} / sigma_i` for a 1-based index `i`.
    pub fn drop_ratio_after(&self, i: usize) -> Option<f64> {
        if i == 0 || i >= self.values.len() {
            return None;
        }
        Some(self.values[i] / self.values[i - 1])
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// `log(sum(exp(x)))` with max-subtraction.
pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = logsumexp(logits);
    logits.iter().map(|l| l - lse).collect()
}

pub fn softmax(logits: &LogitVector) -> ProbVector {
    softmax_slice(logits.as_slice())
}

pub(crate) fn softmax_slice(logits: &[f64]) -> ProbVector {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in out.iter_mut() {
        // Underflow only; keeps every entry strictly positive.
        *p = (*p / sum).max(f64::MIN_POSITIVE);
    }
    ProbVector(out)
}

/// Centered log-ratio transform.
pub fn clr(p: &ProbVector) -> Result<ClrVector> {
    let logs = positive_logs(p.as_slice())?;
    let mean = logs.iter().sum::<f64>() / logs.len() as f64;
    Ok(ClrVector(logs.into_iter().map(|l| l - mean).collect()))
}

/// Additive log-ratio transform against the first component.
pub fn alr(p: &ProbVector) -> Result<Vec<f64>> {
    let logs = positive_logs(p.as_slice())?;
    let base = logs[0];
    Ok(logs[1..].iter().map(|l| l - base).collect())
}

/// Inverse of [`alr`]: normalizes `(1, exp x_1, ..., exp x_{v-1})` in log space.
pub fn alr_inverse(x: &[f64]) -> Result<ProbVector> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("alr coordinates must be finite".into()));
    }
    let mut logits = Vec::with_capacity(x.len() + 1);
    logits.push(0.0);
    logits.extend_from_slice(x);
    LogitVector::new(logits).map(|l| softmax(&l))
}

fn positive_logs(p: &[f64]) -> Result<Vec<f64>> {
    p.iter()
        .enumerate()
        .map(|(i, &v)| {
            if v > 0.0 && v.is_finite() {
                Ok(v.ln())
            } else {
                Err(Error::Domain(format!("entry {i} = {v} is not strictly positive")))
            }
        })
        .collect()
}

pub fn singular_spectrum(m: MatRef<'_, f64>) -> Result<SingularSpectrum> {
    let (rows, cols) = (m.nrows(), m.ncols());
    if rows == 0 || cols == 0 {
        return Err(Error::DegenerateInput("empty matrix".into()));
    }
    for j in 0..cols {
        for i in 0..rows {
            if !m[(i, j)].is_finite() {
                return Err(Error::Domain(format!("non-finite entry at ({i}, {j})")));
            }
        }
    }
    let mut values = m
        .singular_values()
        .map_err(|e| Error::NumericalInstability(format!("SVD failed: {e:?}")))?;
    values.sort_by(|a, b| b.total_cmp(a));
    Ok(SingularSpectrum { values, rows, cols })
}

/// Numerical rank: the number of singular values with `sigma_i / sigma_1 >
/// relative_tol`. An all-zero matrix has rank 0.
pub fn numerical_rank(m: MatRef<'_, f64>, relative_tol: f64) -> Result<(usize, SingularSpectrum)> {
    if !(relative_tol > 0.0 && relative_tol < 1.0) {
        return Err(Error::Domain(format!(
            "relative tolerance {relative_tol} must lie in (0, 1)"
        )));
    }
    let spectrum = singular_spectrum(m)?;
    Ok((spectrum.rank(relative_tol), spectrum))
}

/// Orthonormal basis of the numerical column span (left singular vectors
/// with `sigma_i / sigma_1 > rcond`).
pub fn column_basis(l: MatRef<'_, f64>, rcond: f64) -> Result<Mat<f64>> {
    column_basis_with_rank(l, rcond, None)
}

/// As [`column_basis`], optionally forcing the number of retained directions.
pub fn column_basis_with_rank(
    l: MatRef<'_, f64>,
    rcond: f64,
    rank: Option<usize>,
) -> Result<Mat<f64>> {
    if l.nrows() == 0 || l.ncols() == 0 {
        return Err(Error::DegenerateInput("empty matrix".into()));
    }
    let svd = l
        .thin_svd()
        .map_err(|e| Error::NumericalInstability(format!("SVD failed: {e:?}")))?;
    let s = svd.S().column_vector();
    let mut order: Vec<usize> = (0..s.nrows()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let top = order.first().map(|&i| s[i]).unwrap_or(0.0);
    let keep = match rank {
        Some(r) => r.min(order.len()),
        None if top > 0.0 => order.iter().take_while(|&&i| s[i] / top > rcond).count(),
        None => 0,
    };
    let u = svd.U();
    Ok(Mat::from_fn(l.nrows(), keep, |i, j| u[(i, order[j])]))
}

/// `min_x ||L x - l||_2`, with singular directions below [`LSTSQ_RCOND`]
/// (relative) treated as null.
pub fn lstsq_residual(l_mat: MatRef<'_, f64>, target: &ClrVector) -> Result<f64> {
    lstsq_residual_tol(l_mat, target, LSTSQ_RCOND)
}

pub fn lstsq_residual_tol(l_mat: MatRef<'_, f64>, target: &ClrVector, rcond: f64) -> Result<f64> {
    if l_mat.nrows() != target.len() {
        return Err(Error::ShapeMismatch(format!(
            "matrix has {} rows, vector has {} entries",
            l_mat.nrows(),
            target.len()
        )));
    }
    let basis = column_basis(l_mat, rcond)?;
    Ok(residual_against_basis(basis.as_ref(), target.as_slice()))
}

/// Residual of `y` after projection onto the columns of an orthonormal basis.
pub fn residual_against_basis(basis: MatRef<'_, f64>, y: &[f64]) -> f64 {
    let mut r = y.to_vec();
    // Two passes of classical Gram-Schmidt keep the projection accurate to
    // working precision.
    for _ in 0..2 {
        for j in 0..basis.ncols() {
            let col = basis.col(j);
            let dot: f64 = (0..r.len()).map(|i| col[i] * r[i]).sum();
            for (i, ri) in r.iter_mut().enumerate() {
                *ri -= dot * col[i];
            }
        }
    }
    r.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Condition number estimate `sigma_max / sigma_min` of a square matrix.
pub fn condition_estimate(m: MatRef<'_, f64>) -> Result<f64> {
    let spectrum = singular_spectrum(m)?;
    let max = spectrum.values[0];
    let min = *spectrum.values.last().unwrap_or(&0.0);
    Ok(if min > 0.0 { max / min } else { f64::INFINITY })
}

/// Solves the square alr system for image coordinates.
///
/// Fails with [`Error::SingularSystem`] when the condition estimate exceeds
/// [`MAX_CONDITION`]; the caller is expected to pick a different row set.
pub fn solve_image_coordinates(head: MatRef<'_, f64>, rhs: &[f64]) -> Result<Vec<f64>> {
    let d = head.nrows();
    if head.ncols() != d || rhs.len() != d {
        return Err(Error::ShapeMismatch(format!(
            "expected a square system, got {}x{} with {} right-hand values",
            d,
            head.ncols(),
            rhs.len()
        )));
    }
    if d == 0 {
        return Err(Error::DegenerateInput("empty system".into()));
    }
    let condition = condition_estimate(head)?;
    if !(condition <= MAX_CONDITION) {
        return Err(Error::SingularSystem {
            condition,
            limit: MAX_CONDITION,
        });
    }
    let lu = head.partial_piv_lu();
    let b = Mat::from_fn(d, 1, |i, _| rhs[i]);
    let x = faer::linalg::solvers::Solve::solve(&lu, &b);
    let x: Vec<f64> = (0..d).map(|i| x[(i, 0)]).collect();
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem {
            condition: f64::INFINITY,
            limit: MAX_CONDITION,
        });
    }
    Ok(x)
}

/// Selects `count` rows of `a` (v x d) that are as independent as possible,
/// via column-pivoted QR of the transpose. Rows in `exclude` are never chosen.
pub fn select_pivot_rows(a: MatRef<'_, f64>, count: usize, exclude: &[usize]) -> Result<Vec<usize>> {
    let candidates: Vec<usize> = (0..a.nrows()).filter(|i| !exclude.contains(i)).collect();
    if count > candidates.len() || count > a.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "cannot select {count} pivot rows from a {}x{} matrix",
            a.nrows(),
            a.ncols()
        )));
    }
    let at = Mat::from_fn(a.ncols(), candidates.len(), |i, j| a[(candidates[j], i)]);
    let qr = at.as_ref().col_piv_qr();
    let (forward, _) = qr.P().arrays();
    Ok(forward[..count].iter().map(|&j| candidates[j]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&LogitVector::new(vec![0.0; 3]).unwrap());
        assert!(close(p.as_slice(), &[1.0 / 3.0; 3], 1e-15));

        let l = LogitVector::new(vec![1f64.ln(), 2f64.ln(), 3f64.ln()]).unwrap();
        assert!(close(softmax(&l).as_slice(), &[1.0 / 6.0, 1.0 / 3.0, 0.5], 1e-15));

        for c in [-1e3, -7.5, 0.0, 42.0, 1e4] {
            let p = softmax(&LogitVector::new(vec![c; 3]).unwrap());
            assert!(close(p.as_slice(), &[1.0 / 3.0; 3], 1e-15));
        }
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let p = softmax(&LogitVector::new(vec![1000.0, 999.0, -1000.0]).unwrap());
        assert_eq!(p.argmax(), 0);
        assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn clr_examples() {
        let u = ProbVector::new(vec![1.0 / 3.0; 3]).unwrap();
        assert!(close(clr(&u).unwrap().as_slice(), &[0.0; 3], 1e-15));

        let p = ProbVector::new(vec![1.0 / 6.0, 1.0 / 3.0, 0.5]).unwrap();
        let mu = (1f64.ln() + 2f64.ln() + 3f64.ln()) / 3.0;
        let want = [1f64.ln() - mu, 2f64.ln() - mu, 3f64.ln() - mu];
        assert!(close(clr(&p).unwrap().as_slice(), &want, 1e-15));

        let l = LogitVector::new(vec![5.0, 7.0, 9.0]).unwrap();
        assert!(close(clr(&softmax(&l)).unwrap().as_slice(), &[-2.0, 0.0, 2.0], 1e-12));
    }

    #[test]
    fn alr_examples() {
        let u = ProbVector::new(vec![1.0 / 3.0; 3]).unwrap();
        assert!(close(&alr(&u).unwrap(), &[0.0, 0.0], 1e-15));
        let p = ProbVector::new(vec![1.0 / 6.0, 1.0 / 3.0, 0.5]).unwrap();
        assert!(close(&alr(&p).unwrap(), &[2f64.ln(), 3f64.ln()], 1e-15));

        assert!(close(alr_inverse(&[0.0, 0.0]).unwrap().as_slice(), &[1.0 / 3.0; 3], 1e-15));
        let q = alr_inverse(&[2f64.ln(), 3f64.ln()]).unwrap();
        assert!(close(q.as_slice(), &[1.0 / 6.0, 1.0 / 3.0, 0.5], 1e-15));
    }

    #[test]
    fn alr_inverse_large_inputs() {
        // Frozen from a 50-digit evaluation of (1, e^700, 1) / (2 + e^700).
        let tail = 9.859_676_543_759_770_9e-305;
        let p = alr_inverse(&[700.0, 0.0]).unwrap();
        let got = p.as_slice();
        assert!(((got[0] - tail) / tail).abs() < 1e-12);
        assert!((got[1] - 1.0).abs() < 1e-15);
        assert!(((got[2] - tail) / tail).abs() < 1e-12);
    }

    #[test]
    fn transforms_reject_non_positive() {
        assert!(ProbVector::new(vec![0.0, 1.0]).is_err());
        assert!(ProbVector::new(vec![0.5]).is_err());
        assert!(ProbVector::new(vec![0.5, 0.6]).is_err());
        assert!(matches!(positive_logs(&[0.5, 0.0]), Err(Error::Domain(_))));
        assert!(alr_inverse(&[f64::NAN]).is_err());
    }

    #[test]
    fn reconstruction_clamps_tiny_entries() {
        let before = clamp_warnings();
        let p = ProbVector::from_reconstructed(vec![1.0, 0.0], 1e-9).unwrap();
        assert_eq!(p.as_slice()[1], PROB_FLOOR);
        assert!(clamp_warnings() > before);
        assert!(ProbVector::from_reconstructed(vec![0.7, 0.7], 1e-6).is_err());
    }

    #[test]
    fn rank_of_identity_and_zero() {
        let eye = Mat::<f64>::identity(3, 3);
        assert_eq!(numerical_rank(eye.as_ref(), 1e-6).unwrap().0, 3);
        let zero = Mat::<f64>::zeros(4, 3);
        let (r, s) = numerical_rank(zero.as_ref(), 1e-6).unwrap();
        assert_eq!(r, 0);
        assert_eq!(s.values.len(), 3);
        assert!(numerical_rank(eye.as_ref(), 0.0).is_err());
        assert!(numerical_rank(Mat::<f64>::zeros(0, 3).as_ref(), 1e-6).is_err());
    }

    #[test]
    fn log_gap_detector() {
        let s = SingularSpectrum {
            values: vec![10.0, 9.0, 8.0, 1e-12, 1e-13],
            rows: 5,
            cols: 5,
        };
        assert_eq!(s.largest_log_gap_index(), 3);
        assert_eq!(s.rank(1e-6), 3);
        assert!((s.drop_ratio_after(3).unwrap() - 1.25e-13).abs() < 1e-20);
    }

    #[test]
    fn residual_examples() {
        let l = Mat::from_fn(4, 2, |i, j| [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]][i][j]);
        let col = ClrVector::new(vec![1.0, 0.0, -1.0, 0.0]).unwrap();
        assert!(lstsq_residual(l.as_ref(), &col).unwrap() <= 1e-9);

        let ortho = ClrVector::new(vec![0.5, -0.5, 0.5, -0.5]).unwrap();
        assert!((lstsq_residual(l.as_ref(), &ortho).unwrap() - 1.0).abs() < 1e-12);

        let short = ClrVector::new(vec![1.0, -1.0]).unwrap();
        assert!(matches!(lstsq_residual(l.as_ref(), &short), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn image_coordinate_examples() {
        let p = Mat::from_fn(1, 1, |_, _| 2.0);
        assert!(close(&solve_image_coordinates(p.as_ref(), &[6.0]).unwrap(), &[3.0], 1e-15));

        let p = Mat::from_fn(2, 2, |i, j| [[1.0, 0.0], [1.0, 1.0]][i][j]);
        assert!(close(&solve_image_coordinates(p.as_ref(), &[2.0, 5.0]).unwrap(), &[2.0, 3.0], 1e-14));

        let singular = Mat::from_fn(2, 2, |i, j| [[1.0, 2.0], [2.0, 4.0]][i][j]);
        assert!(matches!(
            solve_image_coordinates(singular.as_ref(), &[1.0, 2.0]),
            Err(Error::SingularSystem { .. })
        ));
    }

    #[test]
    fn pivot_rows_avoid_dependent_and_excluded_rows() {
        // Rows 0 and 1 are identical, row 2 is zero.
        let a = Mat::from_fn(4, 2, |i, j| [[1.0, 1.0], [1.0, 1.0], [0.0, 0.0], [1.0, -1.0]][i][j]);
        let rows = select_pivot_rows(a.as_ref(), 2, &[]).unwrap();
        assert!(rows.contains(&3));
        assert!(!rows.contains(&2));
        let rows = select_pivot_rows(a.as_ref(), 2, &[3]).unwrap();
        assert!(!rows.contains(&3));
    }
}
