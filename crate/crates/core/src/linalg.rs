//! Minimal dense linear algebra for small constraint systems.
//!
//! Matrices are row-major `f64`. The module offers exactly what the tracking
//! dynamics need: matrix-vector products, Gram products `J Jᵀ w` computed as
//! two matrix-vector products, a Cholesky solve for symmetric positive
//! definite systems, and the tangent-space projection
//! `P v = v − Jᵀ (J Jᵀ)⁻¹ J v`.
//!
//! Every operation ticks the thread-local [`OpCounter`], which is how the
//! per-iteration cost claims are measured: the inversion-free paths must show
//! zero SPD solves.

use std::cell::Cell;

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    /// Builds a matrix from row-major data. All entries must be finite.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                context: "DenseMatrix::new",
                expected: rows * cols,
                got: data.len(),
            });
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Configuration(format!(
                "non-finite matrix entry at index {bad}"
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds from nested rows; panics on ragged input (test/construction
    /// convenience).
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self { rows: r, cols: c, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Explicit Gram matrix `J Jᵀ` (p×p). Only used on solve-based paths;
    /// the inversion-free dynamics go through [`gram_apply`] instead.
    pub fn gram(&self) -> DenseMatrix {
        let p = self.rows;
        let mut g = DenseMatrix::zeros(p, p);
        for i in 0..p {
            for j in 0..=i {
                let dot: f64 = self
                    .row(i)
                    .iter()
                    .zip(self.row(j))
                    .map(|(a, b)| a * b)
                    .sum();
                g.set(i, j, dot);
                g.set(j, i, dot);
            }
        }
        g
    }
}

/// Snapshot of operation counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OpCounts {
    pub matvecs: u64,
    pub grams: u64,
    pub solves: u64,
}

impl OpCounts {
    /// Counts accumulated since `earlier`.
    pub fn since(&self, earlier: &OpCounts) -> OpCounts {
        OpCounts {
            matvecs: self.matvecs - earlier.matvecs,
            grams: self.grams - earlier.grams,
            solves: self.solves - earlier.solves,
        }
    }
}

thread_local! {
    static MATVECS: Cell<u64> = const { Cell::new(0) };
    static GRAMS: Cell<u64> = const { Cell::new(0) };
    static SOLVES: Cell<u64> = const { Cell::new(0) };
}

/// Running counts of matrix-vector products, Gram applications and SPD
/// solves. Counts are thread-local: a single-threaded run (the CLI, one
/// tracking run) sees exact counts, and concurrent sweeps cannot corrupt
/// each other.
pub struct OpCounter;

impl OpCounter {
    pub fn reset() {
        MATVECS.with(|c| c.set(0));
        GRAMS.with(|c| c.set(0));
        SOLVES.with(|c| c.set(0));
    }

    pub fn snapshot() -> OpCounts {
        OpCounts {
            matvecs: MATVECS.with(Cell::get),
            grams: GRAMS.with(Cell::get),
            solves: SOLVES.with(Cell::get),
        }
    }

    fn tick_matvec() {
        MATVECS.with(|c| c.set(c.get() + 1));
    }

    fn tick_gram() {
        GRAMS.with(|c| c.set(c.get() + 1));
    }

    fn tick_solve() {
        SOLVES.with(|c| c.set(c.get() + 1));
    }
}

/// Dense product `A w` for `A` p×n, `w` length n.
pub fn matvec(a: &DenseMatrix, w: &[f64]) -> Result<Vec<f64>> {
    if w.len() != a.cols {
        return Err(Error::Dimension {
            context: "matvec",
            expected: a.cols,
            got: w.len(),
        });
    }
    OpCounter::tick_matvec();
    let mut out = vec![0.0; a.rows];
    for (i, oi) in out.iter_mut().enumerate() {
        *oi = a.row(i).iter().zip(w).map(|(x, y)| x * y).sum();
    }
    Ok(out)
}

/// Transposed product `Aᵀ w` for `A` p×n, `w` length p. Counted as a
/// matrix-vector product.
pub fn matvec_transpose(a: &DenseMatrix, w: &[f64]) -> Result<Vec<f64>> {
    if w.len() != a.rows {
        return Err(Error::Dimension {
            context: "matvec_transpose",
            expected: a.rows,
            got: w.len(),
        });
    }
    OpCounter::tick_matvec();
    let mut out = vec![0.0; a.cols];
    for i in 0..a.rows {
        let wi = w[i];
        for (j, oj) in out.iter_mut().enumerate() {
            *oj += a.get(i, j) * wi;
        }
    }
    Ok(out)
}

/// Gram product `J Jᵀ w` computed as `J (Jᵀ w)` — two matrix-vector
/// products, cost O(p·n), `J Jᵀ` never formed.
pub fn gram_apply(j: &DenseMatrix, w: &[f64]) -> Result<Vec<f64>> {
    if w.len() != j.rows() {
        return Err(Error::Dimension {
            context: "gram_apply",
            expected: j.rows(),
            got: w.len(),
        });
    }
    let jt_w = matvec_transpose(j, w)?;
    let out = matvec(j, &jt_w)?;
    OpCounter::tick_gram();
    Ok(out)
}

const SYMMETRY_TOL: f64 = 1e-12;

/// Solves `A x = b` for symmetric positive definite `A` by Cholesky
/// factorization without pivoting. A non-positive pivot is the signal that
/// the constraint Jacobian has lost full row rank.
pub fn solve_spd(a: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let p = a.rows();
    if a.cols() != p {
        return Err(Error::Dimension {
            context: "solve_spd (square)",
            expected: p,
            got: a.cols(),
        });
    }
    if b.len() != p {
        return Err(Error::Dimension {
            context: "solve_spd (rhs)",
            expected: p,
            got: b.len(),
        });
    }
    let scale = a.data().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    for i in 0..p {
        for j in 0..i {
            if (a.get(i, j) - a.get(j, i)).abs() > SYMMETRY_TOL * scale {
                return Err(Error::Configuration(format!(
                    "solve_spd: matrix not symmetric at ({i},{j})"
                )));
            }
        }
    }
    OpCounter::tick_solve();

    // Lower-triangular factor, stored dense.
    let mut l = vec![0.0; p * p];
    for i in 0..p {
        for j in 0..=i {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l[i * p + k] * l[j * p + k];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(Error::Singular {
                        context: "solve_spd".to_string(),
                        row: i,
                        pivot: s,
                    });
                }
                l[i * p + i] = s.sqrt();
            } else {
                l[i * p + j] = s / l[j * p + j];
            }
        }
    }

    // Forward then backward substitution.
    let mut y = vec![0.0; p];
    for i in 0..p {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * p + k] * y[k];
        }
        y[i] = s / l[i * p + i];
    }
    let mut x = vec![0.0; p];
    for i in (0..p).rev() {
        let mut s = y[i];
        for k in i + 1..p {
            s -= l[k * p + i] * x[k];
        }
        x[i] = s / l[i * p + i];
    }
    Ok(x)
}

/// Orthogonal projection of `v` onto `ker J`:
/// `P v = v − Jᵀ (J Jᵀ)⁻¹ J v`.
///
/// Requires `J` of full row rank; a rank-deficient `J` surfaces as the
/// Cholesky singularity error from [`solve_spd`].
pub fn project_tangent(j: &DenseMatrix, v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != j.cols() {
        return Err(Error::Dimension {
            context: "project_tangent",
            expected: j.cols(),
            got: v.len(),
        });
    }
    if j.rows() == 0 {
        return Ok(v.to_vec());
    }
    let jv = matvec(j, v)?;
    let w = solve_spd(&j.gram(), &jv)?;
    let correction = matvec_transpose(j, &w)?;
    Ok(v.iter().zip(&correction).map(|(a, b)| a - b).collect())
}

/// Max-norm of a vector; 0 for the empty vector.
pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Euclidean norm.
pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Dot product (lengths must agree; debug-checked).
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matvec_identity() {
        let a = DenseMatrix::identity(2);
        assert_eq!(matvec(&a, &[3.0, 4.0]).unwrap(), vec![3.0, 4.0]);
    }

    #[test]
    fn matvec_selector_row() {
        let a = DenseMatrix::from_rows(&[&[1.0, 0.0]]);
        assert_eq!(matvec(&a, &[5.0, 7.0]).unwrap(), vec![5.0]);
    }

    #[test]
    fn matvec_hand_arithmetic() {
        let a = DenseMatrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(matvec(&a, &[1.0, 1.0]).unwrap(), vec![3.0, 7.0]);
    }

    #[test]
    fn matvec_shape_mismatch() {
        let a = DenseMatrix::from_rows(&[&[1.0, 2.0]]);
        assert!(matches!(
            matvec(&a, &[1.0]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn gram_apply_unit_row() {
        let j = DenseMatrix::from_rows(&[&[1.0, 0.0]]);
        assert_eq!(gram_apply(&j, &[3.0]).unwrap(), vec![3.0]);
    }

    #[test]
    fn gram_apply_scaled_row() {
        let j = DenseMatrix::from_rows(&[&[2.0, 0.0]]);
        assert_eq!(gram_apply(&j, &[1.0]).unwrap(), vec![4.0]);
    }

    #[test]
    fn gram_apply_ones_row() {
        let j = DenseMatrix::from_rows(&[&[1.0, 1.0]]);
        assert_eq!(gram_apply(&j, &[2.0]).unwrap(), vec![4.0]);
    }

    #[test]
    fn solve_spd_identity() {
        let a = DenseMatrix::identity(2);
        assert_eq!(solve_spd(&a, &[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn solve_spd_scalar() {
        let a = DenseMatrix::from_rows(&[&[4.0]]);
        assert_eq!(solve_spd(&a, &[2.0]).unwrap(), vec![0.5]);
    }

    #[test]
    fn solve_spd_hand_solve() {
        let a = DenseMatrix::from_rows(&[&[2.0, 1.0], &[1.0, 2.0]]);
        let x = solve_spd(&a, &[3.0, 3.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14);
        assert!((x[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn solve_spd_rejects_indefinite() {
        let a = DenseMatrix::from_rows(&[&[1.0, 2.0], &[2.0, 1.0]]);
        assert!(matches!(
            solve_spd(&a, &[1.0, 1.0]),
            Err(Error::Singular { .. })
        ));
    }

    #[test]
    fn project_axis() {
        let j = DenseMatrix::from_rows(&[&[1.0, 0.0]]);
        let p = project_tangent(&j, &[3.0, 4.0]).unwrap();
        assert!((p[0]).abs() < 1e-15);
        assert!((p[1] - 4.0).abs() < 1e-15);
    }

    #[test]
    fn project_square_invertible_kills_everything() {
        let j = DenseMatrix::from_rows(&[&[2.0, 1.0], &[0.0, 3.0]]);
        let p = project_tangent(&j, &[1.7, -0.3]).unwrap();
        assert!(norm_inf(&p) < 1e-14);
    }

    #[test]
    fn project_diagonal_of_ones_row() {
        let j = DenseMatrix::from_rows(&[&[1.0, 1.0]]);
        let p = project_tangent(&j, &[1.0, 0.0]).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15);
        assert!((p[1] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn counter_ticks_per_contract() {
        OpCounter::reset();
        let before = OpCounter::snapshot();
        let j = DenseMatrix::from_rows(&[&[1.0, 1.0]]);
        gram_apply(&j, &[2.0]).unwrap();
        let d = OpCounter::snapshot().since(&before);
        assert_eq!(d.matvecs, 2);
        assert_eq!(d.grams, 1);
        assert_eq!(d.solves, 0);
    }
}
