//! Compressed-row sparse operator and a banded LU solver.
//!
//! The assembled fast operators are M-matrices once a positive zeroth-order
//! term is added, so Gaussian elimination without pivoting is stable and the
//! band structure of the tensor grid is preserved.

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SparseOperator {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseOperator {
    /// Builds from per-row `(column, value)` lists; duplicate columns are summed
    /// and each row is sorted by column.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                assert!(c < n, "column {c} out of range {n}");
                if last == Some(c) {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(cols.len());
        }
        SparseOperator {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn diag(&self, i: usize) -> f64 {
        self.get(i, i)
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        assert_eq!(u.len(), self.n);
        (0..self.n)
            .map(|i| self.row(i).map(|(c, v)| v * u[c]).sum())
            .collect()
    }

    /// `(A u)_i`
    pub fn apply_row(&self, i: usize, u: &[f64]) -> f64 {
        self.row(i).map(|(c, v)| v * u[c]).sum()
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.row(i).map(|(_, v)| v).sum()
    }

    /// Nonpositive off-diagonals and a diagonal that dominates them, i.e. the
    /// sign pattern that makes `delta I + A` an M-matrix for every `delta > 0`.
    pub fn has_m_matrix_pattern(&self) -> bool {
        (0..self.n).all(|i| {
            let mut off = 0.0;
            let mut d = 0.0;
            for (c, v) in self.row(i) {
                if c == i {
                    d = v;
                } else if v > 0.0 {
                    return false;
                } else {
                    off -= v;
                }
            }
            d >= off - 1e-12 * (1.0 + d.abs())
        })
    }

    /// `(lower, upper)` bandwidths.
    pub fn bandwidths(&self) -> (usize, usize) {
        let mut kl = 0;
        let mut ku = 0;
        for i in 0..self.n {
            for (c, _) in self.row(i) {
                if c < i {
                    kl = kl.max(i - c);
                } else {
                    ku = ku.max(c - i);
                }
            }
        }
        (kl, ku)
    }

    /// Band copy of `shift_i * I + A` with a per-row diagonal shift.
    pub fn to_banded(&self, shift: &[f64]) -> BandMatrix {
        let (kl, ku) = self.bandwidths();
        let mut b = BandMatrix::zeros(self.n, kl, ku);
        for i in 0..self.n {
            for (c, v) in self.row(i) {
                *b.at_mut(i, c) += v;
            }
            *b.at_mut(i, i) += shift[i];
        }
        b
    }

    /// Solves `(delta I + A) u = rhs`.
    pub fn solve_shifted(&self, delta: f64, rhs: &[f64]) -> Result<Vec<f64>> {
        let lu = self.to_banded(&vec![delta; self.n]).factor()?;
        Ok(lu.solve(rhs))
    }
}

/// Dense storage of a banded matrix, row-major over the band.
#[derive(Clone, Debug)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        // no pivoting, so LU fill-in stays inside the original band
        let width = kl + ku + 1;
        BandMatrix {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.ku);
        i * self.width + (j + self.kl - i)
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        let k = self.idx(i, j);
        &mut self.data[k]
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[self.idx(i, j)]
    }

    /// In-place LU without pivoting (Doolittle). Fails on a nonpositive or
    /// non-finite pivot, which cannot happen for an M-matrix.
    pub fn factor(mut self) -> Result<BandLu> {
        let n = self.n;
        for k in 0..n {
            let pivot = self.at(k, k);
            if !(pivot > 0.0) || !pivot.is_finite() {
                return Err(Error::Internal(format!(
                    "banded LU: pivot {pivot:e} at row {k}; operator is not an M-matrix"
                )));
            }
            let imax = (k + self.kl).min(n - 1);
            let jmax = (k + self.ku).min(n - 1);
            for i in k + 1..=imax {
                let l = self.at(i, k) / pivot;
                if l == 0.0 {
                    continue;
                }
                *self.at_mut(i, k) = l;
                for j in k + 1..=jmax {
                    let ukj = self.at(k, j);
                    *self.at_mut(i, j) -= l * ukj;
                }
            }
        }
        Ok(BandLu { m: self })
    }
}

#[derive(Clone, Debug)]
pub struct BandLu {
    m: BandMatrix,
}

impl BandLu {
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let m = &self.m;
        let n = m.n;
        assert_eq!(x.len(), n);
        for i in 0..n {
            let j0 = i.saturating_sub(m.kl);
            let mut s = x[i];
            for j in j0..i {
                s -= m.at(i, j) * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let jmax = (i + m.ku).min(n - 1);
            let mut s = x[i];
            for j in i + 1..=jmax {
                s -= m.at(i, j) * x[j];
            }
            x[i] = s / m.at(i, i);
        }
    }
}

/// Solves a tridiagonal system with sub-, main and super-diagonals (Thomas).
/// `lower[0]` and `upper[n-1]` are ignored.
pub fn solve_tridiagonal(lower: &[f64], main: &[f64], upper: &[f64], rhs: &mut [f64], scratch: &mut Vec<f64>) {
    let n = main.len();
    scratch.clear();
    scratch.resize(n, 0.0);
    let c = scratch;
    let mut beta = main[0];
    rhs[0] /= beta;
    for i in 1..n {
        c[i] = upper[i - 1] / beta;
        beta = main[i] - lower[i] * c[i];
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i + 1] * rhs[i + 1];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian(n: usize) -> SparseOperator {
        SparseOperator::from_rows(
            (0..n)
                .map(|i| {
                    let mut r = vec![(i, 2.0)];
                    if i > 0 {
                        r.push((i - 1, -1.0));
                    }
                    if i + 1 < n {
                        r.push((i + 1, -1.0));
                    }
                    r
                })
                .collect(),
        )
    }

    #[test]
    fn duplicates_are_summed() {
        let a = SparseOperator::from_rows(vec![vec![(1, -1.0), (0, 2.0), (1, -1.0)], vec![(1, 1.0)]]);
        assert_eq!(a.get(0, 1), -2.0);
        assert_eq!(a.nnz(), 3);
        assert!(a.has_m_matrix_pattern());
    }

    #[test]
    fn banded_solve_matches_apply() {
        let a = laplacian(30);
        let x: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut rhs = a.apply(&x);
        for (r, xi) in rhs.iter_mut().zip(&x) {
            *r += 0.5 * xi;
        }
        let sol = a.solve_shifted(0.5, &rhs).unwrap();
        for (s, e) in sol.iter().zip(&x) {
            assert!((s - e).abs() < 1e-12);
        }
    }

    #[test]
    fn wide_band_solve() {
        // 2D 5-point Laplacian on a 7x5 grid, bandwidth 5
        let (nx, ny) = (7usize, 5usize);
        let id = |i: usize, j: usize| i * ny + j;
        let mut rows = vec![];
        for i in 0..nx {
            for j in 0..ny {
                let mut r = vec![(id(i, j), 4.0)];
                if i > 0 {
                    r.push((id(i - 1, j), -1.0));
                }
                if i + 1 < nx {
                    r.push((id(i + 1, j), -1.0));
                }
                if j > 0 {
                    r.push((id(i, j - 1), -1.0));
                }
                if j + 1 < ny {
                    r.push((id(i, j + 1), -1.0));
                }
                rows.push(r);
            }
        }
        let a = SparseOperator::from_rows(rows);
        assert_eq!(a.bandwidths(), (ny, ny));
        let x: Vec<f64> = (0..nx * ny).map(|k| (k as f64).cos()).collect();
        let rhs: Vec<f64> = a.apply(&x).iter().zip(&x).map(|(r, xi)| r + 0.1 * xi).collect();
        let sol = a.solve_shifted(0.1, &rhs).unwrap();
        let err = sol.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-11, "{err}");
    }

    #[test]
    fn non_m_matrix_rejected() {
        let a = SparseOperator::from_rows(vec![vec![(0, -1.0)]]);
        assert!(a.solve_shifted(0.5, &[1.0]).is_err());
    }

    #[test]
    fn thomas_matches_banded() {
        let n = 12;
        let a = laplacian(n);
        let rhs: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let expected = a.solve_shifted(1.0, &rhs).unwrap();
        let lower = vec![-1.0; n];
        let upper = vec![-1.0; n];
        let main = vec![3.0; n];
        let mut x = rhs.clone();
        let mut scratch = Vec::new();
        solve_tridiagonal(&lower, &main, &upper, &mut x, &mut scratch);
        for (a, b) in x.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
