//! Minimum-cost one-to-one assignment on dense rectangular cost matrices.
//!
//! Shortest-augmenting-path Hungarian method with row/column potentials,
//! O(n²·m) for an n×m matrix with n ≤ m. Taller matrices are solved on their
//! transpose, so the smaller side is always fully assigned.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AssignmentError {
    #[error("cost matrix has no rows or no columns")]
    EmptyMatrix,
    #[error("cost matrix data has {found} entries, expected {rows}x{cols}")]
    ShapeMismatch {
        rows: usize,
        cols: usize,
        found: usize,
    },
    #[error("non-finite cost at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
}

/// Dense row-major cost matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, AssignmentError> {
        if rows == 0 || cols == 0 {
            return Err(AssignmentError::EmptyMatrix);
        }
        if data.len() != rows * cols {
            return Err(AssignmentError::ShapeMismatch {
                rows,
                cols,
                found: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(AssignmentError::NonFinite {
                row: pos / cols,
                col: pos % cols,
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, AssignmentError> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(AssignmentError::ShapeMismatch {
                rows: n,
                cols: m,
                found: rows.iter().map(Vec::len).sum(),
            });
        }
        Self::new(n, m, rows.concat())
    }

    /// Builds an `rows`×`cols` matrix by evaluating `cost(r, c)`.
    pub fn from_fn(
        rows: usize,
        cols: usize,
        mut cost: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self, AssignmentError> {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(cost(r, c));
            }
        }
        Self::new(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn transpose(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                data.push(self.get(r, c));
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `(row, col)` pairs sorted by row.
    pub pairs: Vec<(usize, usize)>,
    /// Sum of the assigned costs, accumulated in row order.
    pub total_cost: f64,
}

impl Assignment {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

pub fn hungarian_assign(m: &CostMatrix) -> Assignment {
    let mut pairs = if m.rows <= m.cols {
        solve_wide(m)
    } else {
        solve_wide(&m.transpose())
            .into_iter()
            .map(|(c, r)| (r, c))
            .collect()
    };
    pairs.sort_unstable();
    let total_cost = pairs.iter().map(|&(r, c)| m.get(r, c)).sum();
    Assignment { pairs, total_cost }
}

/// Assigns every row of an n×m matrix with n ≤ m.
fn solve_wide(a: &CostMatrix) -> Vec<(usize, usize)> {
    let n = a.rows;
    let m = a.cols;
    debug_assert!(n <= m);

    // One-based indexing; column 0 is a virtual source.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    let mut minv = vec![0.0f64; m + 1];
    let mut used = vec![false; m + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        minv.fill(f64::INFINITY);
        used.fill(false);

        loop {
            used[j0] = true;
            let i0 = p[j0];
            let row = &a.data[(i0 - 1) * m..i0 * m];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = row[j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }

        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    (1..=m)
        .filter(|&j| p[j] != 0)
        .map(|j| (p[j] - 1, j - 1))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_two_by_two() {
        let m = CostMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 0.0]]).unwrap();
        let a = hungarian_assign(&m);
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(a.total_cost, 1.0);
    }

    #[test]
    fn single_cell() {
        let a = hungarian_assign(&CostMatrix::from_rows(&[vec![5.0]]).unwrap());
        assert_eq!(a.pairs, vec![(0, 0)]);
        assert_eq!(a.total_cost, 5.0);
    }

    #[test]
    fn wide_and_tall() {
        let wide = CostMatrix::from_rows(&[vec![1.0, 9.0, 9.0], vec![9.0, 1.0, 9.0]]).unwrap();
        let a = hungarian_assign(&wide);
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(a.total_cost, 2.0);

        let b = hungarian_assign(&wide.transpose());
        assert_eq!(b.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(b.total_cost, 2.0);
    }

    #[test]
    fn negative_costs() {
        let m = CostMatrix::from_rows(&[vec![-1.0, -0.2], vec![-0.9, -0.8]]).unwrap();
        let a = hungarian_assign(&m);
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        assert!((a.total_cost + 1.8).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(CostMatrix::new(0, 3, vec![]), Err(AssignmentError::EmptyMatrix));
        assert!(matches!(
            CostMatrix::new(1, 2, vec![1.0, f64::NAN]),
            Err(AssignmentError::NonFinite { row: 0, col: 1 })
        ));
        assert!(CostMatrix::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
