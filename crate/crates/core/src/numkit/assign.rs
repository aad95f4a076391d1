//! Rectangular linear assignment by shortest augmenting paths.
//!
//! Rows are inserted one at a time; each insertion runs a Dijkstra-style
//! search over reduced costs and augments along the cheapest path. When
//! there are more rows than columns the problem is solved on the
//! transpose. Among equal reduced costs the lowest column index wins, so
//! the matching returned for a given matrix is always the same.

use alloc::vec;
use alloc::vec::Vec;

use super::NumError;

/// Dense row-major cost matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    costs: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, costs: Vec<f64>) -> Result<Self, NumError> {
        if rows * cols != costs.len() {
            return Err(NumError::Shape { rows, cols, len: costs.len() });
        }
        if costs.iter().any(|c| !c.is_finite()) {
            return Err(NumError::NonFinite { op: "CostMatrix::new" });
        }
        Ok(Self { rows, cols, costs })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NumError> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(NumError::Shape { rows: r, cols: c, len: rows.iter().map(Vec::len).sum() });
        }
        Self::new(r, c, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.costs[r * self.cols + c]
    }

    fn transposed(&self) -> Self {
        let mut costs = Vec::with_capacity(self.costs.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                costs.push(self.get(r, c));
            }
        }
        Self { rows: self.cols, cols: self.rows, costs }
    }

    /// Sum of costs over `pairs`.
    pub fn total(&self, pairs: &[(usize, usize)]) -> f64 {
        pairs.iter().map(|&(r, c)| self.get(r, c)).sum()
    }
}

/// Minimum-cost matching of size `min(rows, cols)`, sorted by row.
pub fn solve_assignment(costs: &CostMatrix) -> Vec<(usize, usize)> {
    if costs.rows == 0 || costs.cols == 0 {
        return Vec::new();
    }
    if costs.rows > costs.cols {
        let mut pairs: Vec<(usize, usize)> = solve_wide(&costs.transposed()).into_iter().map(|(r, c)| (c, r)).collect();
        pairs.sort_unstable();
        return pairs;
    }
    solve_wide(costs)
}

/// Matching restricted to allowed cells (`Some(cost)`). Returns a
/// maximum-cardinality matching over allowed cells and, among those, one of
/// least total cost. Sorted by row.
pub fn solve_partial_assignment(rows: usize, cols: usize, cost: impl Fn(usize, usize) -> Option<f64>) -> Vec<(usize, usize)> {
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    let mut cells = vec![None; rows * cols];
    let mut max_allowed: f64 = 0.0;
    for r in 0..rows {
        for c in 0..cols {
            let v = cost(r, c).filter(|x| x.is_finite());
            if let Some(x) = v {
                max_allowed = max_allowed.max(x.abs());
            }
            cells[r * cols + c] = v;
        }
    }
    // one forbidden cell outweighs any matching made of allowed ones
    let forbidden = (max_allowed + 1.0) * (rows.min(cols) as f64 + 1.0);
    let flat: Vec<f64> = cells.iter().map(|c| c.unwrap_or(forbidden)).collect();
    let m = CostMatrix { rows, cols, costs: flat };
    solve_assignment(&m).into_iter().filter(|&(r, c)| cells[r * cols + c].is_some()).collect()
}

// rows <= cols; 1-based internal indexing with column 0 as the virtual source
fn solve_wide(m: &CostMatrix) -> Vec<(usize, usize)> {
    let n = m.rows;
    let w = m.cols;
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; w + 1];
    let mut owner = vec![0usize; w + 1];
    let mut way = vec![0usize; w + 1];

    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; w + 1];
        let mut used = vec![false; w + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=w {
                if used[j] {
                    continue;
                }
                let cur = m.get(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=w {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut pairs: Vec<(usize, usize)> = (1..=w).filter(|&j| owner[j] != 0).map(|j| (owner[j] - 1, j - 1)).collect();
    pairs.sort_unstable();
    pairs
}
