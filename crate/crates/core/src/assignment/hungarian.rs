//! Minimum-cost injective assignment of rows (ground truths) to columns (queries).

use crate::error::{Error, Result};

/// Dense `rows × cols` cost matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Matching(format!("{} entries for a {rows}×{cols} cost matrix", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut f = f;
        let data = (0..rows * cols).map(|i| f(i / cols, i % cols)).collect();
        Self { rows, cols, data }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// Sum of the entries selected by `cols_of_rows[r]` for each row `r`, in row order.
    pub fn total(&self, cols_of_rows: &[usize]) -> f64 {
        cols_of_rows.iter().enumerate().map(|(r, &c)| self.get(r, c)).sum()
    }
}

/// Injective map from ground-truth index to query index.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MatchResult {
    /// `query[g]` is the query assigned to ground truth `g`.
    pub query: Vec<usize>,
}

impl MatchResult {
    pub fn len(&self) -> usize {
        self.query.len()
    }

    pub fn is_empty(&self) -> bool {
        self.query.is_empty()
    }

    /// `(g, k)` pairs in ground-truth order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.query.iter().copied().enumerate()
    }

    /// Ground truth assigned to each of `k` queries, if any.
    pub fn inverse(&self, k: usize) -> Vec<Option<usize>> {
        let mut inv = vec![None; k];
        for (g, q) in self.pairs() {
            inv[q] = Some(g);
        }
        inv
    }
}

/// Shortest-augmenting-path solver over the rows in `rows` and the columns in
/// `cols`. Returns the chosen column (an index into `cols`) for each row.
fn solve(cost: &CostMatrix, rows: &[usize], cols: &[usize]) -> Vec<usize> {
    let (n, m) = (rows.len(), cols.len());
    let a = |i: usize, j: usize| cost.get(rows[i - 1], cols[j - 1]);
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    // p[j]: row matched to column j (0 = free); way[j]: previous column on the path
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = a(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
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
    let mut out = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    out
}

fn sub_total(cost: &CostMatrix, rows: &[usize], cols: &[usize], pick: &[usize]) -> f64 {
    rows.iter().zip(pick).map(|(&r, &c)| cost.get(r, cols[c])).sum()
}

/// Optimal assignment of every row to a distinct column.
///
/// Among assignments whose total is within `1e-9·(1 + |optimum|)` of the
/// optimum, the lexicographically smallest column sequence is returned.
pub fn hungarian(cost: &CostMatrix) -> Result<MatchResult> {
    let (g, k) = (cost.rows, cost.cols);
    if g > k {
        return Err(Error::Matching(format!("{g} ground truths but only {k} queries")));
    }
    if let Some(bad) = cost.data.iter().position(|c| !c.is_finite()) {
        return Err(Error::Matching(format!("non-finite cost at ({}, {})", bad / k, bad % k)));
    }
    if g == 0 {
        return Ok(MatchResult::default());
    }
    let all_rows: Vec<usize> = (0..g).collect();
    let all_cols: Vec<usize> = (0..k).collect();
    let best = solve(cost, &all_rows, &all_cols);
    let opt = cost.total(&best);
    let tol = 1e-9 * (1.0 + opt.abs());

    // fix rows one at a time to the smallest column that still admits an optimum
    let mut current = best;
    let mut fixed_cost = 0.0;
    let mut free_cols: Vec<usize> = all_cols;
    for r in 0..g {
        let incumbent = current[r];
        let rest_rows: Vec<usize> = (r + 1..g).collect();
        for &c in free_cols.iter().take_while(|&&c| c < incumbent) {
            let cols: Vec<usize> = free_cols.iter().copied().filter(|&x| x != c).collect();
            let pick = solve(cost, &rest_rows, &cols);
            let total = fixed_cost + cost.get(r, c) + sub_total(cost, &rest_rows, &cols, &pick);
            if total <= opt + tol {
                current[r] = c;
                for (i, &row) in rest_rows.iter().enumerate() {
                    current[row] = cols[pick[i]];
                }
                break;
            }
        }
        fixed_cost += cost.get(r, current[r]);
        free_cols.retain(|&x| x != current[r]);
    }
    Ok(MatchResult { query: current })
}
