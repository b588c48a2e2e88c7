use crate::error::{Error, Result};

/// Injective map from ground-truth index `j` to prediction index `sigma[j]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Assignment {
    pub sigma: Vec<usize>,
}

impl Assignment {
    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    /// Prediction indices not used by any ground truth, ascending.
    pub fn unmatched(&self, num_predictions: usize) -> Vec<usize> {
        let mut used = vec![false; num_predictions];
        self.sigma.iter().for_each(|&i| used[i] = true);
        (0..num_predictions).filter(|&i| !used[i]).collect()
    }

    /// `Σ_j cost[j][σ(j)]`, summed in `j` order.
    pub fn total_cost(&self, cost: &[Vec<f64>]) -> f64 {
        self.sigma.iter().enumerate().map(|(j, &i)| cost[j][i]).sum()
    }
}

/// Minimum of `Σ cost[r][col(r)]` over injective row→column maps, rows ≤ cols.
///
/// Shortest augmenting path with row/column potentials, O(rows²·cols).
fn solve(cost: &[Vec<f64>], rows: &[usize], cols: &[usize]) -> (f64, Vec<usize>) {
    let n = rows.len();
    let m = cols.len();
    if n == 0 {
        return (0.0, Vec::new());
    }
    let c = |i: usize, j: usize| cost[rows[i - 1]][cols[j - 1]];
    // 1-based; column 0 is a virtual source
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = c(i0, j) - u[i0] - v[j];
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
    let mut col_of = vec![0usize; n];
    for j in 1..=m {
        if owner[j] != 0 {
            col_of[owner[j] - 1] = j - 1;
        }
    }
    let total = (0..n).map(|i| cost[rows[i]][cols[col_of[i]]]).sum();
    (total, col_of)
}

/// Minimum-cost injective matching of ground truths (rows) to predictions
/// (columns).
///
/// Among optimal matchings the lexicographically smallest `σ` is returned:
/// rows are fixed one at a time to the smallest column that still admits an
/// optimal completion.
pub fn hungarian_match(cost: &[Vec<f64>]) -> Result<Assignment> {
    let n = cost.len();
    if n == 0 {
        return Ok(Assignment { sigma: Vec::new() });
    }
    let m = cost[0].len();
    if cost.iter().any(|r| r.len() != m) {
        return Err(Error::arg("ragged cost matrix"));
    }
    if n > m {
        return Err(Error::arg(format!("{n} ground truths but only {m} predictions")));
    }
    if cost.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::arg("non-finite matching cost"));
    }
    let all_rows: Vec<usize> = (0..n).collect();
    let all_cols: Vec<usize> = (0..m).collect();
    let (optimum, _) = solve(cost, &all_rows, &all_cols);
    let scale = cost.iter().flatten().fold(1.0f64, |a, c| a.max(c.abs()));
    let tol = 1e-12 * scale * n as f64;

    let mut sigma = Vec::with_capacity(n);
    let mut free: Vec<usize> = all_cols;
    let mut fixed_cost = 0.0;
    for j in 0..n {
        let rest: Vec<usize> = (j + 1..n).collect();
        let mut chosen = None;
        for (pos, &col) in free.iter().enumerate() {
            let remaining: Vec<usize> = free.iter().copied().filter(|&c| c != col).collect();
            let (sub, _) = solve(cost, &rest, &remaining);
            if fixed_cost + cost[j][col] + sub <= optimum + tol {
                chosen = Some(pos);
                break;
            }
        }
        let pos = chosen.expect("an optimal completion always exists");
        let col = free.remove(pos);
        fixed_cost += cost[j][col];
        sigma.push(col);
    }
    Ok(Assignment { sigma })
}
