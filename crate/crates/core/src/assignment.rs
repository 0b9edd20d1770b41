// SPDX-License-Identifier: Apache-2.0

//! Minimum-cost perfect matching on a square cost matrix (Hungarian method
//! with row/column potentials, O(n^3)).

use crate::error::{domain, Result};

/// Optimal matching: `columns[i]` is the column assigned to row `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub columns: Vec<usize>,
    pub cost: f64,
}

/// Solves the assignment problem for a row-major `n x n` cost matrix.
pub fn min_cost_assignment(cost: &[f64], n: usize) -> Result<Assignment> {
    if cost.len() != n * n {
        return Err(domain(format!(
            "cost matrix of {} entries is not {n} x {n}",
            cost.len()
        )));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(domain("assignment costs must be finite"));
    }
    if n == 0 {
        return Ok(Assignment {
            columns: Vec::new(),
            cost: 0.0,
        });
    }
    let c = |i: usize, j: usize| cost[(i - 1) * n + (j - 1)];

    // 1-based; row 0 / column 0 are the virtual source.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = c(i0, j) - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        // Augment along the alternating path.
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut columns = vec![0usize; n];
    for j in 1..=n {
        columns[row_of[j] - 1] = j - 1;
    }
    let total = columns
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i * n + j])
        .sum();
    Ok(Assignment {
        columns,
        cost: total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force(cost: &[f64], n: usize) -> f64 {
        fn go(row: usize, n: usize, used: &mut Vec<bool>, acc: f64, cost: &[f64], best: &mut f64) {
            if row == n {
                *best = best.min(acc);
                return;
            }
            for j in 0..n {
                if !used[j] {
                    used[j] = true;
                    go(row + 1, n, used, acc + cost[row * n + j], cost, best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        go(0, n, &mut vec![false; n], 0.0, cost, &mut best);
        best
    }

    #[test]
    fn classic_instance() {
        let cost = [4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
        let a = min_cost_assignment(&cost, 3).unwrap();
        assert_eq!(a.cost, 5.0);
        assert_eq!(a.columns, vec![1, 0, 2]);
    }

    #[test]
    fn empty_and_single() {
        assert_eq!(min_cost_assignment(&[], 0).unwrap().cost, 0.0);
        assert_eq!(min_cost_assignment(&[7.5], 1).unwrap().columns, vec![0]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(min_cost_assignment(&[1.0, 2.0, 3.0], 2).is_err());
        assert!(min_cost_assignment(&[1.0, f64::NAN, 3.0, 4.0], 2).is_err());
    }

    #[test]
    fn matches_brute_force_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 1..=7 {
            for _ in 0..10 {
                let cost: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-3.0..10.0)).collect();
                let a = min_cost_assignment(&cost, n).unwrap();
                let mut cols = a.columns.clone();
                cols.sort();
                assert_eq!(cols, (0..n).collect::<Vec<_>>());
                assert!((a.cost - brute_force(&cost, n)).abs() < 1e-9);
            }
        }
    }
}
