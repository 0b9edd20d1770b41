// SPDX-License-Identifier: Apache-2.0

//! Entropy-regularized optimal transport between uniformly weighted clouds.
//!
//! [`sinkhorn_plan`] alternates the row and column scalings
//! `u <- a / (K v)`, `v <- b / (K^T u)` of the Gibbs kernel `K = exp(-C/eps)`
//! until the coupling `diag(u) K diag(v)` meets both marginals. The log-domain
//! path carries `log u`, `log v` and evaluates every kernel product as a
//! log-sum-exp, which stays finite at small `eps` where `K` itself underflows.

use serde::{Deserialize, Serialize};

use crate::assignment::min_cost_assignment;
use crate::cloud::PointCloud;
use crate::error::{domain, Error, Result};
use crate::exec::Exec;

/// Entropic regularization strength used for point-cloud losses.
pub const DEFAULT_EPSILON: f64 = 0.001;
/// Fixed iteration budget used for point-cloud losses.
pub const DEFAULT_MAX_ITERS: usize = 175;
pub const DEFAULT_TOL: f64 = 1e-9;
/// Largest cloud accepted by [`exact_emd`].
pub const EXACT_EMD_MAX_POINTS: usize = 64;

/// Ground cost between two points.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    SqEuclidean,
    Euclidean,
    L1,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::SqEuclidean => "sq_euclidean",
            Metric::Euclidean => "euclidean",
            Metric::L1 => "l1",
        }
    }

    pub fn cost(self, a: &[f64], b: &[f64]) -> f64 {
        let pairs = a.iter().zip(b);
        match self {
            Metric::SqEuclidean => pairs.map(|(x, y)| (x - y) * (x - y)).sum(),
            Metric::Euclidean => pairs.map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
            Metric::L1 => pairs.map(|(x, y)| (x - y).abs()).sum(),
        }
    }

    /// Accumulates `weight * d cost(x, y) / d y` into `out`.
    fn add_grad_y(self, x: &[f64], y: &[f64], weight: f64, out: &mut [f64]) {
        match self {
            Metric::SqEuclidean => {
                for k in 0..y.len() {
                    out[k] += weight * 2.0 * (y[k] - x[k]);
                }
            }
            Metric::Euclidean => {
                let r = self.cost(x, y);
                if r > 0.0 {
                    for k in 0..y.len() {
                        out[k] += weight * (y[k] - x[k]) / r;
                    }
                }
            }
            Metric::L1 => {
                for k in 0..y.len() {
                    let diff = y[k] - x[k];
                    if diff != 0.0 {
                        out[k] += weight * diff.signum();
                    }
                }
            }
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sq_euclidean" => Ok(Metric::SqEuclidean),
            "euclidean" => Ok(Metric::Euclidean),
            "l1" => Ok(Metric::L1),
            other => Err(domain(format!("unknown metric '{other}'"))),
        }
    }
}

/// Pairwise ground costs, `rows x cols`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows} x {cols} cost matrix",
                values.len()
            )));
        }
        if values.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(domain("cost entries must be finite and non-negative"));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    fn transposed(&self) -> Vec<f64> {
        let mut t = vec![0.0; self.values.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[j * self.rows + i] = self.values[i * self.cols + j];
            }
        }
        t
    }
}

pub fn cost_matrix(x: &PointCloud, y: &PointCloud, metric: Metric) -> Result<CostMatrix> {
    cost_matrix_with(x, y, metric, Exec::default())
}

pub fn cost_matrix_with(
    x: &PointCloud,
    y: &PointCloud,
    metric: Metric,
    exec: Exec,
) -> Result<CostMatrix> {
    if x.dims() != y.dims() {
        return Err(domain(format!(
            "cannot compare {}-d and {}-d clouds",
            x.dims(),
            y.dims()
        )));
    }
    let cols = y.len();
    let mut values = vec![0.0; x.len() * cols];
    exec.for_each_row(&mut values, cols, |i, row| {
        let xi = x.point(i);
        for (j, c) in row.iter_mut().enumerate() {
            *c = metric.cost(xi, y.point(j));
        }
    });
    Ok(CostMatrix {
        rows: x.len(),
        cols,
        values,
    })
}

/// A coupling between two uniform discrete measures, `rows x cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl TransportPlan {
    /// Wraps raw values; only the shape and finiteness are checked.
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows} x {cols} plan",
                values.len()
            )));
        }
        if values.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numeric("non-finite transport plan entry".into()));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.values
            .chunks_exact(self.cols.max(1))
            .map(|r| r.iter().sum())
            .collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for row in self.values.chunks_exact(self.cols.max(1)) {
            for (s, p) in sums.iter_mut().zip(row) {
                *s += p;
            }
        }
        sums
    }

    /// Largest deviation of any row sum from `1/rows` or column sum from `1/cols`.
    pub fn marginal_violation(&self) -> f64 {
        let a = 1.0 / self.rows as f64;
        let b = 1.0 / self.cols as f64;
        let rows = self.row_sums().into_iter().map(|s| (s - a).abs());
        let cols = self.col_sums().into_iter().map(|s| (s - b).abs());
        rows.chain(cols).fold(0.0, f64::max)
    }

    /// Frobenius inner product with a cost matrix of the same shape.
    pub fn inner(&self, cost: &CostMatrix) -> Result<f64> {
        if cost.rows != self.rows || cost.cols != self.cols {
            return Err(Error::Shape(format!(
                "plan is {} x {}, cost is {} x {}",
                self.rows, self.cols, cost.rows, cost.cols
            )));
        }
        Ok(self.values.iter().zip(&cost.values).map(|(p, c)| p * c).sum())
    }
}

/// Discrete entropy `-sum P (log P - 1)`, with `0 log 0 = 0`.
pub fn entropy(plan: &TransportPlan) -> Result<f64> {
    let mut h = 0.0;
    for &p in &plan.values {
        if p < 0.0 {
            return Err(domain(format!("negative plan entry {p}")));
        }
        if p > 0.0 {
            h -= p * (p.ln() - 1.0);
        }
    }
    Ok(h)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornParams {
    pub epsilon: f64,
    pub max_iters: usize,
    /// Stop once the largest marginal violation is at most this.
    pub tol: f64,
    pub log_domain: bool,
}

impl Default for SinkhornParams {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            max_iters: DEFAULT_MAX_ITERS,
            tol: DEFAULT_TOL,
            log_domain: true,
        }
    }
}

impl SinkhornParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(domain(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.tol > 0.0) {
            return Err(domain(format!("tolerance must be positive, got {}", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(domain("max_iters must be at least 1"));
        }
        Ok(())
    }
}

/// Scaling vectors at termination. In log-domain mode they hold `log u` and
/// `log v`.
#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornState {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub log_domain: bool,
}

#[derive(Debug, Clone)]
pub struct SinkhornSolution {
    pub plan: TransportPlan,
    pub state: SinkhornState,
    pub converged: bool,
    pub iters: usize,
    pub marginal_violation: f64,
}

pub fn sinkhorn_plan(cost: &CostMatrix, params: &SinkhornParams) -> Result<SinkhornSolution> {
    sinkhorn_plan_with(cost, params, Exec::default())
}

pub fn sinkhorn_plan_with(
    cost: &CostMatrix,
    params: &SinkhornParams,
    exec: Exec,
) -> Result<SinkhornSolution> {
    params.validate()?;
    if cost.rows == 0 || cost.cols == 0 {
        return Err(Error::EmptyInput("transport between empty clouds".into()));
    }
    let (state, iters, converged) = if params.log_domain {
        run_log_domain(cost, params, exec)
    } else {
        run_multiplicative(cost, params, exec)?
    };
    let plan = assemble_plan(cost, params.epsilon, &state, exec)?;
    let marginal_violation = plan.marginal_violation();
    Ok(SinkhornSolution {
        plan,
        state,
        converged,
        iters,
        marginal_violation,
    })
}

fn log_sum_exp(terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.map(|t| (t - max).exp()).sum::<f64>().ln()
}

fn run_log_domain(
    cost: &CostMatrix,
    params: &SinkhornParams,
    exec: Exec,
) -> (SinkhornState, usize, bool) {
    let (n, m) = (cost.rows, cost.cols);
    let eps = params.epsilon;
    let scaled: Vec<f64> = cost.values.iter().map(|c| c / eps).collect();
    let scaled_t: Vec<f64> = cost.transposed().iter().map(|c| c / eps).collect();
    let log_a = -(n as f64).ln();
    let log_b = -(m as f64).ln();
    let a = 1.0 / n as f64;

    let mut lu = vec![log_a; n];
    let mut lv = vec![log_b; m];
    let mut iters = 0;
    let mut converged = false;
    while iters < params.max_iters {
        iters += 1;
        lu = exec.map(n, |i| {
            let row = &scaled[i * m..(i + 1) * m];
            log_a - log_sum_exp(lv.iter().zip(row).map(|(v, s)| v - s))
        });
        lv = exec.map(m, |j| {
            let col = &scaled_t[j * n..(j + 1) * n];
            log_b - log_sum_exp(lu.iter().zip(col).map(|(u, s)| u - s))
        });
        // Columns match after the v update; rows carry the residual.
        let row_err = exec.map(n, |i| {
            let row = &scaled[i * m..(i + 1) * m];
            let s: f64 = lv.iter().zip(row).map(|(v, c)| (lu[i] + v - c).exp()).sum();
            (s - a).abs()
        });
        let violation = row_err.into_iter().fold(0.0, f64::max);
        if violation <= params.tol {
            converged = true;
            break;
        }
    }
    (
        SinkhornState {
            u: lu,
            v: lv,
            log_domain: true,
        },
        iters,
        converged,
    )
}

fn run_multiplicative(
    cost: &CostMatrix,
    params: &SinkhornParams,
    exec: Exec,
) -> Result<(SinkhornState, usize, bool)> {
    let (n, m) = (cost.rows, cost.cols);
    let eps = params.epsilon;
    let kernel: Vec<f64> = cost.values.iter().map(|c| (-c / eps).exp()).collect();
    let kernel_t: Vec<f64> = cost.transposed().iter().map(|c| (-c / eps).exp()).collect();
    let a = 1.0 / n as f64;
    let b = 1.0 / m as f64;
    let usable = |x: &f64| x.is_finite() && *x > 0.0;

    let mut u = vec![1.0 / n as f64; n];
    let mut v = vec![1.0 / m as f64; m];
    let mut iters = 0;
    let mut converged = false;
    while iters < params.max_iters {
        iters += 1;
        u = exec.map(n, |i| {
            let kv: f64 = kernel[i * m..(i + 1) * m].iter().zip(&v).map(|(k, v)| k * v).sum();
            a / kv
        });
        if !u.iter().all(usable) {
            return Err(Error::Underflow { iteration: iters });
        }
        v = exec.map(m, |j| {
            let ku: f64 = kernel_t[j * n..(j + 1) * n].iter().zip(&u).map(|(k, u)| k * u).sum();
            b / ku
        });
        if !v.iter().all(usable) {
            return Err(Error::Underflow { iteration: iters });
        }
        let row_err = exec.map(n, |i| {
            let kv: f64 = kernel[i * m..(i + 1) * m].iter().zip(&v).map(|(k, v)| k * v).sum();
            (u[i] * kv - a).abs()
        });
        let violation = row_err.into_iter().fold(0.0, f64::max);
        if !violation.is_finite() {
            return Err(Error::Underflow { iteration: iters });
        }
        if violation <= params.tol {
            converged = true;
            break;
        }
    }
    Ok((
        SinkhornState {
            u,
            v,
            log_domain: false,
        },
        iters,
        converged,
    ))
}

fn assemble_plan(
    cost: &CostMatrix,
    eps: f64,
    state: &SinkhornState,
    exec: Exec,
) -> Result<TransportPlan> {
    let m = cost.cols;
    let mut values = vec![0.0; cost.values.len()];
    exec.for_each_row(&mut values, m, |i, row| {
        let c = &cost.values[i * m..(i + 1) * m];
        for j in 0..m {
            row[j] = if state.log_domain {
                (state.u[i] + state.v[j] - c[j] / eps).exp()
            } else {
                state.u[i] * (-c[j] / eps).exp() * state.v[j]
            };
        }
    });
    TransportPlan::new(cost.rows, cost.cols, values)
}

/// Regularized transport value and its parts.
#[derive(Debug, Clone)]
pub struct SinkhornDistance {
    /// `<P, C> - eps H(P)`.
    pub distance: f64,
    /// `<P, C>`.
    pub transport_cost: f64,
    pub entropy: f64,
    pub solution: SinkhornSolution,
}

/// Sinkhorn distance under the squared Euclidean ground cost.
pub fn sinkhorn_distance(
    x: &PointCloud,
    y: &PointCloud,
    params: &SinkhornParams,
) -> Result<SinkhornDistance> {
    sinkhorn_distance_with(x, y, Metric::SqEuclidean, params, Exec::default())
}

pub fn sinkhorn_distance_with(
    x: &PointCloud,
    y: &PointCloud,
    metric: Metric,
    params: &SinkhornParams,
    exec: Exec,
) -> Result<SinkhornDistance> {
    let cost = cost_matrix_with(x, y, metric, exec)?;
    let solution = sinkhorn_plan_with(&cost, params, exec)?;
    let transport_cost = solution.plan.inner(&cost)?;
    let h = entropy(&solution.plan)?;
    Ok(SinkhornDistance {
        distance: transport_cost - params.epsilon * h,
        transport_cost,
        entropy: h,
        solution,
    })
}

/// Gradient of the Sinkhorn distance with respect to the coordinates of `y`
/// (row-major, `|y| x d`), holding the converged coupling fixed.
pub fn sinkhorn_grad(x: &PointCloud, y: &PointCloud, params: &SinkhornParams) -> Result<Vec<f64>> {
    sinkhorn_grad_with(x, y, Metric::SqEuclidean, params, Exec::default())
}

pub fn sinkhorn_grad_with(
    x: &PointCloud,
    y: &PointCloud,
    metric: Metric,
    params: &SinkhornParams,
    exec: Exec,
) -> Result<Vec<f64>> {
    let cost = cost_matrix_with(x, y, metric, exec)?;
    let sol = sinkhorn_plan_with(&cost, params, exec)?;
    if !sol.converged {
        return Err(Error::NotConverged {
            iterations: sol.iters,
            violation: sol.marginal_violation,
        });
    }
    plan_gradient(x, y, metric, &sol.plan, exec)
}

/// `sum_i P_ij * d cost(x_i, y_j) / d y_j` for every target point `j`.
pub fn plan_gradient(
    x: &PointCloud,
    y: &PointCloud,
    metric: Metric,
    plan: &TransportPlan,
    exec: Exec,
) -> Result<Vec<f64>> {
    if plan.rows != x.len() || plan.cols != y.len() || x.dims() != y.dims() {
        return Err(Error::Shape("plan does not match the clouds".into()));
    }
    let d = y.dims();
    let mut grad = vec![0.0; y.len() * d];
    exec.for_each_row(&mut grad, d, |j, g| {
        let yj = y.point(j);
        for i in 0..x.len() {
            metric.add_grad_y(x.point(i), yj, plan.get(i, j), g);
        }
    });
    Ok(grad)
}

/// Unregularized transport cost between equal-size uniform clouds, from a
/// minimum-cost perfect matching, normalized by the point count.
pub fn exact_emd(x: &PointCloud, y: &PointCloud, metric: Metric) -> Result<f64> {
    if x.len() != y.len() {
        return Err(domain(format!(
            "exact EMD needs equal sizes, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n == 0 {
        return Err(Error::EmptyInput("exact EMD of empty clouds".into()));
    }
    if n > EXACT_EMD_MAX_POINTS {
        return Err(domain(format!(
            "exact EMD limited to {EXACT_EMD_MAX_POINTS} points, got {n}"
        )));
    }
    let cost = cost_matrix_with(x, y, metric, Exec::Sequential)?;
    Ok(min_cost_assignment(cost.as_slice(), n)?.cost / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize, d: usize) -> PointCloud {
        PointCloud::new(d, (0..n * d).map(|_| rng.gen::<f64>()).collect()).unwrap()
    }

    fn tight(eps: f64) -> SinkhornParams {
        SinkhornParams {
            epsilon: eps,
            max_iters: 100_000,
            tol: 1e-10,
            log_domain: true,
        }
    }

    #[test]
    fn cost_matrix_closed_forms() {
        let o = PointCloud::from_rows(&[[0.0, 0.0]]).unwrap();
        let p = PointCloud::from_rows(&[[3.0, 4.0]]).unwrap();
        assert_eq!(cost_matrix(&o, &o, Metric::SqEuclidean).unwrap().as_slice(), &[0.0]);
        assert_eq!(cost_matrix(&o, &p, Metric::SqEuclidean).unwrap().as_slice(), &[25.0]);
        assert_eq!(cost_matrix(&o, &p, Metric::Euclidean).unwrap().as_slice(), &[5.0]);
        assert_eq!(cost_matrix(&o, &p, Metric::L1).unwrap().as_slice(), &[7.0]);
        let q = PointCloud::from_rows(&[[1.0, 2.0, 3.0]]).unwrap();
        assert!(matches!(cost_matrix(&o, &q, Metric::L1), Err(Error::Domain(_))));
    }

    #[test]
    fn cost_matrix_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_cloud(&mut rng, 8, 3);
        let y = random_cloud(&mut rng, 8, 3);
        for metric in [Metric::SqEuclidean, Metric::Euclidean, Metric::L1] {
            let c = cost_matrix(&x, &y, metric).unwrap();
            for i in 0..8 {
                for j in 0..8 {
                    let (a, b) = (x.point(i), y.point(j));
                    let mut want = 0.0;
                    for k in 0..3 {
                        want += match metric {
                            Metric::L1 => (a[k] - b[k]).abs(),
                            _ => (a[k] - b[k]).powi(2),
                        };
                    }
                    if metric == Metric::Euclidean {
                        want = want.sqrt();
                    }
                    assert!((c.get(i, j) - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn singleton_plan_is_forced() {
        let c = CostMatrix::new(1, 1, vec![3.7]).unwrap();
        for log_domain in [true, false] {
            let p = SinkhornParams {
                epsilon: 10.0,
                log_domain,
                ..Default::default()
            };
            let sol = sinkhorn_plan(&c, &p).unwrap();
            assert!(sol.converged);
            assert_eq!(sol.iters, 1);
            assert!((sol.plan.get(0, 0) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_cost_gives_uniform_plan() {
        let c = CostMatrix::new(2, 2, vec![0.0; 4]).unwrap();
        let sol = sinkhorn_plan(&c, &SinkhornParams::default()).unwrap();
        for &p in sol.plan.as_slice() {
            assert!((p - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn rectangular_marginals() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_cloud(&mut rng, 5, 2);
        let y = random_cloud(&mut rng, 9, 2);
        let c = cost_matrix(&x, &y, Metric::SqEuclidean).unwrap();
        let sol = sinkhorn_plan(&c, &tight(0.05)).unwrap();
        assert!(sol.converged);
        for s in sol.plan.row_sums() {
            assert!((s - 0.2).abs() < 1e-9);
        }
        for s in sol.plan.col_sums() {
            assert!((s - 1.0 / 9.0).abs() < 1e-9);
        }
    }

    #[test]
    fn invalid_params_and_inputs() {
        let c = CostMatrix::new(1, 1, vec![1.0]).unwrap();
        for p in [
            SinkhornParams { epsilon: 0.0, ..Default::default() },
            SinkhornParams { tol: 0.0, ..Default::default() },
            SinkhornParams { max_iters: 0, ..Default::default() },
        ] {
            assert!(sinkhorn_plan(&c, &p).is_err());
        }
        assert!(CostMatrix::new(1, 1, vec![-1.0]).is_err());
        assert!(CostMatrix::new(1, 2, vec![1.0]).is_err());
        let empty = CostMatrix::new(0, 0, vec![]).unwrap();
        assert!(sinkhorn_plan(&empty, &SinkhornParams::default()).is_err());
    }

    #[test]
    fn multiplicative_underflow_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_cloud(&mut rng, 6, 2);
        let y = PointCloud::new(2, x.as_slice().iter().map(|v| v + 40.0).collect()).unwrap();
        let c = cost_matrix(&x, &y, Metric::SqEuclidean).unwrap();
        let p = SinkhornParams {
            log_domain: false,
            ..Default::default()
        };
        let err = sinkhorn_plan(&c, &p).unwrap_err();
        assert!(matches!(err, Error::Underflow { iteration: 1 }));
        assert!(err.to_string().contains("log-domain"));
        assert!(sinkhorn_plan(&c, &SinkhornParams::default()).is_ok());
    }

    #[test]
    fn log_and_multiplicative_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let x = random_cloud(&mut rng, 7, 2);
            let y = random_cloud(&mut rng, 7, 2);
            let c = cost_matrix(&x, &y, Metric::SqEuclidean).unwrap();
            let mut p = tight(0.05);
            let log = sinkhorn_plan(&c, &p).unwrap();
            p.log_domain = false;
            let mul = sinkhorn_plan(&c, &p).unwrap();
            for (a, b) in log.plan.as_slice().iter().zip(mul.plan.as_slice()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn entropy_closed_forms() {
        let diag = TransportPlan::new(2, 2, vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        assert!((entropy(&diag).unwrap() - (2f64.ln() + 1.0)).abs() < 1e-12);
        let flat = TransportPlan::new(2, 2, vec![0.25; 4]).unwrap();
        assert!((entropy(&flat).unwrap() - (4f64.ln() + 1.0)).abs() < 1e-12);
        let one = TransportPlan::new(1, 1, vec![1.0]).unwrap();
        assert_eq!(entropy(&one).unwrap(), 1.0);
        let bad = TransportPlan::new(1, 2, vec![0.6, -0.1]).unwrap();
        assert!(matches!(entropy(&bad), Err(Error::Domain(_))));
    }

    #[test]
    fn singleton_distance() {
        let x = PointCloud::from_rows(&[[0.0, 0.0]]).unwrap();
        let y = PointCloud::from_rows(&[[1.0, 0.0]]).unwrap();
        let d = sinkhorn_distance(&x, &y, &SinkhornParams::default()).unwrap();
        assert!((d.distance - 0.999).abs() < 1e-12);
        assert_eq!(d.entropy, 1.0);
    }

    #[test]
    fn self_transport_is_nearly_free() {
        // jittered grid: neighbours stay far apart relative to epsilon
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let coords = (0..10)
            .flat_map(|i| [0.4 * (i % 4) as f64, 0.4 * (i / 4) as f64])
            .map(|v| v + 0.05 * rng.gen::<f64>())
            .collect();
        let x = PointCloud::new(2, coords).unwrap();
        let d = sinkhorn_distance(&x, &x, &tight(0.001)).unwrap();
        assert!(d.transport_cost >= 0.0);
        assert!(d.transport_cost <= exact_emd(&x, &x, Metric::SqEuclidean).unwrap() + 1e-6);
    }

    #[test]
    fn distance_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..5 {
            let x = random_cloud(&mut rng, 8, 2);
            let y = random_cloud(&mut rng, 8, 2);
            let p = tight(0.01);
            let dxy = sinkhorn_distance(&x, &y, &p).unwrap().distance;
            let dyx = sinkhorn_distance(&y, &x, &p).unwrap().distance;
            assert!((dxy - dyx).abs() <= 1e-9, "{dxy} vs {dyx}");
        }
    }

    #[test]
    fn single_pair_gradient() {
        let x = PointCloud::new(1, vec![0.0]).unwrap();
        let y = PointCloud::new(1, vec![0.75]).unwrap();
        let g = sinkhorn_grad(&x, &y, &SinkhornParams::default()).unwrap();
        assert!((g[0] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn self_gradient_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_cloud(&mut rng, 8, 2);
        let g = sinkhorn_grad(&x, &x, &tight(0.001)).unwrap();
        for row in g.chunks(2) {
            assert!(row.iter().map(|v| v * v).sum::<f64>().sqrt() <= 1e-3);
        }
    }

    #[test]
    fn gradient_requires_convergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_cloud(&mut rng, 16, 2);
        let y = random_cloud(&mut rng, 16, 2);
        let p = SinkhornParams {
            max_iters: 2,
            tol: 1e-14,
            ..Default::default()
        };
        assert!(matches!(sinkhorn_grad(&x, &y, &p), Err(Error::NotConverged { .. })));
    }

    #[test]
    fn exact_emd_cases() {
        let x = PointCloud::from_rows(&[[0.0, 0.0], [1.0, 0.0]]).unwrap();
        let y = PointCloud::from_rows(&[[0.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(exact_emd(&x, &y, Metric::SqEuclidean).unwrap(), 1.0);
        assert_eq!(exact_emd(&x, &x, Metric::SqEuclidean).unwrap(), 0.0);
        let three = PointCloud::from_rows(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]).unwrap();
        assert!(exact_emd(&x, &three, Metric::L1).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let big = random_cloud(&mut rng, 65, 2);
        assert!(exact_emd(&big, &big, Metric::L1).is_err());
    }

    #[test]
    fn parallel_matches_sequential_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = random_cloud(&mut rng, 40, 3);
        let y = random_cloud(&mut rng, 33, 3);
        let p = SinkhornParams::default();
        let a = sinkhorn_distance_with(&x, &y, Metric::SqEuclidean, &p, Exec::Sequential).unwrap();
        let b = sinkhorn_distance_with(&x, &y, Metric::SqEuclidean, &p, Exec::Parallel).unwrap();
        assert_eq!(a.distance.to_bits(), b.distance.to_bits());
        assert_eq!(a.solution.plan, b.solution.plan);
    }
}
