// SPDX-License-Identifier: Apache-2.0

use p2p_core::assignment::min_cost_assignment;
use p2p_core::metrics::{chamfer, emd, EmdMode};
use p2p_core::ot::{
    cost_matrix, cost_matrix_with, entropy, exact_emd, sinkhorn_distance, sinkhorn_distance_with,
    sinkhorn_grad, sinkhorn_grad_with, sinkhorn_plan, sinkhorn_plan_with,
};
use p2p_core::{Error, Exec, Metric, PointCloud, SinkhornParams, TransportPlan};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn uniform(rng: &mut ChaCha8Rng, n: usize, d: usize) -> PointCloud {
    PointCloud::new(d, (0..n * d).map(|_| rng.gen::<f64>()).collect()).unwrap()
}

fn tight(epsilon: f64) -> SinkhornParams {
    SinkhornParams {
        epsilon,
        max_iters: 100_000,
        tol: 1e-10,
        log_domain: true,
    }
}

/// Heap's algorithm over all matchings.
fn brute_force_emd(x: &PointCloud, y: &PointCloud) -> f64 {
    let n = x.len();
    let c = cost_matrix(x, y, Metric::SqEuclidean).unwrap();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    let mut counters = vec![0; n];
    let score = |p: &[usize]| (0..n).map(|i| c.get(i, p[i])).sum::<f64>();
    best = best.min(score(&perm));
    let mut i = 0;
    while i < n {
        if counters[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(counters[i], i);
            }
            best = best.min(score(&perm));
            counters[i] += 1;
            i = 0;
        } else {
            counters[i] = 0;
            i += 1;
        }
    }
    best / n as f64
}

#[test]
fn exact_emd_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in 1..=7 {
        for _ in 0..5 {
            let x = uniform(&mut rng, n, 2);
            let y = uniform(&mut rng, n, 2);
            let got = exact_emd(&x, &y, Metric::SqEuclidean).unwrap();
            assert!((got - brute_force_emd(&x, &y)).abs() <= 1e-12, "n={n}");
        }
    }
}

#[test]
fn assignment_on_integer_costs() {
    let cost = [4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
    let a = min_cost_assignment(&cost, 3).unwrap();
    assert_eq!(a.cost, 5.0);
    assert_eq!(a.columns, vec![1, 0, 2]);
}

#[test]
fn plans_are_feasible() {
    // small epsilon can leave Sinkhorn in its slow sublinear phase, so only
    // plans that report convergence are held to the tolerance
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut converged = [0; 3];
    for k in 0..30 {
        let n = rng.gen_range(1..=24);
        let m = rng.gen_range(1..=24);
        let eps = [0.1, 0.01, 0.001][k % 3];
        let x = uniform(&mut rng, n, 2);
        let y = uniform(&mut rng, m, 2);
        let p = SinkhornParams { max_iters: 20_000, ..tight(eps) };
        let sol = sinkhorn_plan(&cost_matrix(&x, &y, Metric::SqEuclidean).unwrap(), &p).unwrap();
        assert!(sol.plan.as_slice().iter().all(|&v| v >= 0.0));
        for c in sol.plan.col_sums() {
            assert!((c - 1.0 / m as f64).abs() <= 1e-12, "columns are exact after the last update");
        }
        if !sol.converged {
            assert_eq!(sol.iters, 20_000);
            continue;
        }
        converged[k % 3] += 1;
        assert!(sol.marginal_violation <= 1e-10);
        for r in sol.plan.row_sums() {
            assert!((r - 1.0 / n as f64).abs() <= 1e-10, "instance {k}");
        }
    }
    assert_eq!(converged[0], 10);
    assert!(converged[1] >= 5 && converged[2] >= 3, "{converged:?}");
}

fn objective(plan: &[f64], cost: &[f64], eps: f64) -> f64 {
    plan.iter()
        .zip(cost)
        .map(|(&p, &c)| p * c + if p > 0.0 { eps * p * (p.ln() - 1.0) } else { 0.0 })
        .sum()
}

#[test]
fn plan_minimizes_the_regularized_objective() {
    // moving mass around any 2x2 cycle keeps the marginals and must not help
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for eps in [0.5, 0.1, 0.05] {
        let x = uniform(&mut rng, 6, 2);
        let y = uniform(&mut rng, 6, 2);
        let c = cost_matrix(&x, &y, Metric::SqEuclidean).unwrap();
        let sol = sinkhorn_plan(&c, &tight(eps)).unwrap();
        let p = sol.plan.as_slice().to_vec();
        let base = objective(&p, c.as_slice(), eps);
        for _ in 0..200 {
            let (i, k) = (rng.gen_range(0..6), rng.gen_range(0..6));
            let (j, l) = (rng.gen_range(0..6), rng.gen_range(0..6));
            if i == k || j == l {
                continue;
            }
            let room = p[i * 6 + l].min(p[k * 6 + j]).min(p[i * 6 + j]).min(p[k * 6 + l]);
            for delta in [0.5 * room, -0.5 * room] {
                let mut q = p.clone();
                q[i * 6 + j] += delta;
                q[k * 6 + l] += delta;
                q[i * 6 + l] -= delta;
                q[k * 6 + j] -= delta;
                assert!(objective(&q, c.as_slice(), eps) >= base - 1e-13);
            }
        }
    }
}

#[test]
fn distance_decomposes() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = uniform(&mut rng, 10, 3);
    let y = uniform(&mut rng, 12, 3);
    let p = tight(0.05);
    let d = sinkhorn_distance(&x, &y, &p).unwrap();
    let c = cost_matrix(&x, &y, Metric::SqEuclidean).unwrap();
    let mut inner = 0.0;
    let mut h = 0.0;
    for i in 0..10 {
        for j in 0..12 {
            let v = d.solution.plan.get(i, j);
            inner += v * c.get(i, j);
            if v > 0.0 {
                h -= v * (v.ln() - 1.0);
            }
        }
    }
    assert!((d.transport_cost - inner).abs() <= 1e-12);
    assert!((d.entropy - h).abs() <= 1e-12);
    assert!((d.distance - (inner - 0.05 * h)).abs() <= 1e-12);
}

#[test]
fn entropy_closed_forms() {
    let diag = TransportPlan::new(2, 2, vec![0.5, 0.0, 0.0, 0.5]).unwrap();
    assert!((entropy(&diag).unwrap() - (2f64.ln() + 1.0)).abs() < 1e-15);
    let flat = TransportPlan::new(2, 2, vec![0.25; 4]).unwrap();
    assert!((entropy(&flat).unwrap() - (4f64.ln() + 1.0)).abs() < 1e-15);
    let neg = TransportPlan::new(1, 2, vec![0.6, -0.1]).unwrap();
    assert!(matches!(entropy(&neg), Err(Error::Domain(_))));
}

#[test]
fn epsilon_sweep_approaches_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut close = 0;
    for _ in 0..10 {
        let x = uniform(&mut rng, 8, 2);
        let y = uniform(&mut rng, 8, 2);
        let exact = exact_emd(&x, &y, Metric::SqEuclidean).unwrap();
        let mut prev = f64::INFINITY;
        for eps in [0.1, 0.01, 0.001] {
            let p = SinkhornParams { max_iters: 10_000, tol: 1e-9, ..tight(eps) };
            let d = sinkhorn_distance(&x, &y, &p).unwrap();
            if d.solution.converged {
                assert!(d.transport_cost >= exact - 1e-9);
            }
            let gap = (d.transport_cost - exact).abs();
            assert!(gap <= prev + 1e-6, "gap grew at eps {eps}: {gap} > {prev}");
            prev = gap;
        }
        if prev <= 0.05 * exact {
            close += 1;
        }
    }
    assert!(close >= 9, "{close}/10 within 5%");
}

#[test]
fn log_and_multiplicative_modes_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for eps in [0.5, 0.1, 0.05] {
        let x = uniform(&mut rng, 15, 2);
        let y = uniform(&mut rng, 11, 2);
        let c = cost_matrix(&x, &y, Metric::SqEuclidean).unwrap();
        let log = sinkhorn_plan(&c, &tight(eps)).unwrap();
        let mul = sinkhorn_plan(&c, &SinkhornParams { log_domain: false, ..tight(eps) }).unwrap();
        for (a, b) in log.plan.as_slice().iter().zip(mul.plan.as_slice()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }
}

#[test]
fn multiplicative_underflow_is_reported() {
    let x = PointCloud::new(1, vec![0.0, 10.0]).unwrap();
    let y = PointCloud::new(1, vec![5.0, 20.0]).unwrap();
    let p = SinkhornParams {
        log_domain: false,
        ..tight(0.001)
    };
    let err = sinkhorn_distance(&x, &y, &p).unwrap_err();
    assert!(matches!(err, Error::Underflow { .. }));
    assert!(err.to_string().contains("log-domain"));
    assert!(sinkhorn_distance(&x, &y, &tight(0.001)).is_ok());
}

#[test]
fn default_setting_runs_in_log_domain() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = uniform(&mut rng, 256, 3);
    let y = uniform(&mut rng, 256, 3);
    let d = sinkhorn_distance(&x, &y, &SinkhornParams::default()).unwrap();
    assert!(d.solution.iters <= 175);
    assert!(d.distance.is_finite() && d.transport_cost > 0.0);
}

#[test]
fn envelope_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for eps in [0.1, 0.05] {
        for _ in 0..3 {
            let x = uniform(&mut rng, 6, 2);
            let y = uniform(&mut rng, 6, 2);
            let p = tight(eps);
            let g = sinkhorn_grad(&x, &y, &p).unwrap();
            let h = 1e-5;
            let mut num = vec![0.0; g.len()];
            for k in 0..g.len() {
                let mut coords = y.as_slice().to_vec();
                coords[k] += h;
                let up = sinkhorn_distance(&x, &PointCloud::new(2, coords.clone()).unwrap(), &p).unwrap();
                coords[k] -= 2.0 * h;
                let down = sinkhorn_distance(&x, &PointCloud::new(2, coords).unwrap(), &p).unwrap();
                num[k] = (up.distance - down.distance) / (2.0 * h);
            }
            let err: f64 = g.iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let scale: f64 = num.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-8);
            assert!(err / scale <= 1e-3, "eps {eps}: relative error {}", err / scale);
        }
    }
}

#[test]
fn gradient_closed_forms() {
    for t in [-2.0, 0.5, 3.0] {
        let x = PointCloud::new(1, vec![0.0]).unwrap();
        let y = PointCloud::new(1, vec![t]).unwrap();
        let g = sinkhorn_grad(&x, &y, &tight(0.01)).unwrap();
        assert!((g[0] - 2.0 * t).abs() <= 1e-12);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut coords = Vec::new();
    for i in 0..4 {
        for j in 0..4 {
            coords.extend([i as f64 + 0.1 * rng.gen::<f64>(), j as f64 + 0.1 * rng.gen::<f64>()]);
        }
    }
    let x = PointCloud::new(2, coords).unwrap();
    let g = sinkhorn_grad(&x, &x, &tight(0.001)).unwrap();
    for row in g.chunks(2) {
        assert!(row[0].hypot(row[1]) <= 1e-3);
    }
}

#[test]
fn unconverged_gradient_is_an_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = uniform(&mut rng, 20, 2);
    let y = uniform(&mut rng, 20, 2);
    let p = SinkhornParams {
        max_iters: 2,
        ..tight(0.001)
    };
    assert!(matches!(sinkhorn_grad(&x, &y, &p), Err(Error::NotConverged { .. })));
}

#[test]
fn symmetric_and_policy_independent() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let x = uniform(&mut rng, 16, 2);
        let y = uniform(&mut rng, 16, 2);
        let p = tight(0.01);
        let a = sinkhorn_distance(&x, &y, &p).unwrap().distance;
        let b = sinkhorn_distance(&y, &x, &p).unwrap().distance;
        assert!((a - b).abs() <= 1e-9);
    }
    let x = uniform(&mut rng, 300, 3);
    let y = uniform(&mut rng, 280, 3);
    let p = SinkhornParams::default();
    for metric in [Metric::SqEuclidean, Metric::Euclidean, Metric::L1] {
        let cs = cost_matrix_with(&x, &y, metric, Exec::Sequential).unwrap();
        let cp = cost_matrix_with(&x, &y, metric, Exec::Parallel).unwrap();
        assert_eq!(cs, cp);
        let s = sinkhorn_plan_with(&cs, &p, Exec::Sequential).unwrap();
        let q = sinkhorn_plan_with(&cs, &p, Exec::Parallel).unwrap();
        assert_eq!(s.plan, q.plan);
        let ds = sinkhorn_distance_with(&x, &y, metric, &p, Exec::Sequential).unwrap();
        let dp = sinkhorn_distance_with(&x, &y, metric, &p, Exec::Parallel).unwrap();
        assert_eq!(ds.distance.to_bits(), dp.distance.to_bits());
    }
    let small = tight(0.05);
    let (a, b) = (uniform(&mut rng, 12, 2), uniform(&mut rng, 12, 2));
    assert_eq!(
        sinkhorn_grad_with(&a, &b, Metric::Euclidean, &small, Exec::Sequential).unwrap(),
        sinkhorn_grad_with(&a, &b, Metric::Euclidean, &small, Exec::Parallel).unwrap()
    );
}

#[test]
fn metric_closed_forms() {
    let o = PointCloud::from_rows(&[[0.0, 0.0]]).unwrap();
    let p = PointCloud::from_rows(&[[3.0, 4.0]]).unwrap();
    assert_eq!(chamfer(&o, &p).unwrap(), 50.0);
    assert_eq!(exact_emd(&o, &p, Metric::SqEuclidean).unwrap(), 25.0);
    assert_eq!(exact_emd(&o, &p, Metric::Euclidean).unwrap(), 5.0);
    assert_eq!(exact_emd(&o, &p, Metric::L1).unwrap(), 7.0);
    let line = PointCloud::new(1, vec![0.0, 1.0]).unwrap();
    let p = SinkhornParams { max_iters: 10_000, ..Default::default() };
    assert_eq!(emd(&line, &line, EmdMode::Exact, &p).unwrap(), 0.0);
    assert!(emd(&line, &line, EmdMode::Sinkhorn, &p).unwrap() <= 1e-4);
}
