// SPDX-License-Identifier: Apache-2.0

//! Sequential and parallel execution must agree bit for bit.

use p2p_core::cloud::{fps_indices_from, order_by_with};
use p2p_core::hilbert::{encode_batch, Curve};
use p2p_core::metrics::{chamfer_with, compare_orderings_with, mean_nearest_neighbor_distance};
use p2p_core::ot::plan_gradient;
use p2p_core::ot::{cost_matrix, sinkhorn_plan};
use p2p_core::{CurveConfig, Exec, Metric, OrderScheme, PointCloud, SinkhornParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn uniform(seed: u64, n: usize, d: usize) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PointCloud::new(d, (0..n * d).map(|_| rng.gen::<f64>()).collect()).unwrap()
}

#[test]
fn metrics_agree() {
    let x = uniform(1, 3000, 3);
    let y = uniform(2, 2500, 3);
    let a = chamfer_with(&x, &y, Exec::Sequential).unwrap();
    let b = chamfer_with(&x, &y, Exec::Parallel).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
    let a = mean_nearest_neighbor_distance(&x, Exec::Sequential).unwrap();
    let b = mean_nearest_neighbor_distance(&x, Exec::Parallel).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
    let cfg = CurveConfig::new(3, 10).unwrap();
    assert_eq!(
        compare_orderings_with(&x, &cfg, Exec::Sequential).unwrap(),
        compare_orderings_with(&x, &cfg, Exec::Parallel).unwrap()
    );
}

#[test]
fn orderings_and_sampling_agree() {
    let pc = uniform(3, 10_000, 2);
    let cfg = CurveConfig::new(2, 16).unwrap();
    for scheme in OrderScheme::ALL {
        assert_eq!(
            order_by_with(&pc, scheme, &cfg, Exec::Sequential).unwrap(),
            order_by_with(&pc, scheme, &cfg, Exec::Parallel).unwrap()
        );
    }
    assert_eq!(
        fps_indices_from(&pc, 200, 17, Exec::Sequential).unwrap(),
        fps_indices_from(&pc, 200, 17, Exec::Parallel).unwrap()
    );
    let cells: Vec<u32> = (0..20_000).map(|i| (i * 7919 % 65536) as u32).collect();
    for curve in [Curve::Hilbert, Curve::Morton] {
        assert_eq!(
            encode_batch(curve, &cells, &cfg, Exec::Sequential).unwrap(),
            encode_batch(curve, &cells, &cfg, Exec::Parallel).unwrap()
        );
    }
}

#[test]
fn gradients_agree() {
    let x = uniform(4, 200, 2);
    let y = uniform(5, 150, 2);
    let plan = sinkhorn_plan(&cost_matrix(&x, &y, Metric::SqEuclidean).unwrap(), &SinkhornParams::default())
        .unwrap()
        .plan;
    for metric in [Metric::SqEuclidean, Metric::Euclidean, Metric::L1] {
        assert_eq!(
            plan_gradient(&x, &y, metric, &plan, Exec::Sequential).unwrap(),
            plan_gradient(&x, &y, metric, &plan, Exec::Parallel).unwrap()
        );
    }
}
