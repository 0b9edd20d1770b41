// SPDX-License-Identifier: Apache-2.0

//! Cloud-to-cloud distances and ordering-locality scores.

use serde::{Deserialize, Serialize};

use crate::cloud::{order_by_with, sq_dist, OrderScheme, Permutation, PointCloud};
use crate::error::{domain, Error, Result};
use crate::exec::Exec;
use crate::hilbert::CurveConfig;
use crate::ot::{exact_emd, sinkhorn_distance_with, Metric, SinkhornParams};

/// Symmetric Chamfer distance: the mean squared distance from each point to
/// its nearest neighbour in the other cloud, summed over both directions.
pub fn chamfer(x: &PointCloud, y: &PointCloud) -> Result<f64> {
    chamfer_with(x, y, Exec::default())
}

pub fn chamfer_with(x: &PointCloud, y: &PointCloud, exec: Exec) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(domain("Chamfer distance of an empty cloud"));
    }
    if x.dims() != y.dims() {
        return Err(domain(format!(
            "cannot compare {}-d and {}-d clouds",
            x.dims(),
            y.dims()
        )));
    }
    Ok(mean_nearest_sq(x, y, exec) + mean_nearest_sq(y, x, exec))
}

fn mean_nearest_sq(from: &PointCloud, to: &PointCloud, exec: Exec) -> f64 {
    let nearest = exec.map(from.len(), |i| {
        let p = from.point(i);
        to.points().map(|q| sq_dist(p, q)).fold(f64::INFINITY, f64::min)
    });
    nearest.iter().sum::<f64>() / from.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmdMode {
    Exact,
    Sinkhorn,
}

/// Earth mover's distance under the squared Euclidean cost, mass-normalized.
///
/// In Sinkhorn mode this is the transport cost `<P, C>` of the regularized
/// plan, without the entropy term.
pub fn emd(x: &PointCloud, y: &PointCloud, mode: EmdMode, params: &SinkhornParams) -> Result<f64> {
    if x.len() != y.len() {
        return Err(domain(format!(
            "EMD needs equal sizes, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    match mode {
        EmdMode::Exact => exact_emd(x, y, Metric::SqEuclidean),
        EmdMode::Sinkhorn => Ok(sinkhorn_distance_with(
            x,
            y,
            Metric::SqEuclidean,
            params,
            Exec::default(),
        )?
        .transport_cost),
    }
}

/// Mean Euclidean distance between consecutive points of `pc` visited in
/// `perm` order.
pub fn locality_score(pc: &PointCloud, perm: &Permutation) -> Result<f64> {
    if pc.len() < 2 {
        return Err(domain("locality needs at least two points"));
    }
    if perm.len() != pc.len() {
        return Err(domain(format!(
            "permutation of length {} for {} points",
            perm.len(),
            pc.len()
        )));
    }
    let order = perm.as_slice();
    let total: f64 = order
        .windows(2)
        .map(|w| sq_dist(pc.point(w[0]), pc.point(w[1])).sqrt())
        .sum();
    Ok(total / (order.len() - 1) as f64)
}

/// Mean distance from each point to its nearest other point.
pub fn mean_nearest_neighbor_distance(pc: &PointCloud, exec: Exec) -> Result<f64> {
    if pc.len() < 2 {
        return Err(domain("nearest neighbours need at least two points"));
    }
    let nearest = exec.map(pc.len(), |i| {
        let p = pc.point(i);
        pc.points()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, q)| sq_dist(p, q))
            .fold(f64::INFINITY, f64::min)
            .sqrt()
    });
    Ok(nearest.iter().sum::<f64>() / pc.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalityEntry {
    pub scheme: OrderScheme,
    pub mean_consecutive_distance: f64,
    /// Mean consecutive distance over mean nearest-neighbour distance; 0 when
    /// every point coincides.
    pub normalized_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalityReport {
    pub entries: Vec<LocalityEntry>,
}

impl LocalityReport {
    pub fn score(&self, scheme: OrderScheme) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.scheme == scheme)
            .map(|e| e.mean_consecutive_distance)
    }
}

/// Locality of the Hilbert, Morton and lexicographic orderings of `pc`.
pub fn compare_orderings(pc: &PointCloud, cfg: &CurveConfig) -> Result<LocalityReport> {
    compare_orderings_with(pc, cfg, Exec::default())
}

pub fn compare_orderings_with(
    pc: &PointCloud,
    cfg: &CurveConfig,
    exec: Exec,
) -> Result<LocalityReport> {
    if pc.len() < 2 {
        return Err(domain("locality needs at least two points"));
    }
    let nn = mean_nearest_neighbor_distance(pc, exec)?;
    let entries = OrderScheme::ALL
        .iter()
        .map(|&scheme| {
            let perm = order_by_with(pc, scheme, cfg, exec)?;
            let mean = locality_score(pc, &perm)?;
            Ok(LocalityEntry {
                scheme,
                mean_consecutive_distance: mean,
                normalized_score: if nn > 0.0 { mean / nn } else { 0.0 },
            })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    Ok(LocalityReport { entries })
}
