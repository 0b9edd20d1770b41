// SPDX-License-Identifier: Apache-2.0

//! Point clouds, bounding boxes, quantization onto curve grids, Hilbert
//! sorting, baseline orderings and farthest-point subsampling.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::exec::Exec;
use crate::hilbert::{encode_batch, Curve, CurveConfig, GridCoordinate};
use crate::radix::radix_argsort;

/// Default bits per axis when sorting clouds (1024 cells per axis).
pub const DEFAULT_SORT_ORDER: u32 = 10;

/// `n` points of `dims` finite coordinates, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    dims: usize,
    coords: Vec<f64>,
}

impl PointCloud {
    pub fn new(dims: usize, coords: Vec<f64>) -> Result<Self> {
        if dims == 0 {
            return Err(domain("point dimension must be at least 1"));
        }
        if !coords.len().is_multiple_of(dims) {
            return Err(Error::Shape(format!(
                "{} coordinates do not form {dims}-dimensional points",
                coords.len()
            )));
        }
        if let Some(pos) = coords.iter().position(|c| !c.is_finite()) {
            return Err(domain(format!(
                "non-finite coordinate in point {}",
                pos / dims
            )));
        }
        Ok(Self { dims, coords })
    }

    pub fn empty(dims: usize) -> Self {
        assert!(dims > 0, "point dimension must be at least 1");
        Self {
            dims,
            coords: Vec::new(),
        }
    }

    /// Builds a cloud from fixed-size rows.
    pub fn from_rows<const D: usize>(rows: &[[f64; D]]) -> Result<Self> {
        Self::new(D, rows.iter().flatten().copied().collect())
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dims
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dims..(i + 1) * self.dims]
    }

    pub fn points(&self) -> std::slice::ChunksExact<'_, f64> {
        self.coords.chunks_exact(self.dims)
    }

    /// Flat row-major coordinates.
    pub fn as_slice(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.coords
    }

    /// Points at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        let mut coords = Vec::with_capacity(indices.len() * self.dims);
        for &i in indices {
            coords.extend_from_slice(self.point(i));
        }
        PointCloud {
            dims: self.dims,
            coords,
        }
    }

    /// Reorders so that output point `k` is input point `perm[k]`.
    pub fn permuted(&self, perm: &Permutation) -> Result<PointCloud> {
        if perm.len() != self.len() {
            return Err(Error::Shape(format!(
                "permutation of length {} applied to {} points",
                perm.len(),
                self.len()
            )));
        }
        Ok(self.select(perm.as_slice()))
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Axis-aligned bounds of a cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl BoundingBox {
    pub fn new(min: Vec<f64>, max: Vec<f64>) -> Result<Self> {
        if min.len() != max.len() || min.is_empty() {
            return Err(domain("bounding box corners must have equal, non-zero length"));
        }
        if min.iter().zip(&max).any(|(lo, hi)| !(lo <= hi)) {
            return Err(domain("bounding box min exceeds max"));
        }
        Ok(Self { min, max })
    }

    pub fn dims(&self) -> usize {
        self.min.len()
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == self.dims()
            && p.iter()
                .zip(self.min.iter().zip(&self.max))
                .all(|(x, (lo, hi))| lo <= x && x <= hi)
    }
}

pub fn bounding_box(pc: &PointCloud) -> Result<BoundingBox> {
    if pc.is_empty() {
        return Err(Error::EmptyInput("bounding box of an empty cloud".into()));
    }
    let mut min = pc.point(0).to_vec();
    let mut max = min.clone();
    for p in pc.points().skip(1) {
        for k in 0..pc.dims() {
            min[k] = min[k].min(p[k]);
            max[k] = max[k].max(p[k]);
        }
    }
    Ok(BoundingBox { min, max })
}

/// Bijection on `0..n`; entry `k` names the input position placed at `k`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Permutation {
    order: Vec<usize>,
}

impl Permutation {
    pub fn new(order: Vec<usize>) -> Result<Self> {
        let n = order.len();
        let mut seen = vec![false; n];
        for &i in &order {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return Err(domain(format!("{order:?} is not a permutation of 0..{n}")));
            }
        }
        Ok(Self { order })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            order: (0..n).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.order
    }

    pub fn reversed(&self) -> Self {
        Self {
            order: self.order.iter().rev().copied().collect(),
        }
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.order.len()];
        for (k, &i) in self.order.iter().enumerate() {
            inv[i] = k;
        }
        Self { order: inv }
    }
}

/// Maps every point onto the `2^order` grid spanned by `bb`.
///
/// Each axis is scaled affinely from `[min, max]` onto `[0, 2^order - 1]`,
/// rounded to nearest and clamped. An axis with zero extent maps to 0.
pub fn quantize(
    pc: &PointCloud,
    bb: &BoundingBox,
    cfg: &CurveConfig,
) -> Result<Vec<GridCoordinate>> {
    let flat = quantize_flat(pc, bb, cfg, Exec::Sequential)?;
    Ok(flat
        .chunks_exact(cfg.dims())
        .map(GridCoordinate::new)
        .collect())
}

pub(crate) fn quantize_flat(
    pc: &PointCloud,
    bb: &BoundingBox,
    cfg: &CurveConfig,
    exec: Exec,
) -> Result<Vec<u32>> {
    let d = pc.dims();
    if cfg.dims() != d || bb.dims() != d {
        return Err(domain(format!(
            "cloud dims {d}, box dims {}, curve dims {}",
            bb.dims(),
            cfg.dims()
        )));
    }
    if let Some(i) = pc.points().position(|p| !bb.contains(p)) {
        return Err(domain(format!("point {i} lies outside the bounding box")));
    }
    let top = cfg.max_coord();
    let extent: Vec<f64> = bb.min.iter().zip(&bb.max).map(|(lo, hi)| hi - lo).collect();
    let mut out = vec![0u32; pc.len() * d];
    exec.for_each_row(&mut out, d * 1024, |block, cells| {
        let first = block * 1024;
        for (k, cell) in cells.chunks_exact_mut(d).enumerate() {
            let p = pc.point(first + k);
            for axis in 0..d {
                if extent[axis] > 0.0 {
                    let t = ((p[axis] - bb.min[axis]) / extent[axis] * top as f64 + 0.5).floor();
                    cell[axis] = t.clamp(0.0, top as f64) as u32;
                }
            }
        }
    });
    Ok(out)
}

/// Sorts a cloud along the Hilbert curve of `cfg` fitted to its bounding box.
///
/// Returns the reordered cloud and the permutation applied. Points sharing a
/// curve index keep their input order.
pub fn hilbert_sort(pc: &PointCloud, cfg: &CurveConfig) -> Result<(PointCloud, Permutation)> {
    hilbert_sort_with(pc, cfg, Exec::default())
}

pub fn hilbert_sort_with(
    pc: &PointCloud,
    cfg: &CurveConfig,
    exec: Exec,
) -> Result<(PointCloud, Permutation)> {
    let perm = curve_order(pc, cfg, Curve::Hilbert, exec)?;
    let sorted = pc.select(perm.as_slice());
    Ok((sorted, perm))
}

fn curve_order(pc: &PointCloud, cfg: &CurveConfig, curve: Curve, exec: Exec) -> Result<Permutation> {
    if pc.dims() != cfg.dims() {
        return Err(domain(format!(
            "cloud has {} dims, curve has {}",
            pc.dims(),
            cfg.dims()
        )));
    }
    if pc.is_empty() {
        return Ok(Permutation::identity(0));
    }
    let bb = bounding_box(pc)?;
    let cells = quantize_flat(pc, &bb, cfg, exec)?;
    let keys = encode_batch(curve, &cells, cfg, exec)?;
    Ok(Permutation {
        order: radix_argsort(&keys, cfg.index_bits()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrderScheme {
    Hilbert,
    Morton,
    /// Lexicographic on the raw coordinates.
    Lex,
}

impl OrderScheme {
    pub const ALL: [OrderScheme; 3] = [OrderScheme::Hilbert, OrderScheme::Morton, OrderScheme::Lex];

    pub fn name(self) -> &'static str {
        match self {
            OrderScheme::Hilbert => "hilbert",
            OrderScheme::Morton => "morton",
            OrderScheme::Lex => "lex",
        }
    }
}

impl std::str::FromStr for OrderScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hilbert" => Ok(OrderScheme::Hilbert),
            "morton" => Ok(OrderScheme::Morton),
            "lex" => Ok(OrderScheme::Lex),
            other => Err(domain(format!("unknown ordering scheme '{other}'"))),
        }
    }
}

pub fn order_by(pc: &PointCloud, scheme: OrderScheme, cfg: &CurveConfig) -> Result<Permutation> {
    order_by_with(pc, scheme, cfg, Exec::default())
}

pub fn order_by_with(
    pc: &PointCloud,
    scheme: OrderScheme,
    cfg: &CurveConfig,
    exec: Exec,
) -> Result<Permutation> {
    match scheme {
        OrderScheme::Hilbert => curve_order(pc, cfg, Curve::Hilbert, exec),
        OrderScheme::Morton => curve_order(pc, cfg, Curve::Morton, exec),
        OrderScheme::Lex => {
            let mut order: Vec<usize> = (0..pc.len()).collect();
            order.sort_by(|&a, &b| lex_cmp(pc.point(a), pc.point(b)));
            Ok(Permutation { order })
        }
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Greedy farthest-point subsample of `m` points; the first pick is a seeded
/// uniform draw.
pub fn fps_subsample(pc: &PointCloud, m: usize, seed: u64) -> Result<PointCloud> {
    Ok(pc.select(&fps_indices(pc, m, seed)?))
}

/// Indices chosen by [`fps_subsample`], in pick order.
pub fn fps_indices(pc: &PointCloud, m: usize, seed: u64) -> Result<Vec<usize>> {
    check_subsample(pc, m)?;
    let first = ChaCha8Rng::seed_from_u64(seed).gen_range(0..pc.len());
    fps_indices_from(pc, m, first, Exec::default())
}

fn check_subsample(pc: &PointCloud, m: usize) -> Result<()> {
    if m == 0 {
        return Err(domain("subsample size must be at least 1"));
    }
    if m > pc.len() {
        return Err(domain(format!(
            "cannot subsample {m} points from a cloud of {}",
            pc.len()
        )));
    }
    Ok(())
}

/// Farthest-point sampling from a fixed first point. Ties in the farthest
/// distance go to the lowest index.
pub fn fps_indices_from(pc: &PointCloud, m: usize, first: usize, exec: Exec) -> Result<Vec<usize>> {
    check_subsample(pc, m)?;
    if first >= pc.len() {
        return Err(domain(format!("start index {first} out of range")));
    }
    const BLOCK: usize = 2048;
    let mut nearest = vec![f64::INFINITY; pc.len()];
    let mut picked = Vec::with_capacity(m);
    let mut current = first;
    loop {
        picked.push(current);
        if picked.len() == m {
            return Ok(picked);
        }
        let anchor = pc.point(current);
        exec.for_each_row(&mut nearest, BLOCK, |block, chunk| {
            for (k, slot) in chunk.iter_mut().enumerate() {
                let d = sq_dist(pc.point(block * BLOCK + k), anchor);
                if d < *slot {
                    *slot = d;
                }
            }
        });
        let mut best = 0;
        for (i, &d) in nearest.iter().enumerate() {
            if d > nearest[best] {
                best = i;
            }
        }
        current = best;
    }
}
