// SPDX-License-Identifier: Apache-2.0

//! Hilbert and Morton (Z-order) codecs between d-dimensional grid cells and
//! positions along the curve.
//!
//! The Hilbert kernels use Skilling's transpose formulation: the coordinate
//! words are transformed in place with Gray-code bit manipulation and then
//! interleaved, most significant bit plane first, with axis 0 taking the high
//! bit of each plane. Index 0 is the all-zeros cell and the order-1 planar
//! curve runs `(0,0) -> (0,1) -> (1,1) -> (1,0)`.

use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::exec::Exec;

/// Largest number of bits per axis; grid coordinates are stored as `u32`.
pub const MAX_ORDER: u32 = 32;
/// Largest number of index bits; indices are stored as `u128`.
pub const MAX_INDEX_BITS: u32 = 128;

/// Dimension and level of a discrete curve: a grid of `2^order` cells per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CurveConfig {
    dims: usize,
    order: u32,
}

impl CurveConfig {
    pub fn new(dims: usize, order: u32) -> Result<Self> {
        if dims == 0 {
            return Err(Error::Config("dimension must be at least 1".into()));
        }
        if order == 0 || order > MAX_ORDER {
            return Err(Error::Config(format!(
                "order {order} outside [1, {MAX_ORDER}]"
            )));
        }
        let total = dims as u64 * order as u64;
        if total > MAX_INDEX_BITS as u64 {
            return Err(Error::Config(format!(
                "{dims} dims x {order} bits = {total} bits exceeds a {MAX_INDEX_BITS}-bit index"
            )));
        }
        Ok(Self { dims, order })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    /// Bits in an index, `dims * order`.
    pub fn index_bits(&self) -> u32 {
        self.dims as u32 * self.order
    }

    /// Largest valid per-axis coordinate, `2^order - 1`.
    pub fn max_coord(&self) -> u32 {
        ((1u64 << self.order) - 1) as u32
    }

    /// Number of cells in the grid, if it fits in a `u128`.
    pub fn cell_count(&self) -> Option<u128> {
        1u128.checked_shl(self.index_bits())
    }

    fn check_index(&self, index: HilbertIndex) -> Result<()> {
        let bits = self.index_bits();
        if bits < 128 && index.0 >> bits != 0 {
            return Err(Error::Domain(format!(
                "index {} out of range for a {bits}-bit curve",
                index.0
            )));
        }
        Ok(())
    }

    fn check_coords(&self, coords: &[u32]) -> Result<()> {
        if coords.len() != self.dims {
            return Err(Error::Domain(format!(
                "coordinate has {} components, curve has {} dims",
                coords.len(),
                self.dims
            )));
        }
        if let Some(&c) = coords.iter().find(|&&c| c > self.max_coord()) {
            return Err(Error::Domain(format!(
                "coordinate component {c} >= 2^{}",
                self.order
            )));
        }
        Ok(())
    }
}

/// A cell of the `2^order`-per-axis grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GridCoordinate(SmallVec<[u32; 4]>);

impl GridCoordinate {
    pub fn new(coords: &[u32]) -> Self {
        Self(SmallVec::from_slice(coords))
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn dims(&self) -> usize {
        self.0.len()
    }

    /// Manhattan distance to another cell of the same dimension.
    pub fn l1_distance(&self, other: &GridCoordinate) -> u64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(&a, &b)| a.abs_diff(b) as u64)
            .sum()
    }
}

impl From<Vec<u32>> for GridCoordinate {
    fn from(v: Vec<u32>) -> Self {
        Self(SmallVec::from_vec(v))
    }
}

impl<const N: usize> From<[u32; N]> for GridCoordinate {
    fn from(v: [u32; N]) -> Self {
        Self::new(&v)
    }
}

/// Position along a curve, in `[0, 2^(dims*order))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HilbertIndex(pub u128);

pub fn hilbert_encode(cell: &GridCoordinate, cfg: &CurveConfig) -> Result<HilbertIndex> {
    cfg.check_coords(cell.as_slice())?;
    Ok(HilbertIndex(encode_hilbert_raw(cell.as_slice(), cfg.order)))
}

pub fn hilbert_decode(index: HilbertIndex, cfg: &CurveConfig) -> Result<GridCoordinate> {
    cfg.check_index(index)?;
    let mut x: SmallVec<[u32; 4]> = SmallVec::from_elem(0, cfg.dims);
    decode_hilbert_raw(index.0, cfg.order, &mut x);
    Ok(GridCoordinate(x))
}

pub fn morton_encode(cell: &GridCoordinate, cfg: &CurveConfig) -> Result<HilbertIndex> {
    cfg.check_coords(cell.as_slice())?;
    Ok(HilbertIndex(encode_morton_raw(cell.as_slice(), cfg.order)))
}

pub fn morton_decode(index: HilbertIndex, cfg: &CurveConfig) -> Result<GridCoordinate> {
    cfg.check_index(index)?;
    let d = cfg.dims;
    let mut x: SmallVec<[u32; 4]> = SmallVec::from_elem(0, d);
    for bit in 0..cfg.order {
        for (k, xk) in x.iter_mut().enumerate() {
            let pos = bit as usize * d + k;
            *xk |= (((index.0 >> pos) & 1) as u32) << bit;
        }
    }
    Ok(GridCoordinate(x))
}

/// Curve family used to derive a sort key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Curve {
    Hilbert,
    Morton,
}

/// Encodes a flat row-major array of cells (`cfg.dims()` words per cell).
pub fn encode_batch(
    curve: Curve,
    cells: &[u32],
    cfg: &CurveConfig,
    exec: Exec,
) -> Result<Vec<u128>> {
    let d = cfg.dims;
    if !cells.len().is_multiple_of(d) {
        return Err(Error::Domain(format!(
            "flat cell array of length {} is not a multiple of {d}",
            cells.len()
        )));
    }
    if let Some(&c) = cells.iter().find(|&&c| c > cfg.max_coord()) {
        return Err(Error::Domain(format!(
            "coordinate component {c} >= 2^{}",
            cfg.order
        )));
    }
    let order = cfg.order;
    let n = cells.len() / d;
    Ok(match curve {
        Curve::Hilbert => exec.map(n, |i| encode_hilbert_raw(&cells[i * d..(i + 1) * d], order)),
        Curve::Morton => exec.map(n, |i| encode_morton_raw(&cells[i * d..(i + 1) * d], order)),
    })
}

fn encode_morton_raw(coords: &[u32], order: u32) -> u128 {
    let d = coords.len();
    let mut out = 0u128;
    for bit in 0..order {
        for (k, &c) in coords.iter().enumerate() {
            out |= (((c >> bit) & 1) as u128) << (bit as usize * d + k);
        }
    }
    out
}

fn encode_hilbert_raw(coords: &[u32], order: u32) -> u128 {
    let mut x: SmallVec<[u32; 4]> = SmallVec::from_slice(coords);
    axes_to_transpose(&mut x, order);
    let mut out = 0u128;
    for bit in (0..order).rev() {
        for &w in x.iter() {
            out = (out << 1) | ((w >> bit) & 1) as u128;
        }
    }
    out
}

fn decode_hilbert_raw(index: u128, order: u32, x: &mut [u32]) {
    let d = x.len();
    for bit in 0..order {
        for (i, w) in x.iter_mut().enumerate() {
            let pos = bit as usize * d + (d - 1 - i);
            *w |= (((index >> pos) & 1) as u32) << bit;
        }
    }
    transpose_to_axes(x, order);
}

fn axes_to_transpose(x: &mut [u32], order: u32) {
    let n = x.len();
    let top = 1u32 << (order - 1);

    // Inverse undo of the per-level reflections and exchanges.
    let mut q = top;
    while q > 1 {
        let p = q - 1;
        for i in 0..n {
            if x[i] & q != 0 {
                x[0] ^= p;
            } else {
                let t = (x[0] ^ x[i]) & p;
                x[0] ^= t;
                x[i] ^= t;
            }
        }
        q >>= 1;
    }

    // Gray encode.
    for i in 1..n {
        x[i] ^= x[i - 1];
    }
    let mut t = 0u32;
    let mut q = top;
    while q > 1 {
        if x[n - 1] & q != 0 {
            t ^= q - 1;
        }
        q >>= 1;
    }
    for w in x.iter_mut() {
        *w ^= t;
    }
}

fn transpose_to_axes(x: &mut [u32], order: u32) {
    let n = x.len();

    // Gray decode.
    let t = x[n - 1] >> 1;
    for i in (1..n).rev() {
        x[i] ^= x[i - 1];
    }
    x[0] ^= t;

    for bit in 1..order {
        let q = 1u32 << bit;
        let p = q - 1;
        for i in (0..n).rev() {
            if x[i] & q != 0 {
                x[0] ^= p;
            } else {
                let t = (x[0] ^ x[i]) & p;
                x[0] ^= t;
                x[i] ^= t;
            }
        }
    }
}
