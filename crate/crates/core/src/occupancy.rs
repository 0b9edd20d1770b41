// SPDX-License-Identifier: Apache-2.0

//! Single-step occupancy prediction data: frame preprocessing, the three
//! pair formulations, and occupancy-grid rasterization.
//!
//! Rowwise correspondence between frames comes from their Hilbert ranks: each
//! frame is farthest-point subsampled to `n` points and then Hilbert sorted on
//! its own bounding box, so row `i` of one frame pairs with row `i` of the next.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cloud::{fps_indices_from, hilbert_sort_with, PointCloud, DEFAULT_SORT_ORDER};
use crate::error::{domain, Error, Result};
use crate::exec::Exec;
use crate::hilbert::CurveConfig;
use crate::metrics::{chamfer_with, emd, EmdMode};
use crate::numfmt::{rows, to_json_string, Num};
use crate::ot::{SinkhornParams, EXACT_EMD_MAX_POINTS};
use crate::xyz::{read_xyz, write_atomic};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DEFAULT_Z_MIN: f64 = -1.5;
pub const DEFAULT_RANGE: f64 = 30.0;
pub const DEFAULT_CELL_SIZE: f64 = 0.5;
pub const DEFAULT_EXTENT: f64 = 30.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub cloud: PointCloud,
    pub t: u64,
}

impl Frame {
    pub fn new(cloud: PointCloud, t: u64) -> Self {
        Frame { cloud, t }
    }
}

/// Rowwise displacement between two equally sized 2D frames.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffCloud {
    deltas: PointCloud,
}

impl DiffCloud {
    pub fn new(deltas: PointCloud) -> Result<Self> {
        if deltas.dims() != 2 {
            return Err(domain(format!(
                "differences are 2-d, got {}-d",
                deltas.dims()
            )));
        }
        Ok(DiffCloud { deltas })
    }

    /// `after - before`, row by row.
    pub fn between(before: &PointCloud, after: &PointCloud) -> Result<Self> {
        check_same_shape(before, after)?;
        let deltas = after
            .as_slice()
            .iter()
            .zip(before.as_slice())
            .map(|(a, b)| a - b)
            .collect();
        DiffCloud::new(PointCloud::new(before.dims(), deltas)?)
    }

    pub fn len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }

    pub fn deltas(&self) -> &PointCloud {
        &self.deltas
    }
}

fn check_same_shape(a: &PointCloud, b: &PointCloud) -> Result<()> {
    if a.len() != b.len() || a.dims() != b.dims() {
        return Err(domain(format!(
            "cardinality mismatch: {} points ({}-d) vs {} points ({}-d)",
            a.len(),
            a.dims(),
            b.len(),
            b.dims()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Methodology {
    /// Cloud to cloud.
    P2P,
    /// Cloud to difference.
    P2D,
    /// Difference to difference.
    D2D,
}

impl Methodology {
    pub const ALL: [Methodology; 3] = [Methodology::P2P, Methodology::P2D, Methodology::D2D];

    pub fn name(self) -> &'static str {
        match self {
            Methodology::P2P => "P2P",
            Methodology::P2D => "P2D",
            Methodology::D2D => "D2D",
        }
    }

    /// Number of consecutive frames a pair consumes.
    pub fn frame_count(self) -> usize {
        match self {
            Methodology::P2P | Methodology::P2D => 2,
            Methodology::D2D => 3,
        }
    }
}

impl fmt::Display for Methodology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Methodology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Methodology::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| domain(format!("unknown methodology '{s}' (expected P2P, P2D or D2D)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PairData {
    Cloud(PointCloud),
    Diff(DiffCloud),
}

impl PairData {
    pub fn cloud(&self) -> &PointCloud {
        match self {
            PairData::Cloud(pc) => pc,
            PairData::Diff(d) => d.deltas(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub methodology: Methodology,
    /// Timestamp of the base frame.
    pub t: u64,
    pub input: PairData,
    pub target: PairData,
    pub base: PointCloud,
}

/// Point predicate for ground segmentation; `keep` sees one 3D point.
pub trait GroundFilter {
    fn keep(&self, point: &[f64]) -> bool;
}

/// Keeps points strictly above `z_min` (sensor frame).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeightThreshold {
    pub z_min: f64,
}

impl Default for HeightThreshold {
    fn default() -> Self {
        HeightThreshold {
            z_min: DEFAULT_Z_MIN,
        }
    }
}

impl GroundFilter for HeightThreshold {
    fn keep(&self, point: &[f64]) -> bool {
        point[2] > self.z_min
    }
}

fn require_dims(f: &Frame, dims: usize, what: &str) -> Result<()> {
    if f.cloud.dims() != dims {
        return Err(domain(format!(
            "{what} needs {dims}-d points, frame {} is {}-d",
            f.t,
            f.cloud.dims()
        )));
    }
    Ok(())
}

fn filter_points(f: &Frame, keep: impl Fn(&[f64]) -> bool) -> Frame {
    let kept: Vec<usize> = (0..f.cloud.len()).filter(|&i| keep(f.cloud.point(i))).collect();
    Frame::new(f.cloud.select(&kept), f.t)
}

/// Drops the z column.
pub fn project_xy(f: &Frame) -> Result<Frame> {
    require_dims(f, 3, "projection")?;
    let coords = f.cloud.points().flat_map(|p| [p[0], p[1]]).collect();
    Ok(Frame::new(PointCloud::new(2, coords)?, f.t))
}

pub fn remove_ground(f: &Frame, filter: &dyn GroundFilter) -> Result<Frame> {
    require_dims(f, 3, "ground removal")?;
    Ok(filter_points(f, |p| filter.keep(p)))
}

/// Keeps points with `|x| <= r` and `|y| <= r`.
pub fn clip_range(f: &Frame, r: f64) -> Result<Frame> {
    if !(r > 0.0) {
        return Err(domain(format!("clip range must be positive, got {r}")));
    }
    if f.cloud.dims() < 2 || f.cloud.dims() > 3 {
        return Err(domain(format!("clipping needs 2-d or 3-d points, got {}-d", f.cloud.dims())));
    }
    Ok(filter_points(f, |p| p[0].abs() <= r && p[1].abs() <= r))
}

/// Farthest-point subsample to `n` points, then Hilbert sort on the
/// subsample's own bounding box.
pub fn normalize_frame(f: &Frame, n: usize, seed: u64, exec: Exec) -> Result<Frame> {
    if f.cloud.len() < n || n == 0 {
        return Err(domain(format!(
            "frame {} has {} points, need {n}",
            f.t,
            f.cloud.len()
        )));
    }
    let first = ChaCha8Rng::seed_from_u64(seed).gen_range(0..f.cloud.len());
    let picked = f.cloud.select(&fps_indices_from(&f.cloud, n, first, exec)?);
    let cfg = CurveConfig::new(picked.dims(), DEFAULT_SORT_ORDER)?;
    let (sorted, _) = hilbert_sort_with(&picked, &cfg, exec)?;
    Ok(Frame::new(sorted, f.t))
}

pub fn normalize_cardinality(a: &Frame, b: &Frame, n: usize, seed: u64) -> Result<(Frame, Frame)> {
    let exec = Exec::default();
    Ok((normalize_frame(a, n, seed, exec)?, normalize_frame(b, n, seed, exec)?))
}

/// Builds a pair from consecutive, already normalized 2D frames.
pub fn make_pair(frames: &[Frame], methodology: Methodology) -> Result<TrainingPair> {
    if frames.len() != methodology.frame_count() {
        return Err(domain(format!(
            "{methodology} needs {} frames, got {}",
            methodology.frame_count(),
            frames.len()
        )));
    }
    for w in frames.windows(2) {
        if w[1].t <= w[0].t {
            return Err(domain("frame timestamps must increase"));
        }
        check_same_shape(&w[0].cloud, &w[1].cloud)?;
    }
    for f in frames {
        require_dims(f, 2, "pair construction")?;
    }
    let (base, next) = match methodology {
        Methodology::D2D => (&frames[1], &frames[2]),
        _ => (&frames[0], &frames[1]),
    };
    let (input, target) = match methodology {
        Methodology::P2P => (PairData::Cloud(base.cloud.clone()), PairData::Cloud(next.cloud.clone())),
        Methodology::P2D => (
            PairData::Cloud(base.cloud.clone()),
            PairData::Diff(DiffCloud::between(&base.cloud, &next.cloud)?),
        ),
        Methodology::D2D => (
            PairData::Diff(DiffCloud::between(&frames[0].cloud, &base.cloud)?),
            PairData::Diff(DiffCloud::between(&base.cloud, &next.cloud)?),
        ),
    };
    Ok(TrainingPair {
        methodology,
        t: base.t,
        input,
        target,
        base: base.cloud.clone(),
    })
}

/// `base + delta`, row by row.
pub fn compose_prediction(delta: &DiffCloud, base: &PointCloud) -> Result<PointCloud> {
    check_same_shape(delta.deltas(), base)?;
    let coords = base
        .as_slice()
        .iter()
        .zip(delta.deltas().as_slice())
        .map(|(b, d)| b + d)
        .collect();
    PointCloud::new(base.dims(), coords)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrepParams {
    pub z_min: f64,
    pub range: f64,
    /// Points per frame after subsampling.
    pub n: usize,
}

impl Default for PrepParams {
    fn default() -> Self {
        PrepParams {
            z_min: DEFAULT_Z_MIN,
            range: DEFAULT_RANGE,
            n: 1024,
        }
    }
}

/// Ground removal, projection and range clipping of a raw 3D frame.
pub fn preprocess(f: &Frame, params: &PrepParams) -> Result<Frame> {
    let above = remove_ground(f, &HeightThreshold { z_min: params.z_min })?;
    clip_range(&project_xy(&above)?, params.range)
}

/// Every pair of `methodology` along a raw 3D sequence. The pair whose base
/// frame has timestamp `t` normalizes all of its frames with `seed ^ t`.
pub fn build_pairs(
    frames: &[Frame],
    methodology: Methodology,
    params: &PrepParams,
    seed: u64,
    exec: Exec,
) -> Result<Vec<TrainingPair>> {
    let k = methodology.frame_count();
    if frames.len() < k {
        return Err(domain(format!(
            "{methodology} needs at least {k} frames, sequence has {}",
            frames.len()
        )));
    }
    let prepped = frames
        .iter()
        .map(|f| preprocess(f, params))
        .collect::<Result<Vec<_>>>()?;
    let starts = prepped.len() - k + 1;
    exec.map(starts, |s| {
        let window = &prepped[s..s + k];
        let base_t = window[k - 2].t;
        let normalized = window
            .iter()
            .map(|f| normalize_frame(f, params.n, seed ^ base_t, Exec::Sequential))
            .collect::<Result<Vec<_>>>()?;
        make_pair(&normalized, methodology)
    })
    .into_iter()
    .collect()
}

/// Boolean occupancy over `[-extent, extent]^2`; row 0 is the southmost.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    width: usize,
    height: usize,
    cell_size: f64,
    extent: f64,
    cells: Vec<bool>,
}

impl OccupancyGrid {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    /// World coordinates of the lower-left grid corner.
    pub fn origin(&self) -> [f64; 2] {
        [-self.extent, -self.extent]
    }

    /// Occupancy of column `ix` (x axis) and row `iy` (y axis).
    pub fn get(&self, ix: usize, iy: usize) -> bool {
        self.cells[iy * self.width + ix]
    }

    pub fn occupied(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, &c)| c)
            .map(|(k, _)| (k % self.width, k / self.width))
    }

    pub fn occupied_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// ASCII graymap, north up: 0 free, 255 occupied.
    pub fn to_pgm(&self) -> String {
        let mut out = format!("P2\n{} {}\n255\n", self.width, self.height);
        for iy in (0..self.height).rev() {
            let row: Vec<&str> = (0..self.width)
                .map(|ix| if self.get(ix, iy) { "255" } else { "0" })
                .collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn sidecar_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Sidecar {
            cell_size: Num,
            extent: Num,
            origin: [Num; 2],
            width: usize,
            height: usize,
        }
        let o = self.origin();
        Ok(to_json_string(&Sidecar {
            cell_size: Num(self.cell_size),
            extent: Num(self.extent),
            origin: [Num(o[0]), Num(o[1])],
            width: self.width,
            height: self.height,
        })?)
    }
}

fn cell_index(v: f64, extent: f64, cell_size: f64, cells: usize) -> Option<usize> {
    if !(-extent..=extent).contains(&v) {
        return None;
    }
    let k = ((v + extent) / cell_size).floor() as usize;
    Some(k.min(cells - 1))
}

pub fn rasterize(pc: &PointCloud, cell_size: f64, extent: f64) -> Result<OccupancyGrid> {
    if !(cell_size > 0.0) || !(extent > 0.0) || !cell_size.is_finite() || !extent.is_finite() {
        return Err(domain(format!(
            "cell size and extent must be positive, got {cell_size} and {extent}"
        )));
    }
    if pc.dims() != 2 {
        return Err(domain(format!("rasterization needs 2-d points, got {}-d", pc.dims())));
    }
    let cells = ((2.0 * extent / cell_size).ceil() as usize).max(1);
    let mut grid = OccupancyGrid {
        width: cells,
        height: cells,
        cell_size,
        extent,
        cells: vec![false; cells * cells],
    };
    for p in pc.points() {
        if let (Some(ix), Some(iy)) = (
            cell_index(p[0], extent, cell_size, cells),
            cell_index(p[1], extent, cell_size, cells),
        ) {
            grid.cells[iy * cells + ix] = true;
        }
    }
    Ok(grid)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PredictionScores {
    pub chamfer: f64,
    pub emd: f64,
}

/// Chamfer distance and EMD; EMD is exact up to 64 points and the Sinkhorn
/// transport cost beyond.
pub fn evaluate_prediction(
    pred: &PointCloud,
    truth: &PointCloud,
    params: &SinkhornParams,
) -> Result<PredictionScores> {
    let mode = if pred.len() <= EXACT_EMD_MAX_POINTS {
        EmdMode::Exact
    } else {
        EmdMode::Sinkhorn
    };
    Ok(PredictionScores {
        chamfer: chamfer_with(pred, truth, Exec::default())?,
        emd: emd(pred, truth, mode, params)?,
    })
}

/// Frames of a directory of `NNNNNN.xyz` files, ordered by index. Other files
/// are ignored.
pub fn load_sequence(dir: &Path) -> Result<Vec<Frame>> {
    let mut entries: Vec<(u64, PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let index = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_suffix(".xyz"))
            .filter(|stem| !stem.is_empty() && stem.bytes().all(|b| b.is_ascii_digit()))
            .and_then(|stem| stem.parse::<u64>().ok());
        if let Some(t) = index {
            entries.push((t, path));
        }
    }
    entries.sort();
    if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(domain(format!("duplicate frame index {} in {}", w[0].0, dir.display())));
    }
    entries
        .into_iter()
        .map(|(t, path)| {
            let cloud = read_xyz(&path)?.cloud;
            if cloud.dims() != 3 {
                return Err(domain(format!("{} is not a 3-d frame", path.display())));
            }
            Ok(Frame::new(cloud, t))
        })
        .collect()
}

#[derive(Serialize)]
struct PairJson<'a> {
    methodology: &'a str,
    t: u64,
    seed: u64,
    n: usize,
    preprocessing: PrepJson,
    input_kind: &'static str,
    target_kind: &'static str,
    base: Vec<Vec<Num>>,
    input: Vec<Vec<Num>>,
    target: Vec<Vec<Num>>,
}

#[derive(Serialize)]
struct PrepJson {
    z_min: Num,
    range: Num,
    sort_order: u32,
}

fn kind(d: &PairData) -> &'static str {
    match d {
        PairData::Cloud(_) => "cloud",
        PairData::Diff(_) => "diff",
    }
}

pub fn pair_file_name(pair: &TrainingPair) -> String {
    format!("pair_{}_{}.json", pair.t, pair.methodology)
}

pub fn pair_to_json(pair: &TrainingPair, params: &PrepParams, seed: u64) -> Result<String> {
    Ok(to_json_string(&PairJson {
        methodology: pair.methodology.name(),
        t: pair.t,
        seed,
        n: pair.base.len(),
        preprocessing: PrepJson {
            z_min: Num(params.z_min),
            range: Num(params.range),
            sort_order: DEFAULT_SORT_ORDER,
        },
        input_kind: kind(&pair.input),
        target_kind: kind(&pair.target),
        base: rows(pair.base.as_slice(), 2),
        input: rows(pair.input.cloud().as_slice(), 2),
        target: rows(pair.target.cloud().as_slice(), 2),
    })?)
}

/// Writes every pair to `out_dir/pair_<t>_<methodology>.json`; returns the paths.
pub fn export_pairs(
    pairs: &[TrainingPair],
    params: &PrepParams,
    seed: u64,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    pairs
        .iter()
        .map(|p| {
            let path = out_dir.join(pair_file_name(p));
            write_atomic(&path, pair_to_json(p, params, seed)?.as_bytes())?;
            Ok(path)
        })
        .collect()
}

/// Writes `<stem>.pgm` and `<stem>.json` next to each other.
pub fn export_grid(grid: &OccupancyGrid, pgm_path: &Path) -> Result<()> {
    write_atomic(pgm_path, grid.to_pgm().as_bytes())?;
    write_atomic(&pgm_path.with_extension("json"), grid.sidecar_json()?.as_bytes())
}
