// SPDX-License-Identifier: Apache-2.0

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use p2p_core::metrics::{chamfer_with, compare_orderings_with, emd as emd_distance, EmdMode};
use p2p_core::nn::blocks::DEFAULT_MFA_BRANCHES;
use p2p_core::nn::{
    grad_check, Aggregated, Bfa, Block, ChannelAttention, ConvSpec, GradCheckReport, Mfa, ResUnit,
    SeparableConv, Tensor,
};
use p2p_core::numfmt::{format_g17, to_json_string, Num};
use p2p_core::occupancy::{
    build_pairs, compose_prediction, export_grid, export_pairs, load_sequence, rasterize, PairData,
    TrainingPair, DEFAULT_CELL_SIZE,
};
use p2p_core::ot::{sinkhorn_distance_with, EXACT_EMD_MAX_POINTS};
use p2p_core::xyz::{read_xyz, write_atomic};
use p2p_core::cloud::order_by_with;
use p2p_core::{CurveConfig, Exec, PointCloud};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::{BlockArg, Failure, EXIT_IO, EXIT_NUMERIC};

pub fn require_inputs(paths: &[&PathBuf]) -> Result<(), Failure> {
    for p in paths {
        if !p.exists() {
            return Err(Failure::new(EXIT_IO, format!("{}: no such file or directory", p.display())));
        }
    }
    Ok(())
}

fn read_cloud(path: &Path) -> Result<PointCloud, Failure> {
    read_xyz(path)
        .map(|f| f.cloud)
        .map_err(|e| with_path(path, e))
}

fn with_path(path: &Path, e: p2p_core::Error) -> Failure {
    let mut f = Failure::from(e);
    f.message = format!("{}: {}", path.display(), f.message);
    f
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = to_json_string(value).map_err(p2p_core::Error::from)?;
    write_atomic(path, text.as_bytes()).map_err(|e| with_path(path, e))
}

pub fn sort(input: &Path, output: &Path, perm_path: &Path, cfg: &RunConfig) -> Result<(), Failure> {
    let file = read_xyz(input).map_err(|e| with_path(input, e))?;
    let curve = CurveConfig::new(file.cloud.dims(), cfg.order)?;
    let perm = order_by_with(&file.cloud, cfg.scheme, &curve, Exec::default())?;
    let mut perm_text = String::new();
    for i in perm.as_slice() {
        writeln!(perm_text, "{i}").expect("writing to a string");
    }
    write_atomic(output, file.render_reordered(perm.as_slice()).as_bytes())
        .map_err(|e| with_path(output, e))?;
    write_atomic(perm_path, perm_text.as_bytes()).map_err(|e| with_path(perm_path, e))
}

pub fn locality(input: &Path, output: &Path, cfg: &RunConfig) -> Result<(), Failure> {
    let pc = read_cloud(input)?;
    let curve = CurveConfig::new(pc.dims(), cfg.order)?;
    let report = compare_orderings_with(&pc, &curve, Exec::default())?;
    let mut csv = String::from("scheme,mean_consecutive_distance,normalized_score\n");
    for e in &report.entries {
        writeln!(
            csv,
            "{},{},{}",
            e.scheme.name(),
            format_g17(e.mean_consecutive_distance),
            format_g17(e.normalized_score)
        )
        .expect("writing to a string");
    }
    write_atomic(output, csv.as_bytes()).map_err(|e| with_path(output, e))
}

#[derive(Serialize)]
struct SinkhornOut {
    distance: Num,
    transport_cost: Num,
    entropy: Num,
    iters: usize,
    converged: bool,
    marginal_violation: Num,
    epsilon: Num,
    metric: &'static str,
}

pub fn sinkhorn(a: &Path, b: &Path, output: &Path, cfg: &RunConfig) -> Result<(), Failure> {
    let (x, y) = (read_cloud(a)?, read_cloud(b)?);
    let d = sinkhorn_distance_with(&x, &y, cfg.metric, &cfg.sinkhorn(), Exec::default())?;
    write_json(
        output,
        &SinkhornOut {
            distance: Num(d.distance),
            transport_cost: Num(d.transport_cost),
            entropy: Num(d.entropy),
            iters: d.solution.iters,
            converged: d.solution.converged,
            marginal_violation: Num(d.solution.marginal_violation),
            epsilon: Num(cfg.epsilon),
            metric: cfg.metric.name(),
        },
    )
}

#[derive(Serialize)]
struct EmdOut {
    emd: Num,
    mode: EmdMode,
}

pub fn emd(a: &Path, b: &Path, output: &Path, cfg: &RunConfig) -> Result<(), Failure> {
    let (x, y) = (read_cloud(a)?, read_cloud(b)?);
    let mode = cfg.emd_mode.unwrap_or(if x.len() <= EXACT_EMD_MAX_POINTS {
        EmdMode::Exact
    } else {
        EmdMode::Sinkhorn
    });
    let value = emd_distance(&x, &y, mode, &cfg.sinkhorn())?;
    write_json(output, &EmdOut { emd: Num(value), mode })
}

pub fn chamfer(a: &Path, b: &Path, output: &Path) -> Result<(), Failure> {
    let (x, y) = (read_cloud(a)?, read_cloud(b)?);
    #[derive(Serialize)]
    struct Out {
        chamfer: Num,
    }
    let value = chamfer_with(&x, &y, Exec::default())?;
    write_json(output, &Out { chamfer: Num(value) })
}

#[derive(Serialize)]
struct ManifestEntry {
    t: u64,
    pair: String,
    grid: String,
    grid_meta: String,
    occupied_cells: usize,
}

#[derive(Serialize)]
struct Manifest {
    methodology: &'static str,
    seed: u64,
    n: usize,
    frames: usize,
    z_min: Num,
    range: Num,
    cell_size: Num,
    extent: Num,
    pairs: Vec<ManifestEntry>,
}

/// The true cloud at `t + 1` of a pair.
fn next_cloud(pair: &TrainingPair) -> Result<PointCloud, Failure> {
    Ok(match &pair.target {
        PairData::Cloud(pc) => pc.clone(),
        PairData::Diff(d) => compose_prediction(d, &pair.base)?,
    })
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub fn occupancy_prep(seq_dir: &Path, out_dir: &Path, cfg: &RunConfig) -> Result<(), Failure> {
    let frames = load_sequence(seq_dir).map_err(|e| with_path(seq_dir, e))?;
    let prep = cfg.prep();
    let pairs = build_pairs(&frames, cfg.methodology, &prep, cfg.seed, Exec::default())?;
    let cell_size = if cfg.cell_size > 0.0 { cfg.cell_size } else { DEFAULT_CELL_SIZE };
    let pair_paths = export_pairs(&pairs, &prep, cfg.seed, out_dir).map_err(|e| with_path(out_dir, e))?;
    let mut entries = Vec::with_capacity(pairs.len());
    for (pair, path) in pairs.iter().zip(&pair_paths) {
        let grid = rasterize(&next_cloud(pair)?, cell_size, cfg.extent)?;
        let pgm = out_dir.join(format!("grid_{}_{}.pgm", pair.t, pair.methodology));
        export_grid(&grid, &pgm).map_err(|e| with_path(&pgm, e))?;
        entries.push(ManifestEntry {
            t: pair.t,
            pair: file_name(path),
            grid: file_name(&pgm),
            grid_meta: file_name(&pgm.with_extension("json")),
            occupied_cells: grid.occupied_count(),
        });
    }
    write_json(
        &out_dir.join("manifest.json"),
        &Manifest {
            methodology: cfg.methodology.name(),
            seed: cfg.seed,
            n: cfg.n,
            frames: frames.len(),
            z_min: Num(cfg.z_min),
            range: Num(cfg.range),
            cell_size: Num(cell_size),
            extent: Num(cfg.extent),
            pairs: entries,
        },
    )
}

/// Largest acceptable relative error for each block.
pub fn tolerance(block: BlockArg) -> f64 {
    match block {
        BlockArg::Conv1d => 1e-6,
        _ => 1e-4,
    }
}

fn block_name(block: BlockArg) -> &'static str {
    match block {
        BlockArg::Conv1d => "conv1d",
        BlockArg::Separable => "separable",
        BlockArg::ResUnit => "res_unit",
        BlockArg::ChannelAttention => "channel_attention",
        BlockArg::Mfa => "mfa",
        BlockArg::Bfa => "bfa",
        BlockArg::Aggregated => "aggregated",
    }
}

fn check<B: Block + Clone>(
    block: B,
    rng: &mut ChaCha8Rng,
    n: usize,
    c: usize,
    step: f64,
) -> p2p_core::Result<GradCheckReport> {
    let inputs: Vec<Tensor> = (0..block.input_count())
        .map(|_| Tensor::random(n, c, 1.0, rng))
        .collect();
    grad_check(&block, &inputs, step)
}

pub fn run_gradcheck(block: BlockArg, cfg: &RunConfig) -> p2p_core::Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (n, c, step) = (cfg.block_points, cfg.block_channels, cfg.step);
    let r = &mut rng;
    match block {
        BlockArg::Conv1d => check(ConvSpec::random(c, c, 3, 1, r)?, r, n, c, step),
        BlockArg::Separable => check(SeparableConv::random(c, c, 3, 2, r)?, r, n, c, step),
        BlockArg::ResUnit => check(ResUnit::random(c, 3, r)?, r, n, c, step),
        BlockArg::ChannelAttention => {
            check(ChannelAttention::random(c, 2.min(c), r)?, r, n, c, step)
        }
        BlockArg::Mfa => check(Mfa::random(c, c, c, &DEFAULT_MFA_BRANCHES, r)?, r, n, c, step),
        BlockArg::Bfa => check(Bfa::random(c, c, 1, r)?, r, n, c, step),
        BlockArg::Aggregated => check(Aggregated::random(c, c, 2.min(c), r)?, r, n, c, step),
    }
}

#[derive(Serialize)]
struct GradcheckOut {
    block: &'static str,
    max_rel_error: Num,
    tolerance: Num,
    passed: bool,
    worst: String,
    checked: usize,
    points: usize,
    channels: usize,
    step: Num,
    seed: u64,
}

pub fn gradcheck(block: BlockArg, output: &Path, cfg: &RunConfig) -> Result<(), Failure> {
    let report = run_gradcheck(block, cfg)?;
    let tol = tolerance(block);
    let passed = report.max_rel_error <= tol;
    write_json(
        output,
        &GradcheckOut {
            block: block_name(block),
            max_rel_error: Num(report.max_rel_error),
            tolerance: Num(tol),
            passed,
            worst: report.worst.clone(),
            checked: report.checked,
            points: cfg.block_points,
            channels: cfg.block_channels,
            step: Num(cfg.step),
            seed: cfg.seed,
        },
    )?;
    if passed {
        Ok(())
    } else {
        Err(Failure::new(
            EXIT_NUMERIC,
            format!(
                "{} gradient error {:e} exceeds {:e} at {}",
                block_name(block),
                report.max_rel_error,
                tol,
                report.worst
            ),
        ))
    }
}
