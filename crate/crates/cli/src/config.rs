// SPDX-License-Identifier: Apache-2.0

//! Run configuration. Precedence: built-in defaults, then `--config`, then flags.

use std::path::Path;

use p2p_core::metrics::EmdMode;
use p2p_core::occupancy::{
    Methodology, PrepParams, DEFAULT_CELL_SIZE, DEFAULT_EXTENT, DEFAULT_RANGE, DEFAULT_Z_MIN,
};
use p2p_core::ot::{DEFAULT_EPSILON, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use p2p_core::cloud::DEFAULT_SORT_ORDER;
use p2p_core::{Metric, OrderScheme, SinkhornParams};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Curve order (bits per axis).
    pub order: u32,
    pub scheme: OrderScheme,
    pub epsilon: f64,
    pub iters: usize,
    pub tol: f64,
    pub log_domain: bool,
    pub metric: Metric,
    /// `None` picks exact up to 64 points and Sinkhorn beyond.
    pub emd_mode: Option<EmdMode>,
    pub methodology: Methodology,
    pub n: usize,
    pub z_min: f64,
    pub range: f64,
    pub cell_size: f64,
    pub extent: f64,
    pub block_points: usize,
    pub block_channels: usize,
    pub step: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            order: DEFAULT_SORT_ORDER,
            scheme: OrderScheme::Hilbert,
            epsilon: DEFAULT_EPSILON,
            iters: DEFAULT_MAX_ITERS,
            tol: DEFAULT_TOL,
            log_domain: true,
            metric: Metric::SqEuclidean,
            emd_mode: None,
            methodology: Methodology::P2D,
            n: PrepParams::default().n,
            z_min: DEFAULT_Z_MIN,
            range: DEFAULT_RANGE,
            cell_size: DEFAULT_CELL_SIZE,
            extent: DEFAULT_EXTENT,
            block_points: 8,
            block_channels: 4,
            step: 1e-5,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(ConfigError::Io)?;
        serde_json::from_str(&text).map_err(ConfigError::Parse)
    }

    pub fn sinkhorn(&self) -> SinkhornParams {
        SinkhornParams {
            epsilon: self.epsilon,
            max_iters: self.iters,
            tol: self.tol,
            log_domain: self.log_domain,
        }
    }

    pub fn prep(&self) -> PrepParams {
        PrepParams {
            z_min: self.z_min,
            range: self.range,
            n: self.n,
        }
    }
}

#[derive(Debug)]
pub enum ConfigError {
    Io(std::io::Error),
    Parse(serde_json::Error),
}
