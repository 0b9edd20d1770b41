// SPDX-License-Identifier: Apache-2.0

//! Locality-preserving Hilbert ordering of point clouds, entropic optimal
//! transport distances, point-cloud metrics, toy-scale 1D-convolutional
//! network blocks over sorted clouds, and LiDAR occupancy preprocessing.

// `!(x > 0.0)` style guards deliberately reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assignment;
pub mod cloud;
pub mod error;
pub mod exec;
pub mod hilbert;
pub mod metrics;
pub mod nn;
pub mod numfmt;
pub mod occupancy;
pub mod ot;
pub mod radix;
pub mod xyz;

pub use cloud::{
    bounding_box, fps_indices, fps_subsample, hilbert_sort, order_by, quantize, BoundingBox,
    OrderScheme, Permutation, PointCloud,
};
pub use error::{Error, Result};
pub use exec::Exec;
pub use hilbert::{
    hilbert_decode, hilbert_encode, morton_decode, morton_encode, CurveConfig, GridCoordinate,
    HilbertIndex,
};
pub use ot::{CostMatrix, Metric, SinkhornParams, TransportPlan};
pub use occupancy::{Frame, Methodology, OccupancyGrid, TrainingPair};
