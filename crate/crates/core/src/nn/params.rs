// SPDX-License-Identifier: Apache-2.0

//! JSON container for block parameters.
//!
//! ```json
//! {
//!   "format": "p2p-params",
//!   "version": 1,
//!   "arrays": [
//!     { "name": "mfa.branch0.weight", "shape": [3, 4], "values": [ ... ] }
//!   ]
//! }
//! ```
//!
//! `values` are row-major. Arrays appear in the block's parameter visit order.

use serde::{Deserialize, Serialize};

use super::blocks::Block;
use crate::error::{shape, Result};
use crate::numfmt::{to_json_string, Num};

pub const FORMAT: &str = "p2p-params";
pub const VERSION: u32 = 1;

#[derive(Serialize)]
struct ArrayOut {
    name: String,
    shape: [usize; 2],
    values: Vec<Num>,
}

#[derive(Serialize)]
struct ContainerOut {
    format: &'static str,
    version: u32,
    arrays: Vec<ArrayOut>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

#[derive(Deserialize)]
struct ContainerIn {
    format: String,
    version: u32,
    arrays: Vec<NamedArray>,
}

pub fn params_to_json<B: Block + ?Sized>(block: &B) -> Result<String> {
    let mut arrays = Vec::new();
    block.visit("", &mut |name, t| {
        arrays.push(ArrayOut {
            name,
            shape: [t.rows(), t.cols()],
            values: t.data().iter().map(|&v| Num(v)).collect(),
        })
    });
    Ok(to_json_string(&ContainerOut {
        format: FORMAT,
        version: VERSION,
        arrays,
    })?)
}

pub fn parse_params(json: &str) -> Result<Vec<NamedArray>> {
    let c: ContainerIn = serde_json::from_str(json)?;
    if c.format != FORMAT || c.version != VERSION {
        return Err(shape(format!(
            "unsupported parameter container {} v{}",
            c.format, c.version
        )));
    }
    Ok(c.arrays)
}

/// Overwrites the parameters of `block` from a container with matching names
/// and shapes.
pub fn load_params<B: Block + ?Sized>(block: &mut B, json: &str) -> Result<()> {
    let arrays = parse_params(json)?;
    let mut expected = Vec::new();
    block.visit("", &mut |name, t| expected.push((name, [t.rows(), t.cols()])));
    if expected.len() != arrays.len() {
        return Err(shape(format!(
            "block has {} parameter arrays, container has {}",
            expected.len(),
            arrays.len()
        )));
    }
    for ((name, dims), a) in expected.iter().zip(&arrays) {
        if *name != a.name || *dims != a.shape || a.values.len() != dims[0] * dims[1] {
            return Err(shape(format!(
                "parameter '{}' {:?} does not match '{}' {:?}",
                a.name, a.shape, name, dims
            )));
        }
        if a.values.iter().any(|v| !v.is_finite()) {
            return Err(shape(format!("parameter '{}' has non-finite values", a.name)));
        }
    }
    let mut it = arrays.into_iter();
    block.visit_mut(&mut |t| {
        let a = it.next().expect("counts checked");
        t.data_mut().copy_from_slice(&a.values);
    });
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::blocks::{Aggregated, ChannelAttention};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip() {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let agg = Aggregated::random(3, 4, 2, &mut r).unwrap();
        let json = params_to_json(&agg).unwrap();
        let mut other = Aggregated::random(3, 4, 2, &mut r).unwrap();
        assert_ne!(other, agg);
        load_params(&mut other, &json).unwrap();
        assert_eq!(other, agg);
        let arrays = parse_params(&json).unwrap();
        assert_eq!(arrays[0].name, "mfa.branch0.weight");
    }

    #[test]
    fn rejects_mismatches() {
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let ca = ChannelAttention::random(4, 2, &mut r).unwrap();
        let json = params_to_json(&ca).unwrap();
        let mut wrong = ChannelAttention::random(6, 2, &mut r).unwrap();
        assert!(load_params(&mut wrong, &json).is_err());
        assert!(parse_params(r#"{"format":"other","version":1,"arrays":[]}"#).is_err());
    }
}
