// SPDX-License-Identifier: Apache-2.0

//! Reverse-mode versus central-difference gradient comparison.

use serde::Serialize;

use super::blocks::Block;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{shape, Error, Result};
use crate::numfmt::ser_f64;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    /// Largest `|reverse - numeric| / max(|reverse|, |numeric|, 1e-8)`.
    #[serde(serialize_with = "ser_f64")]
    pub max_rel_error: f64,
    /// Parameter or input entry with the largest error.
    pub worst: String,
    pub checked: usize,
}

/// Loss and reverse-mode gradients of `sum(out^2) / 2`.
pub fn loss_and_grads<B: Block + ?Sized>(
    block: &B,
    inputs: &[Tensor],
) -> Result<(f64, Vec<Tensor>, Vec<Tensor>)> {
    let tape = Tape::new();
    let input_vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let mut params = Vec::new();
    let out = block.record(&tape, &input_vars, &mut params)?;
    let loss = tape.half_sum_squares(out);
    let value = tape.value(loss).get(0, 0);
    if !value.is_finite() {
        return Err(Error::Numeric("non-finite forward value".into()));
    }
    let grads = tape.backward(loss);
    Ok((
        value,
        params.iter().map(|&p| grads.get(p)).collect(),
        input_vars.iter().map(|&v| grads.get(v)).collect(),
    ))
}

fn loss<B: Block + ?Sized>(block: &B, inputs: &[Tensor]) -> Result<f64> {
    Ok(loss_and_grads(block, inputs)?.0)
}

fn with_param<B: Block + ?Sized, T>(block: &mut B, index: usize, f: impl FnOnce(&mut Tensor) -> T) -> T {
    let mut f = Some(f);
    let mut out = None;
    let mut k = 0;
    block.visit_mut(&mut |t| {
        if k == index {
            out = Some((f.take().expect("visited once"))(t));
        }
        k += 1;
    });
    out.expect("parameter index in range")
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares reverse-mode gradients of `sum(out^2) / 2` with respect to every
/// parameter and input entry against central differences of width `step`.
pub fn grad_check<B: Block + Clone>(
    block: &B,
    inputs: &[Tensor],
    step: f64,
) -> Result<GradCheckReport> {
    if !(step > 0.0) {
        return Err(crate::error::domain("finite-difference step must be positive"));
    }
    if inputs.len() != block.input_count() {
        return Err(shape(format!(
            "block takes {} inputs, got {}",
            block.input_count(),
            inputs.len()
        )));
    }
    let (_, param_grads, input_grads) = loss_and_grads(block, inputs)?;
    let mut names = Vec::new();
    block.visit("", &mut |name, _| names.push(name));

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let record = |name: String, analytic: f64, numeric: f64, report: &mut GradCheckReport| {
        let e = rel_error(analytic, numeric);
        report.checked += 1;
        if e > report.max_rel_error || report.worst.is_empty() {
            report.max_rel_error = report.max_rel_error.max(e);
            report.worst = name;
        }
    };

    let mut probe = block.clone();
    for (t, grad) in param_grads.iter().enumerate() {
        for e in 0..grad.data().len() {
            let orig = with_param(&mut probe, t, |p| p.data()[e]);
            with_param(&mut probe, t, |p| p.data_mut()[e] = orig + step);
            let up = loss(&probe, inputs)?;
            with_param(&mut probe, t, |p| p.data_mut()[e] = orig - step);
            let down = loss(&probe, inputs)?;
            with_param(&mut probe, t, |p| p.data_mut()[e] = orig);
            let numeric = (up - down) / (2.0 * step);
            record(format!("{}[{e}]", names[t]), grad.data()[e], numeric, &mut report);
        }
    }

    let mut shifted = inputs.to_vec();
    for (k, grad) in input_grads.iter().enumerate() {
        for e in 0..grad.data().len() {
            let orig = shifted[k].data()[e];
            shifted[k].data_mut()[e] = orig + step;
            let up = loss(block, &shifted)?;
            shifted[k].data_mut()[e] = orig - step;
            let down = loss(block, &shifted)?;
            shifted[k].data_mut()[e] = orig;
            let numeric = (up - down) / (2.0 * step);
            record(format!("input{k}[{e}]"), grad.data()[e], numeric, &mut report);
        }
    }
    Ok(report)
}
