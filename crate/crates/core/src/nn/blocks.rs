// SPDX-License-Identifier: Apache-2.0

//! Network blocks over Hilbert-sorted point features.
//!
//! Every block maps `(n, C_in)` tensors to `(n, C_out)` with `n` unchanged:
//! convolutions run along the point axis with stride 1 and zero "same"
//! padding, so an output row only sees inputs within the block's static
//! receptive field.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{shape, Result};

/// A network block with learnable parameter tensors.
///
/// [`Block::record`] must register parameters on the tape (via
/// `params.push(tape.leaf(..))`) in exactly the order [`Block::visit`]
/// reports them.
pub trait Block {
    /// Number of input tensors consumed by [`Block::record`].
    fn input_count(&self) -> usize;

    /// Appends the forward pass to `tape`, returning the output node.
    fn record(&self, tape: &Tape, inputs: &[Var], params: &mut Vec<Var>) -> Result<Var>;

    /// Visits every parameter tensor with its dotted name.
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor));

    /// Visits every parameter tensor mutably, in [`Block::visit`] order.
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor));

    /// Points on either side of an output row that can influence it.
    fn receptive_radius(&self) -> usize;
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Runs a block on concrete inputs.
pub fn forward<B: Block + ?Sized>(block: &B, inputs: &[&Tensor]) -> Result<Tensor> {
    if inputs.len() != block.input_count() {
        return Err(shape(format!(
            "block takes {} inputs, got {}",
            block.input_count(),
            inputs.len()
        )));
    }
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf((*t).clone())).collect();
    let out = block.record(&tape, &vars, &mut Vec::new())?;
    Ok(tape.value(out))
}

/// A 1D convolution layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub dilation: usize,
    /// `(kernel * in_channels) x out_channels`; row `k * in_channels + c`.
    pub weights: Tensor,
    /// `1 x out_channels`.
    pub bias: Tensor,
}

impl ConvSpec {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        dilation: usize,
        weights: Tensor,
        bias: Tensor,
    ) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 {
            return Err(shape("convolution channels must be positive"));
        }
        if kernel.is_multiple_of(2) || dilation == 0 {
            return Err(shape(format!(
                "kernel {kernel} must be odd and dilation {dilation} positive"
            )));
        }
        if weights.shape() != (kernel * in_channels, out_channels) {
            return Err(shape(format!(
                "weights {:?}, expected ({}, {out_channels})",
                weights.shape(),
                kernel * in_channels
            )));
        }
        if bias.shape() != (1, out_channels) {
            return Err(shape(format!("bias {:?} for {out_channels} outputs", bias.shape())));
        }
        Ok(Self {
            in_channels,
            out_channels,
            kernel,
            dilation,
            weights,
            bias,
        })
    }

    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize, dilation: usize) -> Result<Self> {
        Self::new(
            in_channels,
            out_channels,
            kernel,
            dilation,
            Tensor::zeros(kernel * in_channels, out_channels),
            Tensor::zeros(1, out_channels),
        )
    }

    /// Kernel-1 identity map on `channels` channels.
    pub fn identity(channels: usize) -> Self {
        Self::new(
            channels,
            channels,
            1,
            1,
            Tensor::identity(channels),
            Tensor::zeros(1, channels),
        )
        .expect("identity convolution is well formed")
    }

    /// Uniform initialization in `±1/sqrt(kernel * in_channels)`.
    pub fn random<R: Rng>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        dilation: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let scale = 1.0 / ((kernel * in_channels).max(1) as f64).sqrt();
        Self::new(
            in_channels,
            out_channels,
            kernel,
            dilation,
            Tensor::random(kernel * in_channels, out_channels, scale, rng),
            Tensor::random(1, out_channels, scale, rng),
        )
    }

    fn check_input(&self, tape: &Tape, x: Var) -> Result<()> {
        let (_, c) = tape.shape(x);
        if c != self.in_channels {
            return Err(shape(format!(
                "convolution expects {} channels, got {c}",
                self.in_channels
            )));
        }
        Ok(())
    }

    pub(crate) fn apply(&self, tape: &Tape, x: Var, params: &mut Vec<Var>) -> Result<Var> {
        self.check_input(tape, x)?;
        let w = tape.leaf(self.weights.clone());
        let b = tape.leaf(self.bias.clone());
        params.extend([w, b]);
        tape.conv1d(x, w, b, self.dilation)
    }
}

impl Block for ConvSpec {
    fn input_count(&self) -> usize {
        1
    }

    fn record(&self, tape: &Tape, inputs: &[Var], params: &mut Vec<Var>) -> Result<Var> {
        self.apply(tape, inputs[0], params)
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        f(join(prefix, "weight"), &self.weights);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        f(&mut self.weights);
        f(&mut self.bias);
    }

    fn receptive_radius(&self) -> usize {
        (self.kernel - 1) * self.dilation / 2
    }
}

/// Same-padded 1D convolution of `x` by `spec`.
pub fn conv1d(x: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    forward(spec, &[x])
}

/// Inference-form batch normalization: `x * scale + shift` per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelAffine {
    pub scale: Tensor,
    pub shift: Tensor,
}

impl ChannelAffine {
    pub fn identity(channels: usize) -> Self {
        Self {
            scale: Tensor::from_fn(1, channels, |_, _| 1.0),
            shift: Tensor::zeros(1, channels),
        }
    }

    pub fn random<R: Rng>(channels: usize, rng: &mut R) -> Self {
        Self {
            scale: Tensor::from_fn(1, channels, |_, _| rng.gen_range(0.5..1.5)),
            shift: Tensor::random(1, channels, 0.1, rng),
        }
    }

    fn apply(&self, tape: &Tape, x: Var, params: &mut Vec<Var>) -> Result<Var> {
        let s = tape.leaf(self.scale.clone());
        let t = tape.leaf(self.shift.clone());
        params.extend([s, t]);
        let scaled = tape.scale_channels(x, s)?;
        tape.shift_channels(scaled, t)
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        f(join(prefix, "scale"), &self.scale);
        f(join(prefix, "shift"), &self.shift);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        f(&mut self.scale);
        f(&mut self.shift);
    }
}

/// Depthwise convolution followed by a kernel-1 pointwise convolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparableConv {
    pub dilation: usize,
    /// `kernel x channels`.
    pub depthwise: Tensor,
    /// `1 x channels`.
    pub depthwise_bias: Tensor,
    pub pointwise: ConvSpec,
}

impl SeparableConv {
    pub fn random<R: Rng>(
        channels: usize,
        out_channels: usize,
        kernel: usize,
        dilation: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if kernel.is_multiple_of(2) || dilation == 0 {
            return Err(shape(format!(
                "kernel {kernel} must be odd and dilation {dilation} positive"
            )));
        }
        let scale = 1.0 / (kernel as f64).sqrt();
        Ok(Self {
            dilation,
            depthwise: Tensor::random(kernel, channels, scale, rng),
            depthwise_bias: Tensor::random(1, channels, scale, rng),
            pointwise: ConvSpec::random(channels, out_channels, 1, 1, rng)?,
        })
    }
}

impl Block for SeparableConv {
    fn input_count(&self) -> usize {
        1
    }

    fn record(&self, tape: &Tape, inputs: &[Var], params: &mut Vec<Var>) -> Result<Var> {
        let w = tape.leaf(self.depthwise.clone());
        let b = tape.leaf(self.depthwise_bias.clone());
        params.extend([w, b]);
        let depth = tape.depthwise_conv1d(inputs[0], w, b, self.dilation)?;
        self.pointwise.apply(tape, depth, params)
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        f(join(prefix, "depthwise.weight"), &self.depthwise);
        f(join(prefix, "depthwise.bias"), &self.depthwise_bias);
        self.pointwise.visit(&join(prefix, "pointwise"), f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        f(&mut self.depthwise);
        f(&mut self.depthwise_bias);
        self.pointwise.visit_mut(f);
    }

    fn receptive_radius(&self) -> usize {
        (self.depthwise.rows() - 1) * self.dilation / 2
    }
}

/// Residual unit: `relu(x + bn2(conv2(relu(bn1(conv1(x))))))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResUnit {
    pub conv1: ConvSpec,
    pub norm1: ChannelAffine,
    pub conv2: ConvSpec,
    pub norm2: ChannelAffine,
}

impl ResUnit {
    pub fn random<R: Rng>(channels: usize, kernel: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            conv1: ConvSpec::random(channels, channels, kernel, 1, rng)?,
            norm1: ChannelAffine::random(channels, rng),
            conv2: ConvSpec::random(channels, channels, kernel, 1, rng)?,
            norm2: ChannelAffine::random(channels, rng),
        })
    }
}

impl Block for ResUnit {
    fn input_count(&self) -> usize {
        1
    }

    fn record(&self, tape: &Tape, inputs: &[Var], params: &mut Vec<Var>) -> Result<Var> {
        let x = inputs[0];
        let h = self.conv1.apply(tape, x, params)?;
        let h = self.norm1.apply(tape, h, params)?;
        let h = tape.relu(h);
        let h = self.conv2.apply(tape, h, params)?;
        let h = self.norm2.apply(tape, h, params)?;
        let sum = tape.add(x, h)?;
        Ok(tape.relu(sum))
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.norm1.visit(&join(prefix, "norm1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
        self.norm2.visit(&join(prefix, "norm2"), f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        self.conv1.visit_mut(f);
        self.norm1.visit_mut(f);
        self.conv2.visit_mut(f);
        self.norm2.visit_mut(f);
    }

    fn receptive_radius(&self) -> usize {
        self.conv1.receptive_radius() + self.conv2.receptive_radius()
    }
}

/// Squeeze-and-excitation channel gating.
///
/// The per-channel mean over points passes through `squeeze` (C -> C/r),
/// ReLU, `excite` (C/r -> C) and a sigmoid; the input is then scaled per
/// channel by the resulting factors in `(0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelAttention {
    pub squeeze: ConvSpec,
    pub excite: ConvSpec,
}

impl ChannelAttention {
    pub fn new(squeeze: ConvSpec, excite: ConvSpec) -> Result<Self> {
        if squeeze.kernel != 1 || excite.kernel != 1 {
            return Err(shape("channel attention layers are kernel-1"));
        }
        if squeeze.out_channels != excite.in_channels || excite.out_channels != squeeze.in_channels {
            return Err(shape("channel attention layers do not compose to C -> C"));
        }
        Ok(Self { squeeze, excite })
    }

    pub fn random<R: Rng>(channels: usize, reduction: usize, rng: &mut R) -> Result<Self> {
        let hidden = (channels / reduction.max(1)).max(1);
        Self::new(
            ConvSpec::random(channels, hidden, 1, 1, rng)?,
            ConvSpec::random(hidden, channels, 1, 1, rng)?,
        )
    }

    pub fn channels(&self) -> usize {
        self.squeeze.in_channels
    }
}

impl Block for ChannelAttention {
    fn input_count(&self) -> usize {
        1
    }

    fn record(&self, tape: &Tape, inputs: &[Var], params: &mut Vec<Var>) -> Result<Var> {
        let x = inputs[0];
        let pooled = tape.mean_points(x)?;
        let hidden = self.squeeze.apply(tape, pooled, params)?;
        let hidden = tape.relu(hidden);
        let logits = self.excite.apply(tape, hidden, params)?;
        let gate = tape.sigmoid(logits);
        tape.scale_channels(x, gate)
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.squeeze.visit(&join(prefix, "squeeze"), f);
        self.excite.visit(&join(prefix, "excite"), f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        self.squeeze.visit_mut(f);
        self.excite.visit_mut(f);
    }

    /// The pooled gate reads every point, but only through a global mean.
    fn receptive_radius(&self) -> usize {
        usize::MAX
    }
}

pub fn channel_attention(x: &Tensor, p: &ChannelAttention) -> Result<Tensor> {
    forward(p, &[x])
}

/// Multi-scale feature aggregation: parallel convolutions with growing
/// kernels and dilations, concatenated along channels and fused by a
/// kernel-1 convolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mfa {
    pub branches: Vec<ConvSpec>,
    pub fusion: ConvSpec,
}

/// Branch layout of the default MFA block: `(kernel, dilation)` pairs.
pub const DEFAULT_MFA_BRANCHES: [(usize, usize); 3] = [(1, 1), (3, 2), (5, 4)];

impl Mfa {
    pub fn new(branches: Vec<ConvSpec>, fusion: ConvSpec) -> Result<Self> {
        let first = branches.first().ok_or_else(|| shape("MFA needs at least one branch"))?;
        if branches.iter().any(|b| b.in_channels != first.in_channels) {
            return Err(shape("MFA branches disagree on input channels"));
        }
        let concat: usize = branches.iter().map(|b| b.out_channels).sum();
        if fusion.in_channels != concat || fusion.kernel != 1 {
            return Err(shape(format!(
                "MFA fusion must be kernel-1 over {concat} channels"
            )));
        }
        Ok(Self { branches, fusion })
    }

    /// Random block with the given `(kernel, dilation)` branches, each
    /// producing `branch_channels`.
    pub fn random<R: Rng>(
        in_channels: usize,
        branch_channels: usize,
        out_channels: usize,
        layout: &[(usize, usize)],
        rng: &mut R,
    ) -> Result<Self> {
        let branches = layout
            .iter()
            .map(|&(k, d)| ConvSpec::random(in_channels, branch_channels, k, d, rng))
            .collect::<Result<Vec<_>>>()?;
        let fusion = ConvSpec::random(branch_channels * layout.len(), out_channels, 1, 1, rng)?;
        Self::new(branches, fusion)
    }

    pub fn out_channels(&self) -> usize {
        self.fusion.out_channels
    }
}

impl Block for Mfa {
    fn input_count(&self) -> usize {
        1
    }

    fn record(&self, tape: &Tape, inputs: &[Var], params: &mut Vec<Var>) -> Result<Var> {
        let outs = self
            .branches
            .iter()
            .map(|b| b.apply(tape, inputs[0], params))
            .collect::<Result<Vec<_>>>()?;
        let joined = tape.concat(&outs)?;
        self.fusion.apply(tape, joined, params)
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        for (k, b) in self.branches.iter().enumerate() {
            b.visit(&join(prefix, &format!("branch{k}")), f);
        }
        self.fusion.visit(&join(prefix, "fusion"), f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        for b in &mut self.branches {
            b.visit_mut(f);
        }
        self.fusion.visit_mut(f);
    }

    fn receptive_radius(&self) -> usize {
        self.branches.iter().map(|b| b.receptive_radius()).max().unwrap_or(0)
    }
}

pub fn mfa_forward(x: &Tensor, p: &Mfa) -> Result<Tensor> {
    forward(p, &[x])
}

/// Bilateral fusion of two same-length feature maps by cross gating:
/// `fusion(a * sigmoid(gate_from_b(b)) + b * sigmoid(gate_from_a(a)))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bfa {
    pub gate_from_b: ConvSpec,
    pub gate_from_a: ConvSpec,
    pub fusion: ConvSpec,
}

impl Bfa {
    pub fn new(gate_from_b: ConvSpec, gate_from_a: ConvSpec, fusion: ConvSpec) -> Result<Self> {
        let c = gate_from_a.in_channels;
        let ok = gate_from_b.in_channels == c
            && gate_from_a.out_channels == c
            && gate_from_b.out_channels == c
            && fusion.in_channels == c
            && fusion.kernel == 1;
        if !ok {
            return Err(shape(
                "BFA gates must map C -> C and the fusion must be kernel-1 over C channels",
            ));
        }
        Ok(Self {
            gate_from_b,
            gate_from_a,
            fusion,
        })
    }

    pub fn random<R: Rng>(channels: usize, out_channels: usize, gate_kernel: usize, rng: &mut R) -> Result<Self> {
        Self::new(
            ConvSpec::random(channels, channels, gate_kernel, 1, rng)?,
            ConvSpec::random(channels, channels, gate_kernel, 1, rng)?,
            ConvSpec::random(channels, out_channels, 1, 1, rng)?,
        )
    }

    pub(crate) fn apply(&self, tape: &Tape, a: Var, b: Var, params: &mut Vec<Var>) -> Result<Var> {
        if tape.shape(a) != tape.shape(b) {
            return Err(shape(format!(
                "BFA inputs {:?} and {:?} differ",
                tape.shape(a),
                tape.shape(b)
            )));
        }
        let gate_a = self.gate_from_b.apply(tape, b, params)?;
        let gate_a = tape.sigmoid(gate_a);
        let gate_b = self.gate_from_a.apply(tape, a, params)?;
        let gate_b = tape.sigmoid(gate_b);
        let left = tape.mul(a, gate_a)?;
        let right = tape.mul(b, gate_b)?;
        let mixed = tape.add(left, right)?;
        self.fusion.apply(tape, mixed, params)
    }
}

impl Block for Bfa {
    fn input_count(&self) -> usize {
        2
    }

    fn record(&self, tape: &Tape, inputs: &[Var], params: &mut Vec<Var>) -> Result<Var> {
        self.apply(tape, inputs[0], inputs[1], params)
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.gate_from_b.visit(&join(prefix, "gate_from_b"), f);
        self.gate_from_a.visit(&join(prefix, "gate_from_a"), f);
        self.fusion.visit(&join(prefix, "fusion"), f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        self.gate_from_b.visit_mut(f);
        self.gate_from_a.visit_mut(f);
        self.fusion.visit_mut(f);
    }

    fn receptive_radius(&self) -> usize {
        self.gate_from_a
            .receptive_radius()
            .max(self.gate_from_b.receptive_radius())
    }
}

pub fn bfa_forward(a: &Tensor, b: &Tensor, p: &Bfa) -> Result<Tensor> {
    forward(p, &[a, b])
}

/// Aggregated block with attentive rechecking.
///
/// The heavy input runs through MFA; the result feeds two branches, one
/// gated by channel attention and one through `branch`, which are summed and
/// fused with the light input by BFA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregated {
    pub mfa: Mfa,
    pub attention: ChannelAttention,
    pub branch: ConvSpec,
    pub bfa: Bfa,
}

impl Aggregated {
    pub fn new(mfa: Mfa, attention: ChannelAttention, branch: ConvSpec, bfa: Bfa) -> Result<Self> {
        let c = mfa.out_channels();
        if attention.channels() != c
            || branch.in_channels != c
            || branch.out_channels != c
            || bfa.gate_from_a.in_channels != c
        {
            return Err(shape("aggregated block stages disagree on channel count"));
        }
        Ok(Self {
            mfa,
            attention,
            branch,
            bfa,
        })
    }

    pub fn random<R: Rng>(
        in_channels: usize,
        channels: usize,
        reduction: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Self::new(
            Mfa::random(in_channels, channels, channels, &DEFAULT_MFA_BRANCHES, rng)?,
            ChannelAttention::random(channels, reduction, rng)?,
            ConvSpec::random(channels, channels, 3, 1, rng)?,
            Bfa::random(channels, channels, 1, rng)?,
        )
    }
}

impl Block for Aggregated {
    fn input_count(&self) -> usize {
        2
    }

    fn record(&self, tape: &Tape, inputs: &[Var], params: &mut Vec<Var>) -> Result<Var> {
        let (heavy, light) = (inputs[0], inputs[1]);
        let features = self.mfa.record(tape, &[heavy], params)?;
        let attended = self.attention.record(tape, &[features], params)?;
        let side = self.branch.apply(tape, features, params)?;
        let rechecked = tape.add(attended, side)?;
        self.bfa.apply(tape, rechecked, light, params)
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.mfa.visit(&join(prefix, "mfa"), f);
        self.attention.visit(&join(prefix, "attention"), f);
        self.branch.visit(&join(prefix, "branch"), f);
        self.bfa.visit(&join(prefix, "bfa"), f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        self.mfa.visit_mut(f);
        self.attention.visit_mut(f);
        self.branch.visit_mut(f);
        self.bfa.visit_mut(f);
    }

    fn receptive_radius(&self) -> usize {
        usize::MAX
    }
}

pub fn aggregated_forward(heavy: &Tensor, light: &Tensor, p: &Aggregated) -> Result<Tensor> {
    forward(p, &[heavy, light])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Direct triple loop; independent of the tape kernels.
    fn conv_oracle(x: &Tensor, s: &ConvSpec) -> Tensor {
        let n = x.rows() as isize;
        let pad = ((s.kernel - 1) * s.dilation / 2) as isize;
        Tensor::from_fn(x.rows(), s.out_channels, |i, o| {
            let mut acc = s.bias.get(0, o);
            for k in 0..s.kernel {
                let src = i as isize + (k * s.dilation) as isize - pad;
                if src < 0 || src >= n {
                    continue;
                }
                for c in 0..s.in_channels {
                    acc += s.weights.get(k * s.in_channels + c, o) * x.get(src as usize, c);
                }
            }
            acc
        })
    }

    fn close(a: &Tensor, b: &Tensor, tol: f64) -> bool {
        a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn identity_convolutions() {
        let mut r = rng(1);
        let x = Tensor::random(10, 4, 1.0, &mut r);
        assert_eq!(conv1d(&x, &ConvSpec::identity(4)).unwrap(), x);

        let x1 = Tensor::random(10, 1, 1.0, &mut r);
        let delta = ConvSpec::new(
            1,
            1,
            3,
            1,
            Tensor::new(3, 1, vec![0.0, 1.0, 0.0]).unwrap(),
            Tensor::zeros(1, 1),
        )
        .unwrap();
        assert_eq!(conv1d(&x1, &delta).unwrap(), x1);
    }

    #[test]
    fn conv_matches_oracle() {
        let mut r = rng(2);
        for (k, d) in [(1, 1), (3, 1), (3, 2), (5, 3), (7, 1)] {
            let x = Tensor::random(16, 4, 1.0, &mut r);
            let s = ConvSpec::random(4, 5, k, d, &mut r).unwrap();
            assert!(close(&conv1d(&x, &s).unwrap(), &conv_oracle(&x, &s), 1e-10));
        }
    }

    #[test]
    fn conv_rejects_bad_shapes() {
        let mut r = rng(3);
        let s = ConvSpec::random(4, 2, 3, 1, &mut r).unwrap();
        assert!(conv1d(&Tensor::zeros(5, 3), &s).is_err());
        assert!(ConvSpec::zeros(2, 2, 2, 1).is_err());
        assert!(ConvSpec::new(2, 2, 1, 1, Tensor::zeros(2, 3), Tensor::zeros(1, 2)).is_err());
    }

    #[test]
    fn attention_cases() {
        let mut r = rng(4);
        let ca = ChannelAttention::random(4, 2, &mut r).unwrap();
        let zero = Tensor::zeros(6, 4);
        assert_eq!(channel_attention(&zero, &ca).unwrap(), zero);

        let mut flat = ca.clone();
        flat.visit_mut(&mut |t| t.data_mut().fill(0.0));
        let x = Tensor::random(6, 4, 3.0, &mut r);
        let half = Tensor::from_fn(6, 4, |i, c| x.get(i, c) / 2.0);
        assert_eq!(channel_attention(&x, &flat).unwrap(), half);

        for _ in 0..100 {
            let ca = ChannelAttention::random(4, 2, &mut r).unwrap();
            let x = Tensor::random(5, 4, 2.0, &mut r);
            let y = channel_attention(&x, &ca).unwrap();
            for (a, b) in x.data().iter().zip(y.data()) {
                if *a != 0.0 {
                    assert!(b.abs() < a.abs());
                }
            }
        }
    }

    #[test]
    fn degenerate_mfa() {
        let mut r = rng(5);
        let x = Tensor::random(9, 3, 1.0, &mut r);
        let mfa = Mfa::new(vec![ConvSpec::identity(3)], ConvSpec::identity(3)).unwrap();
        assert_eq!(mfa_forward(&x, &mfa).unwrap(), x);

        let mut zero = Mfa::random(3, 2, 4, &DEFAULT_MFA_BRANCHES, &mut r).unwrap();
        for b in &mut zero.branches {
            b.visit_mut(&mut |t| t.data_mut().fill(0.0));
        }
        let y = mfa_forward(&x, &zero).unwrap();
        for i in 0..9 {
            for c in 0..4 {
                assert_eq!(y.get(i, c), zero.fusion.bias.get(0, c));
            }
        }
    }

    #[test]
    fn mfa_receptive_field() {
        let mut r = rng(6);
        let mfa = Mfa::random(2, 3, 2, &DEFAULT_MFA_BRANCHES, &mut r).unwrap();
        let radius = mfa.receptive_radius();
        assert_eq!(radius, 8);
        let x = Tensor::random(32, 2, 1.0, &mut r);
        let base = mfa_forward(&x, &mfa).unwrap();
        for i in 0..32 {
            let mut bumped = x.clone();
            bumped.data_mut()[i * 2] += 1.0;
            let y = mfa_forward(&bumped, &mfa).unwrap();
            for row in 0..32 {
                let changed = (0..2).any(|c| y.get(row, c) != base.get(row, c));
                if row.abs_diff(i) > radius {
                    assert!(!changed, "row {row} moved after perturbing {i}");
                }
            }
        }
    }

    fn sigmoid(v: f64) -> f64 {
        1.0 / (1.0 + (-v).exp())
    }

    #[test]
    fn bfa_cases() {
        let mut r = rng(7);
        let c = 3;
        let zeros = Tensor::zeros(8, c);
        let mut bfa = Bfa::random(c, c, 1, &mut r).unwrap();
        bfa.fusion.bias.data_mut().fill(0.0);
        assert_eq!(bfa_forward(&zeros, &zeros, &bfa).unwrap(), zeros);

        // Saturated gates pass a + b straight through an identity fusion.
        let mut sat = Bfa::new(
            ConvSpec::zeros(c, c, 1, 1).unwrap(),
            ConvSpec::zeros(c, c, 1, 1).unwrap(),
            ConvSpec::identity(c),
        )
        .unwrap();
        sat.gate_from_a.bias.data_mut().fill(40.0);
        sat.gate_from_b.bias.data_mut().fill(40.0);
        let a = Tensor::random(8, c, 1.0, &mut r);
        let b = Tensor::random(8, c, 1.0, &mut r);
        let sum = Tensor::from_fn(8, c, |i, k| a.get(i, k) + b.get(i, k));
        assert!(close(&bfa_forward(&a, &b, &sat).unwrap(), &sum, 1e-6));

        // Scalar reimplementation.
        let bfa = Bfa::random(c, 2, 3, &mut r).unwrap();
        let ga = conv_oracle(&b, &bfa.gate_from_b);
        let gb = conv_oracle(&a, &bfa.gate_from_a);
        let mixed = Tensor::from_fn(8, c, |i, k| {
            a.get(i, k) * sigmoid(ga.get(i, k)) + b.get(i, k) * sigmoid(gb.get(i, k))
        });
        let want = conv_oracle(&mixed, &bfa.fusion);
        assert!(close(&bfa_forward(&a, &b, &bfa).unwrap(), &want, 1e-10));
        assert!(bfa_forward(&a, &Tensor::zeros(7, c), &bfa).is_err());
    }

    #[test]
    fn aggregated_composition() {
        let mut r = rng(8);
        let agg = Aggregated::random(3, 4, 2, &mut r).unwrap();
        let heavy = Tensor::random(10, 3, 1.0, &mut r);
        let light = Tensor::random(10, 4, 1.0, &mut r);
        let out = aggregated_forward(&heavy, &light, &agg).unwrap();

        let m = mfa_forward(&heavy, &agg.mfa).unwrap();
        let att = channel_attention(&m, &agg.attention).unwrap();
        let side = conv1d(&m, &agg.branch).unwrap();
        let sum = Tensor::from_fn(10, 4, |i, c| att.get(i, c) + side.get(i, c));
        let manual = bfa_forward(&sum, &light, &agg.bfa).unwrap();
        assert_eq!(out, manual);
        assert_eq!(out.shape(), (10, 4));
    }

    #[test]
    fn aggregated_zero_in_zero_out() {
        let mut r = rng(9);
        let mut agg = Aggregated::random(2, 4, 2, &mut r).unwrap();
        for b in agg.mfa.branches.iter_mut() {
            b.bias.data_mut().fill(0.0);
        }
        agg.mfa.fusion.bias.data_mut().fill(0.0);
        agg.branch.bias.data_mut().fill(0.0);
        agg.bfa.fusion.bias.data_mut().fill(0.0);
        let out = aggregated_forward(&Tensor::zeros(6, 2), &Tensor::zeros(6, 4), &agg).unwrap();
        assert_eq!(out, Tensor::zeros(6, 4));
    }

    #[test]
    fn registered_params_follow_visit_order() {
        let mut r = rng(10);
        let blocks: Vec<(Box<dyn Block>, Vec<Tensor>)> = vec![
            (Box::new(ConvSpec::random(3, 2, 3, 1, &mut r).unwrap()), vec![Tensor::zeros(5, 3)]),
            (Box::new(SeparableConv::random(3, 2, 3, 2, &mut r).unwrap()), vec![Tensor::zeros(5, 3)]),
            (Box::new(ResUnit::random(3, 3, &mut r).unwrap()), vec![Tensor::zeros(5, 3)]),
            (Box::new(ChannelAttention::random(4, 2, &mut r).unwrap()), vec![Tensor::zeros(5, 4)]),
            (
                Box::new(Aggregated::random(3, 4, 2, &mut r).unwrap()),
                vec![Tensor::zeros(5, 3), Tensor::zeros(5, 4)],
            ),
        ];
        for (block, inputs) in blocks {
            let tape = Tape::new();
            let vars: Vec<Var> = inputs.into_iter().map(|t| tape.leaf(t)).collect();
            let mut params = Vec::new();
            block.record(&tape, &vars, &mut params).unwrap();
            let mut shapes = Vec::new();
            block.visit("", &mut |_, t| shapes.push(t.shape()));
            let recorded: Vec<_> = params.iter().map(|&p| tape.shape(p)).collect();
            assert_eq!(recorded, shapes);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let mut r = rng(11);
        let agg = Aggregated::random(3, 4, 2, &mut r).unwrap();
        let heavy = Tensor::random(12, 3, 1.0, &mut r);
        let light = Tensor::random(12, 4, 1.0, &mut r);
        let a = aggregated_forward(&heavy, &light, &agg).unwrap();
        let b = aggregated_forward(&heavy, &light, &agg).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
