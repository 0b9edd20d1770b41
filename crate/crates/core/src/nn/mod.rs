// SPDX-License-Identifier: Apache-2.0

//! Toy-scale 1D-convolutional building blocks over sorted point clouds, with
//! reverse-mode gradients.

pub mod blocks;
pub mod gradcheck;
pub mod params;
pub mod tape;
pub mod tensor;

pub use blocks::{
    aggregated_forward, bfa_forward, channel_attention, conv1d, forward, mfa_forward, Aggregated,
    Bfa, Block, ChannelAffine, ChannelAttention, ConvSpec, Mfa, ResUnit, SeparableConv,
};
pub use gradcheck::{grad_check, loss_and_grads, GradCheckReport};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
