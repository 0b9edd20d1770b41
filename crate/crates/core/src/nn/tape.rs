// SPDX-License-Identifier: Apache-2.0

//! A minimal dynamic tape for reverse-mode gradients over [`Tensor`]s.
//!
//! Every operation appends a node holding its value and the ids of its
//! operands. [`Tape::backward`] walks the nodes in reverse, so operands always
//! receive their gradient after every consumer has contributed.

use std::cell::RefCell;

use super::tensor::Tensor;
use crate::error::{shape, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Var,
        kernel: usize,
        dilation: usize,
    },
    Depthwise {
        x: Var,
        w: Var,
        b: Var,
        dilation: usize,
    },
    Add(Var, Var),
    Mul(Var, Var),
    ScaleChannels {
        x: Var,
        s: Var,
    },
    ShiftChannels {
        x: Var,
        s: Var,
    },
    Sigmoid(Var),
    Relu(Var),
    MeanPoints(Var),
    Concat(Vec<Var>),
    HalfSumSquares(Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Gradients of one scalar output with respect to every node of a tape.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `v`; zeros when `v` does not influence the output.
    pub fn get(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }
}

fn padding(kernel: usize, dilation: usize) -> usize {
    (kernel - 1) * dilation / 2
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, value: Tensor, op: Op) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var(nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn leaf(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> Tensor {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes.borrow()[v.0].value.shape()
    }

    /// Same-length 1D convolution along the point axis with zero padding.
    ///
    /// `w` is `(kernel * in) x out` with row `k * in + c`; `b` is `1 x out`.
    pub fn conv1d(&self, x: Var, w: Var, b: Var, dilation: usize) -> Result<Var> {
        let nodes = self.nodes.borrow();
        let (xv, wv, bv) = (&nodes[x.0].value, &nodes[w.0].value, &nodes[b.0].value);
        let (n, cin) = xv.shape();
        let cout = wv.cols();
        if cin == 0 || wv.rows() % cin != 0 {
            return Err(shape(format!(
                "conv weights {:?} do not match {cin} input channels",
                wv.shape()
            )));
        }
        let kernel = wv.rows() / cin;
        if kernel % 2 == 0 || dilation == 0 {
            return Err(shape(format!(
                "kernel {kernel} must be odd and dilation {dilation} positive"
            )));
        }
        if bv.shape() != (1, cout) {
            return Err(shape(format!("bias {:?} for {cout} outputs", bv.shape())));
        }
        let pad = padding(kernel, dilation);
        let mut out = vec![0.0; n * cout];
        for i in 0..n {
            let row = &mut out[i * cout..(i + 1) * cout];
            row.copy_from_slice(bv.data());
            for k in 0..kernel {
                let Some(src) = (i + k * dilation).checked_sub(pad).filter(|&s| s < n) else {
                    continue;
                };
                for c in 0..cin {
                    let xval = xv.get(src, c);
                    if xval == 0.0 {
                        continue;
                    }
                    let wrow = &wv.data()[(k * cin + c) * cout..(k * cin + c + 1) * cout];
                    for (o, w) in row.iter_mut().zip(wrow) {
                        *o += w * xval;
                    }
                }
            }
        }
        drop(nodes);
        Ok(self.push(
            Tensor::raw(n, cout, out),
            Op::Conv {
                x,
                w,
                b,
                kernel,
                dilation,
            },
        ))
    }

    /// Per-channel convolution; `w` is `kernel x C`, `b` is `1 x C`.
    pub fn depthwise_conv1d(&self, x: Var, w: Var, b: Var, dilation: usize) -> Result<Var> {
        let nodes = self.nodes.borrow();
        let (xv, wv, bv) = (&nodes[x.0].value, &nodes[w.0].value, &nodes[b.0].value);
        let (n, ch) = xv.shape();
        let kernel = wv.rows();
        if wv.cols() != ch || bv.shape() != (1, ch) {
            return Err(shape(format!(
                "depthwise weights {:?} / bias {:?} for {ch} channels",
                wv.shape(),
                bv.shape()
            )));
        }
        if kernel % 2 == 0 || dilation == 0 {
            return Err(shape(format!(
                "kernel {kernel} must be odd and dilation {dilation} positive"
            )));
        }
        let pad = padding(kernel, dilation);
        let out = Tensor::from_fn(n, ch, |i, c| {
            let mut acc = bv.get(0, c);
            for k in 0..kernel {
                if let Some(src) = (i + k * dilation).checked_sub(pad).filter(|&s| s < n) {
                    acc += wv.get(k, c) * xv.get(src, c);
                }
            }
            acc
        });
        drop(nodes);
        Ok(self.push(out, Op::Depthwise { x, w, b, dilation }))
    }

    fn binary(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let nodes = self.nodes.borrow();
        let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
        if av.shape() != bv.shape() {
            return Err(shape(format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| f(*x, *y)).collect();
        let out = Tensor::raw(av.rows(), av.cols(), data);
        drop(nodes);
        Ok(self.push(out, op))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn broadcast(&self, x: Var, s: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let nodes = self.nodes.borrow();
        let (xv, sv) = (&nodes[x.0].value, &nodes[s.0].value);
        if sv.shape() != (1, xv.cols()) {
            return Err(shape(format!(
                "channel vector {:?} for {} channels",
                sv.shape(),
                xv.cols()
            )));
        }
        let out = Tensor::from_fn(xv.rows(), xv.cols(), |i, c| f(xv.get(i, c), sv.get(0, c)));
        drop(nodes);
        Ok(self.push(out, op))
    }

    /// `x[i][c] * s[c]` for a `1 x C` vector `s`.
    pub fn scale_channels(&self, x: Var, s: Var) -> Result<Var> {
        self.broadcast(x, s, |a, b| a * b, Op::ScaleChannels { x, s })
    }

    /// `x[i][c] + s[c]` for a `1 x C` vector `s`.
    pub fn shift_channels(&self, x: Var, s: Var) -> Result<Var> {
        self.broadcast(x, s, |a, b| a + b, Op::ShiftChannels { x, s })
    }

    fn unary(&self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = {
            let nodes = self.nodes.borrow();
            let xv = &nodes[x.0].value;
            Tensor::raw(xv.rows(), xv.cols(), xv.data().iter().map(|v| f(*v)).collect())
        };
        self.push(out, op)
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn relu(&self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    /// Per-channel mean over points, `1 x C`.
    pub fn mean_points(&self, x: Var) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let xv = &nodes[x.0].value;
            if xv.rows() == 0 {
                return Err(shape("mean over zero points"));
            }
            let n = xv.rows() as f64;
            Tensor::from_fn(1, xv.cols(), |_, c| {
                (0..xv.rows()).map(|i| xv.get(i, c)).sum::<f64>() / n
            })
        };
        Ok(self.push(out, Op::MeanPoints(x)))
    }

    /// Concatenation along the channel axis.
    pub fn concat(&self, parts: &[Var]) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let first = parts.first().ok_or_else(|| shape("concat of nothing"))?;
            let n = nodes[first.0].value.rows();
            if parts.iter().any(|p| nodes[p.0].value.rows() != n) {
                return Err(shape("concat inputs differ in point count"));
            }
            let cols: usize = parts.iter().map(|p| nodes[p.0].value.cols()).sum();
            let mut data = Vec::with_capacity(n * cols);
            for i in 0..n {
                for p in parts {
                    let v = &nodes[p.0].value;
                    data.extend_from_slice(&v.data()[i * v.cols()..(i + 1) * v.cols()]);
                }
            }
            Tensor::raw(n, cols, data)
        };
        Ok(self.push(out, Op::Concat(parts.to_vec())))
    }

    /// `sum(x^2) / 2` as a `1 x 1` tensor.
    pub fn half_sum_squares(&self, x: Var) -> Var {
        let out = {
            let nodes = self.nodes.borrow();
            let s: f64 = nodes[x.0].value.data().iter().map(|v| v * v).sum();
            Tensor::raw(1, 1, vec![0.5 * s])
        };
        self.push(out, Op::HalfSumSquares(x))
    }

    /// Reverse pass seeded with ones at `output`.
    pub fn backward(&self, output: Var) -> Gradients {
        let nodes = self.nodes.borrow();
        let shapes: Vec<_> = nodes.iter().map(|n| n.value.shape()).collect();
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        let (r, c) = shapes[output.0];
        grads[output.0] = Some(Tensor::raw(r, c, vec![1.0; r * c]));

        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for id in (0..=output.0).rev() {
            let node = &nodes[id];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            // Interior gradients are consumed here; only leaves keep theirs.
            let Some(gy) = grads[id].take() else {
                continue;
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                &Op::Conv {
                    x,
                    w,
                    b,
                    kernel,
                    dilation,
                } => {
                    let (xv, wv) = (&nodes[x.0].value, &nodes[w.0].value);
                    let (n, cin) = xv.shape();
                    let cout = wv.cols();
                    let pad = padding(kernel, dilation);
                    let mut gx = Tensor::zeros(n, cin);
                    let mut gw = Tensor::zeros(wv.rows(), cout);
                    let mut gb = Tensor::zeros(1, cout);
                    for i in 0..n {
                        let grow = &gy.data()[i * cout..(i + 1) * cout];
                        for (o, g) in grow.iter().enumerate() {
                            gb.data_mut()[o] += g;
                        }
                        for k in 0..kernel {
                            let Some(src) =
                                (i + k * dilation).checked_sub(pad).filter(|&s| s < n)
                            else {
                                continue;
                            };
                            for c in 0..cin {
                                let r = k * cin + c;
                                let wrow = &wv.data()[r * cout..(r + 1) * cout];
                                let dot: f64 = wrow.iter().zip(grow).map(|(w, g)| w * g).sum();
                                gx.data_mut()[src * cin + c] += dot;
                                let xval = xv.get(src, c);
                                let gwrow = &mut gw.data_mut()[r * cout..(r + 1) * cout];
                                for (gwv, g) in gwrow.iter_mut().zip(grow) {
                                    *gwv += g * xval;
                                }
                            }
                        }
                    }
                    acc(&mut grads, x, gx);
                    acc(&mut grads, w, gw);
                    acc(&mut grads, b, gb);
                }
                &Op::Depthwise { x, w, b, dilation } => {
                    let (xv, wv) = (&nodes[x.0].value, &nodes[w.0].value);
                    let (n, ch) = xv.shape();
                    let kernel = wv.rows();
                    let pad = padding(kernel, dilation);
                    let mut gx = Tensor::zeros(n, ch);
                    let mut gw = Tensor::zeros(kernel, ch);
                    let mut gb = Tensor::zeros(1, ch);
                    for i in 0..n {
                        for c in 0..ch {
                            let g = gy.get(i, c);
                            gb.data_mut()[c] += g;
                            for k in 0..kernel {
                                if let Some(src) =
                                    (i + k * dilation).checked_sub(pad).filter(|&s| s < n)
                                {
                                    gx.data_mut()[src * ch + c] += g * wv.get(k, c);
                                    gw.data_mut()[k * ch + c] += g * xv.get(src, c);
                                }
                            }
                        }
                    }
                    acc(&mut grads, x, gx);
                    acc(&mut grads, w, gw);
                    acc(&mut grads, b, gb);
                }
                &Op::Add(a, b) => {
                    acc(&mut grads, a, gy.clone());
                    acc(&mut grads, b, gy);
                }
                &Op::Mul(a, b) => {
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    let ga = zip_map(&gy, bv, |g, y| g * y);
                    let gb = zip_map(&gy, av, |g, x| g * x);
                    acc(&mut grads, a, ga);
                    acc(&mut grads, b, gb);
                }
                &Op::ScaleChannels { x, s } => {
                    let (xv, sv) = (&nodes[x.0].value, &nodes[s.0].value);
                    let gx = Tensor::from_fn(xv.rows(), xv.cols(), |i, c| gy.get(i, c) * sv.get(0, c));
                    let gs = Tensor::from_fn(1, xv.cols(), |_, c| {
                        (0..xv.rows()).map(|i| gy.get(i, c) * xv.get(i, c)).sum()
                    });
                    acc(&mut grads, x, gx);
                    acc(&mut grads, s, gs);
                }
                &Op::ShiftChannels { x, s } => {
                    let gs = Tensor::from_fn(1, gy.cols(), |_, c| {
                        (0..gy.rows()).map(|i| gy.get(i, c)).sum()
                    });
                    acc(&mut grads, x, gy);
                    acc(&mut grads, s, gs);
                }
                &Op::Sigmoid(x) => {
                    let g = zip_map(&gy, &node.value, |g, y| g * y * (1.0 - y));
                    acc(&mut grads, x, g);
                }
                &Op::Relu(x) => {
                    let g = zip_map(&gy, &nodes[x.0].value, |g, v| if v > 0.0 { g } else { 0.0 });
                    acc(&mut grads, x, g);
                }
                &Op::MeanPoints(x) => {
                    let (n, ch) = nodes[x.0].value.shape();
                    let g = Tensor::from_fn(n, ch, |_, c| gy.get(0, c) / n as f64);
                    acc(&mut grads, x, g);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let (n, ch) = nodes[p.0].value.shape();
                        let g = Tensor::from_fn(n, ch, |i, c| gy.get(i, offset + c));
                        offset += ch;
                        acc(&mut grads, p, g);
                    }
                }
                &Op::HalfSumSquares(x) => {
                    let seed = gy.get(0, 0);
                    let xv = &nodes[x.0].value;
                    let g = Tensor::raw(
                        xv.rows(),
                        xv.cols(),
                        xv.data().iter().map(|v| seed * v).collect(),
                    );
                    acc(&mut grads, x, g);
                }
            }
        }
        Gradients { grads, shapes }
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::raw(
        a.rows(),
        a.cols(),
        a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect(),
    )
}
