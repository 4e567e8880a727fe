//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every primitive in evaluation order, so the tape is
//! topologically sorted by construction. [`Graph::backward`] walks it once in
//! reverse. Nodes that do not depend on any parameter are marked as not
//! needing gradients and are skipped entirely, which is how teacher
//! inference stays gradient-free: teacher weights enter as constants.

use std::rc::Rc;

use super::kernels::{self, ConvGeometry, UpsampleMode};
use super::tensor::{axis_layout, Tensor};
use crate::error::{bail, Result};

/// Marks an ignored class label in [`Graph::gather_classes`].
pub const IGNORE_INDEX: usize = usize::MAX;

/// Floor applied to vector norms inside [`Graph::cosine_rows`].
pub const NORM_FLOOR: f64 = 1e-12;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    Relu(Var),
    Tanh(Var),
    ClampMin(Var, f64),
    Softmax { x: Var, axis: usize },
    Sum(Var),
    Mean(Var),
    MatMul(Var, Var),
    Conv2d {
        x: Var,
        weight: Var,
        bias: Option<Var>,
        geo: ConvGeometry,
    },
    Resize { x: Var, mode: UpsampleMode },
    GatherClasses { x: Var, labels: Rc<[usize]> },
    SelectPixels { x: Var, pixels: Rc<[usize]> },
    CosineRows(Var, Var),
    ScaleChannels { x: Var, mask: Tensor },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match *self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => vec![a, b],
            Op::CosineRows(a, b) => vec![a, b],
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Relu(a)
            | Op::Tanh(a)
            | Op::ClampMin(a, _)
            | Op::Sum(a)
            | Op::Mean(a) => vec![a],
            Op::Softmax { x, .. }
            | Op::Resize { x, .. }
            | Op::GatherClasses { x, .. }
            | Op::SelectPixels { x, .. }
            | Op::ScaleChannels { x, .. } => vec![x],
            Op::Conv2d {
                x, weight, bias, ..
            } => {
                let mut v = vec![x, weight];
                v.extend(bias);
                v
            }
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// A recorded computation. Single-threaded by contract: build, then call
/// [`Graph::backward`] once per loss.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every node that needed them.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros of `shape` when nothing flowed into it.
    pub fn get_or_zeros(&self, var: Var, shape: &[usize]) -> Tensor {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

fn check_same(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        bail!(
            Argument,
            "{what}: shape mismatch {:?} vs {:?}",
            a.shape(),
            b.shape()
        );
    }
    Ok(())
}

fn accumulate(slot: &mut Option<Vec<f64>>, len: usize, f: impl FnOnce(&mut [f64])) {
    let buf = slot.get_or_insert_with(|| vec![0.0; len]);
    f(buf);
}

fn rank4(t: &Tensor, what: &str) -> Result<(usize, usize, usize, usize)> {
    match *t.shape() {
        [n, c, h, w] => Ok((n, c, h, w)),
        ref s => bail!(Argument, "{what} expects an N×C×H×W tensor, got {:?}", s),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let needs_grad = op.inputs().iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that gradients flow into.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x + s);
        self.push(out, Op::AddScalar(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a))
    }

    /// Natural log; inputs must be positive (clamp first where needed).
    pub fn log(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|&x| x <= 0.0) {
            bail!(Argument, "log of a non-positive value");
        }
        let out = self.value(a).map(f64::ln);
        Ok(self.push(out, Op::Log(a)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    /// `max(x, floor)`; the gradient is zero where the floor is active.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        let out = self.value(a).map(|x| x.max(floor));
        self.push(out, Op::ClampMin(a, floor))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.rank() {
            bail!(Argument, "softmax axis {} out of range for rank {}", axis, t.rank());
        }
        let layout = axis_layout(t.shape(), axis);
        let mut out = vec![0.0; t.len()];
        kernels::softmax_axis(t.data(), layout, &mut out);
        let out = Tensor::from_parts(t.shape().to_vec(), out);
        Ok(self.push(out, Op::Softmax { x, axis }))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = Tensor::scalar(t.sum() / t.len() as f64);
        self.push(out, Op::Mean(a))
    }

    /// `Σ a ⊙ b` as a scalar.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let p = self.mul(a, b)?;
        Ok(self.sum(p))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k, n) = match (ta.shape(), tb.shape()) {
            (&[m, k], &[k2, n]) if k == k2 => (m, k, n),
            (sa, sb) => bail!(Argument, "matmul shapes {:?} × {:?}", sa, sb),
        };
        let mut out = vec![0.0; m * n];
        kernels::gemm(m, k, n, ta.data(), false, tb.data(), false, 0.0, &mut out);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b)))
    }

    /// 2-D convolution with square kernels and zero padding.
    /// `x: N×Cin×H×W`, `weight: Cout×Cin×k×k`, `bias: Cout`.
    pub fn conv2d(
        &mut self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (n, cin, h, w) = rank4(self.value(x), "conv2d input")?;
        let (cout, wcin, kh, kw) = rank4(self.value(weight), "conv2d weight")?;
        if wcin != cin || kh != kw || stride == 0 {
            bail!(
                Argument,
                "conv2d weight {:?} incompatible with input channels {} (stride {})",
                self.shape(weight),
                cin,
                stride
            );
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            bail!(Argument, "conv2d kernel {} larger than padded input {}×{}", kh, h, w);
        }
        if let Some(b) = bias {
            if self.shape(b) != [cout] {
                bail!(Argument, "conv2d bias shape {:?}, expected [{}]", self.shape(b), cout);
            }
        }
        let geo = ConvGeometry {
            channels: cin,
            height: h,
            width: w,
            kernel: kh,
            stride,
            pad,
        };
        let (oh, ow) = (geo.out_height(), geo.out_width());
        let (rows, cols_n) = (geo.col_rows(), geo.col_cols());
        let xin = self.value(x).data();
        let wt = self.value(weight).data();
        let mut out = vec![0.0; n * cout * oh * ow];
        let mut cols = if geo.is_pointwise() {
            Vec::new()
        } else {
            vec![0.0; rows * cols_n]
        };
        for s in 0..n {
            let image = &xin[s * cin * h * w..(s + 1) * cin * h * w];
            let col_mat: &[f64] = if geo.is_pointwise() {
                image
            } else {
                kernels::im2col(&geo, image, &mut cols);
                &cols
            };
            let dst = &mut out[s * cout * oh * ow..(s + 1) * cout * oh * ow];
            if let Some(b) = bias {
                let bv = self.value(b).data();
                for (c, chunk) in dst.chunks_mut(oh * ow).enumerate() {
                    chunk.fill(bv[c]);
                }
            }
            let beta = if bias.is_some() { 1.0 } else { 0.0 };
            kernels::gemm(cout, rows, cols_n, wt, false, col_mat, false, beta, dst);
        }
        let out = Tensor::from_parts(vec![n, cout, oh, ow], out);
        Ok(self.push(
            out,
            Op::Conv2d {
                x,
                weight,
                bias,
                geo,
            },
        ))
    }

    /// Resamples the spatial axes of an N×C×H×W tensor to `(out_h, out_w)`.
    pub fn resize(&mut self, x: Var, out_h: usize, out_w: usize, mode: UpsampleMode) -> Result<Var> {
        let (n, c, h, w) = rank4(self.value(x), "resize")?;
        if out_h == 0 || out_w == 0 {
            bail!(Argument, "resize to an empty size");
        }
        let ty = kernels::resize_taps(h, out_h, mode);
        let tx = kernels::resize_taps(w, out_w, mode);
        let src = self.value(x).data();
        let mut out = vec![0.0; n * c * out_h * out_w];
        for (plane, dst) in src.chunks(h * w).zip(out.chunks_mut(out_h * out_w)) {
            kernels::resize_plane(plane, (h, w), &ty, &tx, dst);
        }
        let out = Tensor::from_parts(vec![n, c, out_h, out_w], out);
        Ok(self.push(out, Op::Resize { x, mode }))
    }

    /// Picks `x[n, label, h, w]` per pixel. Pixels labelled [`IGNORE_INDEX`]
    /// yield 0 and receive no gradient. `labels` is N×H×W in row-major order.
    pub fn gather_classes(&mut self, x: Var, labels: Rc<[usize]>) -> Result<Var> {
        let (n, c, h, w) = rank4(self.value(x), "gather_classes")?;
        if labels.len() != n * h * w {
            bail!(Argument, "gather_classes: {} labels for {} pixels", labels.len(), n * h * w);
        }
        let src = self.value(x).data();
        let hw = h * w;
        let mut out = vec![0.0; n * hw];
        for (p, &l) in labels.iter().enumerate() {
            if l == IGNORE_INDEX {
                continue;
            }
            if l >= c {
                bail!(Argument, "gather_classes: label {} out of range for {} classes", l, c);
            }
            let (s, q) = (p / hw, p % hw);
            out[p] = src[(s * c + l) * hw + q];
        }
        let out = Tensor::from_parts(vec![n, h, w], out);
        Ok(self.push(out, Op::GatherClasses { x, labels }))
    }

    /// Extracts per-pixel channel vectors. `pixels` index into the flattened
    /// N×H×W grid; the result is P×C.
    pub fn select_pixels(&mut self, x: Var, pixels: Rc<[usize]>) -> Result<Var> {
        let (n, c, h, w) = rank4(self.value(x), "select_pixels")?;
        let hw = h * w;
        if pixels.is_empty() {
            bail!(Argument, "select_pixels: empty selection");
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(pixels.len() * c);
        for &p in pixels.iter() {
            if p >= n * hw {
                bail!(Argument, "select_pixels: pixel {} out of range", p);
            }
            let (s, q) = (p / hw, p % hw);
            out.extend((0..c).map(|ch| src[(s * c + ch) * hw + q]));
        }
        let out = Tensor::from_parts(vec![pixels.len(), c], out);
        Ok(self.push(out, Op::SelectPixels { x, pixels }))
    }

    /// Row-wise cosine similarity of two P×D matrices; norms are floored at
    /// [`NORM_FLOOR`] so zero rows give similarity 0.
    pub fn cosine_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        check_same(ta, tb, "cosine_rows")?;
        let &[p, d] = ta.shape() else {
            bail!(Argument, "cosine_rows expects P×D, got {:?}", ta.shape());
        };
        let out: Vec<f64> = (0..p)
            .map(|i| {
                let (ra, rb) = (&ta.data()[i * d..(i + 1) * d], &tb.data()[i * d..(i + 1) * d]);
                let dotp: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
                dotp / (norm(ra).max(NORM_FLOOR) * norm(rb).max(NORM_FLOOR))
            })
            .collect();
        Ok(self.push(Tensor::from_parts(vec![p], out), Op::CosineRows(a, b)))
    }

    /// Multiplies channel `c` of sample `n` by `mask[n, c]` (mask is constant).
    pub fn scale_channels(&mut self, x: Var, mask: Tensor) -> Result<Var> {
        let (n, c, h, w) = rank4(self.value(x), "scale_channels")?;
        if mask.shape() != [n, c] {
            bail!(Argument, "channel mask {:?} for input {:?}", mask.shape(), self.shape(x));
        }
        let src = self.value(x).data();
        let hw = h * w;
        let out: Vec<f64> = src
            .iter()
            .enumerate()
            .map(|(i, v)| v * mask.data()[i / hw])
            .collect();
        let out = Tensor::from_parts(vec![n, c, h, w], out);
        Ok(self.push(out, Op::ScaleChannels { x, mask }))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            bail!(Argument, "backward from a non-scalar node {:?}", self.shape(root));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[root.0].needs_grad {
            grads[root.0] = Some(vec![1.0]);
        }
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads: grads
                .into_iter()
                .zip(&self.nodes)
                .map(|(g, n)| g.map(|g| Tensor::from_parts(n.value.shape().to_vec(), g)))
                .collect(),
        })
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        let val = |v: Var| self.nodes[v.0].value.data();
        let out = node.value.data();
        let n = g.len();
        match node.op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if wants(a) {
                    accumulate(&mut grads[a.0], n, |ga| add_into(ga, g, 1.0));
                }
                if wants(b) {
                    accumulate(&mut grads[b.0], n, |gb| add_into(gb, g, sign));
                }
            }
            Op::Mul(a, b) => {
                if wants(a) {
                    let bv = val(b);
                    accumulate(&mut grads[a.0], n, |ga| {
                        for i in 0..n {
                            ga[i] += g[i] * bv[i];
                        }
                    });
                }
                if wants(b) {
                    let av = val(a);
                    accumulate(&mut grads[b.0], n, |gb| {
                        for i in 0..n {
                            gb[i] += g[i] * av[i];
                        }
                    });
                }
            }
            Op::Scale(a, s) => accumulate(&mut grads[a.0], n, |ga| add_into(ga, g, s)),
            Op::AddScalar(a) => accumulate(&mut grads[a.0], n, |ga| add_into(ga, g, 1.0)),
            Op::Exp(a) => accumulate(&mut grads[a.0], n, |ga| {
                for i in 0..n {
                    ga[i] += g[i] * out[i];
                }
            }),
            Op::Log(a) => {
                let av = val(a);
                accumulate(&mut grads[a.0], n, |ga| {
                    for i in 0..n {
                        ga[i] += g[i] / av[i];
                    }
                })
            }
            Op::Relu(a) => {
                let av = val(a);
                accumulate(&mut grads[a.0], n, |ga| {
                    for i in 0..n {
                        if av[i] > 0.0 {
                            ga[i] += g[i];
                        }
                    }
                })
            }
            Op::Tanh(a) => accumulate(&mut grads[a.0], n, |ga| {
                for i in 0..n {
                    ga[i] += g[i] * (1.0 - out[i] * out[i]);
                }
            }),
            Op::ClampMin(a, floor) => {
                let av = val(a);
                accumulate(&mut grads[a.0], n, |ga| {
                    for i in 0..n {
                        if av[i] >= floor {
                            ga[i] += g[i];
                        }
                    }
                })
            }
            Op::Softmax { x, axis } => {
                let (outer, len, inner) = axis_layout(node.value.shape(), axis);
                accumulate(&mut grads[x.0], n, |gx| {
                    for o in 0..outer {
                        let base = o * len * inner;
                        for i in 0..inner {
                            let mut s = 0.0;
                            for c in 0..len {
                                let k = base + c * inner + i;
                                s += g[k] * out[k];
                            }
                            for c in 0..len {
                                let k = base + c * inner + i;
                                gx[k] += out[k] * (g[k] - s);
                            }
                        }
                    }
                })
            }
            Op::Sum(a) => {
                let len = self.nodes[a.0].value.len();
                accumulate(&mut grads[a.0], len, |ga| ga.iter_mut().for_each(|x| *x += g[0]))
            }
            Op::Mean(a) => {
                let len = self.nodes[a.0].value.len();
                let s = g[0] / len as f64;
                accumulate(&mut grads[a.0], len, |ga| ga.iter_mut().for_each(|x| *x += s))
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.nodes[a.0].value.shape(), self.nodes[b.0].value.shape());
                let (m, k, nn) = (sa[0], sa[1], sb[1]);
                if wants(a) {
                    let bv = val(b);
                    accumulate(&mut grads[a.0], m * k, |ga| {
                        kernels::gemm(m, nn, k, g, false, bv, true, 1.0, ga)
                    });
                }
                if wants(b) {
                    let av = val(a);
                    accumulate(&mut grads[b.0], k * nn, |gb| {
                        kernels::gemm(k, m, nn, av, true, g, false, 1.0, gb)
                    });
                }
            }
            Op::Conv2d {
                x,
                weight,
                bias,
                geo,
            } => self.backprop_conv(x, weight, bias, geo, g, grads),
            Op::Resize { x, mode } => {
                let s = self.nodes[x.0].value.shape();
                let (h, w) = (s[2], s[3]);
                let os = node.value.shape();
                let (oh, ow) = (os[2], os[3]);
                let ty = kernels::resize_taps(h, oh, mode);
                let tx = kernels::resize_taps(w, ow, mode);
                let len = self.nodes[x.0].value.len();
                accumulate(&mut grads[x.0], len, |gx| {
                    for (go, gs) in g.chunks(oh * ow).zip(gx.chunks_mut(h * w)) {
                        kernels::resize_plane_adjoint(go, w, &ty, &tx, gs);
                    }
                })
            }
            Op::GatherClasses { x, ref labels } => {
                let s = self.nodes[x.0].value.shape();
                let (c, hw) = (s[1], s[2] * s[3]);
                let len = self.nodes[x.0].value.len();
                accumulate(&mut grads[x.0], len, |gx| {
                    for (p, &l) in labels.iter().enumerate() {
                        if l != IGNORE_INDEX {
                            gx[((p / hw) * c + l) * hw + p % hw] += g[p];
                        }
                    }
                })
            }
            Op::SelectPixels { x, ref pixels } => {
                let s = self.nodes[x.0].value.shape();
                let (c, hw) = (s[1], s[2] * s[3]);
                let len = self.nodes[x.0].value.len();
                accumulate(&mut grads[x.0], len, |gx| {
                    for (row, &p) in pixels.iter().enumerate() {
                        let (smp, q) = (p / hw, p % hw);
                        for ch in 0..c {
                            gx[(smp * c + ch) * hw + q] += g[row * c + ch];
                        }
                    }
                })
            }
            Op::CosineRows(a, b) => {
                let d = self.nodes[a.0].value.shape()[1];
                let (av, bv) = (val(a), val(b));
                for (target, this, other) in [(a, av, bv), (b, bv, av)] {
                    if !wants(target) {
                        continue;
                    }
                    accumulate(&mut grads[target.0], av.len(), |gt| {
                        for (i, (&gi, &cos)) in g.iter().zip(out).enumerate() {
                            let (r, o) = (&this[i * d..(i + 1) * d], &other[i * d..(i + 1) * d]);
                            let (nr, no) = (norm(r), norm(o));
                            let (fr, fo) = (nr.max(NORM_FLOOR), no.max(NORM_FLOOR));
                            // The floored norm is constant below the floor.
                            let radial = if nr > NORM_FLOOR { cos / (fr * fr) } else { 0.0 };
                            for k in 0..d {
                                gt[i * d + k] += gi * (o[k] / (fr * fo) - radial * r[k]);
                            }
                        }
                    });
                }
            }
            Op::ScaleChannels { x, ref mask } => {
                let s = node.value.shape();
                let hw = s[2] * s[3];
                accumulate(&mut grads[x.0], n, |gx| {
                    for i in 0..n {
                        gx[i] += g[i] * mask.data()[i / hw];
                    }
                })
            }
        }
    }

    fn backprop_conv(
        &self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        geo: ConvGeometry,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let xs = &self.nodes[x.0].value;
        let wt = &self.nodes[weight.0].value;
        let n = xs.shape()[0];
        let cout = wt.shape()[0];
        let (rows, ncols) = (geo.col_rows(), geo.col_cols());
        let in_len = geo.channels * geo.height * geo.width;
        let want_x = self.nodes[x.0].needs_grad;
        let want_w = self.nodes[weight.0].needs_grad;
        let mut cols = vec![0.0; if geo.is_pointwise() { 0 } else { rows * ncols }];
        let mut dcols = vec![0.0; if want_x { rows * ncols } else { 0 }];
        if let Some(b) = bias.filter(|b| self.nodes[b.0].needs_grad) {
            accumulate(&mut grads[b.0], cout, |gb| {
                for s in 0..n {
                    let gs = &g[s * cout * ncols..(s + 1) * cout * ncols];
                    for (c, chunk) in gs.chunks(ncols).enumerate() {
                        gb[c] += chunk.iter().sum::<f64>();
                    }
                }
            });
        }
        if want_w {
            let mut gw = grads[weight.0].take().unwrap_or_else(|| vec![0.0; wt.len()]);
            for s in 0..n {
                let image = &xs.data()[s * in_len..(s + 1) * in_len];
                let col_mat: &[f64] = if geo.is_pointwise() {
                    image
                } else {
                    kernels::im2col(&geo, image, &mut cols);
                    &cols
                };
                let gs = &g[s * cout * ncols..(s + 1) * cout * ncols];
                kernels::gemm(cout, ncols, rows, gs, false, col_mat, true, 1.0, &mut gw);
            }
            grads[weight.0] = Some(gw);
        }
        if want_x {
            let mut gx = grads[x.0].take().unwrap_or_else(|| vec![0.0; xs.len()]);
            for s in 0..n {
                let gs = &g[s * cout * ncols..(s + 1) * cout * ncols];
                let dst = &mut gx[s * in_len..(s + 1) * in_len];
                if geo.is_pointwise() {
                    kernels::gemm(rows, cout, ncols, wt.data(), true, gs, false, 1.0, dst);
                } else {
                    kernels::gemm(rows, cout, ncols, wt.data(), true, gs, false, 0.0, &mut dcols);
                    kernels::col2im(&geo, &dcols, dst);
                }
            }
            grads[x.0] = Some(gx);
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn add_into(dst: &mut [f64], src: &[f64], s: f64) {
    for (d, &v) in dst.iter_mut().zip(src) {
        *d += s * v;
    }
}
