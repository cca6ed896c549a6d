//! Tape of tensor operations with a reverse sweep.
//!
//! Nodes are appended in evaluation order, so the node vector is already a
//! topological order and the backward pass is a single reverse scan.

use crate::conv::{self, ConvGeom};
use crate::{Error, Result, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Affine(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Abs(Var),
    Exp(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Concat0(Vec<Var>),
    Select0(Var, usize),
    Softmax0(Var),
    Conv2d {
        x: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    Upsample2x(Var),
    FitHw(Var),
    ColScale(Var, Var),
    BroadcastRows(Var),
    ColMean(Var),
    ColMax(Var, Vec<usize>),
    ColStd(Var),
    BoxFilter(Var, usize),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that requires them.
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros shaped like `like` when `v` did not influence the output.
    pub fn get_or_zeros(&self, v: Var, like: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like))
    }
}

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
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

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
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
        self.nodes[v.0].requires_grad
    }

    fn binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err(name, va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(va.shape(), data)?;
        Ok(self.push(t, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    /// `scale * a + shift`
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let t = self.value(a).map(|x| scale * x + shift);
        self.push(t, Op::Affine(a, scale), &[a])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine(a, s, 0.0)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a).map(f);
        self.push(t, op, &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let t = Tensor::scalar(self.value(a).sum());
        self.push(t, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let t = Tensor::scalar(v.sum() / v.len().max(1) as f64);
        self.push(t, Op::Mean(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        Ok(self.push(t, Op::Reshape(a), &[a]))
    }

    pub fn concat0(&mut self, parts: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let t = Tensor::concat0(&refs)?;
        Ok(self.push(t, Op::Concat0(parts.to_vec()), parts))
    }

    /// Stack equally shaped tensors along a new leading axis.
    pub fn stack0(&mut self, parts: &[Var]) -> Result<Var> {
        let mut lifted = Vec::with_capacity(parts.len());
        for &p in parts {
            let mut s = vec![1];
            s.extend_from_slice(self.shape(p));
            lifted.push(self.reshape(p, &s)?);
        }
        self.concat0(&lifted)
    }

    pub fn select0(&mut self, a: Var, index: usize) -> Result<Var> {
        let v = self.value(a);
        if v.shape().is_empty() || index >= v.shape()[0] {
            return Err(Error::Shape(format!("select0 index {index} on {:?}", v.shape())));
        }
        let t = v.index0(index);
        Ok(self.push(t, Op::Select0(a, index), &[a]))
    }

    /// Softmax across the leading axis, independently for every trailing position.
    pub fn softmax0(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let (c, n) = lead_rest(v.shape())?;
        let mut out = vec![0.0; c * n];
        let x = v.data();
        for j in 0..n {
            let m = (0..c).map(|i| x[i * n + j]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for i in 0..c {
                let e = (x[i * n + j] - m).exp();
                out[i * n + j] = e;
                z += e;
            }
            for i in 0..c {
                out[i * n + j] /= z;
            }
        }
        let t = Tensor::new(v.shape(), out)?;
        Ok(self.push(t, Op::Softmax0(a), &[a]))
    }

    /// 2D cross-correlation of `x: [ci, h, w]` with `weight: [co, ci, kh, kw]`,
    /// zero padding `pad` on both axes.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>, stride: usize, pad: (usize, usize)) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(weight);
        if xs.len() != 3 || ws.len() != 4 || ws[1] != xs[0] {
            return Err(shape_err("conv2d", xs, ws));
        }
        let geom = ConvGeom {
            ci: xs[0],
            h: xs[1],
            w: xs[2],
            co: ws[0],
            kh: ws[2],
            kw: ws[3],
            stride: stride.max(1),
            pad_h: pad.0,
            pad_w: pad.1,
        };
        if geom.h + 2 * geom.pad_h < geom.kh || geom.w + 2 * geom.pad_w < geom.kw {
            return Err(shape_err("conv2d kernel larger than input", xs, ws));
        }
        if let Some(b) = bias {
            if self.shape(b) != [geom.co] {
                return Err(shape_err("conv2d bias", self.shape(b), &[geom.co]));
            }
        }
        let out = conv::forward(
            &geom,
            self.value(x).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
        );
        let t = Tensor::new(&[geom.co, geom.out_h(), geom.out_w()], out)?;
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        Ok(self.push(t, Op::Conv2d { x, weight, bias, geom }, &inputs))
    }

    /// 1D convolution of `x: [ci, w]` with `weight: [co, ci, k]`, stride 1, "same" padding.
    pub fn conv1d(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(weight).to_vec();
        if xs.len() != 2 || ws.len() != 3 || ws[2].is_multiple_of(2) {
            return Err(shape_err("conv1d", &xs, &ws));
        }
        let x3 = self.reshape(x, &[xs[0], 1, xs[1]])?;
        let w4 = self.reshape(weight, &[ws[0], ws[1], 1, ws[2]])?;
        let y = self.conv2d(x3, w4, bias, 1, (0, ws[2] / 2))?;
        self.reshape(y, &[ws[0], xs[1]])
    }

    /// Nearest-neighbour 2x upsampling of `[c, h, w]`.
    pub fn upsample2x(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let s = v.shape();
        if s.len() != 3 {
            return Err(Error::Shape(format!("upsample2x expects [c,h,w], got {s:?}")));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let x = v.data();
        let mut out = vec![0.0; c * 4 * h * w];
        for ch in 0..c {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    out[(ch * 2 * h + y) * 2 * w + xx] = x[(ch * h + y / 2) * w + xx / 2];
                }
            }
        }
        let t = Tensor::new(&[c, 2 * h, 2 * w], out)?;
        Ok(self.push(t, Op::Upsample2x(a), &[a]))
    }

    /// Zero-pad or crop the last two axes to `h x w`, anchored at the top-left corner.
    pub fn fit_hw(&mut self, a: Var, h: usize, w: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() < 2 {
            return Err(Error::Shape(format!("fit_hw expects at least 2 axes, got {s:?}")));
        }
        let mut shape = s.clone();
        let n = shape.len();
        shape[n - 2] = h;
        shape[n - 1] = w;
        let data = fit_hw_data(self.value(a).data(), &s, h, w);
        let t = Tensor::new(&shape, data)?;
        Ok(self.push(t, Op::FitHw(a), &[a]))
    }

    /// Multiply every column `x[.., w]` by `s[w]`. `x` has last axis `W`, `s` is `[W]`.
    pub fn col_scale(&mut self, x: Var, s: Var) -> Result<Var> {
        let (vx, vs) = (self.value(x), self.value(s));
        let w = *vx.shape().last().unwrap_or(&0);
        if vs.shape() != [w] {
            return Err(shape_err("col_scale", vx.shape(), vs.shape()));
        }
        let sd = vs.data();
        let data = vx.data().iter().enumerate().map(|(i, &v)| v * sd[i % w]).collect();
        let t = Tensor::new(vx.shape(), data)?;
        Ok(self.push(t, Op::ColScale(x, s), &[x, s]))
    }

    /// Repeat `[c, w]` over `rows` to `[c, rows, w]`.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Result<Var> {
        let v = self.value(a);
        let s = v.shape();
        if s.len() != 2 {
            return Err(Error::Shape(format!("broadcast_rows expects [c,w], got {s:?}")));
        }
        let (c, w) = (s[0], s[1]);
        let mut out = Vec::with_capacity(c * rows * w);
        for ch in 0..c {
            let row = &v.data()[ch * w..(ch + 1) * w];
            for _ in 0..rows {
                out.extend_from_slice(row);
            }
        }
        let t = Tensor::new(&[c, rows, w], out)?;
        Ok(self.push(t, Op::BroadcastRows(a), &[a]))
    }

    fn hw(&self, a: Var, name: &str) -> Result<(usize, usize)> {
        match self.shape(a) {
            [h, w] => Ok((*h, *w)),
            s => Err(Error::Shape(format!("{name} expects [h,w], got {s:?}"))),
        }
    }

    /// Per-column mean over rows of `[h, w]`.
    pub fn col_mean(&mut self, a: Var) -> Result<Var> {
        let (h, w) = self.hw(a, "col_mean")?;
        let x = self.value(a).data();
        let mut out = vec![0.0; w];
        for r in 0..h {
            for c in 0..w {
                out[c] += x[r * w + c];
            }
        }
        for (c, v) in out.iter_mut().enumerate() {
            // constant columns return their value exactly
            *v = if (1..h).all(|r| x[r * w + c] == x[c]) { x[c] } else { *v / h as f64 };
        }
        let t = Tensor::new(&[w], out)?;
        Ok(self.push(t, Op::ColMean(a), &[a]))
    }

    /// Per-column max over rows of `[h, w]`; gradient routes to the first maximal row.
    pub fn col_max(&mut self, a: Var) -> Result<Var> {
        let (h, w) = self.hw(a, "col_max")?;
        let x = self.value(a).data();
        let mut out = vec![f64::NEG_INFINITY; w];
        let mut arg = vec![0; w];
        for r in 0..h {
            for c in 0..w {
                if x[r * w + c] > out[c] {
                    out[c] = x[r * w + c];
                    arg[c] = r;
                }
            }
        }
        let t = Tensor::new(&[w], out)?;
        Ok(self.push(t, Op::ColMax(a, arg), &[a]))
    }

    /// Per-column population standard deviation over rows of `[h, w]`.
    pub fn col_std(&mut self, a: Var) -> Result<Var> {
        let (h, w) = self.hw(a, "col_std")?;
        let x = self.value(a).data();
        let mut out = vec![0.0; w];
        for c in 0..w {
            if (1..h).all(|r| x[r * w + c] == x[c]) {
                continue;
            }
            let mean = (0..h).map(|r| x[r * w + c]).sum::<f64>() / h as f64;
            let var = (0..h).map(|r| (x[r * w + c] - mean).powi(2)).sum::<f64>() / h as f64;
            out[c] = var.sqrt();
        }
        let t = Tensor::new(&[w], out)?;
        Ok(self.push(t, Op::ColStd(a), &[a]))
    }

    /// Mean over every `k x k` window fully inside `[h, w]`.
    pub fn box_filter(&mut self, a: Var, k: usize) -> Result<Var> {
        let (h, w) = self.hw(a, "box_filter")?;
        if k == 0 || k > h || k > w {
            return Err(Error::Shape(format!("box_filter window {k} on [{h},{w}]")));
        }
        let x = self.value(a).data();
        let (oh, ow) = (h - k + 1, w - k + 1);
        let mut tmp = vec![0.0; h * ow];
        for r in 0..h {
            for c in 0..ow {
                tmp[r * ow + c] = x[r * w + c..r * w + c + k].iter().sum();
            }
        }
        let norm = 1.0 / (k * k) as f64;
        let mut out = vec![0.0; oh * ow];
        for r in 0..oh {
            for c in 0..ow {
                out[r * ow + c] = (0..k).map(|d| tmp[(r + d) * ow + c]).sum::<f64>() * norm;
            }
        }
        let t = Tensor::new(&[oh, ow], out)?;
        Ok(self.push(t, Op::BoxFilter(a, k), &[a]))
    }

    /// Reverse sweep from a single-element node.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(go) = grads[id].take() else {
                continue;
            };
            self.propagate(node, &go, &mut grads)?;
            grads[id] = Some(go);
        }
        Ok(Grads { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn zip_map(&self, go: &Tensor, v: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let x = self.value(v);
        let data = go.data().iter().zip(x.data()).map(|(&g, &xv)| f(g, xv)).collect();
        Tensor::new(x.shape(), data).expect("same shape")
    }

    fn propagate(&self, node: &Node, go: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, go.clone());
                self.accumulate(grads, *b, go.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, go.clone());
                self.accumulate(grads, *b, go.map(|g| -g));
            }
            Op::Mul(a, b) => {
                let ga = self.zip_map(go, *b, |g, y| g * y);
                let gb = self.zip_map(go, *a, |g, x| g * x);
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::Div(a, b) => {
                let vb = self.value(*b);
                let ga = self.zip_map(go, *b, |g, y| g / y);
                let data = go
                    .data()
                    .iter()
                    .zip(out.data())
                    .zip(vb.data())
                    .map(|((&g, &q), &y)| -g * q / y)
                    .collect();
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, Tensor::new(vb.shape(), data)?);
            }
            Op::Affine(a, s) => self.accumulate(grads, *a, go.map(|g| g * s)),
            Op::Sigmoid(a) => {
                let d = go.data().iter().zip(out.data()).map(|(&g, &y)| g * y * (1.0 - y)).collect();
                self.accumulate(grads, *a, Tensor::new(out.shape(), d)?);
            }
            Op::Tanh(a) => {
                let d = go.data().iter().zip(out.data()).map(|(&g, &y)| g * (1.0 - y * y)).collect();
                self.accumulate(grads, *a, Tensor::new(out.shape(), d)?);
            }
            Op::Relu(a) => {
                let g = self.zip_map(go, *a, |g, x| if x > 0.0 { g } else { 0.0 });
                self.accumulate(grads, *a, g);
            }
            Op::Abs(a) => {
                let g = self.zip_map(go, *a, |g, x| g * x.signum() * (x != 0.0) as u8 as f64);
                self.accumulate(grads, *a, g);
            }
            Op::Exp(a) => {
                let d = go.data().iter().zip(out.data()).map(|(&g, &y)| g * y).collect();
                self.accumulate(grads, *a, Tensor::new(out.shape(), d)?);
            }
            Op::Sum(a) => {
                let g = go.item();
                self.accumulate(grads, *a, Tensor::full(self.shape(*a), g));
            }
            Op::Mean(a) => {
                let n = self.value(*a).len().max(1) as f64;
                self.accumulate(grads, *a, Tensor::full(self.shape(*a), go.item() / n));
            }
            Op::Reshape(a) => {
                let g = go.clone().reshape(self.shape(*a))?;
                self.accumulate(grads, *a, g);
            }
            Op::Concat0(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    let g = Tensor::new(self.shape(p), go.data()[off..off + n].to_vec())?;
                    off += n;
                    self.accumulate(grads, p, g);
                }
            }
            Op::Select0(a, index) => {
                let mut g = Tensor::zeros(self.shape(*a));
                let n = go.len();
                g.data_mut()[index * n..(index + 1) * n].copy_from_slice(go.data());
                self.accumulate(grads, *a, g);
            }
            Op::Softmax0(a) => {
                let (c, n) = lead_rest(out.shape())?;
                let (y, g) = (out.data(), go.data());
                let mut d = vec![0.0; c * n];
                for j in 0..n {
                    let dot: f64 = (0..c).map(|i| g[i * n + j] * y[i * n + j]).sum();
                    for i in 0..c {
                        d[i * n + j] = y[i * n + j] * (g[i * n + j] - dot);
                    }
                }
                self.accumulate(grads, *a, Tensor::new(out.shape(), d)?);
            }
            Op::Conv2d { x, weight, bias, geom } => {
                let need_dx = self.requires_grad(*x);
                let need_dw = self.requires_grad(*weight);
                let (dx, dw, db) = conv::backward(
                    geom,
                    self.value(*x).data(),
                    self.value(*weight).data(),
                    go.data(),
                    need_dx,
                    need_dw,
                );
                if let Some(dx) = dx {
                    self.accumulate(grads, *x, Tensor::new(self.shape(*x), dx)?);
                }
                if let Some(dw) = dw {
                    self.accumulate(grads, *weight, Tensor::new(self.shape(*weight), dw)?);
                }
                if let Some(b) = bias {
                    self.accumulate(grads, *b, Tensor::new(&[geom.co], db)?);
                }
            }
            Op::Upsample2x(a) => {
                let s = self.shape(*a);
                let (c, h, w) = (s[0], s[1], s[2]);
                let g = go.data();
                let mut d = vec![0.0; c * h * w];
                for ch in 0..c {
                    for y in 0..2 * h {
                        for xx in 0..2 * w {
                            d[(ch * h + y / 2) * w + xx / 2] += g[(ch * 2 * h + y) * 2 * w + xx];
                        }
                    }
                }
                self.accumulate(grads, *a, Tensor::new(s, d)?);
            }
            Op::FitHw(a) => {
                let s = self.shape(*a);
                let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
                let d = fit_hw_data(go.data(), go.shape(), h, w);
                self.accumulate(grads, *a, Tensor::new(s, d)?);
            }
            Op::ColScale(x, s) => {
                let sv = self.value(*s).data();
                let w = sv.len();
                let xv = self.value(*x);
                let gx = go.data().iter().enumerate().map(|(i, &g)| g * sv[i % w]).collect();
                let mut gs = vec![0.0; w];
                for (i, (&g, &v)) in go.data().iter().zip(xv.data()).enumerate() {
                    gs[i % w] += g * v;
                }
                self.accumulate(grads, *x, Tensor::new(xv.shape(), gx)?);
                self.accumulate(grads, *s, Tensor::new(&[w], gs)?);
            }
            Op::BroadcastRows(a) => {
                let s = self.shape(*a);
                let (c, w) = (s[0], s[1]);
                let rows = out.shape()[1];
                let mut d = vec![0.0; c * w];
                for ch in 0..c {
                    for r in 0..rows {
                        let off = (ch * rows + r) * w;
                        for col in 0..w {
                            d[ch * w + col] += go.data()[off + col];
                        }
                    }
                }
                self.accumulate(grads, *a, Tensor::new(s, d)?);
            }
            Op::ColMean(a) => {
                let (h, w) = (self.shape(*a)[0], self.shape(*a)[1]);
                let d = (0..h * w).map(|i| go.data()[i % w] / h as f64).collect();
                self.accumulate(grads, *a, Tensor::new(&[h, w], d)?);
            }
            Op::ColMax(a, arg) => {
                let (h, w) = (self.shape(*a)[0], self.shape(*a)[1]);
                let mut d = vec![0.0; h * w];
                for c in 0..w {
                    d[arg[c] * w + c] = go.data()[c];
                }
                self.accumulate(grads, *a, Tensor::new(&[h, w], d)?);
            }
            Op::ColStd(a) => {
                let (h, w) = (self.shape(*a)[0], self.shape(*a)[1]);
                let x = self.value(*a).data();
                let mut d = vec![0.0; h * w];
                for c in 0..w {
                    let sd = out.data()[c];
                    if sd <= 0.0 {
                        continue;
                    }
                    let mean = (0..h).map(|r| x[r * w + c]).sum::<f64>() / h as f64;
                    for r in 0..h {
                        d[r * w + c] = go.data()[c] * (x[r * w + c] - mean) / (h as f64 * sd);
                    }
                }
                self.accumulate(grads, *a, Tensor::new(&[h, w], d)?);
            }
            Op::BoxFilter(a, k) => {
                let k = *k;
                let (h, w) = (self.shape(*a)[0], self.shape(*a)[1]);
                let (oh, ow) = (h - k + 1, w - k + 1);
                let norm = 1.0 / (k * k) as f64;
                let mut dtmp = vec![0.0; h * ow];
                for r in 0..oh {
                    for c in 0..ow {
                        let g = go.data()[r * ow + c] * norm;
                        for dr in 0..k {
                            dtmp[(r + dr) * ow + c] += g;
                        }
                    }
                }
                let mut d = vec![0.0; h * w];
                for r in 0..h {
                    for c in 0..ow {
                        let g = dtmp[r * ow + c];
                        for dc in 0..k {
                            d[r * w + c + dc] += g;
                        }
                    }
                }
                self.accumulate(grads, *a, Tensor::new(&[h, w], d)?);
            }
        }
        Ok(())
    }
}

fn lead_rest(shape: &[usize]) -> Result<(usize, usize)> {
    match shape.split_first() {
        Some((&c, rest)) if c > 0 => Ok((c, rest.iter().product())),
        _ => Err(Error::Shape(format!("expected a leading axis, got {shape:?}"))),
    }
}

/// Copy the overlapping top-left region of every trailing `[h0, w0]` plane into `[h, w]` zeros.
fn fit_hw_data(x: &[f64], shape: &[usize], h: usize, w: usize) -> Vec<f64> {
    let n = shape.len();
    let (h0, w0) = (shape[n - 2], shape[n - 1]);
    let lead: usize = shape[..n - 2].iter().product();
    let (rh, rw) = (h.min(h0), w.min(w0));
    let mut out = vec![0.0; lead * h * w];
    for l in 0..lead {
        for y in 0..rh {
            let src = (l * h0 + y) * w0;
            let dst = (l * h + y) * w;
            out[dst..dst + rw].copy_from_slice(&x[src..src + rw]);
        }
    }
    out
}
