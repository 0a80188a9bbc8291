//! Reverse-mode automatic differentiation over a per-step tape.
//!
//! A [`Graph`] records every op evaluated during one forward pass. Calling
//! [`Graph::backward`] walks the tape in reverse and returns [`Grads`] for every
//! node and every trainable parameter leaf. Graphs are cheap to build and are
//! discarded after each optimizer step.

use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use super::tensor::{col2im, conv_out, gemm, im2col, reflect_index, Real, Tensor, Trans};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Param,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
        cols: Vec<T>,
    },
    ReflectPad {
        x: Var,
        pad: usize,
    },
    Upsample2 {
        x: Var,
    },
    InstanceNorm {
        x: Var,
        inv_std: Vec<T>,
    },
    Relu {
        x: Var,
    },
    LeakyRelu {
        x: Var,
        slope: T,
    },
    Tanh {
        x: Var,
    },
    Sigmoid {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        s: T,
    },
    AddScalar {
        x: Var,
    },
    Square {
        x: Var,
    },
    Recip {
        x: Var,
    },
    Abs {
        x: Var,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    SoftmaxChannels {
        x: Var,
    },
    NarrowChannels {
        x: Var,
        start: usize,
    },
    SumChannels {
        x: Var,
    },
    Concat {
        parts: Vec<Var>,
    },
    Mean {
        x: Var,
    },
    Reshape {
        x: Var,
    },
    ResizeNearest {
        x: Var,
    },
    BceWithLogits {
        x: Var,
        target: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<(u64, usize), Var>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf whose gradient is tracked (useful for input-gradient checks).
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Loads a parameter onto the tape, once per graph.
    ///
    /// Non-trainable parameters behave as constants: gradients still flow
    /// through them to their inputs but are not accumulated for the weights.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId, trainable: bool) -> Var {
        let key = (store.uid(), id.index());
        if let Some(&v) = self.params.get(&key) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param, trainable);
        self.params.insert(key, v);
        v
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let (c, h, wd) = self.value(x).chw();
        let ws = self.value(w).shape().to_vec();
        assert_eq!(ws.len(), 4, "conv weight must be [cout, cin, k, k]");
        let (cout, cin, k) = (ws[0], ws[1], ws[2]);
        assert_eq!(cin, c, "conv input channels mismatch");
        assert_eq!(ws[3], k, "only square kernels are supported");
        let oh = conv_out(h, k, stride, pad);
        let ow = conv_out(wd, k, stride, pad);
        let kk = cin * k * k;
        let plane = oh * ow;
        let mut cols = vec![T::zero(); kk * plane];
        im2col(self.value(x).data(), c, h, wd, k, stride, pad, &mut cols);
        let mut out = vec![T::zero(); cout * plane];
        gemm(
            cout,
            kk,
            plane,
            self.value(w).data(),
            Trans::No,
            &cols,
            Trans::No,
            &mut out,
            false,
        );
        if let Some(b) = b {
            let bias = self.value(b).data();
            for (co, chunk) in out.chunks_mut(plane).enumerate() {
                let bv = bias[co];
                chunk.iter_mut().for_each(|v| *v += bv);
            }
        }
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        self.push(
            Tensor::from_vec(&[cout, oh, ow], out),
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
                cols,
            },
            rg,
        )
    }

    pub fn reflect_pad(&mut self, x: Var, pad: usize) -> Var {
        let (c, h, w) = self.value(x).chw();
        let (ph, pw) = (h + 2 * pad, w + 2 * pad);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(c * ph * pw);
        for ci in 0..c {
            for y in 0..ph {
                let sy = reflect_index(y as isize - pad as isize, h);
                for xx in 0..pw {
                    let sx = reflect_index(xx as isize - pad as isize, w);
                    out.push(src[(ci * h + sy) * w + sx]);
                }
            }
        }
        let rg = self.rg(&[x]);
        self.push(
            Tensor::from_vec(&[c, ph, pw], out),
            Op::ReflectPad { x, pad },
            rg,
        )
    }

    /// Nearest-neighbour ×2 upsampling.
    pub fn upsample2(&mut self, x: Var) -> Var {
        let (c, h, w) = self.value(x).chw();
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(c * 4 * h * w);
        for ci in 0..c {
            for y in 0..2 * h {
                let row = &src[(ci * h + y / 2) * w..(ci * h + y / 2 + 1) * w];
                for xx in 0..2 * w {
                    out.push(row[xx / 2]);
                }
            }
        }
        let rg = self.rg(&[x]);
        self.push(
            Tensor::from_vec(&[c, 2 * h, 2 * w], out),
            Op::Upsample2 { x },
            rg,
        )
    }

    /// Per-channel normalization without affine parameters.
    pub fn instance_norm(&mut self, x: Var) -> Var {
        let eps = T::of(1e-5);
        let (c, h, w) = self.value(x).chw();
        let n = h * w;
        let nf = T::of(n as f64);
        let mut out = self.value(x).data().to_vec();
        let mut inv_std = Vec::with_capacity(c);
        for chunk in out.chunks_mut(n) {
            let mean = chunk.iter().copied().sum::<T>() / nf;
            let var = chunk.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let is = T::one() / (var + eps).sqrt();
            chunk.iter_mut().for_each(|v| *v = (*v - mean) * is);
            inv_std.push(is);
        }
        let rg = self.rg(&[x]);
        self.push(
            Tensor::from_vec(&[c, h, w], out),
            Op::InstanceNorm { x, inv_std },
            rg,
        )
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let value = self.value(x).map(f);
        let rg = self.rg(&[x]);
        self.push(value, op, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(T::zero()), Op::Relu { x })
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let s = T::of(slope);
        self.unary(
            x,
            move |v| if v > T::zero() { v } else { v * s },
            Op::LeakyRelu { x, slope: s },
        )
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.tanh(), Op::Tanh { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid { x })
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square { x })
    }

    pub fn recip(&mut self, x: Var) -> Var {
        self.unary(x, |v| T::one() / v, Op::Recip { x })
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.abs(), Op::Abs { x })
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let s = T::of(s);
        self.unary(x, move |v| v * s, Op::Scale { x, s })
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        let s = T::of(s);
        self.unary(x, move |v| v + s, Op::AddScalar { x })
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(
            va.shape(),
            vb.shape(),
            "elementwise op on mismatched shapes"
        );
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&p, &q)| f(p, q))
            .collect();
        let value = Tensor::from_vec(va.shape(), data);
        let rg = self.rg(&[a, b]);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |p, q| p + q, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |p, q| p - q, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |p, q| p * q, Op::Mul { a, b })
    }

    /// Multiplies by a fixed mask (already scaled for inverted dropout).
    pub fn dropout_with_mask(&mut self, x: Var, mask: Vec<T>) -> Var {
        assert_eq!(mask.len(), self.value(x).len(), "dropout mask size");
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| v * m)
            .collect();
        let value = Tensor::from_vec(self.value(x).shape(), data);
        let rg = self.rg(&[x]);
        self.push(value, Op::Dropout { x, mask }, rg)
    }

    /// Softmax across the channel axis independently at every pixel.
    pub fn softmax_channels(&mut self, x: Var) -> Var {
        let (c, h, w) = self.value(x).chw();
        let n = h * w;
        let src = self.value(x).data();
        let mut out = vec![T::zero(); c * n];
        for p in 0..n {
            let mut mx = T::neg_infinity();
            for ci in 0..c {
                mx = mx.max(src[ci * n + p]);
            }
            let mut total = T::zero();
            for ci in 0..c {
                let e = (src[ci * n + p] - mx).exp();
                out[ci * n + p] = e;
                total += e;
            }
            for ci in 0..c {
                out[ci * n + p] = out[ci * n + p] / total;
            }
        }
        let rg = self.rg(&[x]);
        self.push(
            Tensor::from_vec(&[c, h, w], out),
            Op::SoftmaxChannels { x },
            rg,
        )
    }

    pub fn narrow_channels(&mut self, x: Var, start: usize, len: usize) -> Var {
        let value = self.value(x).narrow_channels(start, len);
        let rg = self.rg(&[x]);
        self.push(value, Op::NarrowChannels { x, start }, rg)
    }

    /// Sums over channels, producing a single-channel map.
    pub fn sum_channels(&mut self, x: Var) -> Var {
        let (c, h, w) = self.value(x).chw();
        let n = h * w;
        let src = self.value(x).data();
        let mut out = vec![T::zero(); n];
        for ci in 0..c {
            for (o, &v) in out.iter_mut().zip(&src[ci * n..(ci + 1) * n]) {
                *o += v;
            }
        }
        let rg = self.rg(&[x]);
        self.push(Tensor::from_vec(&[1, h, w], out), Op::SumChannels { x }, rg)
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Var {
        let (_, h, w) = self.value(parts[0]).chw();
        let mut data = Vec::new();
        let mut c = 0;
        for &p in parts {
            let (pc, ph, pw) = self.value(p).chw();
            assert_eq!((ph, pw), (h, w), "concat spatial mismatch");
            data.extend_from_slice(self.value(p).data());
            c += pc;
        }
        let rg = self.rg(parts);
        self.push(
            Tensor::from_vec(&[c, h, w], data),
            Op::Concat {
                parts: parts.to_vec(),
            },
            rg,
        )
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let m = self.value(x).mean();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(m), Op::Mean { x }, rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let value = Tensor::from_vec(shape, self.value(x).data().to_vec());
        let rg = self.rg(&[x]);
        self.push(value, Op::Reshape { x }, rg)
    }

    /// Nearest-neighbour resize of a C×h×w map to C×H×W.
    pub fn resize_nearest(&mut self, x: Var, out_h: usize, out_w: usize) -> Var {
        let (c, h, w) = self.value(x).chw();
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(c * out_h * out_w);
        for ci in 0..c {
            for y in 0..out_h {
                let sy = y * h / out_h;
                for xx in 0..out_w {
                    out.push(src[(ci * h + sy) * w + xx * w / out_w]);
                }
            }
        }
        let rg = self.rg(&[x]);
        self.push(
            Tensor::from_vec(&[c, out_h, out_w], out),
            Op::ResizeNearest { x },
            rg,
        )
    }

    /// Mean binary cross-entropy between sigmoid(logits) and a {0,1} target.
    pub fn bce_with_logits(&mut self, x: Var, target: &[T]) -> Var {
        let src = self.value(x).data();
        assert_eq!(src.len(), target.len(), "bce target size");
        let n = T::of(src.len() as f64);
        let total: T = src
            .iter()
            .zip(target)
            .map(|(&v, &t)| v.max(T::zero()) - v * t + (T::one() + (-v.abs()).exp()).ln())
            .sum();
        let rg = self.rg(&[x]);
        self.push(
            Tensor::scalar(total / n),
            Op::BceWithLogits {
                x,
                target: target.to_vec(),
            },
            rg,
        )
    }

    /// Back-propagates from a scalar `loss` node.
    pub fn backward(&self, loss: Var) -> Grads<T> {
        assert_eq!(
            self.value(loss).len(),
            1,
            "backward() requires a scalar loss"
        );
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            self.backward_node(idx, &dy, &mut grads);
            grads[idx] = Some(dy);
        }
        let mut params = HashMap::new();
        for (key, v) in &self.params {
            if self.nodes[v.0].requires_grad {
                if let Some(g) = grads[v.0].as_ref() {
                    params.insert(*key, g.clone());
                }
            }
        }
        Grads {
            nodes: grads,
            params,
        }
    }

    fn backward_node(&self, idx: usize, dy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[idx];
        let y = &node.value;
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
                cols,
            } => {
                let ws = self.value(*w).shape();
                let (cout, cin, k) = (ws[0], ws[1], ws[2]);
                let kk = cin * k * k;
                let (_, oh, ow) = y.chw();
                let plane = oh * ow;
                if self.requires_grad(*w) {
                    let mut dw = vec![T::zero(); cout * kk];
                    gemm(
                        cout,
                        plane,
                        kk,
                        dy.data(),
                        Trans::No,
                        cols,
                        Trans::Yes,
                        &mut dw,
                        false,
                    );
                    accumulate(grads, *w, Tensor::from_vec(ws, dw));
                }
                if let Some(b) = b {
                    if self.requires_grad(*b) {
                        let db: Vec<T> = dy
                            .data()
                            .chunks(plane)
                            .map(|c| c.iter().copied().sum())
                            .collect();
                        accumulate(grads, *b, Tensor::from_vec(&[cout], db));
                    }
                }
                if self.requires_grad(*x) {
                    let (c, h, wd) = self.value(*x).chw();
                    let mut dcols = vec![T::zero(); kk * plane];
                    gemm(
                        kk,
                        cout,
                        plane,
                        self.value(*w).data(),
                        Trans::Yes,
                        dy.data(),
                        Trans::No,
                        &mut dcols,
                        false,
                    );
                    let mut dx = vec![T::zero(); c * h * wd];
                    col2im(&dcols, c, h, wd, k, *stride, *pad, &mut dx);
                    accumulate(grads, *x, Tensor::from_vec(&[c, h, wd], dx));
                }
            }
            Op::ReflectPad { x, pad } => {
                let (c, h, w) = self.value(*x).chw();
                let (_, ph, pw) = y.chw();
                let mut dx = vec![T::zero(); c * h * w];
                let g = dy.data();
                for ci in 0..c {
                    for yy in 0..ph {
                        let sy = reflect_index(yy as isize - *pad as isize, h);
                        for xx in 0..pw {
                            let sx = reflect_index(xx as isize - *pad as isize, w);
                            dx[(ci * h + sy) * w + sx] += g[(ci * ph + yy) * pw + xx];
                        }
                    }
                }
                accumulate(grads, *x, Tensor::from_vec(&[c, h, w], dx));
            }
            Op::Upsample2 { x } => {
                let (c, h, w) = self.value(*x).chw();
                let g = dy.data();
                let mut dx = vec![T::zero(); c * h * w];
                for ci in 0..c {
                    for yy in 0..2 * h {
                        for xx in 0..2 * w {
                            dx[(ci * h + yy / 2) * w + xx / 2] += g[(ci * 2 * h + yy) * 2 * w + xx];
                        }
                    }
                }
                accumulate(grads, *x, Tensor::from_vec(&[c, h, w], dx));
            }
            Op::InstanceNorm { x, inv_std } => {
                let (c, h, w) = y.chw();
                let n = h * w;
                let nf = T::of(n as f64);
                let mut dx = vec![T::zero(); c * n];
                for ci in 0..c {
                    let yc = &y.data()[ci * n..(ci + 1) * n];
                    let gc = &dy.data()[ci * n..(ci + 1) * n];
                    let sum_g: T = gc.iter().copied().sum();
                    let sum_gy: T = gc.iter().zip(yc).map(|(&g, &v)| g * v).sum();
                    let scale = inv_std[ci] / nf;
                    for p in 0..n {
                        dx[ci * n + p] = scale * (nf * gc[p] - sum_g - yc[p] * sum_gy);
                    }
                }
                accumulate(grads, *x, Tensor::from_vec(&[c, h, w], dx));
            }
            Op::Relu { x } => {
                let dx = zip_map(dy, y, |g, v| if v > T::zero() { g } else { T::zero() });
                accumulate(grads, *x, dx);
            }
            Op::LeakyRelu { x, slope } => {
                let s = *slope;
                let dx = zip_map(dy, self.value(*x), |g, v| if v > T::zero() { g } else { g * s });
                accumulate(grads, *x, dx);
            }
            Op::Tanh { x } => {
                let dx = zip_map(dy, y, |g, v| g * (T::one() - v * v));
                accumulate(grads, *x, dx);
            }
            Op::Sigmoid { x } => {
                let dx = zip_map(dy, y, |g, v| g * v * (T::one() - v));
                accumulate(grads, *x, dx);
            }
            Op::Add { a, b } => {
                if self.requires_grad(*a) {
                    accumulate(grads, *a, dy.clone());
                }
                if self.requires_grad(*b) {
                    accumulate(grads, *b, dy.clone());
                }
            }
            Op::Sub { a, b } => {
                if self.requires_grad(*a) {
                    accumulate(grads, *a, dy.clone());
                }
                if self.requires_grad(*b) {
                    accumulate(grads, *b, dy.map(|g| -g));
                }
            }
            Op::Mul { a, b } => {
                if self.requires_grad(*a) {
                    accumulate(grads, *a, zip_map(dy, self.value(*b), |g, v| g * v));
                }
                if self.requires_grad(*b) {
                    accumulate(grads, *b, zip_map(dy, self.value(*a), |g, v| g * v));
                }
            }
            Op::Scale { x, s } => {
                let s = *s;
                accumulate(grads, *x, dy.map(|g| g * s));
            }
            Op::AddScalar { x } => accumulate(grads, *x, dy.clone()),
            Op::Square { x } => {
                let dx = zip_map(dy, self.value(*x), |g, v| g * (v + v));
                accumulate(grads, *x, dx);
            }
            Op::Recip { x } => {
                let dx = zip_map(dy, y, |g, v| -g * v * v);
                accumulate(grads, *x, dx);
            }
            Op::Abs { x } => {
                let dx = zip_map(dy, self.value(*x), |g, v| {
                    if v > T::zero() {
                        g
                    } else if v < T::zero() {
                        -g
                    } else {
                        T::zero()
                    }
                });
                accumulate(grads, *x, dx);
            }
            Op::Dropout { x, mask } => {
                let data = dy.data().iter().zip(mask).map(|(&g, &m)| g * m).collect();
                accumulate(grads, *x, Tensor::from_vec(dy.shape(), data));
            }
            Op::SoftmaxChannels { x } => {
                let (c, h, w) = y.chw();
                let n = h * w;
                let (yv, g) = (y.data(), dy.data());
                let mut dx = vec![T::zero(); c * n];
                for p in 0..n {
                    let mut dot = T::zero();
                    for ci in 0..c {
                        dot += g[ci * n + p] * yv[ci * n + p];
                    }
                    for ci in 0..c {
                        dx[ci * n + p] = yv[ci * n + p] * (g[ci * n + p] - dot);
                    }
                }
                accumulate(grads, *x, Tensor::from_vec(&[c, h, w], dx));
            }
            Op::NarrowChannels { x, start } => {
                let (c, h, w) = self.value(*x).chw();
                let plane = h * w;
                let mut dx = vec![T::zero(); c * plane];
                dx[start * plane..start * plane + dy.len()].copy_from_slice(dy.data());
                accumulate(grads, *x, Tensor::from_vec(&[c, h, w], dx));
            }
            Op::SumChannels { x } => {
                let (c, h, w) = self.value(*x).chw();
                let mut dx = Vec::with_capacity(c * h * w);
                for _ in 0..c {
                    dx.extend_from_slice(dy.data());
                }
                accumulate(grads, *x, Tensor::from_vec(&[c, h, w], dx));
            }
            Op::Concat { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if self.requires_grad(p) {
                        let piece = dy.data()[offset..offset + len].to_vec();
                        accumulate(grads, p, Tensor::from_vec(self.value(p).shape(), piece));
                    }
                    offset += len;
                }
            }
            Op::Mean { x } => {
                let xv = self.value(*x);
                let g = dy.item() / T::of(xv.len() as f64);
                accumulate(grads, *x, Tensor::full(xv.shape(), g));
            }
            Op::Reshape { x } => {
                let shape = self.value(*x).shape();
                accumulate(grads, *x, Tensor::from_vec(shape, dy.data().to_vec()));
            }
            Op::ResizeNearest { x } => {
                let (c, h, w) = self.value(*x).chw();
                let (_, oh, ow) = y.chw();
                let g = dy.data();
                let mut dx = vec![T::zero(); c * h * w];
                for ci in 0..c {
                    for yy in 0..oh {
                        let sy = yy * h / oh;
                        for xx in 0..ow {
                            dx[(ci * h + sy) * w + xx * w / ow] += g[(ci * oh + yy) * ow + xx];
                        }
                    }
                }
                accumulate(grads, *x, Tensor::from_vec(&[c, h, w], dx));
            }
            Op::BceWithLogits { x, target } => {
                let xv = self.value(*x);
                let scale = dy.item() / T::of(xv.len() as f64);
                let data = xv
                    .data()
                    .iter()
                    .zip(target)
                    .map(|(&v, &t)| (sigmoid(v) - t) * scale)
                    .collect();
                accumulate(grads, *x, Tensor::from_vec(xv.shape(), data));
            }
        }
    }
}

fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn zip_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&p, &q)| f(p, q))
        .collect();
    Tensor::from_vec(a.shape(), data)
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Gradients produced by one backward pass.
pub struct Grads<T> {
    nodes: Vec<Option<Tensor<T>>>,
    params: HashMap<(u64, usize), Tensor<T>>,
}

impl<T: Real> Grads<T> {
    /// Gradient with respect to any tape node that required grad.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(&(store.uid(), id.index()))
    }

    /// True if any gradient was recorded for a parameter of `store`.
    pub fn touches(&self, store: &ParamStore<T>) -> bool {
        self.params.keys().any(|(uid, _)| *uid == store.uid())
    }
}
