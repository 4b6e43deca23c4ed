use super::kernels::{self, ConvGeom, PoolGeom};
use super::{Element, ParameterStore, Shape, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise operator family.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Relu,
    Sigmoid,
}

#[derive(Debug)]
enum Op<T: Element> {
    Leaf,
    Conv2d { input: Var, weight: Var, bias: Option<Var>, stride: usize, padding: usize },
    MaxPool { input: Var, argmax: Vec<u32> },
    Upsample { input: Var },
    Add { lhs: Var, rhs: Var },
    Mul { lhs: Var, rhs: Var },
    Relu { input: Var },
    Sigmoid { input: Var },
    ChannelAffine { input: Var, scale: Var, shift: Var },
    Scale { input: Var, factor: T },
    Sum { input: Var },
    Mean { input: Var },
    WeightedLogistic { pred: Var, label: Vec<T>, beta: T, eps: T },
}

#[derive(Debug)]
struct Node<T: Element> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    /// Accumulated gradient, kept only for leaves.
    grad: Option<Vec<T>>,
    param: Option<String>,
}

/// Operation log for one forward pass.
///
/// Values are immutable once recorded. [`Tape::backward`] walks the log in
/// reverse and accumulates gradients on every leaf that requires them;
/// calling it again adds to those gradients.
#[derive(Debug)]
pub struct Tape<T: Element = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded value and gradient.
    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad, grad: None, param: None });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<T> {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.node(v).value.shape()
    }

    fn needs_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    /// Accumulated gradient of a leaf after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.node(v).grad.as_deref()
    }

    /// Records a leaf. It participates in differentiation iff the tensor
    /// has `requires_grad` set.
    pub fn leaf(&mut self, mut tensor: Tensor<T>) -> Var {
        let rg = tensor.requires_grad();
        tensor.zero_grad();
        self.push(tensor, Op::Leaf, rg)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    /// Copies a named parameter onto the tape.
    pub fn param(&mut self, store: &ParameterStore<T>, name: &str) -> Result<Var> {
        let t = store.get(name).ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        let v = self.leaf(t.clone());
        self.nodes[v.0].param = Some(name.to_string());
        Ok(v)
    }

    /// Leaf gradients of parameters recorded through [`Tape::param`].
    pub fn param_grads(&self) -> impl Iterator<Item = (&str, &[T])> {
        self.nodes.iter().filter_map(|n| match (&n.param, &n.grad) {
            (Some(name), Some(g)) => Some((name.as_str(), g.as_slice())),
            _ => None,
        })
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let xs = self.shape(input);
        let ws = self.shape(weight);
        if xs.c() != ws.c() {
            return Err(Error::shape(
                "conv2d",
                format!("input channels {} != weight in_channels {} (input {xs}, weight {ws})", xs.c(), ws.c()),
            ));
        }
        if let Some(b) = bias {
            let bs = self.shape(b);
            if bs.numel() != ws.n() {
                return Err(Error::shape("conv2d", format!("bias has {} values for {} out_channels", bs.numel(), ws.n())));
            }
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d", "stride must be positive"));
        }
        let g = ConvGeom::new(xs, ws, stride, padding).ok_or_else(|| {
            Error::shape("conv2d", format!("kernel {}x{} larger than padded input {xs} (padding {padding})", ws.h(), ws.w()))
        })?;
        let out_shape = Shape::new(xs.n(), g.out_c, g.out_h, g.out_w);
        let mut out = vec![T::zero(); out_shape.numel()];
        kernels::conv2d_forward(
            &g,
            xs.n(),
            self.value(input).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
            &mut out,
        );
        let rg = self.needs_grad(input) || self.needs_grad(weight) || bias.is_some_and(|b| self.needs_grad(b));
        Ok(self.push(Tensor::from_vec(out_shape, out)?, Op::Conv2d { input, weight, bias, stride, padding }, rg))
    }

    pub fn max_pool(&mut self, input: Var, kernel: usize, stride: usize, padding: usize) -> Result<Var> {
        let xs = self.shape(input);
        let pg = PoolGeom::new(xs.h(), xs.w(), kernel, stride, padding).ok_or_else(|| {
            Error::invalid(
                "max_pool",
                format!("window {kernel} (stride {stride}, padding {padding}) does not fit input {xs}"),
            )
        })?;
        let out_shape = Shape::new(xs.n(), xs.c(), pg.out_h, pg.out_w);
        let mut out = vec![T::zero(); out_shape.numel()];
        let argmax = kernels::max_pool_forward(xs, &pg, self.value(input).data(), &mut out);
        let rg = self.needs_grad(input);
        Ok(self.push(Tensor::from_vec(out_shape, out)?, Op::MaxPool { input, argmax }, rg))
    }

    /// Align-corners bilinear enlargement to `(target_h, target_w)`.
    pub fn upsample_bilinear(&mut self, input: Var, target_h: usize, target_w: usize) -> Result<Var> {
        let xs = self.shape(input);
        if target_h < xs.h() || target_w < xs.w() {
            return Err(Error::invalid(
                "upsample_bilinear",
                format!("target {target_h}x{target_w} smaller than source {}x{}", xs.h(), xs.w()),
            ));
        }
        let out = kernels::upsample_forward(xs, self.value(input).data(), target_h, target_w);
        let rg = self.needs_grad(input);
        let shape = Shape::new(xs.n(), xs.c(), target_h, target_w);
        Ok(self.push(Tensor::from_vec(shape, out)?, Op::Upsample { input }, rg))
    }

    pub fn elementwise(&mut self, kind: Elementwise, operands: &[Var]) -> Result<Var> {
        match (kind, operands) {
            (Elementwise::Add, [a, b]) => self.add(*a, *b),
            (Elementwise::Relu, [x]) => Ok(self.relu(*x)),
            (Elementwise::Sigmoid, [x]) => Ok(self.sigmoid(*x)),
            _ => Err(Error::invalid("elementwise", format!("{kind:?} with {} operands", operands.len()))),
        }
    }

    pub fn add(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        let (ls, rs) = (self.shape(lhs), self.shape(rhs));
        if ls != rs {
            return Err(Error::shape("add", format!("{ls} vs {rs}")));
        }
        let out: Vec<T> = self.value(lhs).data().iter().zip(self.value(rhs).data()).map(|(&a, &b)| a + b).collect();
        let rg = self.needs_grad(lhs) || self.needs_grad(rhs);
        Ok(self.push(Tensor::from_vec(ls, out)?, Op::Add { lhs, rhs }, rg))
    }

    /// Elementwise product of two same-shape values.
    pub fn mul(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        let (ls, rs) = (self.shape(lhs), self.shape(rhs));
        if ls != rs {
            return Err(Error::shape("mul", format!("{ls} vs {rs}")));
        }
        let out: Vec<T> = self.value(lhs).data().iter().zip(self.value(rhs).data()).map(|(&a, &b)| a * b).collect();
        let rg = self.needs_grad(lhs) || self.needs_grad(rhs);
        Ok(self.push(Tensor::from_vec(ls, out)?, Op::Mul { lhs, rhs }, rg))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let x = self.value(input);
        // NaN passes through so that non-finite activations stay visible.
        let out = x.data().iter().map(|&v| if v < T::zero() { T::zero() } else { v }).collect();
        let shape = x.shape();
        let rg = self.needs_grad(input);
        self.push(Tensor::from_vec(shape, out).expect("same shape"), Op::Relu { input }, rg)
    }

    /// Logistic function, clamped so the result stays inside `(0, 1)`.
    pub fn sigmoid(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let lo = T::min_positive_value();
        let hi = T::one() - T::epsilon() / T::of(2.0);
        let out = x
            .data()
            .iter()
            .map(|&v| {
                let s = T::one() / (T::one() + (-v).exp());
                if s.is_nan() { s } else { s.max(lo).min(hi) }
            })
            .collect();
        let shape = x.shape();
        let rg = self.needs_grad(input);
        self.push(Tensor::from_vec(shape, out).expect("same shape"), Op::Sigmoid { input }, rg)
    }

    /// `out[n,c] = input[n,c] * scale[c] + shift[c]`.
    pub fn channel_affine(&mut self, input: Var, scale: Var, shift: Var) -> Result<Var> {
        let xs = self.shape(input);
        for (name, v) in [("scale", scale), ("shift", shift)] {
            if self.shape(v).numel() != xs.c() {
                return Err(Error::shape(
                    "channel_affine",
                    format!("{name} has {} values for {} channels", self.shape(v).numel(), xs.c()),
                ));
            }
        }
        let x = self.value(input).data();
        let a = self.value(scale).data();
        let b = self.value(shift).data();
        let plane = xs.plane();
        let mut out = Vec::with_capacity(x.len());
        for (i, chunk) in x.chunks_exact(plane).enumerate() {
            let c = i % xs.c();
            out.extend(chunk.iter().map(|&v| v * a[c] + b[c]));
        }
        let rg = self.needs_grad(input) || self.needs_grad(scale) || self.needs_grad(shift);
        Ok(self.push(Tensor::from_vec(xs, out)?, Op::ChannelAffine { input, scale, shift }, rg))
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Var {
        let x = self.value(input);
        let out = x.data().iter().map(|&v| v * factor).collect();
        let shape = x.shape();
        let rg = self.needs_grad(input);
        self.push(Tensor::from_vec(shape, out).expect("same shape"), Op::Scale { input, factor }, rg)
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.value(input).sum();
        let rg = self.needs_grad(input);
        self.push(Tensor::scalar(s), Op::Sum { input }, rg)
    }

    pub fn mean(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let m = T::of(x.sum().as_f64() / x.data().len() as f64);
        let rg = self.needs_grad(input);
        self.push(Tensor::scalar(m), Op::Mean { input }, rg)
    }

    /// Mean over pixels of `-beta·y·ln(h) - (1-y)·ln(1-h)` with `h` clamped
    /// to `[eps, 1-eps]`. The clamp is transparent to the gradient.
    pub fn weighted_logistic(&mut self, pred: Var, label: &[T], beta: T, eps: T) -> Result<Var> {
        let ps = self.shape(pred);
        if ps.numel() != label.len() {
            return Err(Error::shape(
                "weighted_logistic",
                format!("prediction {ps} has {} values, label has {}", ps.numel(), label.len()),
            ));
        }
        let h = self.value(pred).data();
        let hi = T::one() - eps;
        let total: f64 = h
            .iter()
            .zip(label)
            .map(|(&p, &y)| {
                let p = p.max(eps).min(hi).as_f64();
                let y = y.as_f64();
                -y * beta.as_f64() * p.ln() - (1.0 - y) * (1.0 - p).ln()
            })
            .sum();
        let loss = T::of(total / label.len() as f64);
        let rg = self.needs_grad(pred);
        Ok(self.push(Tensor::scalar(loss), Op::WeightedLogistic { pred, label: label.to_vec(), beta, eps }, rg))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss);
        if !shape.is_scalar() {
            return Err(Error::NonScalarLoss(shape));
        }
        if !self.needs_grad(loss) {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut leaf_grads = Vec::new();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.backprop_node(node, g, &mut grads, &mut leaf_grads, i);
        }
        for (i, g) in leaf_grads {
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn backprop_node(
        &self,
        node: &Node<T>,
        g: Vec<T>,
        grads: &mut [Option<Vec<T>>],
        leaf_grads: &mut Vec<(usize, Vec<T>)>,
        index: usize,
    ) {
        let mut send = |v: Var, contribution: Vec<T>| {
            if !self.needs_grad(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, &b)| *a += b),
                slot @ None => *slot = Some(contribution),
            }
        };
        match &node.op {
            Op::Leaf => leaf_grads.push((index, g)),
            Op::Conv2d { input, weight, bias, stride, padding } => {
                let xs = self.shape(*input);
                let ws = self.shape(*weight);
                let geom = ConvGeom::new(xs, ws, *stride, *padding).expect("validated in forward");
                let mut gx = self.needs_grad(*input).then(|| vec![T::zero(); xs.numel()]);
                let mut gw = self.needs_grad(*weight).then(|| vec![T::zero(); ws.numel()]);
                let mut gb = bias.filter(|b| self.needs_grad(*b)).map(|_| vec![T::zero(); ws.n()]);
                kernels::conv2d_backward(
                    &geom,
                    xs.n(),
                    self.value(*input).data(),
                    self.value(*weight).data(),
                    &g,
                    gx.as_deref_mut(),
                    gw.as_deref_mut(),
                    gb.as_deref_mut(),
                );
                if let Some(gx) = gx {
                    send(*input, gx);
                }
                if let Some(gw) = gw {
                    send(*weight, gw);
                }
                if let (Some(b), Some(gb)) = (bias, gb) {
                    send(*b, gb);
                }
            }
            Op::MaxPool { input, argmax } => {
                let mut gx = vec![T::zero(); self.shape(*input).numel()];
                for (&src, &gv) in argmax.iter().zip(&g) {
                    gx[src as usize] += gv;
                }
                send(*input, gx);
            }
            Op::Upsample { input } => {
                let xs = self.shape(*input);
                let os = node.value.shape();
                let mut gx = vec![T::zero(); xs.numel()];
                kernels::upsample_backward(xs, &g, os.h(), os.w(), &mut gx);
                send(*input, gx);
            }
            Op::Add { lhs, rhs } => {
                send(*lhs, g.clone());
                send(*rhs, g);
            }
            Op::Mul { lhs, rhs } => {
                let a = self.value(*lhs).data();
                let b = self.value(*rhs).data();
                if self.needs_grad(*lhs) {
                    send(*lhs, g.iter().zip(b).map(|(&gv, &bv)| gv * bv).collect());
                }
                if self.needs_grad(*rhs) {
                    send(*rhs, g.iter().zip(a).map(|(&gv, &av)| gv * av).collect());
                }
            }
            Op::Relu { input } => {
                let x = self.value(*input).data();
                let gx = g.iter().zip(x).map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() }).collect();
                send(*input, gx);
            }
            Op::Sigmoid { input } => {
                let y = node.value.data();
                let gx = g.iter().zip(y).map(|(&gv, &yv)| gv * yv * (T::one() - yv)).collect();
                send(*input, gx);
            }
            Op::ChannelAffine { input, scale, shift } => {
                let xs = self.shape(*input);
                let x = self.value(*input).data();
                let a = self.value(*scale).data();
                let plane = xs.plane();
                let mut ga = vec![T::zero(); xs.c()];
                let mut gb = vec![T::zero(); xs.c()];
                let mut gx = vec![T::zero(); x.len()];
                for (i, (gchunk, xchunk)) in g.chunks_exact(plane).zip(x.chunks_exact(plane)).enumerate() {
                    let c = i % xs.c();
                    let mut sa = T::zero();
                    let mut sb = T::zero();
                    for (j, (&gv, &xv)) in gchunk.iter().zip(xchunk).enumerate() {
                        sa += gv * xv;
                        sb += gv;
                        gx[i * plane + j] = gv * a[c];
                    }
                    ga[c] += sa;
                    gb[c] += sb;
                }
                send(*input, gx);
                send(*scale, ga);
                send(*shift, gb);
            }
            Op::Scale { input, factor } => {
                send(*input, g.iter().map(|&v| v * *factor).collect());
            }
            Op::Sum { input } => {
                send(*input, vec![g[0]; self.shape(*input).numel()]);
            }
            Op::Mean { input } => {
                let n = self.shape(*input).numel();
                send(*input, vec![g[0] / T::of(n as f64); n]);
            }
            Op::WeightedLogistic { pred, label, beta, eps } => {
                let h = self.value(*pred).data();
                let n = T::of(label.len() as f64);
                let hi = T::one() - *eps;
                let gx = h
                    .iter()
                    .zip(label)
                    .map(|(&p, &y)| {
                        let p = p.max(*eps).min(hi);
                        let d = -y * *beta / p + (T::one() - y) / (T::one() - p);
                        g[0] * d / n
                    })
                    .collect();
                send(*pred, gx);
            }
        }
    }
}
