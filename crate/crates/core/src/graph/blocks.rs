use rand_chacha::ChaCha8Rng;

use super::spec::BlockKind;
use crate::error::{Error, Result};
use crate::tensor::{Element, ParameterStore, Shape, Tape, Tensor, Var};

/// How a parameter is filled when first created.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Zero-mean Gaussian with std `sqrt(2 / fan_in)`.
    He { fan_in: usize },
    Zeros,
    Ones,
}

enum Params<'a, T: Element> {
    Bound(&'a ParameterStore<T>),
    Init { store: &'a mut ParameterStore<T>, rng: &'a mut ChaCha8Rng },
}

/// A tape bound to a parameter store, plus a log of named activations.
pub struct Ctx<'a, T: Element> {
    pub tape: &'a mut Tape<T>,
    params: Params<'a, T>,
    trace: Vec<(String, Var)>,
}

impl<'a, T: Element> Ctx<'a, T> {
    pub fn new(tape: &'a mut Tape<T>, store: &'a ParameterStore<T>) -> Self {
        Ctx { tape, params: Params::Bound(store), trace: Vec::new() }
    }

    /// Missing parameters are created on first use instead of failing.
    pub fn initializing(tape: &'a mut Tape<T>, store: &'a mut ParameterStore<T>, rng: &'a mut ChaCha8Rng) -> Self {
        Ctx { tape, params: Params::Init { store, rng }, trace: Vec::new() }
    }

    pub fn param(&mut self, name: &str, shape: Shape, init: Init) -> Result<Var> {
        match &mut self.params {
            Params::Bound(store) => {
                let found = store.get(name).ok_or_else(|| Error::UnknownParam(name.to_string()))?.shape();
                if found != shape {
                    return Err(Error::shape("param", format!("`{name}` is {found}, layer expects {shape}")));
                }
                self.tape.param(store, name)
            }
            Params::Init { store, rng } => {
                let t = match init {
                    Init::He { fan_in } => Tensor::randn(shape, (2.0 / fan_in as f64).sqrt(), &mut **rng),
                    Init::Zeros => Tensor::zeros(shape),
                    Init::Ones => Tensor::ones(shape),
                };
                store.insert(name, t)?;
                self.tape.param(store, name)
            }
        }
    }

    /// `k×k` convolution with "same"-style padding `k / 2`, He-initialized.
    pub fn conv(&mut self, name: &str, x: Var, out_ch: usize, k: usize, stride: usize, bias: bool) -> Result<Var> {
        let in_ch = self.tape.shape(x).c();
        self.conv_init(name, x, out_ch, k, stride, bias, Init::He { fan_in: in_ch * k * k })
    }

    /// Like [`Ctx::conv`] with an explicit weight initializer.
    #[allow(clippy::too_many_arguments)]
    pub fn conv_init(
        &mut self,
        name: &str,
        x: Var,
        out_ch: usize,
        k: usize,
        stride: usize,
        bias: bool,
        init: Init,
    ) -> Result<Var> {
        let in_ch = self.tape.shape(x).c();
        let w = self.param(&format!("{name}.weight"), Shape::new(out_ch, in_ch, k, k), init)?;
        let b = if bias { Some(self.param(&format!("{name}.bias"), Shape::new(1, out_ch, 1, 1), Init::Zeros)?) } else { None };
        self.tape.conv2d(x, w, b, stride, k / 2)
    }

    /// Learnable per-channel scale and shift (stands in for batch norm).
    pub fn affine(&mut self, name: &str, x: Var) -> Result<Var> {
        self.affine_init(name, x, Init::Ones)
    }

    /// Affine whose scale starts from `scale_init`.
    pub fn affine_init(&mut self, name: &str, x: Var, scale_init: Init) -> Result<Var> {
        let c = self.tape.shape(x).c();
        let scale = self.param(&format!("{name}.scale"), Shape::new(1, c, 1, 1), scale_init)?;
        let shift = self.param(&format!("{name}.shift"), Shape::new(1, c, 1, 1), Init::Zeros)?;
        self.tape.channel_affine(x, scale, shift)
    }

    pub fn record(&mut self, name: impl Into<String>, v: Var) -> Var {
        self.trace.push((name.into(), v));
        v
    }

    pub fn trace(&self) -> &[(String, Var)] {
        &self.trace
    }

    pub fn into_trace(self) -> Vec<(String, Var)> {
        self.trace
    }
}

/// `relu(F(x) + shortcut(x))`. The shortcut is a 1×1 projection whenever
/// the stride or the width changes.
///
/// Without batch statistics nothing keeps residual sums from growing with
/// depth, so the last affine of `F` starts at scale 0 and every block
/// begins as (projected) identity. The same holds for the last conv of the
/// RCU and CRP branches below.
pub fn residual_block<T: Element>(
    ctx: &mut Ctx<'_, T>,
    name: &str,
    x: Var,
    kind: BlockKind,
    out_ch: usize,
    stride: usize,
) -> Result<Var> {
    let in_ch = ctx.tape.shape(x).c();
    let f = match kind {
        BlockKind::Basic => {
            let h = ctx.conv(&format!("{name}.conv1"), x, out_ch, 3, stride, false)?;
            let h = ctx.affine(&format!("{name}.affine1"), h)?;
            let h = ctx.tape.relu(h);
            let h = ctx.conv(&format!("{name}.conv2"), h, out_ch, 3, 1, false)?;
            ctx.affine_init(&format!("{name}.affine2"), h, Init::Zeros)?
        }
        BlockKind::Bottleneck => {
            let mid = out_ch / 4;
            if mid == 0 {
                return Err(Error::Spec(format!("{name}: bottleneck width {out_ch} too small")));
            }
            let h = ctx.conv(&format!("{name}.conv1"), x, mid, 1, 1, false)?;
            let h = ctx.affine(&format!("{name}.affine1"), h)?;
            let h = ctx.tape.relu(h);
            let h = ctx.conv(&format!("{name}.conv2"), h, mid, 3, stride, false)?;
            let h = ctx.affine(&format!("{name}.affine2"), h)?;
            let h = ctx.tape.relu(h);
            let h = ctx.conv(&format!("{name}.conv3"), h, out_ch, 1, 1, false)?;
            ctx.affine_init(&format!("{name}.affine3"), h, Init::Zeros)?
        }
    };
    let shortcut = if stride != 1 || in_ch != out_ch {
        let p = ctx.conv(&format!("{name}.proj"), x, out_ch, 1, stride, false)?;
        ctx.affine(&format!("{name}.proj_affine"), p)?
    } else {
        x
    };
    let sum = ctx.tape.add(f, shortcut)?;
    Ok(ctx.tape.relu(sum))
}

/// Residual conv unit: `x + conv(relu(conv(relu(x))))`, shape preserving.
pub fn rcu_forward<T: Element>(ctx: &mut Ctx<'_, T>, name: &str, x: Var) -> Result<Var> {
    let c = ctx.tape.shape(x).c();
    let h = ctx.tape.relu(x);
    let h = ctx.conv(&format!("{name}.conv1"), h, c, 3, 1, true)?;
    let h = ctx.tape.relu(h);
    let h = ctx.conv_init(&format!("{name}.conv2"), h, c, 3, 1, true, Init::Zeros)?;
    ctx.tape.add(x, h)
}

/// Multi-resolution fusion. Both inputs are adapted to `fused` channels by
/// a 3×3 conv, the coarser one is upsampled to the finer extent, and the
/// two are summed. Without a coarser input only the adaptation runs.
pub fn mrf_forward<T: Element>(
    ctx: &mut Ctx<'_, T>,
    name: &str,
    high: Option<Var>,
    low: Var,
    fused: usize,
) -> Result<Var> {
    if fused == 0 {
        return Err(Error::Spec(format!("{name}: fused width undeclared")));
    }
    let Some(high) = high else {
        return ctx.conv(&format!("{name}.adapt"), low, fused, 3, 1, true);
    };
    let (hs, ls) = (ctx.tape.shape(high), ctx.tape.shape(low));
    if hs.h() > ls.h() || hs.w() > ls.w() {
        return Err(Error::shape("mrf", format!("{name}: coarser input {hs} exceeds finer input {ls}")));
    }
    let a = ctx.conv(&format!("{name}.adapt_high"), high, fused, 3, 1, true)?;
    let a = if (hs.h(), hs.w()) == (ls.h(), ls.w()) { a } else { ctx.tape.upsample_bilinear(a, ls.h(), ls.w())? };
    let b = ctx.conv(&format!("{name}.adapt_low"), low, fused, 3, 1, true)?;
    ctx.tape.add(a, b)
}

/// Chained residual pooling: each block pools the previous block's output
/// (5×5, stride 1) and convolves it; every block output is added onto the
/// input.
pub fn crp_forward<T: Element>(ctx: &mut Ctx<'_, T>, name: &str, x: Var, pool_blocks: usize) -> Result<Var> {
    if pool_blocks == 0 {
        return Err(Error::Spec(format!("{name}: needs at least one pooling block")));
    }
    let c = ctx.tape.shape(x).c();
    let mut running = x;
    let mut acc = x;
    for i in 0..pool_blocks {
        let p = ctx.tape.max_pool(running, 5, 1, 2)?;
        running = ctx.conv_init(&format!("{name}.pool{i}.conv"), p, c, 3, 1, false, Init::Zeros)?;
        acc = ctx.tape.add(acc, running)?;
    }
    Ok(acc)
}
