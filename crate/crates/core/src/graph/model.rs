use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::blocks::{crp_forward, mrf_forward, rcu_forward, residual_block, Ctx};
use super::spec::{NetworkSpec, OutputScale};
use crate::error::{Error, Result};
use crate::maps::ContourPrediction;
use crate::tensor::kernels::average_downsample;
use crate::tensor::{Element, ParameterStore, Shape, Tape, Tensor, Var};

/// Input extent used to create the parameters; the deepest level is 1×1.
const INIT_EXTENT: usize = 32;

/// Handles to the interesting values of one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    /// Backbone outputs, shallowest (1/4) first.
    pub features: [Var; 4],
    /// Refinement outputs indexed like `features`.
    pub levels: [Var; 4],
    pub image_path: Var,
    pub fused: Var,
    pub logits: Var,
    /// Probabilities at the network's output scale.
    pub prob: Var,
    /// Probabilities at the input resolution.
    pub prob_input: Var,
    pub trace: Vec<(String, Var)>,
}

/// Executable graph for a validated [`NetworkSpec`].
#[derive(Clone, Debug, PartialEq)]
pub struct Rcn {
    spec: NetworkSpec,
}

/// Validates `spec`, creates its parameters (seeded) and returns the graph.
pub fn build_rcn(spec: &NetworkSpec, seed: u64) -> Result<(ParameterStore, Rcn)> {
    spec.validate()?;
    let rcn = Rcn { spec: spec.clone() };
    let mut store = ParameterStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tape = Tape::new();
    let image = Tensor::zeros(Shape::new(1, 3, INIT_EXTENT, INIT_EXTENT));
    let mut ctx = Ctx::initializing(&mut tape, &mut store, &mut rng);
    rcn.run(&mut ctx, &image)?;
    Ok((store, rcn))
}

/// Zeroes every parameter outside the backbone and sets the head bias, so
/// that the network output collapses to `sigmoid(head_bias)`.
pub fn zero_refinement(store: &mut ParameterStore, head_bias: f32) {
    for (name, t) in store.iter_mut() {
        if name.starts_with("backbone.") {
            continue;
        }
        let fill = if name == "head.bias" { head_bias } else { 0.0 };
        t.data_mut().iter_mut().for_each(|v| *v = fill);
    }
}

impl Rcn {
    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// Records a forward pass of raw `[0, 1]` RGB images (`N×3×H×W`).
    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, store: &ParameterStore<T>, image: &Tensor<T>) -> Result<Forward> {
        let mut ctx = Ctx::new(tape, store);
        self.run(&mut ctx, image)
    }

    /// Contour probabilities for one image, at the image's resolution.
    pub fn predict(&self, store: &ParameterStore, image: &Tensor) -> Result<ContourPrediction> {
        if image.shape().n() != 1 {
            return Err(Error::shape("predict", format!("expected a single image, got {}", image.shape())));
        }
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, store, image)?;
        for (name, v) in &fwd.trace {
            if !tape.value(*v).is_finite() {
                return Err(Error::NonFinite(format!("activation `{name}`")));
            }
        }
        ContourPrediction::from_tensor(tape.value(fwd.prob_input))
    }

    fn normalize<T: Element>(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let s = image.shape();
        if s.c() != 3 {
            return Err(Error::shape("rcn", format!("expected 3-channel input, got {s}")));
        }
        let (mean, std) = (self.spec.input_mean, self.spec.input_std);
        let plane = s.plane();
        let data = image
            .data()
            .chunks_exact(plane)
            .enumerate()
            .flat_map(|(i, chunk)| {
                let c = i % 3;
                let (m, sd) = (T::of(mean[c] as f64), T::of(std[c] as f64));
                chunk.iter().map(move |&v| (v - m) / sd)
            })
            .collect();
        Tensor::from_vec(s, data)
    }

    fn run<T: Element>(&self, ctx: &mut Ctx<'_, T>, image: &Tensor<T>) -> Result<Forward> {
        let spec = &self.spec;
        let input = self.normalize(image)?;
        let (in_h, in_w) = (input.shape().h(), input.shape().w());
        let x = ctx.tape.constant(input.clone());

        // Backbone.
        let stem = &spec.backbone.stem;
        let mut h = ctx.conv("backbone.stem.conv", x, stem.channels, stem.kernel, stem.stride, false)?;
        h = ctx.affine("backbone.stem.affine", h)?;
        h = ctx.tape.relu(h);
        if stem.pool {
            h = ctx.tape.max_pool(h, 3, 2, 1)?;
        }
        ctx.record("backbone.stem", h);
        let mut features = Vec::with_capacity(4);
        for (i, st) in spec.backbone.stages.iter().enumerate() {
            for b in 0..st.blocks {
                let stride = if b == 0 { st.stride } else { 1 };
                let name = format!("backbone.stage{}.block{b}", i + 1);
                h = residual_block(ctx, &name, h, spec.backbone.block, st.channels, stride)?;
            }
            features.push(ctx.record(format!("backbone.stage{}", i + 1), h));
        }

        // Refinement path, deepest level first.
        let mut levels = features.clone();
        let mut prev: Option<Var> = None;
        for i in (0..4).rev() {
            let lv = &spec.path.levels[i];
            let name = format!("refine.level{}", i + 1);
            let mut r = features[i];
            for k in 0..lv.rcu_count_in {
                r = rcu_forward(ctx, &format!("{name}.rcu_in{k}"), r)?;
            }
            let mut y = mrf_forward(ctx, &format!("{name}.mrf"), prev, r, lv.fused_channels)?;
            ctx.record(format!("{name}.mrf"), y);
            y = ctx.tape.relu(y);
            y = crp_forward(ctx, &format!("{name}.crp"), y, lv.crp_pool_blocks)?;
            for k in 0..lv.rcu_count_out {
                y = rcu_forward(ctx, &format!("{name}.rcu_out{k}"), y)?;
            }
            levels[i] = ctx.record(name, y);
            prev = Some(y);
        }

        // Original-image path at output resolution.
        let factor = spec.output_divisor();
        let small = if factor == 1 {
            input
        } else {
            let (shape, data) = average_downsample(input.shape(), input.data(), factor);
            Tensor::from_vec(shape, data)?
        };
        let s = ctx.tape.constant(small);
        let mut p = ctx.conv("image_path.adapt", s, spec.image_path_channels, 3, 1, true)?;
        for k in 0..spec.extra_image_path_rcus {
            p = rcu_forward(ctx, &format!("image_path.rcu{k}"), p)?;
        }
        let image_path = ctx.record("image_path", p);

        let fused = mrf_forward(ctx, "fuse.mrf", prev, image_path, spec.image_path_channels)?;
        ctx.record("fuse", fused);
        let act = ctx.tape.relu(fused);
        let logits = ctx.conv("head", act, 1, 3, 1, true)?;
        ctx.record("head", logits);
        let prob = ctx.tape.sigmoid(logits);
        let prob_input = match spec.output_scale {
            OutputScale::Full => prob,
            OutputScale::Half => ctx.tape.upsample_bilinear(prob, in_h, in_w)?,
        };
        let trace = ctx.trace().to_vec();
        Ok(Forward {
            features: features.try_into().expect("four stages"),
            levels: levels.try_into().expect("four levels"),
            image_path,
            fused,
            logits,
            prob,
            prob_input,
            trace,
        })
    }
}
