use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rcnkit::graph::{
    build_rcn, crp_forward, mrf_forward, rcu_forward, residual_block, zero_refinement, BlockKind, Ctx, NetworkSpec,
    OutputScale, StemSpec,
};
use rcnkit::tensor::{Element, ParameterStore, Shape, Tape, Tensor, Var};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(shape: Shape, seed: u64) -> Tensor {
    let mut r = rng(seed);
    Tensor::from_vec(shape, (0..shape.numel()).map(|_| r.gen::<f32>()).collect()).unwrap()
}

/// Creates the parameters of a block by running it once in initializing mode.
fn init_block<F>(input: &Tensor, seed: u64, f: F) -> ParameterStore
where
    F: Fn(&mut Ctx<'_, f32>, Var) -> rcnkit::Result<Var>,
{
    let mut store = ParameterStore::new();
    let mut r = rng(seed);
    let mut tape = Tape::new();
    let mut ctx = Ctx::initializing(&mut tape, &mut store, &mut r);
    let x = ctx.tape.constant(input.clone());
    f(&mut ctx, x).unwrap();
    store
}

fn run_block<F>(store: &ParameterStore, input: &Tensor, f: F) -> Tensor
where
    F: Fn(&mut Ctx<'_, f32>, Var) -> rcnkit::Result<Var>,
{
    let mut tape = Tape::new();
    let mut ctx = Ctx::new(&mut tape, store);
    let x = ctx.tape.constant(input.clone());
    let y = f(&mut ctx, x).unwrap();
    tape.value(y).clone()
}

fn fill(store: &mut ParameterStore, pred: impl Fn(&str) -> bool, value: f32) {
    for (name, t) in store.iter_mut() {
        if pred(name) {
            t.data_mut().iter_mut().for_each(|v| *v = value);
        }
    }
}

/// Sets every `.weight` to a centred identity kernel (square convs only).
fn identity_kernels(store: &mut ParameterStore) {
    for (name, t) in store.iter_mut() {
        let s = t.shape();
        let data = t.data_mut();
        data.iter_mut().for_each(|v| *v = 0.0);
        if name.ends_with(".weight") {
            for o in 0..s.n() {
                let idx = ((o * s.c() + o) * s.h() + s.h() / 2) * s.w() + s.w() / 2;
                data[idx] = 1.0;
            }
        }
    }
}

fn specs() -> Vec<NetworkSpec> {
    let desk = NetworkSpec::default();

    let mut narrow = NetworkSpec::desk(&[8, 8, 16, 16], 8);
    narrow.output_scale = OutputScale::Full;
    narrow.path.levels[0].crp_pool_blocks = 1;
    narrow.path.levels[3].rcu_count_in = 1;
    narrow.image_path_channels = 8;

    let mut pooled = NetworkSpec::desk(&[16, 16, 32, 32], 16);
    pooled.backbone.stem = StemSpec { kernel: 7, stride: 2, pool: true, channels: 8 };
    pooled.backbone.stages[0].stride = 1;
    pooled.backbone.block = BlockKind::Bottleneck;
    pooled.path.levels[2].fused_channels = 24;
    pooled.path.levels[1].rcu_count_out = 2;
    vec![desk, narrow, pooled]
}

#[test]
fn desk_spec_output_extents() {
    let (store, rcn) = build_rcn(&NetworkSpec::default(), 1).unwrap();
    let image = uniform(Shape::new(1, 3, 64, 64), 2);
    let mut tape = Tape::new();
    let fwd = rcn.forward(&mut tape, &store, &image).unwrap();
    assert_eq!(tape.shape(fwd.prob), Shape::new(1, 1, 32, 32));
    assert_eq!(tape.shape(fwd.prob_input), Shape::new(1, 1, 64, 64));
    let p = tape.value(fwd.prob);
    assert!(p.data().iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn backbone_ladder_and_block_widths_on_three_specs() {
    for (k, spec) in specs().into_iter().enumerate() {
        let (store, rcn) = build_rcn(&spec, 10 + k as u64).unwrap();
        let image = uniform(Shape::new(1, 3, 64, 96), 3);
        let mut tape = Tape::new();
        let fwd = rcn.forward(&mut tape, &store, &image).unwrap();
        for (i, &f) in fwd.features.iter().enumerate() {
            let d = 4 << i;
            let s = tape.shape(f);
            assert_eq!((s.h(), s.w()), (64 / d, 96 / d), "spec {k} stage {}", i + 1);
            assert_eq!(s.c(), spec.backbone.stages[i].channels);
            let r = tape.shape(fwd.levels[i]);
            assert_eq!(r, Shape::new(1, spec.path.levels[i].fused_channels, s.h(), s.w()), "spec {k} level {}", i + 1);
        }
        let out = tape.shape(fwd.prob);
        let div = spec.output_divisor();
        assert_eq!(out, Shape::new(1, 1, 64 / div, 96 / div));
        assert_eq!(tape.shape(fwd.fused).c(), spec.image_path_channels);
    }
}

#[test]
fn zeroed_refinement_gives_uniform_sigmoid_of_bias() {
    for (k, spec) in specs().into_iter().enumerate() {
        let (mut store, rcn) = build_rcn(&spec, 20 + k as u64).unwrap();
        let bias = -0.75f32;
        zero_refinement(&mut store, bias);
        let image = uniform(Shape::new(1, 3, 48, 40), 4);
        let pred = rcn.predict(&store, &image).unwrap();
        assert_eq!((pred.width(), pred.height()), (40, 48));
        let want = 1.0 / (1.0 + (-bias).exp());
        for &v in pred.values() {
            assert!((v - want).abs() < 1e-6, "spec {k}: {v} vs {want}");
        }
    }
}

#[test]
fn zero_image_with_zero_head_bias_is_one_half() {
    let (mut store, rcn) = build_rcn(&NetworkSpec::default(), 5).unwrap();
    zero_refinement(&mut store, 0.0);
    let pred = rcn.predict(&store, &Tensor::zeros(Shape::new(1, 3, 32, 32))).unwrap();
    assert!(pred.values().iter().all(|&v| v == 0.5));
}

#[test]
fn predict_is_bit_deterministic() {
    let (store, rcn) = build_rcn(&NetworkSpec::default(), 6).unwrap();
    let image = uniform(Shape::new(1, 3, 40, 40), 7);
    let a = rcn.predict(&store, &image).unwrap();
    let b = rcn.predict(&store, &image).unwrap();
    assert_eq!(a, b);
    let (store2, _) = build_rcn(&NetworkSpec::default(), 6).unwrap();
    assert!(store.iter().zip(store2.iter()).all(|((n1, t1), (n2, t2))| n1 == n2 && t1.data() == t2.data()));
}

#[test]
fn non_finite_activation_names_the_layer() {
    let (mut store, rcn) = build_rcn(&NetworkSpec::default(), 8).unwrap();
    fill(&mut store, |n| n == "backbone.stem.affine.shift", f32::NAN);
    let err = rcn.predict(&store, &uniform(Shape::new(1, 3, 32, 32), 1)).unwrap_err().to_string();
    assert!(err.contains("backbone.stem"), "{err}");
}

/// Closed-form parameter count, written independently of the graph code.
fn expected_params(spec: &NetworkSpec) -> usize {
    let conv = |i: usize, o: usize, k: usize, bias: bool| i * o * k * k + if bias { o } else { 0 };
    let rcu = |c: usize| 2 * conv(c, c, 3, true);
    let bb = &spec.backbone;
    let mut n = conv(3, bb.stem.channels, bb.stem.kernel, false) + 2 * bb.stem.channels;
    let mut c_in = bb.stem.channels;
    for st in &bb.stages {
        for b in 0..st.blocks {
            let stride = if b == 0 { st.stride } else { 1 };
            let c = st.channels;
            n += match bb.block {
                BlockKind::Basic => conv(c_in, c, 3, false) + conv(c, c, 3, false) + 4 * c,
                BlockKind::Bottleneck => {
                    let m = c / 4;
                    conv(c_in, m, 1, false) + conv(m, m, 3, false) + conv(m, c, 1, false) + 4 * m + 2 * c
                }
            };
            if stride != 1 || c_in != c {
                n += conv(c_in, c, 1, false) + 2 * c;
            }
            c_in = c;
        }
    }
    let mut prev: Option<usize> = None;
    for i in (0..4).rev() {
        let lv = &spec.path.levels[i];
        let c = bb.stages[i].channels;
        let f = lv.fused_channels;
        n += lv.rcu_count_in * rcu(c);
        n += conv(c, f, 3, true) + prev.map_or(0, |p| conv(p, f, 3, true));
        n += lv.crp_pool_blocks * conv(f, f, 3, false);
        n += lv.rcu_count_out * rcu(f);
        prev = Some(f);
    }
    let ip = spec.image_path_channels;
    n += conv(3, ip, 3, true) + spec.extra_image_path_rcus * rcu(ip);
    n += conv(prev.unwrap(), ip, 3, true) + conv(ip, ip, 3, true);
    n + conv(ip, 1, 3, true)
}

#[test]
fn parameter_count_matches_closed_form() {
    for spec in specs() {
        let (store, _) = build_rcn(&spec, 0).unwrap();
        assert_eq!(store.num_scalars(), expected_params(&spec));
    }
}

#[test]
fn parameter_names_are_hierarchical_and_sorted() {
    let (store, _) = build_rcn(&NetworkSpec::default(), 0).unwrap();
    let names: Vec<&str> = store.names().collect();
    let mut sorted = names.clone();
    sorted.sort();
    assert_eq!(names, sorted);
    for want in [
        "backbone.stage1.block0.conv1.weight",
        "backbone.stage2.block0.proj.weight",
        "refine.level4.mrf.adapt.weight",
        "refine.level3.mrf.adapt_high.weight",
        "refine.level1.crp.pool1.conv.weight",
        "image_path.rcu2.conv2.bias",
        "fuse.mrf.adapt_low.bias",
        "head.bias",
    ] {
        assert!(store.contains(want), "{want}");
    }
}

#[test]
fn residual_block_examples() {
    let x = Tensor::from_vec(Shape::new(1, 4, 6, 6), {
        let mut r = rng(30);
        (0..144).map(|_| r.gen_range(-1.0f32..1.0)).collect()
    })
    .unwrap();
    let block = |ctx: &mut Ctx<'_, f32>, v| residual_block(ctx, "rb", v, BlockKind::Basic, 4, 1);
    let mut store = init_block(&x, 1, block);
    assert!(!store.contains("rb.proj.weight"));
    fill(&mut store, |n| n.ends_with(".weight") || n.ends_with(".shift"), 0.0);
    let y = run_block(&store, &x, block);
    let relu: Vec<f32> = x.data().iter().map(|v| v.max(0.0)).collect();
    assert_eq!(y.data(), &relu[..]);

    let big = uniform(Shape::new(1, 4, 32, 32), 2);
    let down = |ctx: &mut Ctx<'_, f32>, v| residual_block(ctx, "rb", v, BlockKind::Basic, 8, 2);
    let store = init_block(&big, 3, down);
    assert!(store.contains("rb.proj.weight"));
    assert_eq!(run_block(&store, &big, down).shape(), Shape::new(1, 8, 16, 16));
}

#[test]
fn residual_block_rejects_mismatched_parameters() {
    let x = uniform(Shape::new(1, 4, 8, 8), 1);
    let store = init_block(&x, 1, |ctx, v| residual_block(ctx, "rb", v, BlockKind::Basic, 4, 1));
    let wider = uniform(Shape::new(1, 6, 8, 8), 1);
    let mut tape = Tape::new();
    let mut ctx = Ctx::new(&mut tape, &store);
    let v = ctx.tape.constant(wider);
    assert!(residual_block(&mut ctx, "rb", v, BlockKind::Basic, 6, 1).is_err());
}

#[test]
fn rcu_examples() {
    let x = uniform(Shape::new(1, 16, 8, 8), 40);
    let rcu = |ctx: &mut Ctx<'_, f32>, v| rcu_forward(ctx, "rcu", v);
    let mut store = init_block(&x, 4, rcu);
    let y = run_block(&store, &x, rcu);
    assert_eq!(y.shape(), x.shape());

    // Branch isolation: rebuild conv(relu(conv(relu(x)))) from raw tape ops.
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let h = tape.relu(xv);
    let w1 = tape.param(&store, "rcu.conv1.weight").unwrap();
    let b1 = tape.param(&store, "rcu.conv1.bias").unwrap();
    let h = tape.conv2d(h, w1, Some(b1), 1, 1).unwrap();
    let h = tape.relu(h);
    let w2 = tape.param(&store, "rcu.conv2.weight").unwrap();
    let b2 = tape.param(&store, "rcu.conv2.bias").unwrap();
    let branch = tape.conv2d(h, w2, Some(b2), 1, 1).unwrap();
    for ((yo, xo), bo) in y.data().iter().zip(x.data()).zip(tape.value(branch).data()) {
        assert!(((yo - xo) - bo).abs() <= 1e-6 * (1.0 + bo.abs()));
    }

    fill(&mut store, |n| n.ends_with(".weight"), 0.0);
    assert_eq!(run_block(&store, &x, rcu).data(), x.data());
}

#[test]
fn mrf_examples() {
    let high = uniform(Shape::new(1, 512, 4, 4), 50);
    let low = uniform(Shape::new(1, 256, 8, 8), 51);
    let mut store = ParameterStore::new();
    let mut r = rng(5);
    let mut tape = Tape::new();
    let mut ctx = Ctx::initializing(&mut tape, &mut store, &mut r);
    let (h, l) = (ctx.tape.constant(high), ctx.tape.constant(low));
    let y = mrf_forward(&mut ctx, "mrf", Some(h), l, 256).unwrap();
    assert_eq!(tape.shape(y), Shape::new(1, 256, 8, 8));

    // Equal shapes, identity adapt kernels: output is high + low.
    let a = uniform(Shape::new(1, 6, 5, 5), 52);
    let b = uniform(Shape::new(1, 6, 5, 5), 53);
    let pair = |ctx: &mut Ctx<'_, f32>, a: &Tensor, b: &Tensor| {
        let (av, bv) = (ctx.tape.constant(a.clone()), ctx.tape.constant(b.clone()));
        mrf_forward(ctx, "mrf", Some(av), bv, 6).unwrap()
    };
    let mut store = ParameterStore::new();
    let mut r = rng(6);
    let mut tape = Tape::new();
    pair(&mut Ctx::initializing(&mut tape, &mut store, &mut r), &a, &b);
    identity_kernels(&mut store);
    let mut tape = Tape::new();
    let y = pair(&mut Ctx::new(&mut tape, &store), &a, &b);
    for ((o, x), z) in tape.value(y).data().iter().zip(a.data()).zip(b.data()) {
        assert!((o - (x + z)).abs() < 1e-6);
    }

    // Zero inputs with zero biases give zero output.
    let zeros = Tensor::zeros(Shape::new(1, 6, 5, 5));
    let mut tape = Tape::new();
    let y = pair(&mut Ctx::new(&mut tape, &store), &zeros, &zeros);
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));

    let mut tape = Tape::new();
    let mut ctx = Ctx::new(&mut tape, &store);
    let v = ctx.tape.constant(a);
    assert!(mrf_forward(&mut ctx, "mrf", None, v, 0).is_err());
}

#[test]
fn crp_examples() {
    let x = uniform(Shape::new(1, 8, 8, 8), 60);
    let crp2 = |ctx: &mut Ctx<'_, f32>, v| crp_forward(ctx, "crp", v, 2);
    let mut store = init_block(&x, 7, crp2);
    assert_eq!(run_block(&store, &x, crp2).shape(), x.shape());
    fill(&mut store, |_| true, 0.0);
    assert_eq!(run_block(&store, &x, crp2).data(), x.data());

    let constant = Tensor::full(Shape::new(1, 3, 6, 6), 0.7f32);
    let crp1 = |ctx: &mut Ctx<'_, f32>, v| crp_forward(ctx, "crp", v, 1);
    let mut store = init_block(&constant, 8, crp1);
    identity_kernels(&mut store);
    let y = run_block(&store, &constant, crp1);
    assert!(y.data().iter().all(|&v| (v - 1.4).abs() < 1e-6));
}

/// f64 central differences of `sum(w ⊙ block(x))` against the tape.
fn block_gradient_check<F>(input: &Tensor<f64>, store: &ParameterStore<f64>, f: F)
where
    F: Fn(&mut Ctx<'_, f64>, Var) -> rcnkit::Result<Var>,
{
    let weights = {
        let mut tape = Tape::new();
        let mut ctx = Ctx::new(&mut tape, store);
        let x = ctx.tape.constant(input.clone());
        let y = f(&mut ctx, x).unwrap();
        let s = tape.shape(y);
        let mut r = rng(99);
        Tensor::<f64>::from_vec(s, (0..s.numel()).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
    };
    let objective = |store: &ParameterStore<f64>, input: &Tensor<f64>, grads: bool| {
        let mut tape = Tape::new();
        let mut ctx = Ctx::new(&mut tape, store);
        let x = ctx.tape.leaf(input.clone().with_requires_grad(true));
        let y = f(&mut ctx, x).unwrap();
        let w = tape.constant(weights.clone());
        let prod = tape.mul(y, w).unwrap();
        let loss = tape.sum(prod);
        let value = tape.value(loss).item();
        if grads {
            tape.backward(loss).unwrap();
            let mut g: Vec<(String, Vec<f64>)> =
                tape.param_grads().map(|(n, g)| (n.to_string(), g.to_vec())).collect();
            g.push(("<input>".into(), tape.grad(x).unwrap().to_vec()));
            (value, g)
        } else {
            (value, Vec::new())
        }
    };
    let (_, grads) = objective(store, input, true);
    let h = 1e-5;
    let mut r = rng(7);
    let mut checked = 0;
    for (name, g) in &grads {
        for _ in 0..4 {
            let i = r.gen_range(0..g.len());
            let eval = |delta: f64| {
                if name == "<input>" {
                    let mut x = input.clone();
                    x.data_mut()[i] += delta;
                    objective(store, &x, false).0
                } else {
                    let mut s = store.clone();
                    s.get_mut(name).unwrap().data_mut()[i] += delta;
                    objective(&s, input, false).0
                }
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-4);
            assert!(rel < 1e-3, "{name}[{i}]: analytic {} vs fd {fd}", g[i]);
            checked += 1;
        }
    }
    assert!(checked >= 20);
}

/// Moves every parameter off its initial value; zero-initialized branch
/// outputs would otherwise hide the gradients that flow through them.
fn jitter(store: &mut ParameterStore<f64>, seed: u64) {
    let mut r = rng(seed);
    for (_, t) in store.iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += r.gen_range(-0.3..0.3));
    }
}

fn to_f64(t: &Tensor) -> Tensor<f64> {
    t.cast()
}

#[test]
fn residual_block_gradients_match_finite_differences() {
    let x = uniform(Shape::new(1, 3, 7, 7), 70);
    let store = init_block(&x, 9, |ctx, v| residual_block(ctx, "rb", v, BlockKind::Basic, 5, 2));
    let mut store: ParameterStore<f64> = store.cast();
    jitter(&mut store, 71);
    block_gradient_check(&to_f64(&x), &store, |ctx, v| residual_block(ctx, "rb", v, BlockKind::Basic, 5, 2));
}

#[test]
fn refinement_block_gradients_match_finite_differences() {
    let x = uniform(Shape::new(1, 4, 6, 6), 80);
    let chain = |ctx: &mut Ctx<'_, f32>, v| {
        let r = rcu_forward(ctx, "rcu", v)?;
        let m = mrf_forward(ctx, "mrf", None, r, 4)?;
        let m = ctx.tape.relu(m);
        crp_forward(ctx, "crp", m, 2)
    };
    let mut store: ParameterStore<f64> = init_block(&x, 10, chain).cast();
    jitter(&mut store, 81);
    block_gradient_check(&to_f64(&x), &store, |ctx, v| {
        let r = rcu_forward(ctx, "rcu", v)?;
        let m = mrf_forward(ctx, "mrf", None, r, 4)?;
        let m = ctx.tape.relu(m);
        crp_forward(ctx, "crp", m, 2)
    });
}

#[test]
fn spec_conversion_of_element_is_lossless_for_f64() {
    let (store, _) = build_rcn(&NetworkSpec::default(), 3).unwrap();
    let wide: ParameterStore<f64> = store.cast();
    let back: ParameterStore<f32> = wide.cast();
    for ((_, a), (_, b)) in store.iter().zip(back.iter()) {
        assert_eq!(a.data(), b.data());
    }
    let _ = f64::of(1.0);
}
