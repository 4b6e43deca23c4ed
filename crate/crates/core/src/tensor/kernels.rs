//! Raw forward and backward kernels on contiguous buffers.
//!
//! Convolutions lower each image to a column matrix and multiply it with
//! the flattened filter bank. [`conv2d_direct`] keeps the plain nested-loop
//! definition around as a cross-check.

use super::{Element, Shape};

/// Row-major `C (m×n) = op(A) (m×k) · op(B) (k×n)`, optionally added onto `C`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Element>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    trans_a: bool,
    b: &[T],
    trans_b: bool,
    c: &mut [T],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k, "gemm: A length");
    assert_eq!(b.len(), k * n, "gemm: B length");
    assert_eq!(c.len(), m * n, "gemm: C length");
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: lengths were checked above and `c` is a distinct &mut borrow.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    /// Returns `None` when the kernel does not fit the padded input.
    pub fn new(input: Shape, weight: Shape, stride: usize, pad: usize) -> Option<Self> {
        let [_, in_c, in_h, in_w] = input.0;
        let [out_c, _, kh, kw] = weight.0;
        if stride == 0 || in_h + 2 * pad < kh || in_w + 2 * pad < kw {
            return None;
        }
        Some(ConvGeom {
            in_c,
            in_h,
            in_w,
            out_c,
            kh,
            kw,
            stride,
            pad,
            out_h: (in_h + 2 * pad - kh) / stride + 1,
            out_w: (in_w + 2 * pad - kw) / stride + 1,
        })
    }

    /// Rows of the column matrix: `in_c * kh * kw`.
    pub fn patch(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    pub fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    /// Source index range of output columns whose tap `kx` lands inside the
    /// input row, as `(first_ox, end_ox)`.
    fn valid_span(&self, k: usize, in_extent: usize, out_extent: usize) -> (usize, usize) {
        // ox valid iff 0 <= ox*stride + k - pad < in_extent
        let lo = if k >= self.pad { 0 } else { (self.pad - k).div_ceil(self.stride) };
        let hi_excl = if in_extent + self.pad > k {
            ((in_extent + self.pad - k - 1) / self.stride + 1).min(out_extent)
        } else {
            0
        };
        (lo.min(hi_excl), hi_excl)
    }
}

/// Unfolds one image `(in_c, in_h, in_w)` into `col (patch × out_plane)`.
pub fn im2col<T: Element>(g: &ConvGeom, image: &[T], col: &mut [T]) {
    let plane_out = g.out_plane();
    debug_assert_eq!(col.len(), g.patch() * plane_out);
    col.iter_mut().for_each(|v| *v = T::zero());
    let (s, p) = (g.stride, g.pad);
    for ic in 0..g.in_c {
        let src = &image[ic * g.in_h * g.in_w..(ic + 1) * g.in_h * g.in_w];
        for ky in 0..g.kh {
            let (oy0, oy1) = g.valid_span(ky, g.in_h, g.out_h);
            for kx in 0..g.kw {
                let (ox0, ox1) = g.valid_span(kx, g.in_w, g.out_w);
                let row = (ic * g.kh + ky) * g.kw + kx;
                let dst = &mut col[row * plane_out..(row + 1) * plane_out];
                for oy in oy0..oy1 {
                    let iy = oy * s + ky - p;
                    let src_row = &src[iy * g.in_w..(iy + 1) * g.in_w];
                    let dst_row = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if s == 1 {
                        let ix0 = ox0 + kx - p;
                        dst_row[ox0..ox1].copy_from_slice(&src_row[ix0..ix0 + (ox1 - ox0)]);
                    } else {
                        for ox in ox0..ox1 {
                            dst_row[ox] = src_row[ox * s + kx - p];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: folds `col` back, adding into `image`.
pub fn col2im<T: Element>(g: &ConvGeom, col: &[T], image: &mut [T]) {
    let plane_out = g.out_plane();
    let (s, p) = (g.stride, g.pad);
    for ic in 0..g.in_c {
        let dst = &mut image[ic * g.in_h * g.in_w..(ic + 1) * g.in_h * g.in_w];
        for ky in 0..g.kh {
            let (oy0, oy1) = g.valid_span(ky, g.in_h, g.out_h);
            for kx in 0..g.kw {
                let (ox0, ox1) = g.valid_span(kx, g.in_w, g.out_w);
                let row = (ic * g.kh + ky) * g.kw + kx;
                let src = &col[row * plane_out..(row + 1) * plane_out];
                for oy in oy0..oy1 {
                    let iy = oy * s + ky - p;
                    let src_row = &src[oy * g.out_w..(oy + 1) * g.out_w];
                    let dst_row = &mut dst[iy * g.in_w..(iy + 1) * g.in_w];
                    for ox in ox0..ox1 {
                        dst_row[ox * s + kx - p] += src_row[ox];
                    }
                }
            }
        }
    }
}

/// Forward convolution of a batch. `out` has shape `(n, out_c, out_h, out_w)`.
pub fn conv2d_forward<T: Element>(
    g: &ConvGeom,
    batch: usize,
    input: &[T],
    weight: &[T],
    bias: Option<&[T]>,
    out: &mut [T],
) {
    let in_img = g.in_c * g.in_h * g.in_w;
    let out_img = g.out_c * g.out_plane();
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); g.patch() * g.out_plane()] };
    for n in 0..batch {
        let x = &input[n * in_img..(n + 1) * in_img];
        let y = &mut out[n * out_img..(n + 1) * out_img];
        let cols: &[T] = if g.is_pointwise() {
            x
        } else {
            im2col(g, x, &mut col);
            &col
        };
        gemm(g.out_c, g.patch(), g.out_plane(), weight, false, cols, false, y, false);
        if let Some(b) = bias {
            for (oc, plane) in y.chunks_exact_mut(g.out_plane()).enumerate() {
                let bv = b[oc];
                plane.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
}

/// Gradients of a convolution. Each optional output buffer is accumulated into.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Element>(
    g: &ConvGeom,
    batch: usize,
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    mut grad_input: Option<&mut [T]>,
    mut grad_weight: Option<&mut [T]>,
    mut grad_bias: Option<&mut [T]>,
) {
    let in_img = g.in_c * g.in_h * g.in_w;
    let out_img = g.out_c * g.out_plane();
    let k = g.patch();
    let hw = g.out_plane();
    let mut col = vec![T::zero(); k * hw];
    for n in 0..batch {
        let x = &input[n * in_img..(n + 1) * in_img];
        let gy = &grad_out[n * out_img..(n + 1) * out_img];
        if let Some(gw) = grad_weight.as_deref_mut() {
            let cols: &[T] = if g.is_pointwise() {
                x
            } else {
                im2col(g, x, &mut col);
                &col
            };
            // (out_c × hw) · (hw × k)
            gemm(g.out_c, hw, k, gy, false, cols, true, gw, true);
        }
        if let Some(gb) = grad_bias.as_deref_mut() {
            for (oc, plane) in gy.chunks_exact(hw).enumerate() {
                gb[oc] += plane.iter().copied().sum::<T>();
            }
        }
        if let Some(gx) = grad_input.as_deref_mut() {
            let gx = &mut gx[n * in_img..(n + 1) * in_img];
            if g.is_pointwise() {
                gemm(k, g.out_c, hw, weight, true, gy, false, gx, true);
            } else {
                gemm(k, g.out_c, hw, weight, true, gy, false, &mut col, false);
                col2im(g, &col, gx);
            }
        }
    }
}

/// Textbook nested-loop convolution, used to audit the lowered path.
pub fn conv2d_direct<T: Element>(
    g: &ConvGeom,
    batch: usize,
    input: &[T],
    weight: &[T],
    bias: Option<&[T]>,
) -> Vec<T> {
    let mut out = vec![T::zero(); batch * g.out_c * g.out_plane()];
    for n in 0..batch {
        for oc in 0..g.out_c {
            for oy in 0..g.out_h {
                for ox in 0..g.out_w {
                    let mut acc = bias.map_or(T::zero(), |b| b[oc]);
                    for ic in 0..g.in_c {
                        for ky in 0..g.kh {
                            for kx in 0..g.kw {
                                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                if iy < 0 || ix < 0 || iy >= g.in_h as isize || ix >= g.in_w as isize {
                                    continue;
                                }
                                let xi = ((n * g.in_c + ic) * g.in_h + iy as usize) * g.in_w + ix as usize;
                                let wi = ((oc * g.in_c + ic) * g.kh + ky) * g.kw + kx;
                                acc += input[xi] * weight[wi];
                            }
                        }
                    }
                    out[((n * g.out_c + oc) * g.out_h + oy) * g.out_w + ox] = acc;
                }
            }
        }
    }
    out
}

/// Geometry of a max-pool window scan.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl PoolGeom {
    pub fn new(in_h: usize, in_w: usize, kernel: usize, stride: usize, pad: usize) -> Option<Self> {
        if kernel == 0 || stride == 0 || pad >= kernel || in_h + 2 * pad < kernel || in_w + 2 * pad < kernel {
            return None;
        }
        Some(PoolGeom {
            kernel,
            stride,
            pad,
            out_h: (in_h + 2 * pad - kernel) / stride + 1,
            out_w: (in_w + 2 * pad - kernel) / stride + 1,
        })
    }
}

/// Max-pool over each plane. Returns the flat input index chosen for every
/// output cell (first maximum in row-major window order).
pub fn max_pool_forward<T: Element>(
    shape: Shape,
    pg: &PoolGeom,
    input: &[T],
    out: &mut [T],
) -> Vec<u32> {
    let (h, w) = (shape.h(), shape.w());
    let planes = shape.n() * shape.c();
    let out_plane = pg.out_h * pg.out_w;
    let mut argmax = vec![0u32; planes * out_plane];
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..pg.out_h {
            let y0 = (oy * pg.stride) as isize - pg.pad as isize;
            for ox in 0..pg.out_w {
                let x0 = (ox * pg.stride) as isize - pg.pad as isize;
                let mut best = T::neg_infinity();
                let mut best_idx = usize::MAX;
                for ky in 0..pg.kernel as isize {
                    let y = y0 + ky;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    for kx in 0..pg.kernel as isize {
                        let x = x0 + kx;
                        if x < 0 || x >= w as isize {
                            continue;
                        }
                        let idx = base + y as usize * w + x as usize;
                        let v = input[idx];
                        if best_idx == usize::MAX || v > best {
                            best = v;
                            best_idx = idx;
                        }
                    }
                }
                let o = p * out_plane + oy * pg.out_w + ox;
                out[o] = best;
                argmax[o] = best_idx as u32;
            }
        }
    }
    argmax
}

/// Source coordinate and blend weight for align-corners resampling.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Tap {
    pub lo: usize,
    pub hi: usize,
    pub frac: f64,
}

pub(crate) fn align_corner_taps(src: usize, dst: usize) -> Vec<Tap> {
    (0..dst)
        .map(|i| {
            if src == 1 || dst == 1 {
                return Tap { lo: 0, hi: 0, frac: 0.0 };
            }
            let pos = i as f64 * (src - 1) as f64 / (dst - 1) as f64;
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            Tap { lo, hi, frac: pos - lo as f64 }
        })
        .collect()
}

/// Bilinear (align-corners) resampling of every plane to `(th, tw)`.
pub fn upsample_forward<T: Element>(shape: Shape, input: &[T], th: usize, tw: usize) -> Vec<T> {
    let (h, w) = (shape.h(), shape.w());
    let ys = align_corner_taps(h, th);
    let xs = align_corner_taps(w, tw);
    let planes = shape.n() * shape.c();
    let mut out = vec![T::zero(); planes * th * tw];
    for p in 0..planes {
        let src = &input[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * th * tw..(p + 1) * th * tw];
        for (oy, ty) in ys.iter().enumerate() {
            let fy = T::of(ty.frac);
            let r0 = &src[ty.lo * w..(ty.lo + 1) * w];
            let r1 = &src[ty.hi * w..(ty.hi + 1) * w];
            for (ox, tx) in xs.iter().enumerate() {
                let fx = T::of(tx.frac);
                let top = r0[tx.lo] * (T::one() - fx) + r0[tx.hi] * fx;
                let bot = r1[tx.lo] * (T::one() - fx) + r1[tx.hi] * fx;
                dst[oy * tw + ox] = top * (T::one() - fy) + bot * fy;
            }
        }
    }
    out
}

/// Adjoint of [`upsample_forward`], adding into `grad_in`.
pub fn upsample_backward<T: Element>(shape: Shape, grad_out: &[T], th: usize, tw: usize, grad_in: &mut [T]) {
    let (h, w) = (shape.h(), shape.w());
    let ys = align_corner_taps(h, th);
    let xs = align_corner_taps(w, tw);
    let planes = shape.n() * shape.c();
    for p in 0..planes {
        let src = &grad_out[p * th * tw..(p + 1) * th * tw];
        let dst = &mut grad_in[p * h * w..(p + 1) * h * w];
        for (oy, ty) in ys.iter().enumerate() {
            let fy = T::of(ty.frac);
            for (ox, tx) in xs.iter().enumerate() {
                let fx = T::of(tx.frac);
                let g = src[oy * tw + ox];
                let gt = g * (T::one() - fy);
                let gb = g * fy;
                dst[ty.lo * w + tx.lo] += gt * (T::one() - fx);
                dst[ty.lo * w + tx.hi] += gt * fx;
                dst[ty.hi * w + tx.lo] += gb * (T::one() - fx);
                dst[ty.hi * w + tx.hi] += gb * fx;
            }
        }
    }
}

/// Mean over non-overlapping `factor × factor` cells; ragged edge cells
/// average whatever pixels they contain.
pub fn average_downsample<T: Element>(shape: Shape, input: &[T], factor: usize) -> (Shape, Vec<T>) {
    let (h, w) = (shape.h(), shape.w());
    let (oh, ow) = (h.div_ceil(factor), w.div_ceil(factor));
    let planes = shape.n() * shape.c();
    let mut out = vec![T::zero(); planes * oh * ow];
    for p in 0..planes {
        let src = &input[p * h * w..(p + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = T::zero();
                let mut cnt = 0usize;
                for y in oy * factor..((oy + 1) * factor).min(h) {
                    for x in ox * factor..((ox + 1) * factor).min(w) {
                        acc += src[y * w + x];
                        cnt += 1;
                    }
                }
                out[p * oh * ow + oy * ow + ox] = acc / T::of(cnt as f64);
            }
        }
    }
    (Shape::new(shape.n(), shape.c(), oh, ow), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn lowered_conv_matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(c, h, w, oc, k, s, p) in &[
            (2, 5, 5, 3, 3, 1, 1),
            (3, 7, 6, 4, 3, 2, 1),
            (4, 4, 4, 2, 1, 1, 0),
            (2, 9, 9, 2, 1, 2, 0),
            (1, 6, 5, 2, 5, 1, 2),
            (3, 8, 8, 5, 7, 2, 3),
        ] {
            let x = random(2 * c * h * w, &mut rng);
            let wt = random(oc * c * k * k, &mut rng);
            let b = random(oc, &mut rng);
            let g = ConvGeom::new(Shape::new(2, c, h, w), Shape::new(oc, c, k, k), s, p).unwrap();
            let mut out = vec![0.0; 2 * oc * g.out_plane()];
            conv2d_forward(&g, 2, &x, &wt, Some(&b), &mut out);
            let reference = conv2d_direct(&g, 2, &x, &wt, Some(&b));
            for (a, r) in out.iter().zip(&reference) {
                assert!((a - r).abs() < 1e-12, "{a} vs {r} for {g:?}");
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)>
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = ConvGeom::new(Shape::new(1, 2, 6, 7), Shape::new(1, 2, 3, 3), 2, 1).unwrap();
        let x = random(2 * 6 * 7, &mut rng);
        let c = random(g.patch() * g.out_plane(), &mut rng);
        let mut col = vec![0.0; c.len()];
        im2col(&g, &x, &mut col);
        let mut back = vec![0.0; x.len()];
        col2im(&g, &c, &mut back);
        let lhs: f64 = col.iter().zip(&c).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn upsample_backward_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let shape = Shape::new(1, 2, 3, 4);
        let x = random(shape.numel(), &mut rng);
        let y = upsample_forward(shape, &x, 7, 9);
        let gy = random(y.len(), &mut rng);
        let mut gx = vec![0.0; x.len()];
        upsample_backward(shape, &gy, 7, 9, &mut gx);
        let lhs: f64 = y.iter().zip(&gy).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&gx).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn pool_geometry_rejects_oversized_window() {
        assert!(PoolGeom::new(2, 2, 5, 1, 1).is_none());
        assert!(PoolGeom::new(2, 2, 3, 1, 3).is_none());
        assert!(PoolGeom::new(2, 2, 2, 2, 0).is_some());
    }

    #[test]
    fn average_downsample_handles_ragged_edges() {
        let shape = Shape::new(1, 1, 3, 3);
        let x: Vec<f64> = (0..9).map(f64::from).collect();
        let (s, y) = average_downsample(shape, &x, 2);
        assert_eq!(s, Shape::new(1, 1, 2, 2));
        assert_eq!(y, vec![2.0, 3.5, 6.5, 8.0]);
    }
}
