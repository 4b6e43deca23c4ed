use rand::Rng;

use crate::error::{Error, Result};
use crate::maps::LabelMap;
use crate::tensor::{Shape, Tensor};

/// One training pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `1×3×H×W`, values in `[0, 1]`.
    pub image: Tensor,
    pub label: LabelMap,
    pub annotator: Option<u32>,
    /// Set when augmentation had to enlarge the scale so the crop fits.
    pub upscaled: bool,
}

impl Sample {
    pub fn new(image: Tensor, label: LabelMap, annotator: Option<u32>) -> Result<Self> {
        let s = image.shape();
        if s.n() != 1 || s.c() != 3 {
            return Err(Error::shape("sample", format!("expected 1x3xHxW image, got {s}")));
        }
        if !label.same_extent(s.w(), s.h()) {
            return Err(Error::shape(
                "sample",
                format!("image {s} against {}x{} label", label.width(), label.height()),
            ));
        }
        Ok(Sample { image, label, annotator, upscaled: false })
    }

    pub fn height(&self) -> usize {
        self.image.shape().h()
    }

    pub fn width(&self) -> usize {
        self.image.shape().w()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfig {
    /// `(height, width)`; `None` keeps the whole (scaled) image.
    pub crop: Option<(usize, usize)>,
    pub vflip_prob: f64,
    /// Horizontal flipping, off by default.
    pub hflip_prob: f64,
    pub scale_range: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { crop: Some((64, 64)), vflip_prob: 0.5, hflip_prob: 0.0, scale_range: (0.7, 1.3) }
    }
}

impl AugmentConfig {
    /// No-op augmentation.
    pub fn identity() -> Self {
        AugmentConfig { crop: None, vflip_prob: 0.0, hflip_prob: 0.0, scale_range: (1.0, 1.0) }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::Config(format!("scale range ({lo}, {hi}) must satisfy 0 < lo <= hi")));
        }
        for p in [self.vflip_prob, self.hflip_prob] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("flip probability {p} outside [0, 1]")));
            }
        }
        if let Some((h, w)) = self.crop {
            if h == 0 || w == 0 {
                return Err(Error::Config("crop extents must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Random scale, flips and crop. Random numbers are drawn in a fixed order
/// (scale, vertical flip, horizontal flip, crop row, crop column).
pub fn augment<R: Rng + ?Sized>(sample: &Sample, cfg: &AugmentConfig, rng: &mut R) -> Sample {
    let (h, w) = (sample.height(), sample.width());
    let (lo, hi) = cfg.scale_range;
    let mut s = if lo < hi { rng.gen_range(lo..=hi) } else { lo };
    let mut upscaled = false;
    if let Some((ch, cw)) = cfg.crop {
        let need = (ch as f64 / h as f64).max(cw as f64 / w as f64);
        if s < need {
            s = need;
            upscaled = true;
        }
    }
    let sh = ((h as f64 * s).round() as usize).max(cfg.crop.map_or(1, |c| c.0)).max(1);
    let sw = ((w as f64 * s).round() as usize).max(cfg.crop.map_or(1, |c| c.1)).max(1);
    let (mut img, mut lab) = if (sh, sw) == (h, w) {
        (sample.image.data().to_vec(), sample.label.pixels().to_vec())
    } else {
        (resize_bilinear(sample.image.data(), 3, h, w, sh, sw), resize_nearest(sample.label.pixels(), h, w, sh, sw))
    };
    if rng.gen_bool(cfg.vflip_prob) {
        flip_rows(&mut img, sh, sw);
        flip_rows(&mut lab, sh, sw);
    }
    if rng.gen_bool(cfg.hflip_prob) {
        flip_cols(&mut img, sw);
        flip_cols(&mut lab, sw);
    }
    let (ch, cw) = cfg.crop.unwrap_or((sh, sw));
    let y0 = rng.gen_range(0..=sh - ch);
    let x0 = rng.gen_range(0..=sw - cw);
    let img = crop(&img, 3, sh, sw, y0, x0, ch, cw);
    let lab = crop(&lab, 1, sh, sw, y0, x0, ch, cw);
    Sample {
        image: Tensor::from_vec(Shape::new(1, 3, ch, cw), img).expect("consistent crop"),
        label: LabelMap::new(cw, ch, lab).expect("nearest resampling keeps labels binary").with_provenance(sample.label.provenance),
        annotator: sample.annotator,
        upscaled: sample.upscaled || upscaled,
    }
}

/// Pixel-centre aligned bilinear resize of `planes` stacked planes.
pub fn resize_bilinear(src: &[f32], planes: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f32> {
    let taps = |n: usize, on: usize| -> Vec<(usize, usize, f32)> {
        (0..on)
            .map(|i| {
                let pos = ((i as f64 + 0.5) * n as f64 / on as f64 - 0.5).clamp(0.0, (n - 1) as f64);
                let lo = pos.floor() as usize;
                let hi = (lo + 1).min(n - 1);
                (lo, hi, (pos - lo as f64) as f32)
            })
            .collect()
    };
    let (ty, tx) = (taps(h, oh), taps(w, ow));
    let mut out = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let plane = &src[p * h * w..(p + 1) * h * w];
        for &(y0, y1, fy) in &ty {
            for &(x0, x1, fx) in &tx {
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    out
}

/// Nearest-neighbour resize of one plane.
pub fn resize_nearest<T: Copy>(src: &[T], h: usize, w: usize, oh: usize, ow: usize) -> Vec<T> {
    let idx = |i: usize, n: usize, on: usize| (((i as f64 + 0.5) * n as f64 / on as f64) as usize).min(n - 1);
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        let sy = idx(y, h, oh);
        for x in 0..ow {
            out.push(src[sy * w + idx(x, w, ow)]);
        }
    }
    out
}

/// Flips every `h×w` plane in `data` upside down.
pub fn flip_rows<T>(data: &mut [T], h: usize, w: usize) {
    for plane in data.chunks_exact_mut(h * w) {
        for y in 0..h / 2 {
            let (top, bottom) = plane.split_at_mut((h - 1 - y) * w);
            top[y * w..(y + 1) * w].swap_with_slice(&mut bottom[..w]);
        }
    }
}

pub fn flip_cols<T>(data: &mut [T], w: usize) {
    for row in data.chunks_exact_mut(w) {
        row.reverse();
    }
}

#[allow(clippy::too_many_arguments)]
fn crop<T: Copy>(src: &[T], planes: usize, h: usize, w: usize, y0: usize, x0: usize, ch: usize, cw: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(planes * ch * cw);
    for p in 0..planes {
        for y in y0..y0 + ch {
            let row = (p * h + y) * w;
            out.extend_from_slice(&src[row + x0..row + x0 + cw]);
        }
    }
    out
}
