use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::mask::{mask_to_contours, SegmentationMask};
use crate::error::{Error, Result};
use crate::maps::{LabelMap, Provenance};
use crate::tensor::{Shape, Tensor};
use crate::train::AnnotatedImage;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    Rectangle,
    Ellipse,
    Polygon,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Rectangle, ShapeKind::Ellipse, ShapeKind::Polygon];
}

impl FromStr for ShapeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "rectangle" | "rect" => Ok(ShapeKind::Rectangle),
            "ellipse" => Ok(ShapeKind::Ellipse),
            "polygon" => Ok(ShapeKind::Polygon),
            other => Err(format!("unknown shape kind `{other}`")),
        }
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShapeKind::Rectangle => "rectangle",
            ShapeKind::Ellipse => "ellipse",
            ShapeKind::Polygon => "polygon",
        })
    }
}

/// Geometry of one rendered shape, in pixel units (pixel `(x, y)` is
/// tested at its centre `(x + 0.5, y + 0.5)`).
#[derive(Clone, Debug, PartialEq)]
pub enum Geometry {
    /// Pixels `x0..x0+w`, `y0..y0+h`.
    Rectangle { x0: usize, y0: usize, w: usize, h: usize },
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64, angle: f64 },
    Polygon { vertices: Vec<(f64, f64)> },
}

impl Geometry {
    pub fn kind(&self) -> ShapeKind {
        match self {
            Geometry::Rectangle { .. } => ShapeKind::Rectangle,
            Geometry::Ellipse { .. } => ShapeKind::Ellipse,
            Geometry::Polygon { .. } => ShapeKind::Polygon,
        }
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        match self {
            Geometry::Rectangle { x0, y0, w, h } => (*x0..x0 + w).contains(&x) && (*y0..y0 + h).contains(&y),
            Geometry::Ellipse { cx, cy, rx, ry, angle } => {
                let (dx, dy) = (px - cx, py - cy);
                let (s, c) = angle.sin_cos();
                let u = (dx * c + dy * s) / rx;
                let v = (-dx * s + dy * c) / ry;
                u * u + v * v <= 1.0
            }
            Geometry::Polygon { vertices } => {
                let mut inside = false;
                let n = vertices.len();
                for i in 0..n {
                    let (xi, yi) = vertices[i];
                    let (xj, yj) = vertices[(i + n - 1) % n];
                    if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
                        inside = !inside;
                    }
                }
                inside
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub count: usize,
    /// `(height, width)`.
    pub canvas: (usize, usize),
    pub kinds: Vec<ShapeKind>,
    /// Inclusive range of shapes per image (at most 4).
    pub shapes: (usize, usize),
    /// Inclusive range of distractor line segments per image.
    pub distractors: (usize, usize),
    /// Amplitude of the uniform pixel noise.
    pub noise: f32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            count: 64,
            canvas: (96, 96),
            kinds: ShapeKind::ALL.to_vec(),
            shapes: (1, 4),
            distractors: (1, 3),
            noise: 0.03,
        }
    }
}

pub const MIN_CANVAS: usize = 24;

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.canvas;
        if self.count == 0 {
            return Err(Error::Config("synthetic corpus needs at least one image".into()));
        }
        if h < MIN_CANVAS || w < MIN_CANVAS {
            return Err(Error::Config(format!("canvas {h}x{w} too small for shapes (minimum {MIN_CANVAS}x{MIN_CANVAS})")));
        }
        if self.kinds.is_empty() {
            return Err(Error::Config("no shape kinds selected".into()));
        }
        let (lo, hi) = self.shapes;
        if lo == 0 || lo > hi || hi > 4 {
            return Err(Error::Config(format!("shape count range ({lo}, {hi}) must lie within 1..=4")));
        }
        if self.distractors.0 > self.distractors.1 {
            return Err(Error::Config("distractor range is inverted".into()));
        }
        if !(0.0..0.2).contains(&self.noise) {
            return Err(Error::Config(format!("noise amplitude {} outside [0, 0.2)", self.noise)));
        }
        Ok(())
    }
}

/// One rendered image with everything known about it.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthItem {
    /// `1×3×H×W` gray image (equal channels) in `[0, 1]`.
    pub image: Tensor,
    /// Shape `i` carries id `i + 1`; later shapes occlude earlier ones.
    pub mask: SegmentationMask,
    pub shapes: Vec<Geometry>,
    pub fills: Vec<f32>,
    pub label: LabelMap,
    /// Pixels painted by distractor segments; never overlaps `label`.
    pub distractors: LabelMap,
}

impl SynthItem {
    /// Contours of the shapes selected by `keep` only.
    pub fn label_of(&self, keep: impl Fn(&Geometry) -> bool) -> LabelMap {
        let ids: Vec<u32> = (1..=self.shapes.len() as u32).filter(|&i| keep(&self.shapes[i as usize - 1])).collect();
        if ids.is_empty() {
            return LabelMap::zeros(self.mask.width(), self.mask.height()).with_provenance(Provenance::Synthetic);
        }
        mask_to_contours(&self.mask, &ids).expect("non-empty ids").with_provenance(Provenance::Synthetic)
    }
}

/// Renders `cfg.count` images. Image `i` depends only on `(seed, i)`.
pub fn synth_corpus(cfg: &SynthConfig, seed: u64) -> Result<Vec<SynthItem>> {
    cfg.validate()?;
    (0..cfg.count).map(|i| render(cfg, seed, i as u64)).collect()
}

/// Two-annotator corpus: annotator 0 traces every shape, annotator 1
/// ignores ellipses. Ellipse contours are therefore disputed.
pub fn synth_disagreement(cfg: &SynthConfig, seed: u64) -> Result<(Vec<SynthItem>, Vec<AnnotatedImage>)> {
    let items = synth_corpus(cfg, seed)?;
    let annotated = items
        .iter()
        .map(|it| AnnotatedImage {
            image: it.image.clone(),
            labels: vec![it.label.clone(), it.label_of(|g| g.kind() != ShapeKind::Ellipse)],
        })
        .collect();
    Ok((items, annotated))
}

fn render(cfg: &SynthConfig, seed: u64, index: u64) -> Result<SynthItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let (h, w) = cfg.canvas;
    let diag = ((h * h + w * w) as f64).sqrt();

    // Background: linear gradient along a random direction.
    let base = rng.gen_range(0.35..0.65f32);
    let amp = rng.gen_range(0.05..0.15f32);
    let theta = rng.gen_range(0.0..std::f64::consts::TAU);
    let (st, ct) = theta.sin_cos();
    let mut gray: Vec<f32> = (0..h * w)
        .map(|i| {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            let t = ((x - w as f64 / 2.0) * ct + (y - h as f64 / 2.0) * st) / diag;
            base + amp * t as f32
        })
        .collect();

    // Shapes with distinct fills.
    let n_shapes = rng.gen_range(cfg.shapes.0..=cfg.shapes.1);
    let mut mask = SegmentationMask::filled(w, h, 0);
    let mut shapes = Vec::with_capacity(n_shapes);
    let mut fills: Vec<f32> = Vec::with_capacity(n_shapes);
    for id in 1..=n_shapes as u32 {
        let fill = pick_fill(&mut rng, base, &fills);
        let mut placed = None;
        for _ in 0..64 {
            let kind = cfg.kinds[rng.gen_range(0..cfg.kinds.len())];
            let g = random_geometry(&mut rng, kind, h, w);
            let mut trial = mask.clone();
            let mut area = 0;
            for y in 0..h {
                for x in 0..w {
                    if g.contains(x, y) {
                        trial.set(x, y, id);
                        area += 1;
                    }
                }
            }
            // Every shape, including occluded earlier ones, must stay visible.
            let min_area = (h * w / 100).max(12);
            let visible = (1..=id).all(|j| trial.pixels().iter().filter(|&&p| p == j).count() >= min_area);
            if area >= min_area && visible {
                placed = Some((g, trial));
                break;
            }
        }
        let Some((g, trial)) = placed else { break };
        mask = trial;
        shapes.push(g);
        fills.push(fill);
    }
    if shapes.is_empty() {
        return Err(Error::Config(format!("could not place a shape on a {h}x{w} canvas")));
    }
    for (p, &id) in gray.iter_mut().zip(mask.pixels()) {
        if id != 0 {
            *p = fills[id as usize - 1];
        }
    }

    // Distractor segments: background only, never touching a shape.
    let mut distractors = LabelMap::zeros(w, h).with_provenance(Provenance::Synthetic);
    let near_shape = |x: usize, y: usize| {
        (y.saturating_sub(1)..=(y + 1).min(h - 1))
            .any(|yy| (x.saturating_sub(1)..=(x + 1).min(w - 1)).any(|xx| mask.get(xx, yy) != 0))
    };
    let n_lines = rng.gen_range(cfg.distractors.0..=cfg.distractors.1);
    for _ in 0..n_lines {
        let (x0, y0) = (rng.gen_range(0..w) as i64, rng.gen_range(0..h) as i64);
        let len = rng.gen_range(diag * 0.2..diag * 0.6);
        let a = rng.gen_range(0.0..std::f64::consts::TAU);
        let x1 = x0 + (len * a.cos()).round() as i64;
        let y1 = y0 + (len * a.sin()).round() as i64;
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let contrast = sign * rng.gen_range(0.2..0.35f32);
        for (x, y) in bresenham(x0, y0, x1, y1) {
            if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
                continue;
            }
            let (x, y) = (x as usize, y as usize);
            if near_shape(x, y) {
                continue;
            }
            gray[y * w + x] = (gray[y * w + x] + contrast).clamp(0.0, 1.0);
            distractors.set(x, y, true);
        }
    }

    for p in gray.iter_mut() {
        *p = (*p + rng.gen_range(-cfg.noise..=cfg.noise)).clamp(0.0, 1.0);
    }
    let ids: Vec<u32> = (1..=shapes.len() as u32).collect();
    let label = mask_to_contours(&mask, &ids)?.with_provenance(Provenance::Synthetic);
    let mut rgb = Vec::with_capacity(3 * h * w);
    for _ in 0..3 {
        rgb.extend_from_slice(&gray);
    }
    Ok(SynthItem {
        image: Tensor::from_vec(Shape::new(1, 3, h, w), rgb)?,
        mask,
        shapes,
        fills,
        label,
        distractors,
    })
}

fn pick_fill(rng: &mut ChaCha8Rng, base: f32, taken: &[f32]) -> f32 {
    let mut best = 0.0;
    let mut best_gap = -1.0;
    for _ in 0..64 {
        let f = rng.gen_range(0.05..0.95f32);
        let gap = taken.iter().fold((f - base).abs() - 0.1, |g, &t| g.min((f - t).abs()));
        if (f - base).abs() >= 0.25 && taken.iter().all(|&t| (f - t).abs() >= 0.12) {
            return f;
        }
        if gap > best_gap {
            best_gap = gap;
            best = f;
        }
    }
    best
}

fn random_geometry(rng: &mut ChaCha8Rng, kind: ShapeKind, h: usize, w: usize) -> Geometry {
    const MARGIN: usize = 2;
    let small = h.min(w);
    let (lo, hi) = ((small / 6).max(5), small / 2);
    match kind {
        ShapeKind::Rectangle => {
            let rw = rng.gen_range(lo..=hi);
            let rh = rng.gen_range(lo..=hi);
            let x0 = rng.gen_range(MARGIN..=w - MARGIN - rw);
            let y0 = rng.gen_range(MARGIN..=h - MARGIN - rh);
            Geometry::Rectangle { x0, y0, w: rw, h: rh }
        }
        ShapeKind::Ellipse => {
            let rx = rng.gen_range(lo as f64 / 2.0..=hi as f64 / 2.0);
            let ry = rng.gen_range(lo as f64 / 2.0..=hi as f64 / 2.0);
            let r = rx.max(ry);
            let m = MARGIN as f64 + r;
            let cx = rng.gen_range(m..=w as f64 - m);
            let cy = rng.gen_range(m..=h as f64 - m);
            Geometry::Ellipse { cx, cy, rx, ry, angle: rng.gen_range(0.0..std::f64::consts::PI) }
        }
        ShapeKind::Polygon => {
            let r = rng.gen_range(lo as f64 / 2.0..=hi as f64 / 2.0);
            let m = MARGIN as f64 + r;
            let cx = rng.gen_range(m..=w as f64 - m);
            let cy = rng.gen_range(m..=h as f64 - m);
            let n = rng.gen_range(3..=6);
            let step = std::f64::consts::TAU / n as f64;
            let phase = rng.gen_range(0.0..step);
            let vertices = (0..n)
                .map(|k| {
                    let a = phase + step * (k as f64 + rng.gen_range(-0.25..0.25));
                    let rr = r * rng.gen_range(0.75..=1.0);
                    (cx + rr * a.cos(), cy + rr * a.sin())
                })
                .collect();
            Geometry::Polygon { vertices }
        }
    }
}

fn bresenham(x0: i64, y0: i64, x1: i64, y1: i64) -> Vec<(i64, i64)> {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    let mut out = Vec::new();
    loop {
        out.push((x, y));
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
    out
}
