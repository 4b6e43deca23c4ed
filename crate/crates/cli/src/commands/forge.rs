//! `rcnkit forge`: synthetic corpora and mask-derived contour labels.

use std::path::Path;

use rcnkit::forge::{
    annotate, mask_to_contours, read_mask_png, read_rgb_png, synth_corpus, synth_disagreement, write_corpus,
    ShapeKind, SynthConfig,
};
use rcnkit::tensor::{Shape, Tensor};
use rcnkit::train::{parse_extent, AnnotatedImage};

use super::{at, png_files, stem_of};
use crate::args::ForgeArgs;
use crate::error::{CliError, CliResult};
use crate::settings::{parse_range, parse_split, Settings};

pub const KEYS: &[&str] = &[
    "synthetic",
    "count",
    "canvas",
    "kinds",
    "shapes",
    "distractors",
    "noise",
    "annotators",
    "split",
    "from_masks",
    "classes",
    "images",
];

pub fn apply(a: &ForgeArgs, s: &mut Settings) {
    s.switch("synthetic", a.synthetic);
    s.flag("count", a.count);
    s.flag("canvas", a.canvas.as_ref());
    s.flag("kinds", a.kinds.as_ref());
    s.flag("shapes", a.shapes.as_ref());
    s.flag("distractors", a.distractors.as_ref());
    s.flag("noise", a.noise);
    s.flag("annotators", a.annotators);
    s.flag("split", a.split.as_ref());
    s.flag("from_masks", a.from_masks.as_ref().map(|p| p.display()));
    s.flag("classes", a.classes.as_ref());
    s.flag("images", a.images.as_ref().map(|p| p.display()));
}

pub fn run(s: &Settings) -> CliResult<()> {
    let out = s.out()?;
    let synthetic = s.get_or("synthetic", false)?;
    let items = match (synthetic, s.path("from_masks")) {
        (true, Some(_)) => return Err(CliError::config("`--synthetic` and `--from-masks` are exclusive")),
        (true, None) => synthetic_items(s)?,
        (false, Some(dir)) => mask_items(s, &dir)?,
        (false, None) => return Err(CliError::config("choose `--synthetic` or `--from-masks DIR`")),
    };
    let splits = match s.raw("split") {
        Some(spec) => parse_split(spec)?,
        None => vec![("train".to_string(), items.len())],
    };
    let splits: Vec<(&str, usize)> = splits.iter().map(|(n, c)| (n.as_str(), *c)).collect();
    let manifest = write_corpus(&out, &items, &splits)?;

    let (mut positives, mut pixels) = (0usize, 0usize);
    for label in items.iter().flat_map(|it| &it.labels) {
        positives += label.count();
        pixels += label.width() * label.height();
    }
    println!("manifest {}", manifest.display());
    println!("images {}", items.len());
    println!("positive_rate {:.6}", positives as f64 / pixels.max(1) as f64);
    Ok(())
}

fn synthetic_items(s: &Settings) -> CliResult<Vec<AnnotatedImage>> {
    let d = SynthConfig::default();
    let cfg = SynthConfig {
        count: s.get_or("count", d.count)?,
        canvas: s.raw("canvas").map(parse_extent).transpose()?.unwrap_or(d.canvas),
        kinds: s.list::<ShapeKind>("kinds")?.unwrap_or(d.kinds),
        shapes: s.raw("shapes").map(parse_range).transpose()?.unwrap_or(d.shapes),
        distractors: s.raw("distractors").map(parse_range).transpose()?.unwrap_or(d.distractors),
        noise: s.get_or("noise", d.noise)?,
    };
    let seed = s.seed()?;
    match s.get_or("annotators", 1u32)? {
        1 => Ok(annotate(&synth_corpus(&cfg, seed)?)),
        2 => Ok(synth_disagreement(&cfg, seed)?.1),
        n => Err(CliError::config(format!("annotators must be 1 or 2, got {n}"))),
    }
}

fn mask_items(s: &Settings, dir: &Path) -> CliResult<Vec<AnnotatedImage>> {
    let classes: Vec<u32> = s.list("classes")?.ok_or_else(|| CliError::config("`--from-masks` needs `--classes`"))?;
    let images = s.path("images");
    let masks = png_files(dir)?;
    if masks.is_empty() {
        return Err(CliError::runtime(format!("{}: no mask PNGs found", dir.display())));
    }
    let mut items = Vec::with_capacity(masks.len());
    let mut empty = 0;
    for path in &masks {
        let mask = read_mask_png(path).map_err(at(path))?;
        let label = mask_to_contours(&mask, &classes)?;
        if label.count() == 0 {
            empty += 1;
            log::warn!("{}: no contour pixels for classes {classes:?}", path.display());
        }
        let (h, w) = (mask.height(), mask.width());
        let image = match &images {
            Some(img_dir) => {
                let img_path = img_dir.join(format!("{}.png", stem_of(path)?));
                let img = read_rgb_png(&img_path).map_err(at(&img_path))?;
                if (img.shape().h(), img.shape().w()) != (h, w) {
                    return Err(CliError::runtime(format!("{}: extent differs from its mask", img_path.display())));
                }
                img
            }
            None => render_mask(mask.pixels(), h, w)?,
        };
        items.push(AnnotatedImage { image, labels: vec![label] });
    }
    if empty > 0 {
        log::warn!("{empty} of {} labels are empty", masks.len());
    }
    println!("empty_labels {empty}");
    Ok(items)
}

/// Flat gray shading per mask id, used when no photographs are supplied.
fn render_mask(ids: &[u32], h: usize, w: usize) -> CliResult<Tensor> {
    let shade = |id: u32| 0.1 + 0.8 * (id.wrapping_mul(37) % 97) as f32 / 96.0;
    let plane: Vec<f32> = ids.iter().map(|&id| shade(id)).collect();
    Ok(Tensor::from_vec(Shape::new(1, 3, h, w), plane.repeat(3))?)
}
