use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use super::mask::SegmentationMask;
use super::synth::SynthItem;
use crate::error::{Error, Result};
use crate::maps::{LabelMap, Provenance};
use crate::tensor::{Shape, Tensor};
use crate::train::AnnotatedImage;

/// Writes a `1×3×H×W` tensor in `[0, 1]` as 8-bit RGB.
pub fn write_rgb_png(path: impl AsRef<Path>, image: &Tensor) -> Result<()> {
    let s = image.shape();
    if s.n() != 1 || s.c() != 3 {
        return Err(Error::shape("write_rgb_png", format!("expected 1x3xHxW, got {s}")));
    }
    let plane = s.plane();
    let d = image.data();
    let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let img = RgbImage::from_fn(s.w() as u32, s.h() as u32, |x, y| {
        let i = y as usize * s.w() + x as usize;
        Rgb([q(d[i]), q(d[plane + i]), q(d[2 * plane + i])])
    });
    img.save(path.as_ref())?;
    Ok(())
}

pub fn read_rgb_png(path: impl AsRef<Path>) -> Result<Tensor> {
    let img = image::open(path.as_ref())?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0f32; 3 * w * h];
    for (x, y, p) in img.enumerate_pixels() {
        let i = y as usize * w + x as usize;
        for c in 0..3 {
            data[c * w * h + i] = p.0[c] as f32 / 255.0;
        }
    }
    Tensor::from_vec(Shape::new(1, 3, h, w), data)
}

/// Labels are stored as 8-bit gray with values `{0, 255}`.
pub fn write_label_png(path: impl AsRef<Path>, label: &LabelMap) -> Result<()> {
    let img = GrayImage::from_fn(label.width() as u32, label.height() as u32, |x, y| {
        Luma([if label.get(x as usize, y as usize) { 255 } else { 0 }])
    });
    img.save(path.as_ref())?;
    Ok(())
}

/// Any non-zero pixel is a contour pixel.
pub fn read_label_png(path: impl AsRef<Path>) -> Result<LabelMap> {
    let img = image::open(path.as_ref())?.to_luma8();
    let pixels = img.pixels().map(|p| u8::from(p.0[0] != 0)).collect();
    LabelMap::new(img.width() as usize, img.height() as usize, pixels)
}

/// Class-id masks exported as 8- or 16-bit gray PNG.
pub fn read_mask_png(path: impl AsRef<Path>) -> Result<SegmentationMask> {
    let img = image::open(path.as_ref())?.to_luma16();
    let ids = img.pixels().map(|p| u32::from(p.0[0])).collect();
    SegmentationMask::new(img.width() as usize, img.height() as usize, ids)
}

pub fn write_mask_png(path: impl AsRef<Path>, mask: &SegmentationMask) -> Result<()> {
    if mask.pixels().iter().any(|&id| id > u32::from(u16::MAX)) {
        return Err(Error::Format("class id exceeds 16 bits".into()));
    }
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_fn(mask.width() as u32, mask.height() as u32, |x, y| {
            Luma([mask.get(x as usize, y as usize) as u16])
        });
    img.save(path.as_ref())?;
    Ok(())
}

/// One manifest line: an image, its annotator labels, and its split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image: String,
    pub labels: Vec<String>,
    pub split: String,
}

/// Tab-separated corpus index. Paths are relative to the manifest's
/// directory.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
}

const MANIFEST_TAG: &str = "#rcnkit-manifest";
pub const MANIFEST_VERSION: u32 = 1;

impl CorpusManifest {
    pub fn render(&self) -> String {
        let mut s = format!("{MANIFEST_TAG}\t{MANIFEST_VERSION}\n");
        for e in &self.entries {
            s.push_str(&format!("{}\t{}\t{}\n", e.image, e.labels.join(";"), e.split));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Format("empty manifest".into()))?;
        match header.split_once('\t') {
            Some((MANIFEST_TAG, v)) if v.trim().parse() == Ok(MANIFEST_VERSION) => {}
            _ => return Err(Error::Format(format!("unsupported manifest header `{header}`"))),
        }
        let mut entries = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let [image, labels, split] = cols.as_slice() else {
                return Err(Error::Format(format!("manifest line {}: expected 3 tab-separated fields", i + 2)));
            };
            let labels: Vec<String> = labels.split(';').filter(|l| !l.is_empty()).map(String::from).collect();
            if labels.is_empty() {
                return Err(Error::Format(format!("manifest line {}: no labels", i + 2)));
            }
            entries.push(ManifestEntry { image: image.to_string(), labels, split: split.to_string() });
        }
        Ok(CorpusManifest { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.render())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn splits(&self) -> Vec<&str> {
        let mut s: Vec<&str> = self.entries.iter().map(|e| e.split.as_str()).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    /// Checks that splits are disjoint and that every referenced file
    /// decodes with matching extents.
    pub fn validate(&self, base: &Path) -> Result<()> {
        let mut seen: BTreeMap<&str, &str> = BTreeMap::new();
        for e in &self.entries {
            if let Some(prev) = seen.insert(&e.image, &e.split) {
                if prev != e.split {
                    return Err(Error::Format(format!("image {} appears in splits {prev} and {}", e.image, e.split)));
                }
                return Err(Error::Format(format!("image {} listed twice", e.image)));
            }
        }
        for e in &self.entries {
            self.load_entry(base, e)?;
        }
        Ok(())
    }

    fn load_entry(&self, base: &Path, e: &ManifestEntry) -> Result<AnnotatedImage> {
        let image = read_rgb_png(base.join(&e.image))?;
        let (h, w) = (image.shape().h(), image.shape().w());
        let mut labels = Vec::with_capacity(e.labels.len());
        for (a, l) in e.labels.iter().enumerate() {
            let label = read_label_png(base.join(l))?;
            if !label.same_extent(w, h) {
                return Err(Error::Format(format!("{l}: label extent differs from image {}", e.image)));
            }
            labels.push(label.with_provenance(Provenance::Annotator(a as u32)));
        }
        Ok(AnnotatedImage { image, labels })
    }

    /// Loads the entries of one split (all entries for `None`).
    pub fn load_split(&self, base: &Path, split: Option<&str>) -> Result<Vec<AnnotatedImage>> {
        self.entries.iter().filter(|e| split.is_none_or(|s| e.split == s)).map(|e| self.load_entry(base, e)).collect()
    }

    pub fn entries_in<'a>(&'a self, split: &'a str) -> impl Iterator<Item = &'a ManifestEntry> + 'a {
        self.entries.iter().filter(move |e| e.split == split)
    }
}

/// Manifest loaded together with the directory its paths are relative to.
pub fn open_manifest(path: impl AsRef<Path>) -> Result<(CorpusManifest, PathBuf)> {
    let path = path.as_ref();
    let manifest = CorpusManifest::load(path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((manifest, base))
}

/// Writes images (`images/NNNN.png`) and labels (`labels/NNNN_aK.png`)
/// under `dir` and the manifest as `dir/manifest.tsv`. `splits` assigns
/// consecutive runs of items, e.g. `[("train", 48), ("val", 16)]`.
pub fn write_corpus(dir: &Path, items: &[AnnotatedImage], splits: &[(&str, usize)]) -> Result<PathBuf> {
    let total: usize = splits.iter().map(|s| s.1).sum();
    if total != items.len() {
        return Err(Error::Config(format!("splits cover {total} images, corpus has {}", items.len())));
    }
    fs::create_dir_all(dir.join("images"))?;
    fs::create_dir_all(dir.join("labels"))?;
    let mut manifest = CorpusManifest::default();
    let mut split_of = splits.iter().flat_map(|(name, n)| std::iter::repeat_n(*name, *n));
    for (i, item) in items.iter().enumerate() {
        let image = format!("images/{i:04}.png");
        write_rgb_png(dir.join(&image), &item.image)?;
        let mut labels = Vec::with_capacity(item.labels.len());
        for (a, l) in item.labels.iter().enumerate() {
            let name = format!("labels/{i:04}_a{a}.png");
            write_label_png(dir.join(&name), l)?;
            labels.push(name);
        }
        let split = split_of.next().expect("split sizes checked").to_string();
        manifest.entries.push(ManifestEntry { image, labels, split });
    }
    let path = dir.join("manifest.tsv");
    manifest.save(&path)?;
    Ok(path)
}

/// Single-annotator view of a synthetic corpus.
pub fn annotate(items: &[SynthItem]) -> Vec<AnnotatedImage> {
    items.iter().map(|it| AnnotatedImage { image: it.image.clone(), labels: vec![it.label.clone()] }).collect()
}
