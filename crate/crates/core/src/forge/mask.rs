use rand::Rng;

use crate::error::{Error, Result};
use crate::maps::{ContourPrediction, LabelMap, Provenance};

/// Per-pixel class ids; 0 is conventionally background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentationMask {
    width: usize,
    height: usize,
    pixels: Vec<u32>,
}

impl SegmentationMask {
    pub fn new(width: usize, height: usize, pixels: Vec<u32>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::shape("mask", format!("{width}x{height} mask with {} pixels", pixels.len())));
        }
        Ok(SegmentationMask { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, id: u32) -> Self {
        SegmentationMask { width, height, pixels: vec![id; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u32] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, id: u32) {
        self.pixels[y * self.width + x] = id;
    }
}

/// Inner boundary of the selected classes: a selected pixel is a contour
/// pixel iff one of its 4-neighbours carries a different id. Pixels on the
/// image border count as touching background.
pub fn mask_to_contours(mask: &SegmentationMask, classes: &[u32]) -> Result<LabelMap> {
    if classes.is_empty() {
        return Err(Error::invalid("mask_to_contours", "empty class set"));
    }
    let (w, h) = (mask.width, mask.height);
    let mut out = LabelMap::zeros(w, h).with_provenance(Provenance::MaskDerived);
    for y in 0..h {
        for x in 0..w {
            let id = mask.get(x, y);
            if !classes.contains(&id) {
                continue;
            }
            let on_border = x == 0 || y == 0 || x + 1 == w || y + 1 == h;
            let differs = on_border
                || mask.get(x - 1, y) != id
                || mask.get(x + 1, y) != id
                || mask.get(x, y - 1) != id
                || mask.get(x, y + 1) != id;
            if differs {
                out.set(x, y, true);
            }
        }
    }
    Ok(out)
}

/// `base OR (detection >= threshold)`.
pub fn enrich_labels(base: &LabelMap, detection: &ContourPrediction, threshold: f32) -> Result<LabelMap> {
    if !base.same_extent(detection.width(), detection.height()) {
        return Err(Error::shape(
            "enrich_labels",
            format!(
                "{}x{} label against {}x{} detection",
                base.width(),
                base.height(),
                detection.width(),
                detection.height()
            ),
        ));
    }
    if !(threshold > 0.0) || threshold.is_nan() {
        return Err(Error::invalid("enrich_labels", format!("threshold {threshold} must be positive")));
    }
    let pixels = base
        .pixels()
        .iter()
        .zip(detection.values())
        .map(|(&b, &d)| u8::from(b != 0 || d >= threshold))
        .collect();
    Ok(LabelMap::new(base.width(), base.height(), pixels)?.with_provenance(Provenance::Enriched))
}

/// Simulates incomplete annotation: erases label pixels inside random
/// `block×block` windows until at least `fraction` of the positives are gone.
pub fn degrade_labels<R: Rng + ?Sized>(label: &LabelMap, fraction: f64, block: usize, rng: &mut R) -> LabelMap {
    let mut out = label.clone();
    let total = label.count();
    let target = ((total as f64) * fraction.clamp(0.0, 1.0)).ceil() as usize;
    let (w, h) = (label.width(), label.height());
    let block = block.max(1);
    let positives: Vec<(usize, usize)> = label.positions().collect();
    let mut removed = 0;
    while removed < target && !positives.is_empty() {
        let (cx, cy) = positives[rng.gen_range(0..positives.len())];
        let (x0, y0) = (cx.saturating_sub(block / 2), cy.saturating_sub(block / 2));
        for y in y0..(y0 + block).min(h) {
            for x in x0..(x0 + block).min(w) {
                if out.get(x, y) {
                    out.set(x, y, false);
                    removed += 1;
                }
            }
        }
    }
    out.with_provenance(label.provenance)
}
