//! Contour label corpora: inner boundaries of segmentation masks,
//! enrichment with confident detections, and a seeded synthetic corpus of
//! gray shapes with distractor lines that are edges but not contours.

mod io;
mod mask;
mod synth;

pub use io::{
    annotate, open_manifest, read_label_png, read_mask_png, read_rgb_png, write_corpus, write_label_png,
    write_mask_png, write_rgb_png, CorpusManifest, ManifestEntry, MANIFEST_VERSION,
};
pub use mask::{degrade_labels, enrich_labels, mask_to_contours, SegmentationMask};
pub use synth::{synth_corpus, synth_disagreement, Geometry, ShapeKind, SynthConfig, SynthItem, MIN_CANVAS};
