//! Command-line surface. Every flag has a config-file key of the same name
//! with dashes replaced by underscores.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "rcnkit", version, about = "Contour detection with a multi-path refinement network")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, Default, Args)]
pub struct Common {
    /// Key-value config file; command-line flags override its entries.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for every random choice of the run (default 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: available cores; 1 is fully serial).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a contour corpus: synthetic shapes or labels from segmentation masks.
    Forge(ForgeArgs),
    /// Train a network according to a staged plan.
    Train(TrainArgs),
    /// Write 16-bit contour maps for images.
    Predict(PredictArgs),
    /// Benchmark predictions against ground truth (ODS, OIS, AP).
    Eval(EvalArgs),
    /// Tabulate and re-plot benchmark summaries.
    Report(ReportArgs),
}

#[derive(Clone, Debug, Default, Args)]
pub struct ForgeArgs {
    /// Render a synthetic corpus of shapes and distractor lines.
    #[arg(long, conflicts_with = "from_masks")]
    pub synthetic: bool,
    /// Number of synthetic images.
    #[arg(short = 'n', long)]
    pub count: Option<usize>,
    /// Synthetic canvas, `HxW`.
    #[arg(long)]
    pub canvas: Option<String>,
    /// Shape kinds, e.g. `rectangle,ellipse,triangle`.
    #[arg(long)]
    pub kinds: Option<String>,
    /// Shapes per image, `LO-HI`.
    #[arg(long)]
    pub shapes: Option<String>,
    /// Distractor lines per image, `LO-HI`.
    #[arg(long)]
    pub distractors: Option<String>,
    /// Pixel noise amplitude.
    #[arg(long)]
    pub noise: Option<f32>,
    /// 1 for single labels, 2 for a disagreement corpus (ellipses disputed).
    #[arg(long)]
    pub annotators: Option<u32>,
    /// Consecutive splits, e.g. `train=48,val=16` (default: all `train`).
    #[arg(long)]
    pub split: Option<String>,
    /// Directory of segmentation-mask PNGs (pixel value = class id).
    #[arg(long, value_name = "DIR")]
    pub from_masks: Option<PathBuf>,
    /// Class ids whose contours are labeled.
    #[arg(long)]
    pub classes: Option<String>,
    /// Directory with an RGB `<stem>.png` per mask (default: render the mask).
    #[arg(long, value_name = "DIR")]
    pub images: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, Args)]
pub struct TrainArgs {
    /// Preset name or plan file (default `desk`).
    #[arg(long, conflicts_with = "variant")]
    pub plan: Option<String>,
    /// Training variant: rcn, rcn-voc, rcn-coco or rcn-voc-1.
    #[arg(long)]
    pub variant: Option<String>,
    /// Corpus manifest; used for every stage corpus not bound by `--corpus-for`.
    #[arg(long, value_name = "MANIFEST")]
    pub corpus: Option<PathBuf>,
    /// Binds a plan corpus id, `ID=MANIFEST`; repeatable.
    #[arg(long, value_name = "ID=MANIFEST")]
    pub corpus_for: Vec<String>,
    /// Manifest split to train on (default `train`).
    #[arg(long)]
    pub split: Option<String>,
    /// Network spec file (default: desk network).
    #[arg(long, value_name = "FILE")]
    pub network: Option<PathBuf>,
    /// Start from this checkpoint instead of a seeded initialization.
    #[arg(long, value_name = "CHECKPOINT")]
    pub init: Option<PathBuf>,
    /// Override the epoch count of every stage.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Override the base learning rate of every stage.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Override the images drawn per epoch of every stage.
    #[arg(long)]
    pub images_per_epoch: Option<usize>,
    /// Override the batch size of every stage.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Override the training crop of every stage, `HxW` or `full`.
    #[arg(long)]
    pub crop: Option<String>,
    /// Override the network output scale: half or full.
    #[arg(long)]
    pub output_scale: Option<String>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum MapFormat {
    #[default]
    Pgm,
    Png,
}

impl MapFormat {
    pub fn extension(self) -> &'static str {
        match self {
            MapFormat::Pgm => "pgm",
            MapFormat::Png => "png",
        }
    }
}

#[derive(Clone, Debug, Default, Args)]
pub struct PredictArgs {
    /// Trained parameters.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// Network spec (default: `network.cfg` beside the checkpoint).
    #[arg(long, value_name = "FILE")]
    pub network: Option<PathBuf>,
    /// Predict every image of this manifest.
    #[arg(long, value_name = "MANIFEST", conflicts_with = "images")]
    pub manifest: Option<PathBuf>,
    /// Restrict `--manifest` to one split.
    #[arg(long)]
    pub split: Option<String>,
    /// Image files or directories of PNGs.
    #[arg(long, num_args = 1.., value_name = "PATH")]
    pub images: Vec<PathBuf>,
    /// Output map format (both 16-bit).
    #[arg(long, value_enum)]
    pub format: Option<MapFormat>,
}

#[derive(Clone, Debug, Default, Args)]
pub struct EvalArgs {
    /// Directory of predicted maps (`<stem>.pgm` or `<stem>.png`).
    #[arg(long, value_name = "DIR")]
    pub pred: Option<PathBuf>,
    /// Ground truth: a corpus manifest, or a directory of `<stem>.png` /
    /// `<stem>_aK.png` label maps.
    #[arg(long, value_name = "MANIFEST|DIR")]
    pub gt: Option<PathBuf>,
    /// Restrict a manifest ground truth to one split.
    #[arg(long)]
    pub split: Option<String>,
    /// Number of thresholds `k/(n+1)` (default 99).
    #[arg(long)]
    pub thresholds: Option<usize>,
    /// Matching radius in pixels (default: 0.75% of the image diagonal).
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Predictions are already thinned; skip non-maximum suppression.
    #[arg(long)]
    pub no_nms: bool,
    /// Stem of the written `.csv`, `.svg` and `.txt` (default `pr`).
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Clone, Debug, Default, Args)]
pub struct ReportArgs {
    /// Summary stems written by `eval` (`DIR/pr` or `DIR/pr.txt`).
    #[arg(value_name = "SUMMARY")]
    pub summaries: Vec<PathBuf>,
    /// Append the published reference rows to the table.
    #[arg(long)]
    pub reference: bool,
}
