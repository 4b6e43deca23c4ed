//! Weighted logistic loss, augmentation, annotator expansion and staged
//! training with momentum SGD.

mod augment;
mod loss;
mod plan;
mod run;

pub use augment::{augment, flip_cols, flip_rows, resize_bilinear, resize_nearest, AugmentConfig, Sample};
pub use loss::{map_loss, pixel_loss, weighted_logistic_loss, LossConfig};
pub use plan::{parse_crop, parse_extent, AnnotatorMode, LrSchedule, Stage, TrainPlan, Variant, PRESETS};
pub use run::{expand_annotators, run_plan, run_stage, AnnotatedImage, EpochRecord, StageOutputs, TrainLog};
