//! RefineContourNet toolkit.
//!
//! - [`tensor`]: rank-4 tensors, a reverse-mode tape and the parameter store.
//! - [`graph`]: backbone, refinement blocks (RCU, MRF, CRP) and the assembled network.
//! - [`train`]: weighted logistic loss, augmentation and staged training.
//! - [`forge`]: contour labels from segmentation masks, label enrichment, synthetic corpora.
//! - [`eval`]: NMS thinning, boundary correspondence and ODS/OIS/AP.

pub mod config;
pub mod error;
pub mod eval;
pub mod forge;
pub mod graph;
pub mod maps;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
