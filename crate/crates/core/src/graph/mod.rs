//! The contour network: a residual backbone feeding a deepest-first
//! refinement path (RCU, MRF, CRP), an extra path over the original image,
//! and a one-channel sigmoid head.
//!
//! Layers are plain functions over a [`Ctx`], which binds a [`Tape`] to a
//! [`ParameterStore`]. Running the same functions against an empty store in
//! initializing mode is how [`build_rcn`] creates the parameters, so the
//! forward pass and the parameter inventory cannot drift apart.

mod blocks;
mod model;
mod spec;

pub use blocks::{crp_forward, mrf_forward, rcu_forward, residual_block, Ctx, Init};
pub use model::{build_rcn, zero_refinement, Forward, Rcn};
pub use spec::{
    BackboneSpec, BlockKind, NetworkSpec, OutputScale, RefineLevelSpec, RefinePathSpec, StageSpec, StemSpec,
};
