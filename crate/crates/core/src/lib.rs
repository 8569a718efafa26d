//! Multi-view correspondence refinement.
//!
//! Noisy image correspondences across many views of a rigid scene are not
//! free points: they satisfy algebraic rank constraints. This crate exploits
//! two of them — an M x 9 two-view matrix of rank at most 8 and a K x 5
//! multi-view matrix of rank at most 4 — to denoise correspondences, flag
//! gross outliers, and re-estimate missing or discarded points in closed
//! form, without ever reconstructing cameras or 3-D structure.
//!
//! Entry points:
//! * [`pipeline::main_refine`] — the full staged pipeline,
//! * [`refine::refine_all`] — denoising only,
//! * [`outliers::recognize_outliers`] — detection only,
//! * [`selfest::self_estimate`] — missing-point recovery only,
//! * [`synth::generate_scene`] / [`synth::corrupt`] — synthetic ground truth.

pub mod cli;
pub mod constraints;
pub mod error;
pub mod formats;
pub mod geometry;
pub mod grid;
pub mod normalize;
pub mod outliers;
pub mod pipeline;
pub mod refine;
pub mod selfest;
pub mod synth;

pub use error::{Error, Result};
pub use grid::{ObservationGrid, OutlierIndex, OutlierSet, Pixel};
