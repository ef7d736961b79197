//! Synthetic fluoroscopy dataset generation for a notched continuum manipulator.
//!
//! The pipeline samples a manipulator shape and C-arm pose, builds and voxelizes the
//! manipulator meshes, carves them into a CT, renders line-integral images, and
//! writes masks, landmarks and belief maps next to each image.

// Negated float comparisons are used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Loops over joints index several arrays by joint number.
#![allow(clippy::needless_range_loop)]

pub mod cdm_model;
pub mod dataset_io;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod projector;
pub mod sampler;
pub mod volume;
pub mod voxelizer;

pub use error::{ForgeError, Result};
