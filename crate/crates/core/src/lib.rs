//! Source-free domain adaptation for binary multi-structure segmentation.
//!
//! The crate covers the whole adaptation workflow on CPU:
//!
//! * [`data`]: synthetic shifted-domain fundus-like datasets, benchmark
//!   ingestion and photometric strong augmentation
//! * [`model`]: a small encoder–decoder with MC-dropout inference, encoder
//!   feature access, EMA teacher updates and checkpoints
//! * [`selection`]: entropy / feature-similarity partition of the target set
//!   into reliable and unreliable subsets
//! * [`pseudolabel`]: thresholded pseudo-labels and prototype denoising masks
//! * [`mixing`]: denoised patch mixing and the mask-normalized BCE family
//! * [`pipeline`]: source training, two-stage adaptation and ablations
//! * [`metrics`]: Dice, ASSD and evaluation reports

pub mod data;
pub mod error;
pub mod exec;
pub mod metrics;
pub mod mixing;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod planes;
pub mod pseudolabel;
pub mod rng;
pub mod selection;

pub use error::{Error, Result};
pub use exec::Execution;
pub use planes::{Image, LabelMap, Mask, Planes, ProbMap};

/// Hash of the crate sources this binary was built from.
pub const CODE_HASH: &str = env!("SFDA_CODE_HASH");
