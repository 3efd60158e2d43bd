//! Segmentation-guided multi-label chest X-ray classification toolkit.
//!
//! The crate covers the whole desk-scale pipeline: image decoding and
//! augmentation ([`imaging`]), lung-mask post-processing ([`morphology`]),
//! segmentation losses ([`segloss`]), dataset curation ([`curation`]), mask
//! ingestion ([`segmenter`]), a reference multi-label classifier
//! ([`model`]), evaluation ([`metrics`]) and statistical comparison
//! ([`stats`]). The [`cli`] module drives everything from a JSON config.
//!
//! Label order is fixed everywhere: `[Mass, Nodule, Pneumonia, Edema,
//! Fibrosis, No Finding]`, with the first five being the abnormalities a
//! classifier scores.

pub mod cli;
pub mod curation;
mod error;
pub mod imaging;
pub mod labels;
pub mod metrics;
pub mod model;
pub mod morphology;
mod rng;
pub mod segloss;
pub mod segmenter;
pub mod stats;
pub mod synthetic;

pub use error::{Error, Result};
pub use imaging::GrayImage;
pub use labels::{Label, LabelVector, ABNORMALITIES, NUM_ABNORMALITIES, NUM_LABELS};
pub use morphology::BinaryMask;
