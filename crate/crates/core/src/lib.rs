//! Road-distress analysis toolkit.
//!
//! Everything runs on a small reverse-mode differentiation engine in 64-bit
//! floats ([`autograd`]). On top of it sit:
//!
//! - [`gan`]: convolutional generator/discriminator pair trained with
//!   binary cross-entropy for synthetic road imagery;
//! - [`detection`]: anchor-free box decoding, CIoU and distribution focal
//!   losses, task-aligned positive assignment and NMS;
//! - [`segmentation`]: per-pixel and mask-classification losses, Hungarian
//!   matching and a toy three-stage mask-classification model;
//! - [`metrics`]: AP/mAP50, IoU, accuracy and confusion matrices;
//! - [`data`]: manifest ingestion, rasterization, splitting and augmentation.

pub mod autograd;
pub mod data;
pub mod detection;
pub mod error;
pub mod gan;
pub mod metrics;
pub mod segmentation;

pub use error::{Error, Result};
