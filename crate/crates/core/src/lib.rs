//! Point cloud semantic segmentation with stacked kernel point convolutions.
//!
//! The crate is organised bottom-up:
//!
//! - [`pccore`]: point cloud container, file formats, grid subsampling,
//!   radius search, sphere extraction and augmentation.
//! - [`kpkernel`]: kernel point dispositions, the linear influence function
//!   and the KPConv forward/backward passes.
//! - [`nncore`]: dense layers with hand-written gradients, momentum SGD and a
//!   finite-difference gradient checker.
//! - [`arch`]: the 5-layer U-Net with stacked convolution blocks, training
//!   and full-scene inference, checkpoints.
//! - [`synth`]: synthetic interchange scenes and a rosette-pattern LiDAR
//!   simulator.
//! - [`metrics`]: confusion matrix, IoU, OA and mIoU.
//! - [`config`]: the merged run configuration used by the CLI.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod arch;
pub mod config;
mod error;
pub mod kpkernel;
pub mod metrics;
pub mod nncore;
pub mod pccore;
pub mod synth;

pub use error::{Error, Result};
