//! Contextual hourglass networks.
//!
//! A small CPU deep-learning stack built around the contextual convolution:
//! a shortcut whose two filter banks move in lock-step over feature maps of
//! different spatial size. The crate provides rank-4 tensors, a dynamic
//! reverse-mode tape, the neural operators, U-Net and Contextual U-Net
//! builders, training (two-phase, early stopping, augmentation), data
//! ingestion, synthetic datasets and a binary checkpoint format.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod hourglass;
pub mod ops;
pub mod real;
pub mod rng;
pub mod tensor;
pub mod training;

pub use autodiff::{finite_difference_check, GradCheck, Tape, Var};
pub use error::{Error, Result};
pub use hourglass::{HourglassConfig, Network};
pub use real::Real;
pub use rng::RngState;
pub use tensor::{Shape, Tensor};
