//! Spiking neural network training engine.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] dense arrays, convolution/pooling kernels and a reverse-mode tape,
//! * [`lif`] leaky integrate-and-fire dynamics, the analog pre-training activation
//!   and surrogate derivatives,
//! * [`models`] network graphs (ConvSNN, STS-ResNet), windowed forward execution,
//!   operation counting, feature-map dumps and checkpoints,
//! * [`data`] MNIST/NMNIST readers, the five synthetic spatio-temporal sequences
//!   and event stacking,
//! * [`train`] the hybrid analog-then-spiking training loop, losses, optimizers
//!   and evaluation.

pub mod data;
pub mod error;
pub mod lif;
pub mod models;
pub mod tensor;
pub mod train;

pub use error::{Result, SnnError};
pub use tensor::{Scalar, Tensor};
