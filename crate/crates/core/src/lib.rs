//! Unsupervised object segmentation and per-object generative modelling.
//!
//! A segmentation network splits an image into `K` soft masks. An adversarial
//! inpainter measures how well each region can be predicted from the rest of
//! the image, and a per-object VAE encodes every region into separate
//! appearance and shape latents that can be edited and decoded back.

pub mod datagen;
mod error;
pub mod evalkit;
pub mod image;
pub mod inpainter;
pub mod losses;
pub mod model;
pub mod objvae;
pub mod segnet;
pub mod trainer;

pub use error::{Error, Result};
pub use image::{ImageTensor, LabelMap};
pub use objman_tensor as tensor;
pub use model::{ModelConfig, Networks};
pub use segnet::{MaskStack, SegNet};

/// Single-precision networks used for training and inference.
pub type Networks32 = Networks<f32>;
/// Double-precision networks used for gradient checks.
pub type Networks64 = Networks<f64>;
pub type MaskStack32 = MaskStack<f32>;
