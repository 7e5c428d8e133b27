//! Textured 2D Gaussian splatting: scene model, differentiable rendering,
//! multi-phase fitting, non-destructive editing, style transfer and
//! segmentation.

pub mod camera;
pub mod dataset;
pub mod edit;
pub mod error;
pub mod image;
pub mod io;
pub mod math;
pub mod render;
pub mod synthetic;
pub mod train;
pub mod scene;
pub mod segment;

pub use error::{Error, Result};
