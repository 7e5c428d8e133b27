//! Losses, optimizer, density control and the multi-phase fitting pipeline.

pub mod loss;
pub mod ssim;
pub mod config;

pub use config::TrainConfig;
pub mod adam;
pub mod cameras;
pub mod density;
pub mod fit;
