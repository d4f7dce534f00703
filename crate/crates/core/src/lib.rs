//! Forward models, fusion-module math, metrics and calibration for joint
//! near-infrared image deblurring and event denoising.
//!
//! The crate is organised by pipeline stage:
//!
//! - [`types`], [`tensor`], [`io`]: validated domain types and file formats
//! - [`numerics`]: convolutions, softmax and a finite-difference gradient checker
//! - [`blur`], [`event_sim`], [`voxel`]: synthetic blur and event generation
//! - [`consistency`]: Sobel edges and the structural consistency target
//! - [`fusion`]: SCE / CMI modules with analytic backward, and the dual-branch network
//! - [`metrics`]: task losses and PSNR / SSIM / RMSE
//! - [`calibrate`]: homography estimation and warping
//! - [`pipeline`]: dataset generation and batch evaluation

pub mod blur;
pub mod calibrate;
pub mod consistency;
pub mod error;
pub mod event_sim;
pub mod fusion;
pub mod io;
pub mod metrics;
pub mod numerics;
pub mod pipeline;
pub mod seed;
pub mod tensor;
pub mod types;
pub mod voxel;

pub use error::{Error, Result};
pub use tensor::{FeatureTensor, Precision, Real};
pub use types::{Event, EventStream, Frame, Polarity, VoxelGrid};
