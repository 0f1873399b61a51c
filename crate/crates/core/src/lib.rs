//! Compressed-sensing photoacoustic tomography in two dimensions.
//!
//! The crate provides the discrete wave forward operator and its exact
//! transpose, filtered backprojection, compressive measurement matrices,
//! joint l1 reconstruction through proximal gradient iterations, a small
//! convolutional post-processor with residual and nullspace reconstruction,
//! phantoms and image quality metrics, and the file formats and pipelines
//! used by the `cspat` command-line tool.

pub mod config;
pub mod cs;
pub mod error;
pub mod geometry;
pub mod image;
pub mod io;
pub mod l1;
pub mod linop;
pub mod metrics;
pub mod nn;
pub mod phantom;
pub mod pipeline;
pub mod rng;
pub mod wave;

pub use config::{ExperimentConfig, Method, PhantomSpec};
pub use cs::{add_noise, bernoulli_matrix, subsampling_matrix, CSData, CSOperator, MeasKind, MeasMatrix};
pub use error::{PatError, Result};
pub use geometry::{
    check_sampling, full_circle, make_sensors, make_time_axis, ImageGrid, Medium, SensorArray, TimeAxis,
};
pub use image::Image;
pub use l1::{ista_tikhonov, joint_solve, prox_l1, prox_nonneg, two_stage, JointParams, JointState};
pub use linop::{DenseOperator, LinearOperator};
pub use metrics::{evaluate, mse, psnr, ssim, MetricReport};
pub use nn::{nullspace_recon, residual_recon, train, unet_forward, NetArch, NetParams, TrainConfig};
pub use phantom::{disc_phantom, shepp_logan, vessel_phantom};
pub use wave::{fbp, laplacian, solve_poisson, SensorData, WaveOperator};
