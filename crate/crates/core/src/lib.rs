//! Active-learning construction of validated neural reduced-order models.
//!
//! The crate is organized along the workflow:
//!
//! - [`fom`]: the full-order simulator interface and a 2-D heat-conduction model,
//! - [`reduction`]: POD bases, reduced-state boxes, trimming and joint-space sampling,
//! - [`rom`]: the residual ("explicit Euler") neural time stepper and its training,
//! - [`validator`]: PAC validation of one-step predictions,
//! - [`estimator`]: Gaussian-process interpolation of validation errors,
//! - [`active`]: the greedy acquisition loop,
//! - [`baseline`]: the trajectory-sampling workflow used for comparison,
//! - [`experiment`]: end-to-end pipelines shared by the CLI and the acceptance suite,
//! - [`io`]: on-disk formats.
//!
//! Data-parallel loops (batched FOM steps, pool scoring, validator evaluation,
//! kernel assembly) run on rayon when the `parallel` feature is enabled and
//! sequentially otherwise. Results are identical in both modes.

pub mod active;
pub mod baseline;
pub mod config;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod fom;
pub mod io;
pub mod normalize;
pub mod par;
pub mod reduction;
pub mod rom;
pub mod seeds;
pub mod validator;

pub use error::{Error, Result};
pub use fom::{
    FullOrderModel, FullState, HeatModel, HeatModelConfig, ParameterSchedule, ParameterSpace,
    ParameterVector, TimeGrid,
};
pub use reduction::{JointSample, ReducedBasis, ReducedBox, ReducedState, SnapshotMatrix, TrimLimits};

pub use rom::{EennRom, MlpNetwork, ReducedModel, TrainingConfig, TrainingSet};
pub use validator::{PacDesign, PacReport, PacValidator};
