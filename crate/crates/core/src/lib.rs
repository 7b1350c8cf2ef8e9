//! Event-only 3D Gaussian splatting.
//!
//! An explicit Gaussian scene is optimised purely from an event stream:
//! a random cloud is warmed up on prior intensity frames, then refined with
//! count-sliced event supervision whose window size shrinks over training,
//! with an SSIM regulariser against the priors. A threshold-crossing event
//! simulator closes the loop so every stage can be verified end to end.

#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::too_many_arguments
)]

pub mod app;
pub mod camera;
pub mod config;
pub mod error;
pub mod event_io;
pub mod image;
pub mod losses;
pub mod math;
pub mod optim;
pub mod pipeline;
pub mod prior;
pub mod render;
pub mod rng;
pub mod scene;
pub mod sh;
pub mod simulator;

pub mod trainer;

pub use error::{EvgsError, Result};
