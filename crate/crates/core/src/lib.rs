//! Bimanual grasp synthesis library.
//!
//! Pipeline: sample antipodal single grasps on a mesh, pair them with a
//! force-closure/torque/dexterity quality metric, and train a transformer
//! that predicts coordinated grasp pairs directly from point clouds.

pub mod cli;
pub mod error;
pub mod geometry;
pub mod io;
pub mod quality;
pub mod matcher;
pub mod metrics;
pub mod net;
pub mod sampler;
pub mod rng;

pub use error::{Error, Result};
