//! Autoencoding pipelines for planar lidar scans and the navigation
//! experiment that consumes their latent states.

pub mod autoencoders;
pub mod error;
pub mod experiment;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod preprocess;
pub mod rl;
pub mod world;

pub use error::{Error, Result};
