//! Image beta-VAE and raw-range baseline autoencoder.

pub mod arch;
pub mod data;
pub mod dist;
pub mod gradcheck;
pub mod train;
pub mod vae;

pub use data::{raw_mean_to_image, scan_input, VaeInputs};
pub use dist::{
    bernoulli_nll, gaussian_nll, kl_diag_gaussian_to_std_normal, reparameterized_sample, sigmoid, std_from_raw,
    DiagGaussian, IndepBernoulli,
};
pub use train::{train_vae, EpochLog};
pub use vae::{ElboParts, Pipeline, Vae, VaeConfig};
