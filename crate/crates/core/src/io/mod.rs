//! On-disk formats: versioned little-endian archives for datasets and
//! checkpoints, PGM images, CSV tables and SVG plots.

mod binary;
pub mod checkpoint;
pub mod dataset;
pub mod pgm;
pub mod plot;
pub mod tables;

pub use checkpoint::{load_agent, load_checkpoint, load_vae, save_agent, save_checkpoint, save_vae, LoadedCheckpoint};
pub use dataset::{load_dataset, read_dataset, save_dataset, write_dataset};
pub use pgm::{probability_map, read_pgm, write_pgm};
pub use plot::{reward_plot_svg, Band};

/// SHA-256 of a file's bytes, hex encoded.
pub fn file_digest(path: &std::path::Path) -> crate::Result<String> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}
