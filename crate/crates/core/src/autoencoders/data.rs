//! Network inputs built from stored scans.

use super::vae::{Pipeline, VaeConfig};
use crate::error::{Error, Result};
use crate::nn::{Scalar, Tensor};
use crate::preprocess::{normalize_ranges, raw_pipeline_input, scan_to_local_image, ImageConfig, LocalOccupancyImage, NormalizedScan};
use crate::world::{Dataset, LidarScan};

/// Preprocessed inputs for one pipeline, kept compact: images as bytes,
/// raw scans as f32.
#[derive(Debug, Clone, PartialEq)]
pub struct VaeInputs {
    pub pipeline: Pipeline,
    pub item_shape: Vec<usize>,
    binary: Vec<u8>,
    real: Vec<f32>,
    len: usize,
}

/// One observation as the flat network input of `cfg`'s pipeline.
pub fn scan_input(scan: &LidarScan, cfg: &VaeConfig) -> Result<Vec<f32>> {
    match cfg.pipeline {
        Pipeline::Image => {
            let img = scan_to_local_image(&normalize_ranges(scan, cfg.image.max_range), &cfg.image)?;
            Ok(img.to_f32())
        }
        Pipeline::Raw => {
            if scan.beam_count() != cfg.beam_count {
                return Err(Error::shape(
                    "raw input",
                    format!("scan has {} beams, network expects {}", scan.beam_count(), cfg.beam_count),
                ));
            }
            let norm = raw_pipeline_input(scan, cfg.image.max_range)?;
            Ok(norm.values.iter().map(|v| *v as f32).collect())
        }
    }
}

impl VaeInputs {
    pub fn from_scans<'a>(scans: impl IntoIterator<Item = &'a LidarScan>, cfg: &VaeConfig) -> Result<Self> {
        let mut out = Self {
            pipeline: cfg.pipeline,
            item_shape: cfg.input_shape(),
            binary: Vec::new(),
            real: Vec::new(),
            len: 0,
        };
        for scan in scans {
            out.push(scan, cfg)?;
        }
        Ok(out)
    }

    pub fn from_dataset(ds: &Dataset, indices: &[usize], cfg: &VaeConfig) -> Result<Self> {
        let mut out = Self::from_scans(std::iter::empty(), cfg)?;
        for &i in indices {
            out.push(&ds.scan(i), cfg)?;
        }
        Ok(out)
    }

    fn push(&mut self, scan: &LidarScan, cfg: &VaeConfig) -> Result<()> {
        let v = scan_input(scan, cfg)?;
        match self.pipeline {
            Pipeline::Image => self.binary.extend(v.iter().map(|p| *p as u8)),
            Pipeline::Raw => self.real.extend(v),
        }
        self.len += 1;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn item_len(&self) -> usize {
        self.item_shape.iter().product()
    }

    /// Values of item `i`.
    pub fn item(&self, i: usize) -> Vec<f32> {
        let l = self.item_len();
        match self.pipeline {
            Pipeline::Image => self.binary[i * l..(i + 1) * l].iter().map(|p| *p as f32).collect(),
            Pipeline::Raw => self.real[i * l..(i + 1) * l].to_vec(),
        }
    }

    pub fn batch<T: Scalar>(&self, idx: &[usize]) -> Tensor<T> {
        let l = self.item_len();
        let mut data = Vec::with_capacity(idx.len() * l);
        for &i in idx {
            match self.pipeline {
                Pipeline::Image => data.extend(self.binary[i * l..(i + 1) * l].iter().map(|p| T::of(*p as f64))),
                Pipeline::Raw => data.extend(self.real[i * l..(i + 1) * l].iter().map(|v| T::of(*v as f64))),
            }
        }
        let mut shape = vec![idx.len()];
        shape.extend_from_slice(&self.item_shape);
        Tensor::from_vec(&shape, data).expect("consistent item size")
    }
}

/// Rasterizes per-beam normalized ranges from the raw decoder. Values
/// outside `(0, 1]` mark no endpoint, as in [`normalize_ranges`].
pub fn raw_mean_to_image(values: &[f64], angle_span: f64, cfg: &ImageConfig) -> Result<LocalOccupancyImage> {
    let values = values
        .iter()
        .map(|v| if *v > 0.0 && *v <= 1.0 { *v } else { 0.0 })
        .collect();
    scan_to_local_image(&NormalizedScan { values, angle_span }, cfg)
}
