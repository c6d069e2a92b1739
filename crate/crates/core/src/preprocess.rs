//! Scan normalization and rasterization into the egocentric binary
//! occupancy image.
//!
//! Image axes: column index grows with the sensor-frame x axis (forward),
//! row index with the sensor-frame y axis (left). The sensor sits in cell
//! `(res/2, res/2)`. Pixels are stored row-major, `pixels[row * res + col]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::LidarScan;

pub const DEFAULT_MAX_RANGE: f64 = 10.0;
pub const DEFAULT_EXTENT_M: f64 = 20.0;
pub const FULL_RESOLUTION_PX: usize = 320;
pub const DESK_RESOLUTION_PX: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageConfig {
    pub resolution_px: usize,
    pub extent_m: f64,
    pub max_range: f64,
}

impl ImageConfig {
    pub fn full() -> Self {
        Self {
            resolution_px: FULL_RESOLUTION_PX,
            extent_m: DEFAULT_EXTENT_M,
            max_range: DEFAULT_MAX_RANGE,
        }
    }

    pub fn desk() -> Self {
        Self {
            resolution_px: DESK_RESOLUTION_PX,
            ..Self::full()
        }
    }

    pub fn cell_size(&self) -> f64 {
        self.extent_m / self.resolution_px as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution_px == 0 || self.resolution_px % 2 != 0 {
            return Err(Error::Config(format!(
                "image resolution must be a positive even number, got {}",
                self.resolution_px
            )));
        }
        if !(self.max_range > 0.0) {
            return Err(Error::Config("max_range must be positive".into()));
        }
        if !(self.extent_m >= 2.0 * self.max_range) {
            return Err(Error::Config(format!(
                "extent {} m cannot hold endpoints up to {} m",
                self.extent_m, self.max_range
            )));
        }
        Ok(())
    }
}

impl Default for ImageConfig {
    fn default() -> Self {
        Self::full()
    }
}

/// Ranges scaled into [0, 1]; zero marks invalid or out-of-range beams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedScan {
    pub values: Vec<f64>,
    pub angle_span: f64,
}

impl NormalizedScan {
    pub fn beam_count(&self) -> usize {
        self.values.len()
    }

    pub fn angle(&self, i: usize) -> f64 {
        i as f64 * self.angle_span / self.values.len() as f64
    }
}

pub fn normalize_ranges(scan: &LidarScan, max_range: f64) -> NormalizedScan {
    let values = scan
        .ranges
        .iter()
        .zip(&scan.valid)
        .map(|(&r, &ok)| {
            if ok && r > 0.0 && r <= max_range {
                r / max_range
            } else {
                0.0
            }
        })
        .collect();
    NormalizedScan {
        values,
        angle_span: scan.sensor.angle_span,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalOccupancyImage {
    /// Row-major, values in {0, 1}.
    pub pixels: Vec<u8>,
    pub resolution_px: usize,
    pub extent_m: f64,
}

impl LocalOccupancyImage {
    pub fn zeros(resolution_px: usize, extent_m: f64) -> Self {
        Self {
            pixels: vec![0; resolution_px * resolution_px],
            resolution_px,
            extent_m,
        }
    }

    pub fn cell_size(&self) -> f64 {
        self.extent_m / self.resolution_px as f64
    }

    pub fn get(&self, col: usize, row: usize) -> u8 {
        self.pixels[row * self.resolution_px + col]
    }

    pub fn set(&mut self, col: usize, row: usize) {
        self.pixels[row * self.resolution_px + col] = 1;
    }

    pub fn occupied_count(&self) -> usize {
        self.pixels.iter().filter(|p| **p != 0).count()
    }

    /// Occupied cells as `(col, row)` pairs in storage order.
    pub fn occupied(&self) -> Vec<(usize, usize)> {
        let r = self.resolution_px;
        self.pixels
            .iter()
            .enumerate()
            .filter(|(_, p)| **p != 0)
            .map(|(i, _)| (i % r, i / r))
            .collect()
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.pixels.iter().map(|p| *p as f32).collect()
    }
}

/// Cell index of a sensor-frame endpoint coordinate. An endpoint lying
/// exactly on the far grid edge is folded into the last cell.
fn cell_index(coord: f64, cfg: &ImageConfig) -> Result<usize> {
    let res = cfg.resolution_px as i64;
    let idx = res / 2 + (coord / cfg.cell_size()).floor() as i64;
    match idx {
        i if (0..res).contains(&i) => Ok(i as usize),
        i if i == res && coord * 2.0 <= cfg.extent_m => Ok((res - 1) as usize),
        i => Err(Error::Geometry(format!(
            "endpoint coordinate {coord} m maps to cell {i} outside a {res}-cell grid"
        ))),
    }
}

/// Marks the cell of every beam endpoint with a positive normalized value.
pub fn scan_to_local_image(scan: &NormalizedScan, cfg: &ImageConfig) -> Result<LocalOccupancyImage> {
    cfg.validate()?;
    let mut img = LocalOccupancyImage::zeros(cfg.resolution_px, cfg.extent_m);
    for (i, &v) in scan.values.iter().enumerate() {
        if !(v > 0.0) {
            continue;
        }
        let d = v * cfg.max_range;
        let theta = scan.angle(i);
        let col = cell_index(d * theta.cos(), cfg)?;
        let row = cell_index(d * theta.sin(), cfg)?;
        img.set(col, row);
    }
    Ok(img)
}

/// Fills every invalid beam with the mean of the nearest valid beam on each
/// side, searching circularly. Imputed beams are marked valid.
pub fn replace_invalid_with_neighbor_average(scan: &LidarScan) -> Result<LidarScan> {
    let n = scan.beam_count();
    if scan.valid_count() == 0 {
        return Err(Error::Geometry("scan has no valid beam to interpolate from".into()));
    }
    let mut out = scan.clone();
    for i in 0..n {
        if scan.valid[i] {
            continue;
        }
        let left = (1..n).map(|k| (i + n - k) % n).find(|&j| scan.valid[j]).expect("one valid beam");
        let right = (1..n).map(|k| (i + k) % n).find(|&j| scan.valid[j]).expect("one valid beam");
        out.ranges[i] = 0.5 * (scan.ranges[left] + scan.ranges[right]);
        out.valid[i] = true;
    }
    Ok(out)
}

/// Input of the raw-range pipeline: imputed, then normalized.
pub fn raw_pipeline_input(scan: &LidarScan, max_range: f64) -> Result<NormalizedScan> {
    Ok(normalize_ranges(&replace_invalid_with_neighbor_average(scan)?, max_range))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::SensorSpec;

    fn scan_of(ranges: &[f64]) -> LidarScan {
        LidarScan::from_ranges(
            ranges.to_vec(),
            SensorSpec {
                beam_count: ranges.len(),
                ..Default::default()
            },
        )
    }

    fn single(values: Vec<f64>) -> NormalizedScan {
        NormalizedScan {
            values,
            angle_span: std::f64::consts::TAU,
        }
    }

    #[test]
    fn normalization_cases() {
        let n = normalize_ranges(&scan_of(&[10.0, 12.0, 5.0, f64::NAN, 0.0]), 10.0);
        assert_eq!(n.values, vec![1.0, 0.0, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn half_range_forward_beam() {
        let img = scan_to_local_image(&single(vec![0.5, 0.0, 0.0, 0.0]), &ImageConfig::full()).unwrap();
        assert_eq!(img.occupied(), vec![(240, 160)]);
    }

    #[test]
    fn empty_and_duplicate_endpoints() {
        let cfg = ImageConfig::full();
        let img = scan_to_local_image(&single(vec![0.0; 16]), &cfg).unwrap();
        assert_eq!(img.occupied_count(), 0);
        // two beams within one cell
        let s = NormalizedScan {
            values: vec![0.51, 0.51],
            angle_span: 1e-4,
        };
        assert_eq!(scan_to_local_image(&s, &cfg).unwrap().occupied_count(), 1);
    }

    #[test]
    fn full_range_endpoint_is_kept() {
        let img = scan_to_local_image(&single(vec![1.0, 1.0, 1.0, 1.0]), &ImageConfig::full()).unwrap();
        let mut occ = img.occupied();
        occ.sort();
        // cos(3pi/2) is a tiny negative number, so that endpoint floors into column 159
        assert_eq!(occ, vec![(0, 160), (159, 0), (160, 319), (319, 160)]);
    }

    #[test]
    fn undersized_extent_is_rejected() {
        let cfg = ImageConfig {
            extent_m: 10.0,
            ..ImageConfig::full()
        };
        assert!(matches!(scan_to_local_image(&single(vec![0.5]), &cfg), Err(Error::Config(_))));
        let odd = ImageConfig {
            resolution_px: 33,
            ..ImageConfig::full()
        };
        assert!(odd.validate().is_err());
    }

    #[test]
    fn neighbor_average() {
        let s = replace_invalid_with_neighbor_average(&scan_of(&[2.0, f64::NAN, 4.0])).unwrap();
        assert_eq!(s.ranges[1], 3.0);
        let s = scan_of(&[1.0, f64::NAN, f64::NAN, f64::NAN, 2.0]);
        let fixed = replace_invalid_with_neighbor_average(&s).unwrap();
        assert_eq!(&fixed.ranges[1..4], &[1.5, 1.5, 1.5]);
        assert!(fixed.valid.iter().all(|v| *v));
        // wrap-around: beam 0 sits between beam 3 and beam 1
        let s = scan_of(&[f64::NAN, 1.0, 5.0, 3.0]);
        assert_eq!(replace_invalid_with_neighbor_average(&s).unwrap().ranges[0], 2.0);
    }

    #[test]
    fn neighbor_average_identity_and_error() {
        let s = scan_of(&[1.0, 2.0, 3.0]);
        assert_eq!(replace_invalid_with_neighbor_average(&s).unwrap(), s);
        assert!(replace_invalid_with_neighbor_average(&scan_of(&[f64::NAN, f64::NAN])).is_err());
    }
}
