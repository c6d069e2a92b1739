//! Reconstruction metrics (false positives, false negatives, expectation
//! MSE) and Welch's t-test.

use serde::{Deserialize, Serialize};

use crate::autoencoders::{raw_mean_to_image, scan_input, std_from_raw, Pipeline, Vae, VaeConfig};
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::preprocess::{normalize_ranges, scan_to_local_image};
use crate::rng::Rng;
use crate::world::Dataset;

fn check_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::shape(what, format!("grids differ in size: {a} vs {b}")));
    }
    Ok(())
}

/// Pixels set in `recon` but free in `target`.
pub fn false_positives(recon: &[u8], target: &[u8]) -> Result<usize> {
    check_len(recon.len(), target.len(), "false_positives")?;
    Ok(recon.iter().zip(target).filter(|(r, t)| **r != 0 && **t == 0).count())
}

/// Pixels free in `recon` but set in `target`.
pub fn false_negatives(recon: &[u8], target: &[u8]) -> Result<usize> {
    check_len(recon.len(), target.len(), "false_negatives")?;
    Ok(recon.iter().zip(target).filter(|(r, t)| **r == 0 && **t != 0).count())
}

/// `sum (mean - target)^2` over the grid.
pub fn mse_expectation(recon_mean: &[f64], target: &[u8]) -> Result<f64> {
    check_len(recon_mean.len(), target.len(), "mse_expectation")?;
    Ok(recon_mean
        .iter()
        .zip(target)
        .map(|(p, t)| (p - *t as f64).powi(2))
        .sum())
}

/// Per-scan metrics and their dataset means.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReconReport {
    pub fp: f64,
    pub fn_: f64,
    pub mse: f64,
    pub per_scan_fp: Vec<f64>,
    pub per_scan_fn: Vec<f64>,
    pub per_scan_mse: Vec<f64>,
}

impl ReconReport {
    pub fn push(&mut self, fp: f64, fn_: f64, mse: f64) {
        self.per_scan_fp.push(fp);
        self.per_scan_fn.push(fn_);
        self.per_scan_mse.push(mse);
        let n = self.per_scan_mse.len() as f64;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
        self.fp = mean(&self.per_scan_fp);
        self.fn_ = mean(&self.per_scan_fn);
        self.mse = mean(&self.per_scan_mse);
    }

    pub fn len(&self) -> usize {
        self.per_scan_mse.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_scan_mse.is_empty()
    }
}

/// Evaluates a trained autoencoder on scans `indices` of `ds` against the
/// occupancy images of the original scans. The latent mean is decoded; the
/// MSE uses the decoder's expectation and FP/FN average `repeats` samples.
/// For the raw pipeline both the expectation and the samples are
/// rasterized from per-beam ranges first.
pub fn evaluate_reconstruction(
    vae: &Vae<f32>,
    ds: &Dataset,
    indices: &[usize],
    repeats: usize,
    rng: &mut Rng,
) -> Result<ReconReport> {
    use rand_distr::{Distribution, StandardNormal};

    let cfg: &VaeConfig = &vae.config;
    let image_cfg = cfg.image;
    let repeats = repeats.max(1);
    let mut report = ReconReport::default();
    let mut shape = vec![0];
    shape.extend(cfg.input_shape());
    for chunk in indices.chunks(32) {
        let scans: Vec<_> = chunk.iter().map(|&i| ds.scan(i)).collect();
        let mut data = Vec::with_capacity(chunk.len() * cfg.input_shape().iter().product::<usize>());
        for s in &scans {
            data.extend(scan_input(s, cfg)?);
        }
        shape[0] = chunk.len();
        let x = Tensor::from_vec(&shape, data)?;
        let z = vae.encode_mean(&x)?;
        for (j, scan) in scans.iter().enumerate() {
            let target = scan_to_local_image(&normalize_ranges(scan, image_cfg.max_range), &image_cfg)?;
            let zj = Tensor::from_vec(&[1, z.item_len()], z.item(j).to_vec())?;
            let (mut fp, mut fn_) = (0.0, 0.0);
            let mse = match cfg.pipeline {
                Pipeline::Image => {
                    let dist = vae.decode(&zj)?;
                    let probs: Vec<f64> = dist.probs().data().iter().map(|p| *p as f64).collect();
                    for _ in 0..repeats {
                        let s = dist.sample(rng);
                        fp += false_positives(&s, &target.pixels)? as f64;
                        fn_ += false_negatives(&s, &target.pixels)? as f64;
                    }
                    mse_expectation(&probs, &target.pixels)?
                }
                Pipeline::Raw => {
                    let g = vae.decode_raw(&zj)?;
                    let mean: Vec<f64> = g.mean.data().iter().map(|v| *v as f64).collect();
                    let std: Vec<f64> = g.raw_std.data().iter().map(|r| std_from_raw(*r as f64)).collect();
                    let span = scan.sensor.angle_span;
                    let expect = raw_mean_to_image(&mean, span, &image_cfg)?;
                    for _ in 0..repeats {
                        let sample: Vec<f64> = mean
                            .iter()
                            .zip(&std)
                            .map(|(m, s)| {
                                let e: f64 = StandardNormal.sample(rng);
                                m + s * e
                            })
                            .collect();
                        let img = raw_mean_to_image(&sample, span, &image_cfg)?;
                        fp += false_positives(&img.pixels, &target.pixels)? as f64;
                        fn_ += false_negatives(&img.pixels, &target.pixels)? as f64;
                    }
                    let probs: Vec<f64> = expect.pixels.iter().map(|p| *p as f64).collect();
                    mse_expectation(&probs, &target.pixels)?
                }
            };
            report.push(fp / repeats as f64, fn_ / repeats as f64, mse);
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    pub dof: f64,
    /// Two-sided.
    pub p: f64,
}

impl WelchResult {
    pub fn significant(&self, level: f64) -> bool {
        self.p < level
    }
}

pub const SIGNIFICANCE_LEVEL: f64 = 0.01;

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Welch's unequal-variance t-test with Welch-Satterthwaite degrees of
/// freedom and a two-sided p-value from the Student t tail.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Config("Welch's t-test needs at least two samples per group".into()));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let se2 = sa + sb;
    if !(se2 > 0.0) {
        return Err(Error::Config("both samples have zero variance".into()));
    }
    let t = (ma - mb) / se2.sqrt();
    let dof = se2 * se2 / (sa * sa / (a.len() as f64 - 1.0) + sb * sb / (b.len() as f64 - 1.0));
    // P(|T| >= |t|) = I_{dof / (dof + t^2)}(dof / 2, 1 / 2)
    let p = if t == 0.0 {
        1.0
    } else {
        statrs::function::beta::beta_reg(dof / 2.0, 0.5, dof / (dof + t * t))
    };
    Ok(WelchResult { t, dof, p })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng as _;

    #[test]
    fn counts_on_small_grids() {
        let ones = [1u8; 16];
        let zeros = [0u8; 16];
        assert_eq!(false_positives(&ones, &zeros).unwrap(), 16);
        assert_eq!(false_positives(&ones, &ones).unwrap(), 0);
        let mut t = [0u8; 16];
        t[..7].fill(1);
        assert_eq!(false_negatives(&zeros, &t).unwrap(), 7);
        assert_eq!(false_positives(&t, &zeros).unwrap(), false_negatives(&zeros, &t).unwrap());
        assert!(false_positives(&ones, &t[..4]).is_err());
    }

    #[test]
    fn mse_cases() {
        assert_eq!(mse_expectation(&[0.5], &[1]).unwrap(), 0.25);
        assert_eq!(mse_expectation(&[1.0, 0.0], &[1, 0]).unwrap(), 0.0);
    }

    #[test]
    fn fp_fn_expectation_matches_monte_carlo() {
        let mut rng = seeded(12);
        for _ in 0..10 {
            let n = 64;
            let p: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let t: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.2)).collect();
            let analytic: f64 = p.iter().zip(&t).map(|(p, t)| (p - *t as f64).abs()).sum();
            let mut total = 0.0;
            for _ in 0..100 {
                let s: Vec<u8> = p.iter().map(|p| u8::from(rng.random::<f64>() < *p)).collect();
                total += (false_positives(&s, &t).unwrap() + false_negatives(&s, &t).unwrap()) as f64;
            }
            let mc = total / 100.0;
            assert!((mc - analytic).abs() <= 0.05 * analytic, "{mc} vs {analytic}");
        }
    }

    #[test]
    fn welch_reference_case() {
        let r = welch_t_test(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 4.0, 6.0, 8.0, 10.0]).unwrap();
        assert!((r.t - -1.8973665961010275).abs() < 1e-9);
        assert!((r.dof - 5.882352941176471).abs() < 1e-9);
        assert!((r.p - 0.10753119493062718).abs() < 1e-9);
    }

    #[test]
    fn welch_symmetry_and_identity() {
        let a = [1.0, 2.5, 2.0, 4.0];
        let b = [3.0, 3.5, 5.0, 4.5, 6.0];
        let ab = welch_t_test(&a, &b).unwrap();
        let ba = welch_t_test(&b, &a).unwrap();
        assert_eq!(ab.t, -ba.t);
        assert!((ab.p - ba.p).abs() < 1e-15);
        let same = welch_t_test(&a, &a).unwrap();
        assert_eq!((same.t, same.p), (0.0, 1.0));
        assert!(welch_t_test(&[1.0, 1.0], &[2.0, 2.0]).is_err());
        assert!(welch_t_test(&[1.0], &[2.0, 3.0]).is_err());
    }
}
