//! Distribution heads: diagonal Gaussian (recognition model and raw-range
//! decoder) and independent Bernoulli over image pixels.

use rand_distr::{Distribution, StandardNormal};

use crate::nn::{Scalar, Tensor};
use crate::rng::Rng;

/// Raw std-head outputs are clamped to this range before `exp(0.5 * raw)`.
pub const RAW_STD_CLAMP: f64 = 10.0;

pub fn std_from_raw(raw: f64) -> f64 {
    (0.5 * raw.clamp(-RAW_STD_CLAMP, RAW_STD_CLAMP)).exp()
}

/// `d std / d raw`; zero where the clamp is active.
pub fn std_grad(raw: f64) -> f64 {
    if raw.abs() < RAW_STD_CLAMP {
        0.5 * std_from_raw(raw)
    } else {
        0.0
    }
}

/// KL(N(mean, diag(std^2)) || N(0, I)).
pub fn kl_diag_gaussian_to_std_normal(mean: &[f64], std: &[f64]) -> f64 {
    mean.iter()
        .zip(std)
        .map(|(m, s)| 0.5 * (m * m + s * s - 1.0 - 2.0 * s.ln()))
        .sum()
}

/// `-log Bernoulli(x | sigmoid(logit))`, stable for any logit.
pub fn bernoulli_nll(logit: f64, x: f64) -> f64 {
    logit.max(0.0) - logit * x + (-logit.abs()).exp().ln_1p()
}

pub fn sigmoid(l: f64) -> f64 {
    if l >= 0.0 {
        1.0 / (1.0 + (-l).exp())
    } else {
        let e = l.exp();
        e / (1.0 + e)
    }
}

/// `-log N(x | mean, std^2)`.
pub fn gaussian_nll(x: f64, mean: f64, std: f64) -> f64 {
    let d = (x - mean) / std;
    0.5 * (2.0 * std::f64::consts::PI).ln() + std.ln() + 0.5 * d * d
}

/// Batch of diagonal Gaussians, `[N, k]` each. The std is stored through
/// its raw head output so gradients can flow back to the network.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian<T: Scalar = f32> {
    pub mean: Tensor<T>,
    pub raw_std: Tensor<T>,
}

impl<T: Scalar> DiagGaussian<T> {
    /// Splits a `[N, 2k]` head output into mean (first k) and raw std.
    pub fn from_head(h: &Tensor<T>) -> Self {
        let (n, two_k) = (h.batch(), h.item_len());
        let k = two_k / 2;
        let mut mean = Vec::with_capacity(n * k);
        let mut raw = Vec::with_capacity(n * k);
        for i in 0..n {
            let row = h.item(i);
            mean.extend_from_slice(&row[..k]);
            raw.extend_from_slice(&row[k..]);
        }
        Self {
            mean: Tensor::from_vec(&[n, k], mean).expect("split shape"),
            raw_std: Tensor::from_vec(&[n, k], raw).expect("split shape"),
        }
    }

    pub fn batch(&self) -> usize {
        self.mean.batch()
    }

    pub fn dim(&self) -> usize {
        self.mean.item_len()
    }

    pub fn std(&self) -> Tensor<T> {
        let data = self.raw_std.data().iter().map(|r| T::of(std_from_raw(r.f64()))).collect();
        Tensor::from_vec(self.mean.shape(), data).expect("same shape")
    }

    /// Per-item KL to the standard normal prior.
    pub fn kl(&self) -> Vec<f64> {
        let k = self.dim();
        let std = self.std();
        (0..self.batch())
            .map(|i| {
                let m: Vec<f64> = self.mean.item(i).iter().map(|v| v.f64()).collect();
                let s: Vec<f64> = std.item(i).iter().map(|v| v.f64()).collect();
                debug_assert_eq!(m.len(), k);
                kl_diag_gaussian_to_std_normal(&m, &s)
            })
            .collect()
    }

    /// Standard-normal noise with the batch's shape, drawn row by row.
    pub fn draw_noise(&self, rng: &mut Rng) -> Tensor<T> {
        standard_normal(self.batch(), self.dim(), rng)
    }

    /// `mean + std * eps`.
    pub fn sample_with(&self, eps: &Tensor<T>) -> Tensor<T> {
        let data = self
            .mean
            .data()
            .iter()
            .zip(self.raw_std.data())
            .zip(eps.data())
            .map(|((m, r), e)| *m + T::of(std_from_raw(r.f64())) * *e)
            .collect();
        Tensor::from_vec(self.mean.shape(), data).expect("same shape")
    }
}

/// `[n, k]` standard-normal draws in row order.
pub fn standard_normal<T: Scalar>(n: usize, k: usize, rng: &mut Rng) -> Tensor<T> {
    let data = (0..n * k).map(|_| T::of(StandardNormal.sample(rng))).collect();
    Tensor::from_vec(&[n, k], data).expect("shape")
}

/// Reparameterized draw `z = mean + std * eps`, `eps ~ N(0, I)`.
pub fn reparameterized_sample<T: Scalar>(dist: &DiagGaussian<T>, rng: &mut Rng) -> Tensor<T> {
    let eps = dist.draw_noise(rng);
    dist.sample_with(&eps)
}

/// Independent Bernoulli over pixels, parametrized by logits.
#[derive(Debug, Clone, PartialEq)]
pub struct IndepBernoulli<T: Scalar = f32> {
    pub logits: Tensor<T>,
}

impl<T: Scalar> IndepBernoulli<T> {
    pub fn probs(&self) -> Tensor<T> {
        let data = self.logits.data().iter().map(|l| T::of(sigmoid(l.f64()))).collect();
        Tensor::from_vec(self.logits.shape(), data).expect("same shape")
    }

    /// One binary sample per pixel.
    pub fn sample(&self, rng: &mut Rng) -> Vec<u8> {
        use rand::Rng as _;
        self.logits
            .data()
            .iter()
            .map(|l| u8::from(rng.random::<f64>() < sigmoid(l.f64())))
            .collect()
    }

    /// Per-item negative log-likelihood of binary targets `x`.
    pub fn nll(&self, x: &Tensor<T>) -> Vec<f64> {
        let n = self.logits.batch();
        (0..n)
            .map(|i| {
                self.logits
                    .item(i)
                    .iter()
                    .zip(x.item(i))
                    .map(|(l, t)| bernoulli_nll(l.f64(), t.f64()))
                    .sum()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn kl_closed_form_cases() {
        assert_eq!(kl_diag_gaussian_to_std_normal(&[0.0, 0.0], &[1.0, 1.0]), 0.0);
        assert!((kl_diag_gaussian_to_std_normal(&[1.0], &[1.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn bernoulli_half_probability() {
        assert!((bernoulli_nll(0.0, 1.0) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((bernoulli_nll(0.0, 0.0) - std::f64::consts::LN_2).abs() < 1e-12);
        // large logits stay finite and accurate
        assert!(bernoulli_nll(800.0, 1.0).abs() < 1e-300);
        assert!((bernoulli_nll(-800.0, 1.0) - 800.0).abs() < 1e-9);
    }

    #[test]
    fn gaussian_nll_at_mean_unit_std() {
        let v = gaussian_nll(0.3, 0.3, 1.0);
        assert!((v - 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
    }

    #[test]
    fn std_is_positive_and_clamped() {
        assert!(std_from_raw(-1e9) > 0.0);
        assert_eq!(std_from_raw(50.0), std_from_raw(10.0));
        assert_eq!(std_grad(50.0), 0.0);
        assert!((std_grad(0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sample_matches_moments() {
        let mut rng = seeded(3);
        let n = 100_000;
        let mean = Tensor::<f64>::filled(&[n, 1], 0.7);
        let raw_std = Tensor::<f64>::filled(&[n, 1], (0.4f64).ln() * 2.0);
        let d = DiagGaussian { mean, raw_std };
        let z = reparameterized_sample(&d, &mut rng);
        let m = z.data().iter().sum::<f64>() / n as f64;
        let var = z.data().iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se_mean = 0.4 / (n as f64).sqrt();
        assert!((m - 0.7).abs() < 3.0 * se_mean, "{m}");
        // std error of the sample variance is sigma^2 * sqrt(2/(n-1))
        let se_var = 0.16 * (2.0 / (n - 1) as f64).sqrt();
        assert!((var - 0.16).abs() < 3.0 * se_var, "{var}");
    }

    #[test]
    fn clamped_std_sample_is_mean() {
        let mut rng = seeded(1);
        let d = DiagGaussian {
            mean: Tensor::<f64>::filled(&[1, 3], 0.25),
            raw_std: Tensor::<f64>::filled(&[1, 3], -1e6),
        };
        for v in reparameterized_sample(&d, &mut rng).data() {
            assert!((v - 0.25).abs() < 0.05);
        }
    }

    #[test]
    fn same_seed_same_sample() {
        let d = DiagGaussian {
            mean: Tensor::<f32>::zeros(&[2, 4]),
            raw_std: Tensor::<f32>::zeros(&[2, 4]),
        };
        assert_eq!(
            reparameterized_sample(&d, &mut seeded(9)),
            reparameterized_sample(&d, &mut seeded(9))
        );
    }
}
