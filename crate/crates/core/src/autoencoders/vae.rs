//! The two autoencoding pipelines sharing one training loop: the image
//! beta-VAE (Bernoulli pixels) and the raw-range baseline (Gaussian beams).

use serde::{Deserialize, Serialize};

use super::arch;
use super::dist::{standard_normal, bernoulli_nll, gaussian_nll, sigmoid, std_from_raw, std_grad, DiagGaussian, IndepBernoulli};
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, GraphSpec, Mode, Network, Scalar, Tensor};
use crate::preprocess::ImageConfig;
use crate::rng::Rng;
use crate::world::Environment;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    /// Occupancy image in, Bernoulli pixels out.
    Image,
    /// Normalized ranges in, Gaussian per beam out.
    Raw,
}

impl std::fmt::Display for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Pipeline::Image => "image",
            Pipeline::Raw => "raw",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeConfig {
    pub pipeline: Pipeline,
    pub latent_dim: usize,
    pub beta: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Rasterization settings; `max_range` also normalizes raw ranges.
    pub image: ImageConfig,
    /// Full-depth image graph (two stride-2 convs after the average pool).
    pub full_graph: bool,
    pub beam_count: usize,
}

impl VaeConfig {
    pub fn latent_dim_for(env: Environment) -> usize {
        match env {
            Environment::Simple => 16,
            Environment::Main => 32,
        }
    }

    /// Full-scale settings: 320 px, full graph, lr 1e-4.
    pub fn full(pipeline: Pipeline, env: Environment) -> Self {
        Self {
            pipeline,
            latent_dim: Self::latent_dim_for(env),
            beta: 1.0,
            lr: 1e-4,
            batch_size: 64,
            epochs: 50,
            image: ImageConfig::full(),
            full_graph: true,
            beam_count: 720,
        }
    }

    /// Desk-scale settings: 128 px, compact graph, fewer epochs with a
    /// larger step size.
    pub fn desk(pipeline: Pipeline, env: Environment) -> Self {
        Self {
            lr: 1e-3,
            epochs: 20,
            image: ImageConfig::desk(),
            full_graph: false,
            ..Self::full(pipeline, env)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be at least 1".into()));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::Config(format!("beta must be non-negative, got {}", self.beta)));
        }
        if !(self.lr > 0.0) || self.batch_size < 2 {
            return Err(Error::Config("lr must be positive and batch_size at least 2".into()));
        }
        self.image.validate()
    }

    pub fn input_shape(&self) -> Vec<usize> {
        match self.pipeline {
            Pipeline::Image => vec![1, self.image.resolution_px, self.image.resolution_px],
            Pipeline::Raw => vec![1, self.beam_count],
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig::with_lr(self.lr)
    }
}

/// Batch means of the objective and its two terms.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ElboParts {
    pub loss: f64,
    pub recon: f64,
    pub kl: f64,
}

#[derive(Debug, Clone)]
pub struct Vae<T: Scalar = f32> {
    pub config: VaeConfig,
    pub encoder: Network<T>,
    pub decoder: Network<T>,
}

impl<T: Scalar> Vae<T> {
    pub fn new(config: VaeConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let k = config.latent_dim;
        let (enc, dec) = match config.pipeline {
            Pipeline::Image => (
                arch::image_encoder(config.image.resolution_px, k, config.full_graph)?,
                arch::image_decoder(config.image.resolution_px, k, config.full_graph)?,
            ),
            Pipeline::Raw => (
                arch::raw_encoder(config.beam_count, k)?,
                arch::raw_decoder(config.beam_count, k)?,
            ),
        };
        let encoder = Network::new(enc, "encoder.", rng)?;
        let decoder = Network::new(dec, "decoder.", rng)?;
        Ok(Self {
            config,
            encoder,
            decoder,
        })
    }

    /// Custom graphs, e.g. small networks for gradient checks. The encoder
    /// must emit `2k` values and the decoder accept `k`.
    pub fn from_graphs(config: VaeConfig, enc: GraphSpec, dec: GraphSpec, rng: &mut Rng) -> Result<Self> {
        let encoder = Network::new(enc, "encoder.", rng)?;
        let decoder = Network::new(dec, "decoder.", rng)?;
        if encoder.output_shape() != [2 * config.latent_dim] || decoder.input_shape() != [config.latent_dim] {
            return Err(Error::shape("vae", "encoder/decoder do not match the latent dimension"));
        }
        Ok(Self {
            config,
            encoder,
            decoder,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    /// Recognition model in evaluation mode.
    pub fn encode(&self, x: &Tensor<T>) -> Result<DiagGaussian<T>> {
        Ok(DiagGaussian::from_head(&self.encoder.infer(x)?))
    }

    /// Latent means, the state representation used downstream.
    pub fn encode_mean(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.encode(x)?.mean)
    }

    fn check_latent(&self, z: &Tensor<T>) -> Result<()> {
        if z.shape().len() != 2 || z.shape()[1] != self.latent_dim() {
            return Err(Error::shape(
                "decode",
                format!("expected [N, {}] latents, got {:?}", self.latent_dim(), z.shape()),
            ));
        }
        Ok(())
    }

    /// Generative model of the image pipeline.
    pub fn decode(&self, z: &Tensor<T>) -> Result<IndepBernoulli<T>> {
        if self.config.pipeline != Pipeline::Image {
            return Err(Error::Config("decode needs the image pipeline".into()));
        }
        self.check_latent(z)?;
        Ok(IndepBernoulli {
            logits: self.decoder.infer(z)?,
        })
    }

    /// Generative model of the raw pipeline: a Gaussian per beam, `[N, beams]`.
    pub fn decode_raw(&self, z: &Tensor<T>) -> Result<DiagGaussian<T>> {
        if self.config.pipeline != Pipeline::Raw {
            return Err(Error::Config("decode_raw needs the raw pipeline".into()));
        }
        self.check_latent(z)?;
        Ok(split_raw_output(&self.decoder.infer(z)?))
    }

    /// Objective for a fixed noise draw, without touching gradients.
    pub fn loss_with_noise(&self, x: &Tensor<T>, beta: f64, eps: &Tensor<T>, mode: Mode) -> Result<ElboParts> {
        let h = self.encoder.apply(x, mode)?;
        let q = DiagGaussian::from_head(&h);
        let z = q.sample_with(eps);
        let out = self.decoder.apply(&z, mode)?;
        let (recon, _) = self.recon_terms(&out, x, false)?;
        finish_parts(&recon, &q.kl(), beta)
    }

    /// `elbo_loss`: one reparameterized sample per item, evaluation-mode
    /// batch norm.
    pub fn elbo_loss(&self, x: &Tensor<T>, beta: f64, rng: &mut Rng) -> Result<ElboParts> {
        let eps = standard_normal(x.batch(), self.latent_dim(), rng);
        self.loss_with_noise(x, beta, &eps, Mode::Eval)
    }

    /// Train-mode forward and backward for a fixed noise draw; gradients
    /// accumulate into both networks' parameter stores.
    pub fn backprop_with_noise(&mut self, x: &Tensor<T>, beta: f64, eps: &Tensor<T>) -> Result<ElboParts> {
        let n = x.batch();
        let h = self.encoder.forward(x, Mode::Train)?;
        let q = DiagGaussian::from_head(&h);
        let z = q.sample_with(eps);
        let out = self.decoder.forward(&z, Mode::Train)?;
        let (recon, dout) = self.recon_terms(&out, x, true)?;
        let parts = finish_parts(&recon, &q.kl(), beta)?;
        let dz = self.decoder.backward(&dout)?;
        let k = self.latent_dim();
        let inv_n = 1.0 / n as f64;
        let mut dh = vec![T::zero(); n * 2 * k];
        for i in 0..n {
            for j in 0..k {
                let m = q.mean.item(i)[j].f64();
                let r = q.raw_std.item(i)[j].f64();
                let s = std_from_raw(r);
                let dzv = dz.item(i)[j].f64();
                let e = eps.item(i)[j].f64();
                dh[i * 2 * k + j] = T::of(dzv + beta * m * inv_n);
                let dkl_ds = s - 1.0 / s;
                dh[i * 2 * k + k + j] = T::of((dzv * e + beta * dkl_ds * inv_n) * std_grad(r));
            }
        }
        self.encoder.backward(&Tensor::from_vec(&[n, 2 * k], dh)?)?;
        Ok(parts)
    }

    /// One optimizer step on a batch.
    pub fn train_step(&mut self, x: &Tensor<T>, beta: f64, adam: &AdamConfig, rng: &mut Rng) -> Result<ElboParts> {
        let eps = standard_normal(x.batch(), self.latent_dim(), rng);
        self.encoder.zero_grad();
        self.decoder.zero_grad();
        let parts = self.backprop_with_noise(x, beta, &eps)?;
        self.encoder.params.adam(adam)?;
        self.decoder.params.adam(adam)?;
        Ok(parts)
    }

    /// Per-item reconstruction NLL and, if asked, its gradient w.r.t. the
    /// decoder output scaled by 1/N.
    fn recon_terms(&self, out: &Tensor<T>, x: &Tensor<T>, grad: bool) -> Result<(Vec<f64>, Tensor<T>)> {
        let n = out.batch();
        let inv_n = 1.0 / n as f64;
        let mut recon = vec![0.0; n];
        let mut d = if grad { vec![T::zero(); out.len()] } else { Vec::new() };
        match self.config.pipeline {
            Pipeline::Image => {
                if out.shape() != x.shape() {
                    return Err(Error::shape(
                        "reconstruction",
                        format!("decoder output {:?} vs input {:?}", out.shape(), x.shape()),
                    ));
                }
                for (i, r) in recon.iter_mut().enumerate() {
                    let off = i * out.item_len();
                    for (j, (l, t)) in out.item(i).iter().zip(x.item(i)).enumerate() {
                        let (l, t) = (l.f64(), t.f64());
                        *r += bernoulli_nll(l, t);
                        if grad {
                            d[off + j] = T::of((sigmoid(l) - t) * inv_n);
                        }
                    }
                }
            }
            Pipeline::Raw => {
                let beams = x.item_len();
                if out.item_len() != 2 * beams || out.batch() != x.batch() {
                    return Err(Error::shape(
                        "reconstruction",
                        format!("decoder output {:?} vs input {:?}", out.shape(), x.shape()),
                    ));
                }
                for (i, r) in recon.iter_mut().enumerate() {
                    let o = out.item(i);
                    let off = i * 2 * beams;
                    for (b, t) in x.item(i).iter().enumerate() {
                        let (mu, raw, t) = (o[b].f64(), o[beams + b].f64(), t.f64());
                        let s = std_from_raw(raw);
                        *r += gaussian_nll(t, mu, s);
                        if grad {
                            let diff = t - mu;
                            d[off + b] = T::of(-diff / (s * s) * inv_n);
                            let dnll_ds = 1.0 / s - diff * diff / (s * s * s);
                            d[off + beams + b] = T::of(dnll_ds * std_grad(raw) * inv_n);
                        }
                    }
                }
            }
        }
        let d = if grad {
            Tensor::from_vec(out.shape(), d)?
        } else {
            Tensor::zeros(&[0])
        };
        Ok((recon, d))
    }
}

/// `[N, 2, beams]` decoder output -> per-beam Gaussian `[N, beams]`.
pub fn split_raw_output<T: Scalar>(out: &Tensor<T>) -> DiagGaussian<T> {
    let n = out.batch();
    let beams = out.item_len() / 2;
    let mut mean = Vec::with_capacity(n * beams);
    let mut raw = Vec::with_capacity(n * beams);
    for i in 0..n {
        let o = out.item(i);
        mean.extend_from_slice(&o[..beams]);
        raw.extend_from_slice(&o[beams..]);
    }
    DiagGaussian {
        mean: Tensor::from_vec(&[n, beams], mean).expect("split shape"),
        raw_std: Tensor::from_vec(&[n, beams], raw).expect("split shape"),
    }
}

fn finish_parts(recon: &[f64], kl: &[f64], beta: f64) -> Result<ElboParts> {
    let n = recon.len() as f64;
    let recon = recon.iter().sum::<f64>() / n;
    let kl = kl.iter().sum::<f64>() / n;
    let loss = recon + beta * kl;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("loss {loss} (recon {recon}, kl {kl})")));
    }
    Ok(ElboParts { loss, recon, kl })
}

#[cfg(test)]
mod tests {
    use super::super::dist::standard_normal;
    use super::super::gradcheck::*;
    use super::*;
    use crate::rng::seeded;
    use rand::Rng as _;

    #[test]
    fn image_elbo_gradient_matches_finite_differences() {
        let r = check_image_elbo(31).unwrap();
        assert!(r.passes(ELBO_TOL) && r.checked > 50, "{r:?}");
    }

    #[test]
    fn raw_elbo_gradient_matches_finite_differences() {
        let r = check_raw_elbo(32).unwrap();
        assert!(r.passes(ELBO_TOL) && r.checked > 50, "{r:?}");
    }

    #[test]
    fn loss_is_affine_in_beta() {
        let mut rng = seeded(4);
        let mut vae = tiny_image_vae(3, &mut rng).unwrap();
        scramble(&mut vae, &mut rng);
        let x = image_batch(4, &mut rng);
        let eps = standard_normal::<f64>(4, 3, &mut rng);
        let l0 = vae.loss_with_noise(&x, 0.0, &eps, Mode::Eval).unwrap();
        let l1 = vae.loss_with_noise(&x, 1.0, &eps, Mode::Eval).unwrap();
        let l3 = vae.loss_with_noise(&x, 3.0, &eps, Mode::Eval).unwrap();
        assert_eq!(l0.loss, l0.recon);
        assert!(l1.kl >= 0.0 && l1.recon >= 0.0);
        assert!((l3.loss - l1.loss - 2.0 * l1.kl).abs() < 1e-9);
    }

    #[test]
    fn raw_recon_at_perfect_mean_unit_std() {
        let mut rng = seeded(5);
        let vae = tiny_raw_vae(2, &mut rng).unwrap();
        let x = raw_batch(2, &mut rng);
        // decoder output: mean = target, raw std head 0 -> std 1
        let mut out = vec![0.0; 2 * 24];
        for i in 0..2 {
            out[i * 24..i * 24 + 12].copy_from_slice(x.item(i));
        }
        let out = Tensor::from_vec(&[2, 2, 12], out).unwrap();
        let (recon, _) = vae.recon_terms(&out, &x, false).unwrap();
        let expect = 0.5 * (2.0 * std::f64::consts::PI).ln() * 12.0;
        for r in recon {
            assert!((r - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn one_pixel_half_probability() {
        let mut rng = seeded(5);
        let vae = tiny_image_vae(2, &mut rng).unwrap();
        let out = Tensor::<f64>::zeros(&[1, 1, 8, 8]);
        let mut x = Tensor::<f64>::zeros(&[1, 1, 8, 8]);
        x.data_mut()[10] = 1.0;
        let (recon, _) = vae.recon_terms(&out, &x, false).unwrap();
        assert!((recon[0] - 64.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn encode_decode_contracts() {
        let mut rng = seeded(6);
        let cfg = VaeConfig {
            image: ImageConfig {
                resolution_px: 64,
                ..ImageConfig::desk()
            },
            ..VaeConfig::desk(Pipeline::Image, Environment::Simple)
        };
        let vae = Vae::<f32>::new(cfg, &mut rng).unwrap();
        let x = Tensor::<f32>::zeros(&[2, 1, 64, 64]);
        let q = vae.encode(&x).unwrap();
        assert_eq!(q.mean.shape(), &[2, 16]);
        assert!(q.std().data().iter().all(|s| *s > 0.0));
        assert_eq!(vae.encode(&x).unwrap(), q);
        let z0 = Tensor::<f32>::zeros(&[1, 16]);
        let p = vae.decode(&z0).unwrap().probs();
        assert_eq!(p.shape(), &[1, 1, 64, 64]);
        assert!(p.data().iter().all(|v| *v > 0.0 && *v < 1.0));
        // bounded change for a small latent step
        let mut z1 = z0.clone();
        z1.data_mut()[0] = 1e-3;
        let l0 = vae.decode(&z0).unwrap().logits;
        let l1 = vae.decode(&z1).unwrap().logits;
        let max_diff = l0.data().iter().zip(l1.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
        assert!(max_diff < 1e-2, "{max_diff}");
        assert!(vae.decode(&Tensor::zeros(&[1, 3])).is_err());
        assert!(vae.decode_raw(&z0).is_err());
    }

    #[test]
    fn raw_pipeline_contracts() {
        let mut rng = seeded(7);
        let vae = Vae::<f32>::new(VaeConfig::desk(Pipeline::Raw, Environment::Main), &mut rng).unwrap();
        let x = Tensor::<f32>::filled(&[2, 1, 720], 0.4);
        assert_eq!(vae.encode(&x).unwrap().mean.shape(), &[2, 32]);
        let g = vae.decode_raw(&Tensor::zeros(&[2, 32])).unwrap();
        assert_eq!(g.mean.shape(), &[2, 720]);
        assert!(g.std().data().iter().all(|s| *s > 0.0));
        let parts = vae.elbo_loss(&x, 1.0, &mut rng).unwrap();
        assert!(parts.loss.is_finite());
    }

    #[test]
    fn raw_conv_stack_is_shift_equivariant() {
        // four stride-2 circular blocks: a 16-beam input shift moves the
        // features by exactly one position
        let mut rng = seeded(8);
        let mut spec = arch::raw_encoder(720, 4).unwrap();
        spec.layers.truncate(4);
        let net = Network::<f64>::new(spec, "", &mut rng).unwrap();
        let x: Vec<f64> = (0..720).map(|_| rng.random::<f64>()).collect();
        let shifted: Vec<f64> = (0..720).map(|i| x[(i + 720 - 16) % 720]).collect();
        let a = net.infer(&Tensor::from_vec(&[1, 1, 720], x).unwrap()).unwrap();
        let b = net.infer(&Tensor::from_vec(&[1, 1, 720], shifted).unwrap()).unwrap();
        let (c, l) = (a.shape()[1], a.shape()[2]);
        assert_eq!(l, 45);
        for ch in 0..c {
            for j in 0..l {
                let va = a.data()[ch * l + j];
                let vb = b.data()[ch * l + (j + 1) % l];
                assert!((va - vb).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn training_reduces_loss_on_tiny_data() {
        let mut rng = seeded(9);
        let mut vae = tiny_image_vae(2, &mut rng).unwrap();
        vae.config.lr = 1e-2;
        let x = image_batch(8, &mut rng);
        let adam = vae.config.adam();
        let first = vae.train_step(&x, 1.0, &adam, &mut rng).unwrap().loss;
        let mut last = first;
        for _ in 0..60 {
            last = vae.train_step(&x, 1.0, &adam, &mut rng).unwrap().loss;
        }
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn config_presets() {
        assert_eq!(VaeConfig::desk(Pipeline::Image, Environment::Simple).latent_dim, 16);
        assert_eq!(VaeConfig::full(Pipeline::Image, Environment::Main).latent_dim, 32);
        let mut bad = VaeConfig::desk(Pipeline::Raw, Environment::Simple);
        bad.beta = -1.0;
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }
}
