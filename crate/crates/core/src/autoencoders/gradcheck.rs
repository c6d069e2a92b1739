//! Finite-difference checks of both ELBO objectives on tiny networks.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::dist::standard_normal;
use super::vae::{Pipeline, Vae, VaeConfig};
use crate::error::Result;
use crate::nn::gradcheck::GradReport;
use crate::nn::{GraphSpec, LayerSpec, Mode, Padding, ParamId, ParameterStore, Tensor};
use crate::rng::{seeded, Rng};
use crate::world::Environment;

pub const ELBO_EPS: f64 = 1e-4;
pub const ELBO_TOL: f64 = 1e-3;

/// 8x8 image VAE with batch norm, pooling and transposed convs.
pub fn tiny_image_vae(k: usize, rng: &mut Rng) -> Result<Vae<f64>> {
    let mut cfg = VaeConfig::desk(Pipeline::Image, Environment::Simple);
    cfg.latent_dim = k;
    let enc = GraphSpec {
        input_shape: vec![1, 8, 8],
        layers: vec![
            LayerSpec::conv2d(2, 3, 2).bn().relu(),
            LayerSpec::max_pool2d(2),
            LayerSpec::flatten(),
            LayerSpec::dense(4).relu(),
            LayerSpec::dense(2 * k),
        ],
    };
    let dec = GraphSpec {
        input_shape: vec![k],
        layers: vec![
            LayerSpec::dense(8).relu(),
            LayerSpec::reshape(&[2, 2, 2]),
            LayerSpec::conv_transpose2d(2, 3, 2, [4, 4]).relu(),
            LayerSpec::conv_transpose2d(2, 3, 2, [8, 8]).relu(),
            LayerSpec::conv2d(1, 3, 1),
        ],
    };
    Vae::from_graphs(cfg, enc, dec, rng)
}

/// 12-beam raw VAE with circular convs.
pub fn tiny_raw_vae(k: usize, rng: &mut Rng) -> Result<Vae<f64>> {
    let mut cfg = VaeConfig::desk(Pipeline::Raw, Environment::Simple);
    cfg.latent_dim = k;
    cfg.beam_count = 12;
    let enc = GraphSpec {
        input_shape: vec![1, 12],
        layers: vec![
            LayerSpec::conv1d(3, 5, 2, Padding::Circular).bn().relu(),
            LayerSpec::flatten(),
            LayerSpec::dense(2 * k),
        ],
    };
    let dec = GraphSpec {
        input_shape: vec![k],
        layers: vec![
            LayerSpec::dense(18).relu(),
            LayerSpec::reshape(&[3, 6]),
            LayerSpec::conv_transpose1d(2, 5, 2, 12, Padding::Circular).relu(),
            LayerSpec::conv1d(2, 5, 1, Padding::Circular),
        ],
    };
    Vae::from_graphs(cfg, enc, dec, rng)
}

/// Redraws every trainable weight from N(0, 0.25).
pub fn scramble(vae: &mut Vae<f64>, rng: &mut Rng) {
    for p in vae.encoder.params.iter_mut().chain(vae.decoder.params.iter_mut()) {
        if p.trainable {
            for v in p.value.data_mut() {
                let u: f64 = StandardNormal.sample(rng);
                *v = 0.5 * u;
            }
        }
    }
}

pub fn image_batch(n: usize, rng: &mut Rng) -> Tensor<f64> {
    let data = (0..n * 64).map(|_| f64::from(rng.random::<f64>() < 0.3)).collect();
    Tensor::from_vec(&[n, 1, 8, 8], data).expect("shape matches data")
}

pub fn raw_batch(n: usize, rng: &mut Rng) -> Tensor<f64> {
    let data = (0..n * 12).map(|_| rng.random::<f64>()).collect();
    Tensor::from_vec(&[n, 1, 12], data).expect("shape matches data")
}

fn store(vae: &mut Vae<f64>, net: usize) -> &mut ParameterStore<f64> {
    if net == 0 {
        &mut vae.encoder.params
    } else {
        &mut vae.decoder.params
    }
}

/// Analytic ELBO gradients for every trainable parameter of both networks
/// against central differences, for one fixed noise draw.
pub fn elbo_grad_check(mut vae: Vae<f64>, x: &Tensor<f64>, beta: f64, rng: &mut Rng) -> Result<GradReport> {
    scramble(&mut vae, rng);
    let eps = standard_normal::<f64>(x.batch(), vae.latent_dim(), rng);
    vae.encoder.zero_grad();
    vae.decoder.zero_grad();
    vae.backprop_with_noise(x, beta, &eps)?;
    let h = ELBO_EPS;
    let mut report = GradReport::new();
    for net in 0..2 {
        for pi in 0..store(&mut vae, net).len() {
            let id = ParamId(pi);
            if !store(&mut vae, net).get(id).trainable {
                continue;
            }
            let grad = store(&mut vae, net).get(id).grad.clone();
            for (i, g) in grad.iter().enumerate() {
                let orig = store(&mut vae, net).get(id).value.data()[i];
                store(&mut vae, net).get_mut(id).value.data_mut()[i] = orig + h;
                let lp = vae.loss_with_noise(x, beta, &eps, Mode::Train)?.loss;
                store(&mut vae, net).get_mut(id).value.data_mut()[i] = orig - h;
                let lm = vae.loss_with_noise(x, beta, &eps, Mode::Train)?.loss;
                store(&mut vae, net).get_mut(id).value.data_mut()[i] = orig;
                let name = store(&mut vae, net).get(id).name.clone();
                report.record(|| format!("{name}[{i}]"), *g, (lp - lm) / (2.0 * h));
            }
        }
    }
    Ok(report)
}

/// Image ELBO with beta 3 on a batch of three random binary images.
pub fn check_image_elbo(seed: u64) -> Result<GradReport> {
    let mut rng = seeded(seed);
    let vae = tiny_image_vae(2, &mut rng)?;
    let x = image_batch(3, &mut rng);
    elbo_grad_check(vae, &x, 3.0, &mut rng)
}

/// Raw-range ELBO with beta 1 on a batch of three random scans.
pub fn check_raw_elbo(seed: u64) -> Result<GradReport> {
    let mut rng = seeded(seed);
    let vae = tiny_raw_vae(2, &mut rng)?;
    let x = raw_batch(3, &mut rng);
    elbo_grad_check(vae, &x, 1.0, &mut rng)
}
