//! Desk-scale experiment recipes shared by the command-line tool and the
//! acceptance run.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autoencoders::{train_vae, EpochLog, Pipeline, Vae, VaeConfig, VaeInputs};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_reconstruction, welch_t_test, ReconReport, WelchResult};
use crate::rl::{train_agent, EpochRecord, NavConfig, NavEnv, Td3Config, TrainedAgent};
use crate::rng::{derive_seed, derived};
use crate::world::{Dataset, Environment};

/// Rooms at the end of a desk dataset that are never trained on.
pub const DESK_HELD_OUT_ROOMS: usize = 10;
/// More rooms are held out until the held-out set has this many scans.
pub const DESK_MIN_HELD_OUT_SCANS: usize = 500;
/// Training images drawn from the remaining rooms.
pub const DESK_TRAIN_SCANS: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub held_out: Vec<usize>,
}

/// Room-disjoint split: at least the last `held_out_rooms` rooms are held
/// out, more while the held-out set is below `min_held_out` scans, and at
/// most `max_train` scans are sampled from the other rooms.
pub fn split_dataset(ds: &Dataset, held_out_rooms: usize, min_held_out: usize, max_train: usize, seed: u64) -> Result<Split> {
    let room_of = ds.room_of_scans();
    let rooms = room_of.last().map_or(0, |r| r + 1);
    if held_out_rooms == 0 || held_out_rooms >= rooms {
        return Err(Error::Config(format!(
            "cannot hold out {held_out_rooms} of {rooms} rooms"
        )));
    }
    let mut first = rooms - held_out_rooms;
    while first > 1 && room_of.iter().filter(|&&r| r >= first).count() < min_held_out {
        first -= 1;
    }
    let (mut train, held_out) = ds.split_by_room(first);
    if train.len() > max_train {
        train.shuffle(&mut derived(seed, 0x5917));
        train.truncate(max_train);
        train.sort_unstable();
    }
    Ok(Split { train, held_out })
}

/// Builds and trains one pipeline on `indices` of `ds`.
pub fn train_autoencoder(
    ds: &Dataset,
    indices: &[usize],
    cfg: VaeConfig,
    seed: u64,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<(Vae<f32>, Vec<EpochLog>)> {
    let mut cfg = cfg;
    if cfg.pipeline == Pipeline::Raw {
        cfg.beam_count = ds.beam_count();
    }
    let mut vae = Vae::new(cfg, &mut derived(seed, 1))?;
    let data = VaeInputs::from_dataset(ds, indices, &vae.config)?;
    let log = train_vae(&mut vae, &data, &mut derived(seed, 2), on_epoch)?;
    Ok((vae, log))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconComparison {
    pub image: ReconReport,
    pub raw: ReconReport,
    /// Welch tests image vs raw on per-scan values.
    pub mse_test: WelchResult,
    pub fp_test: WelchResult,
    pub fn_test: WelchResult,
}

/// Decoder samples averaged per scan for FP/FN.
pub const RECON_SAMPLES: usize = 4;

pub fn compare_reconstruction(image: &Vae<f32>, raw: &Vae<f32>, ds: &Dataset, indices: &[usize], seed: u64) -> Result<ReconComparison> {
    let image_r = evaluate_reconstruction(image, ds, indices, RECON_SAMPLES, &mut derived(seed, 21))?;
    let raw_r = evaluate_reconstruction(raw, ds, indices, RECON_SAMPLES, &mut derived(seed, 22))?;
    Ok(ReconComparison {
        mse_test: welch_t_test(&image_r.per_scan_mse, &raw_r.per_scan_mse)?,
        fp_test: welch_t_test(&image_r.per_scan_fp, &raw_r.per_scan_fp)?,
        fn_test: welch_t_test(&image_r.per_scan_fn, &raw_r.per_scan_fn)?,
        image: image_r,
        raw: raw_r,
    })
}

/// Agent input pipelines compared in the navigation experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RlSetup {
    /// Randomly initialized, never trained raw encoder.
    NoPretrain,
    RawAe,
    ImageVae,
}

impl RlSetup {
    pub const ALL: [RlSetup; 3] = [RlSetup::NoPretrain, RlSetup::RawAe, RlSetup::ImageVae];

    pub fn name(self) -> &'static str {
        match self {
            RlSetup::NoPretrain => "no_pretrain",
            RlSetup::RawAe => "raw_ae",
            RlSetup::ImageVae => "image_vae",
        }
    }
}

impl std::str::FromStr for RlSetup {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        RlSetup::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown setup '{s}' (expected no_pretrain|raw_ae|image_vae)")))
    }
}

/// The frozen random encoder of the no-pretraining baseline.
pub fn untrained_raw_encoder(env: Environment, beam_count: usize, seed: u64) -> Result<Vae<f32>> {
    let cfg = VaeConfig {
        beam_count,
        ..VaeConfig::desk(Pipeline::Raw, env)
    };
    Vae::new(cfg, &mut derived(seed, 0xBA5E))
}

/// One trial; trials of a run use disjoint derived seeds.
pub fn run_rl_trial(
    encoder: &Vae<f32>,
    nav: &NavConfig,
    td3: &Td3Config,
    seed: u64,
    trial: usize,
    eval_seed: u64,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainedAgent> {
    let mut env = NavEnv::new(nav.clone(), encoder)?;
    train_agent(&mut env, td3, derive_seed(seed, 1000 + trial as u64), eval_seed, on_epoch)
}

/// Gray-level input and reconstruction of one scan for visual checks:
/// the input image as 0/255 and the decoded expectation of the latent
/// mean (pixel probabilities for images, the rasterized mean ranges for
/// the raw pipeline).
pub fn reconstruction_pair(vae: &Vae<f32>, scan: &crate::world::LidarScan) -> Result<(Vec<u8>, Vec<u8>)> {
    use crate::autoencoders::{raw_mean_to_image, scan_input};
    use crate::nn::Tensor;
    use crate::preprocess::{normalize_ranges, scan_to_local_image};

    let cfg = &vae.config;
    let target = scan_to_local_image(&normalize_ranges(scan, cfg.image.max_range), &cfg.image)?;
    let mut shape = vec![1];
    shape.extend(cfg.input_shape());
    let z = vae.encode_mean(&Tensor::from_vec(&shape, scan_input(scan, cfg)?)?)?;
    let recon = match cfg.pipeline {
        Pipeline::Image => crate::io::probability_map(
            &vae.decode(&z)?.probs().data().iter().map(|p| *p as f64).collect::<Vec<_>>(),
        ),
        Pipeline::Raw => {
            let mean: Vec<f64> = vae.decode_raw(&z)?.mean.data().iter().map(|v| *v as f64).collect();
            let img = raw_mean_to_image(&mean, scan.sensor.angle_span, &cfg.image)?;
            img.pixels.iter().map(|p| p * 255).collect()
        }
    };
    Ok((target.pixels.iter().map(|p| p * 255).collect(), recon))
}
