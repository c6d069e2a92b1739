use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::data::VaeInputs;
use super::vae::Vae;
use crate::error::{Error, Result};
use crate::nn::Scalar;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub recon: f64,
    pub kl: f64,
}

/// Minibatch Adam over shuffled data for `config.epochs` epochs. A final
/// batch of one item is skipped (batch norm needs two). On a non-finite
/// loss the parameters are rolled back to the end of the last good epoch
/// and the error is returned. Afterwards the encoder's batch-norm running
/// statistics are recomputed over the training data in fixed order.
pub fn train_vae<T: Scalar>(
    vae: &mut Vae<T>,
    data: &VaeInputs,
    rng: &mut Rng,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if data.item_shape != vae.config.input_shape() {
        return Err(Error::shape(
            "train_vae",
            format!("data items {:?} vs network input {:?}", data.item_shape, vae.config.input_shape()),
        ));
    }
    let adam = vae.config.adam();
    let beta = vae.config.beta;
    let bs = vae.config.batch_size;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(vae.config.epochs);
    for epoch in 0..vae.config.epochs {
        let good = (vae.encoder.params.clone(), vae.decoder.params.clone());
        order.shuffle(rng);
        let (mut sum, mut batches) = ([0.0; 3], 0usize);
        for idx in order.chunks(bs).filter(|c| c.len() >= 2) {
            let x = data.batch::<T>(idx);
            match vae.train_step(&x, beta, &adam, rng) {
                Ok(p) => {
                    sum[0] += p.loss;
                    sum[1] += p.recon;
                    sum[2] += p.kl;
                    batches += 1;
                }
                Err(e @ Error::NonFinite(_)) => {
                    vae.encoder.params = good.0;
                    vae.decoder.params = good.1;
                    vae.encoder.clear_tape();
                    vae.decoder.clear_tape();
                    return Err(Error::NonFinite(format!("epoch {epoch}: {e}")));
                }
                Err(e) => return Err(e),
            }
        }
        let b = batches.max(1) as f64;
        let entry = EpochLog {
            epoch,
            loss: sum[0] / b,
            recon: sum[1] / b,
            kl: sum[2] / b,
        };
        on_epoch(&entry);
        log.push(entry);
    }
    let all: Vec<usize> = (0..data.len()).collect();
    vae.encoder
        .recalibrate_batch_norm(all.chunks(bs).filter(|c| c.len() >= 2).map(|c| data.batch::<T>(c)))?;
    Ok(log)
}
