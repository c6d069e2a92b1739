//! Encoder/decoder graphs for both pipelines.

use crate::error::{Error, Result};
use crate::nn::{GraphSpec, LayerSpec, Padding};

/// Image encoder. The full graph has two stride-2 convs after the average
/// pool (total downsampling 64, e.g. 320 -> 5); the compact graph drops the
/// last one (total 32, e.g. 128 -> 4).
pub fn image_encoder(resolution: usize, latent_dim: usize, full: bool) -> Result<GraphSpec> {
    image_factor(resolution, full)?;
    let mut layers = vec![
        LayerSpec::conv2d(32, 3, 2).bn().relu(),
        LayerSpec::max_pool2d(2),
        LayerSpec::conv2d(32, 3, 2).bn().relu(),
        LayerSpec::conv2d(64, 3, 1).bn().relu(),
        LayerSpec::avg_pool2d(2),
        LayerSpec::conv2d(128, 3, 2).bn().relu(),
    ];
    if full {
        layers.push(LayerSpec::conv2d(128, 3, 2).bn().relu());
    }
    layers.extend([
        LayerSpec::flatten(),
        LayerSpec::dense(256).relu(),
        LayerSpec::dense(2 * latent_dim),
    ]);
    Ok(GraphSpec {
        input_shape: vec![1, resolution, resolution],
        layers,
    })
}

/// Image decoder producing `[1, resolution, resolution]` logits.
pub fn image_decoder(resolution: usize, latent_dim: usize, full: bool) -> Result<GraphSpec> {
    let s = resolution / image_factor(resolution, full)?;
    let filters: &[usize] = if full {
        &[128, 64, 64, 32, 32, 32]
    } else {
        &[128, 64, 64, 32, 32]
    };
    let mut layers = vec![
        LayerSpec::dense(256).relu(),
        LayerSpec::dense(s * s * 128).relu(),
        LayerSpec::reshape(&[128, s, s]),
    ];
    let mut size = s;
    for &f in filters {
        size *= 2;
        layers.push(LayerSpec::conv_transpose2d(f, 3, 2, [size, size]).relu());
    }
    layers.push(LayerSpec::conv2d(1, 3, 1));
    Ok(GraphSpec {
        input_shape: vec![latent_dim],
        layers,
    })
}

fn image_factor(resolution: usize, full: bool) -> Result<usize> {
    let factor = if full { 64 } else { 32 };
    if resolution == 0 || resolution % factor != 0 {
        return Err(Error::Config(format!(
            "image resolution {resolution} must be a positive multiple of {factor} for this graph"
        )));
    }
    Ok(factor)
}

pub const RAW_FILTERS: [usize; 5] = [32, 32, 64, 128, 128];
pub const RAW_KERNEL: usize = 5;

/// Lengths after each stride-2 stage: `[L, ceil(L/2), ...]`.
fn raw_lengths(beams: usize) -> Vec<usize> {
    let mut lens = vec![beams];
    for _ in RAW_FILTERS {
        let l = *lens.last().unwrap();
        lens.push(l.div_ceil(2));
    }
    lens
}

/// Baseline encoder over `[1, beams]` normalized ranges: five circular
/// conv blocks with preceding batch norm, then dense(256) and dense(2k).
pub fn raw_encoder(beams: usize, latent_dim: usize) -> Result<GraphSpec> {
    if beams < 2 {
        return Err(Error::Config("raw pipeline needs at least 2 beams".into()));
    }
    let mut layers: Vec<LayerSpec> = RAW_FILTERS
        .iter()
        .map(|&f| LayerSpec::conv1d(f, RAW_KERNEL, 2, Padding::Circular).bn().relu())
        .collect();
    layers.extend([
        LayerSpec::flatten(),
        LayerSpec::dense(256).relu(),
        LayerSpec::dense(2 * latent_dim),
    ]);
    Ok(GraphSpec {
        input_shape: vec![1, beams],
        layers,
    })
}

/// Mirrored decoder; output `[2, beams]`: channel 0 is the per-beam mean,
/// channel 1 the raw std head.
pub fn raw_decoder(beams: usize, latent_dim: usize) -> Result<GraphSpec> {
    if beams < 2 {
        return Err(Error::Config("raw pipeline needs at least 2 beams".into()));
    }
    let lens = raw_lengths(beams);
    let bottom = *lens.last().unwrap();
    let mut layers = vec![
        LayerSpec::dense(256).relu(),
        LayerSpec::dense(bottom * 128).relu(),
        LayerSpec::reshape(&[128, bottom]),
    ];
    for (i, &f) in RAW_FILTERS.iter().rev().enumerate() {
        let out_len = lens[lens.len() - 2 - i];
        layers.push(LayerSpec::conv_transpose1d(f, RAW_KERNEL, 2, out_len, Padding::Circular).relu());
    }
    layers.push(LayerSpec::conv1d(2, RAW_KERNEL, 1, Padding::Circular));
    Ok(GraphSpec {
        input_shape: vec![latent_dim],
        layers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Network;
    use crate::rng::seeded;

    #[test]
    fn full_scale_image_graph_shapes() {
        let enc = Network::<f32>::new(image_encoder(320, 16, true).unwrap(), "e", &mut seeded(0)).unwrap();
        let shapes = enc.layer_output_shapes();
        assert_eq!(shapes[0], vec![32, 160, 160]);
        assert_eq!(shapes[1], vec![32, 80, 80]);
        assert_eq!(shapes[4], vec![64, 20, 20]);
        assert_eq!(shapes[6], vec![128, 5, 5]);
        assert_eq!(shapes[7], vec![3200]);
        assert_eq!(enc.output_shape(), &[32]);
        let dec = Network::<f32>::new(image_decoder(320, 16, true).unwrap(), "d", &mut seeded(0)).unwrap();
        assert_eq!(dec.layer_output_shapes()[2], vec![128, 5, 5]);
        assert_eq!(dec.output_shape(), &[1, 320, 320]);
    }

    #[test]
    fn compact_image_graph_shapes() {
        let enc = Network::<f32>::new(image_encoder(128, 16, false).unwrap(), "e", &mut seeded(0)).unwrap();
        assert_eq!(enc.layer_output_shapes()[5], vec![128, 4, 4]);
        assert_eq!(enc.output_shape(), &[32]);
        let dec = Network::<f32>::new(image_decoder(128, 32, false).unwrap(), "d", &mut seeded(0)).unwrap();
        assert_eq!(dec.input_shape(), &[32]);
        assert_eq!(dec.output_shape(), &[1, 128, 128]);
        assert!(image_encoder(100, 16, false).is_err());
    }

    #[test]
    fn raw_graph_shapes() {
        assert_eq!(raw_lengths(720), vec![720, 360, 180, 90, 45, 23]);
        let enc = Network::<f32>::new(raw_encoder(720, 16).unwrap(), "e", &mut seeded(0)).unwrap();
        assert_eq!(enc.layer_output_shapes()[4], vec![128, 23]);
        assert_eq!(enc.output_shape(), &[32]);
        let dec = Network::<f32>::new(raw_decoder(720, 16).unwrap(), "d", &mut seeded(0)).unwrap();
        assert_eq!(dec.output_shape(), &[2, 720]);
        let odd = Network::<f32>::new(raw_decoder(37, 4).unwrap(), "d", &mut seeded(0)).unwrap();
        assert_eq!(odd.output_shape(), &[2, 37]);
    }
}
