//! `NNCK` checkpoints: a JSON header holding the run configuration and,
//! per network, its graph and parameter layout; then every parameter's
//! f32 values in header order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::binary::{expect_eof, read_f32s, read_header, write_f32s, write_header};
use crate::autoencoders::{Vae, VaeConfig};
use crate::error::{Error, Result};
use crate::nn::{GraphSpec, Network};
use crate::rl::Td3Agent;
use crate::rng::seeded;

const MAGIC: &[u8; 4] = b"NNCK";
pub const VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Serialize, Deserialize)]
struct NetEntry {
    role: String,
    prefix: String,
    graph: GraphSpec,
    params: Vec<ParamEntry>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    config: serde_json::Value,
    /// Adam moments are not stored; resumed training restarts them.
    optimizer_state: bool,
    networks: Vec<NetEntry>,
}

pub struct LoadedCheckpoint {
    pub kind: String,
    pub config: serde_json::Value,
    pub networks: Vec<(String, Network<f32>)>,
}

impl LoadedCheckpoint {
    pub fn take(&mut self, role: &str) -> Result<Network<f32>> {
        let i = self
            .networks
            .iter()
            .position(|(r, _)| r == role)
            .ok_or_else(|| Error::Format(format!("checkpoint has no '{role}' network")))?;
        Ok(self.networks.remove(i).1)
    }
}

fn prefix_of(net: &Network<f32>) -> String {
    // parameter names are "{prefix}{layer}.{part}"
    net.params.iter().next().map_or(String::new(), |p| {
        let head = p.name.split('.').next().unwrap_or("");
        if head.chars().all(|c| c.is_ascii_digit()) {
            String::new()
        } else {
            format!("{head}.")
        }
    })
}

/// `networks` pairs a role name with each network.
pub fn save_checkpoint(
    w: &mut impl Write,
    kind: &str,
    config: &serde_json::Value,
    networks: &[(&str, &Network<f32>)],
) -> Result<()> {
    let header = Header {
        kind: kind.to_string(),
        config: config.clone(),
        optimizer_state: false,
        networks: networks
            .iter()
            .map(|(role, net)| NetEntry {
                role: role.to_string(),
                prefix: prefix_of(net),
                graph: net.spec().clone(),
                params: net
                    .params
                    .iter()
                    .map(|p| ParamEntry {
                        name: p.name.clone(),
                        shape: p.value.shape().to_vec(),
                        trainable: p.trainable,
                    })
                    .collect(),
            })
            .collect(),
    };
    write_header(w, MAGIC, VERSION, &serde_json::to_value(&header)?)?;
    for (_, net) in networks {
        for p in net.params.iter() {
            write_f32s(w, p.value.data())?;
        }
    }
    Ok(())
}

pub fn load_checkpoint(r: &mut impl Read) -> Result<LoadedCheckpoint> {
    let header: Header = serde_json::from_value(read_header(r, MAGIC, VERSION)?)?;
    let mut networks = Vec::with_capacity(header.networks.len());
    for entry in header.networks {
        let mut net = Network::<f32>::new(entry.graph, &entry.prefix, &mut seeded(0))
            .map_err(|e| Error::Format(format!("network '{}': {e}", entry.role)))?;
        if net.params.len() != entry.params.len() {
            return Err(Error::Format(format!("network '{}': parameter count differs from its graph", entry.role)));
        }
        for (p, meta) in net.params.iter_mut().zip(&entry.params) {
            if p.name != meta.name || p.value.shape() != meta.shape.as_slice() || p.trainable != meta.trainable {
                return Err(Error::Format(format!(
                    "network '{}': parameter '{}' does not match the graph",
                    entry.role, meta.name
                )));
            }
            let values = read_f32s(r, p.value.len())?;
            p.value.data_mut().copy_from_slice(&values);
        }
        networks.push((entry.role, net));
    }
    expect_eof(r)?;
    Ok(LoadedCheckpoint {
        kind: header.kind,
        config: header.config,
        networks,
    })
}

fn save_to(path: &Path, kind: &str, config: &serde_json::Value, networks: &[(&str, &Network<f32>)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    save_checkpoint(&mut w, kind, config, networks)?;
    w.flush()?;
    Ok(())
}

fn load_kind(path: &Path, kind: &str) -> Result<LoadedCheckpoint> {
    let ck = load_checkpoint(&mut BufReader::new(File::open(path)?))?;
    if ck.kind != kind {
        return Err(Error::Format(format!(
            "{} holds a '{}' checkpoint, expected '{kind}'",
            path.display(),
            ck.kind
        )));
    }
    Ok(ck)
}

pub fn save_vae(path: &Path, vae: &Vae<f32>) -> Result<()> {
    save_to(
        path,
        "vae",
        &serde_json::to_value(&vae.config)?,
        &[("encoder", &vae.encoder), ("decoder", &vae.decoder)],
    )
}

pub fn load_vae(path: &Path) -> Result<Vae<f32>> {
    let mut ck = load_kind(path, "vae")?;
    let config: VaeConfig = serde_json::from_value(ck.config.clone())?;
    let encoder = ck.take("encoder")?;
    let decoder = ck.take("decoder")?;
    if encoder.input_shape() != config.input_shape().as_slice() || encoder.output_shape() != [2 * config.latent_dim] {
        return Err(Error::Format("encoder graph does not match the stored configuration".into()));
    }
    Ok(Vae {
        config,
        encoder,
        decoder,
    })
}

/// Saves all six networks; `config` is free-form run metadata.
pub fn save_agent(path: &Path, agent: &Td3Agent<f32>, config: &serde_json::Value) -> Result<()> {
    let meta = serde_json::json!({ "max_action": agent.max_action, "updates": agent.updates, "run": config });
    save_to(
        path,
        "td3",
        &meta,
        &[
            ("actor", &agent.actor),
            ("critic1", &agent.critic1),
            ("critic2", &agent.critic2),
            ("actor_target", &agent.actor_target),
            ("critic1_target", &agent.critic1_target),
            ("critic2_target", &agent.critic2_target),
        ],
    )
}

pub fn load_agent(path: &Path) -> Result<(Td3Agent<f32>, serde_json::Value)> {
    let mut ck = load_kind(path, "td3")?;
    let max_action = ck.config["max_action"]
        .as_f64()
        .ok_or_else(|| Error::Format("agent checkpoint lacks max_action".into()))?;
    let mut agent = Td3Agent::from_networks(ck.take("actor")?, ck.take("critic1")?, ck.take("critic2")?, max_action)?;
    agent.actor_target = ck.take("actor_target")?;
    agent.critic1_target = ck.take("critic1_target")?;
    agent.critic2_target = ck.take("critic2_target")?;
    agent.updates = ck.config["updates"].as_u64().unwrap_or(0);
    Ok((agent, ck.config["run"].clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoencoders::Pipeline;
    use crate::world::Environment;

    fn bytes_of(vae: &Vae<f32>) -> Vec<u8> {
        let mut v = Vec::new();
        save_checkpoint(
            &mut v,
            "vae",
            &serde_json::to_value(&vae.config).unwrap(),
            &[("encoder", &vae.encoder), ("decoder", &vae.decoder)],
        )
        .unwrap();
        v
    }

    #[test]
    fn vae_roundtrip_is_bitwise() {
        let mut cfg = VaeConfig::desk(Pipeline::Raw, Environment::Simple);
        cfg.beam_count = 64;
        let vae: Vae<f32> = Vae::new(cfg, &mut seeded(4)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.nnck");
        save_vae(&path, &vae).unwrap();
        let back = load_vae(&path).unwrap();
        assert_eq!(back.encoder.digest(), vae.encoder.digest());
        assert_eq!(back.decoder.digest(), vae.decoder.digest());
        assert_eq!(bytes_of(&back), std::fs::read(&path).unwrap());
        assert!(load_agent(&path).is_err());
    }

    #[test]
    fn agent_roundtrip() {
        let mut agent: Td3Agent<f32> = Td3Agent::new(5, 8, 2.0, &mut seeded(1)).unwrap();
        agent.critic1_target.params.iter_mut().next().unwrap().value.data_mut()[0] = 0.125;
        agent.updates = 17;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.nnck");
        save_agent(&path, &agent, &serde_json::json!({"seed": 3})).unwrap();
        let (back, run) = load_agent(&path).unwrap();
        assert_eq!(run["seed"], 3);
        assert_eq!(back.updates, 17);
        for (a, b) in [
            (&agent.actor, &back.actor),
            (&agent.critic1_target, &back.critic1_target),
            (&agent.critic2, &back.critic2),
        ] {
            assert_eq!(a.digest(), b.digest());
        }
    }

    #[test]
    fn unknown_version_rejected() {
        let vae: Vae<f32> = Vae::new(
            VaeConfig {
                beam_count: 32,
                ..VaeConfig::desk(Pipeline::Raw, Environment::Simple)
            },
            &mut seeded(4),
        )
        .unwrap();
        let mut b = bytes_of(&vae);
        b[4..6].copy_from_slice(&9u16.to_le_bytes());
        let err = load_checkpoint(&mut b.as_slice()).err().unwrap().to_string();
        assert!(err.contains("unsupported NNCK version 9"), "{err}");
    }
}
