//! Model checkpoint container.
//!
//! Byte layout (all integers little-endian):
//!
//! | offset | size | content                                   |
//! |--------|------|-------------------------------------------|
//! | 0      | 4    | magic `JSNN`                              |
//! | 4      | 4    | format version, `u32` (currently 1)       |
//! | 8      | 8    | header length `H` in bytes, `u64`         |
//! | 16     | H    | UTF-8 JSON header (see [`Header`])        |
//! | 16 + H | ...  | parameter values as `f64`, in header order |
//!
//! The header lists every network (name, layer graph, and for each parameter
//! its name, shape and frozen flag), plus the tag, training seed and free-form
//! metadata. Values follow network by network, parameter by parameter.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{NnError, Result};
use crate::layer::Graph;
use crate::network::Network;
use crate::params::ParamSet;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"JSNN";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedNetwork {
    pub name: String,
    pub network: Network<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub tag: String,
    pub seed: u64,
    pub meta: BTreeMap<String, serde_json::Value>,
    pub networks: Vec<NamedNetwork>,
}

#[derive(Serialize, Deserialize)]
struct ParamHeader {
    name: String,
    shape: Vec<usize>,
    frozen: bool,
}

#[derive(Serialize, Deserialize)]
struct NetworkHeader {
    name: String,
    graph: Graph,
    params: Vec<ParamHeader>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    tag: String,
    seed: u64,
    meta: BTreeMap<String, serde_json::Value>,
    networks: Vec<NetworkHeader>,
}

impl Checkpoint {
    pub fn new(tag: &str, seed: u64) -> Self {
        Checkpoint {
            tag: tag.to_string(),
            seed,
            meta: BTreeMap::new(),
            networks: Vec::new(),
        }
    }

    pub fn with_network(mut self, name: &str, network: Network<f64>) -> Self {
        self.networks.push(NamedNetwork {
            name: name.to_string(),
            network,
        });
        self
    }

    pub fn network(&self, name: &str) -> Result<&Network<f64>> {
        self.networks
            .iter()
            .find(|n| n.name == name)
            .map(|n| &n.network)
            .ok_or_else(|| NnError::Checkpoint(format!("checkpoint `{}` has no network `{name}`", self.tag)))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            tag: self.tag.clone(),
            seed: self.seed,
            meta: self.meta.clone(),
            networks: self
                .networks
                .iter()
                .map(|n| NetworkHeader {
                    name: n.name.clone(),
                    graph: n.network.graph().clone(),
                    params: n
                        .network
                        .params()
                        .iter()
                        .map(|p| ParamHeader {
                            name: p.name.clone(),
                            shape: p.value.shape().to_vec(),
                            frozen: p.frozen,
                        })
                        .collect(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + json.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for n in &self.networks {
            for p in n.network.params().iter() {
                for v in p.value.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| NnError::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[0..4] != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| NnError::Checkpoint(format!("header: {e}")))?;
        let mut cursor = 16 + hlen;
        let mut networks = Vec::new();
        for nh in header.networks {
            let mut params = ParamSet::new();
            for ph in nh.params {
                let n: usize = ph.shape.iter().product();
                let raw = bytes
                    .get(cursor..cursor + 8 * n)
                    .ok_or_else(|| bad("truncated parameter data"))?;
                cursor += 8 * n;
                let data = raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                params.insert(&ph.name, Tensor::new(ph.shape, data)?, ph.frozen)?;
            }
            networks.push(NamedNetwork {
                name: nh.name,
                network: Network::new(nh.graph, params)?,
            });
        }
        if cursor != bytes.len() {
            return Err(bad("trailing bytes after parameter data"));
        }
        Ok(Checkpoint {
            tag: header.tag,
            seed: header.seed,
            meta: header.meta,
            networks,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// SHA-256 of the serialized container, hex encoded.
    pub fn identity(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}
