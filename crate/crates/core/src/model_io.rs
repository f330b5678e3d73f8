//! Checkpoints.
//!
//! Layout: the magic `HNET`, a little-endian `u32` format version, a
//! little-endian `u64` header length, a UTF-8 JSON header and then every
//! layer's parameter vector as little-endian `f64`, in layer order. The
//! header records each layer's kind, shape and seeds, so hash tables, edge
//! masks and low-rank bases are regenerated on load; only trainable values
//! travel in the payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashing::HashSpec;
use crate::layers::{EdgeRemovedLayer, HashedLayer, HashedLayerConfig, Layer, LinearMap, LowRankLayer, StandardLayer};
use crate::math::Activation;
use crate::network::Network;

pub const MAGIC: &[u8; 4] = b"HNET";
pub const VERSION: u32 = 1;

/// Shape and seeds of one layer, without its trainable values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Standard {
        n_in: usize,
        n_out: usize,
    },
    Hashed {
        n_in: usize,
        n_out: usize,
        base_seed: u64,
        layer_index: u32,
        bucket_count: usize,
        config: HashedLayerConfig,
    },
    EdgeRemoved {
        n_in: usize,
        n_out: usize,
        keep_prob: f64,
        mask_seed: u64,
        mask_bias: bool,
    },
    LowRank {
        n_in: usize,
        n_out: usize,
        rank: usize,
        basis_seed: u64,
    },
}

impl LayerSpec {
    pub fn of(layer: &Layer) -> Self {
        let (n_in, n_out) = (layer.n_in(), layer.n_out());
        match layer {
            Layer::Standard(_) => LayerSpec::Standard { n_in, n_out },
            Layer::Hashed(h) => LayerSpec::Hashed {
                n_in,
                n_out,
                base_seed: h.spec().base_seed,
                layer_index: h.spec().layer_index,
                bucket_count: h.spec().bucket_count,
                config: *h.config(),
            },
            Layer::EdgeRemoved(e) => LayerSpec::EdgeRemoved {
                n_in,
                n_out,
                keep_prob: e.keep_prob(),
                mask_seed: e.mask_seed(),
                mask_bias: e.mask_bias(),
            },
            Layer::LowRank(r) => LayerSpec::LowRank {
                n_in,
                n_out,
                rank: r.rank(),
                basis_seed: r.basis_seed(),
            },
        }
    }

    /// Builds the layer with zero-valued parameters.
    pub fn build(&self) -> Result<Layer> {
        Ok(match *self {
            LayerSpec::Standard { n_in, n_out } => Layer::Standard(StandardLayer::new(n_in, n_out)),
            LayerSpec::Hashed { n_in, n_out, base_seed, layer_index, bucket_count, config } => Layer::Hashed(
                HashedLayer::with_config(n_in, n_out, HashSpec::new(base_seed, layer_index, bucket_count)?, config)?,
            ),
            LayerSpec::EdgeRemoved { n_in, n_out, keep_prob, mask_seed, mask_bias } => {
                Layer::EdgeRemoved(EdgeRemovedLayer::new(n_in, n_out, keep_prob, mask_seed, mask_bias)?)
            }
            LayerSpec::LowRank { n_in, n_out, rank, basis_seed } => {
                Layer::LowRank(LowRankLayer::new(n_in, n_out, rank, basis_seed)?)
            }
        })
    }

    fn build_with(&self, params: Vec<f64>) -> Result<Layer> {
        Ok(match *self {
            LayerSpec::Standard { n_in, n_out } => Layer::Standard(StandardLayer::from_raw(n_in, n_out, params)?),
            LayerSpec::Hashed { n_in, n_out, base_seed, layer_index, bucket_count, config } => {
                Layer::Hashed(HashedLayer::from_raw(
                    n_in,
                    n_out,
                    HashSpec::new(base_seed, layer_index, bucket_count)?,
                    config,
                    params,
                )?)
            }
            LayerSpec::EdgeRemoved { n_in, n_out, keep_prob, mask_seed, mask_bias } => Layer::EdgeRemoved(
                EdgeRemovedLayer::from_raw(n_in, n_out, keep_prob, mask_seed, mask_bias, params)?,
            ),
            LayerSpec::LowRank { n_in, n_out, rank, basis_seed } => {
                Layer::LowRank(LowRankLayer::from_raw(n_in, n_out, rank, basis_seed, params)?)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LayerEntry {
    #[serde(flatten)]
    spec: LayerSpec,
    /// Offset and length in the payload, counted in `f64` values.
    offset: usize,
    len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    widths: Vec<usize>,
    activations: Vec<Activation>,
    layers: Vec<LayerEntry>,
}

pub fn to_bytes(net: &Network) -> Result<Vec<u8>> {
    let mut offset = 0;
    let layers = net
        .layers()
        .iter()
        .map(|l| {
            let len = l.params().len();
            let e = LayerEntry { spec: LayerSpec::of(l), offset, len };
            offset += len;
            e
        })
        .collect();
    let header = Header {
        widths: net.widths(),
        activations: net.activations().to_vec(),
        layers,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + offset * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for l in net.layers() {
        for &w in l.params() {
            out.extend_from_slice(&w.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Network> {
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(Error::Format("not a checkpoint (missing HNET magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let payload_start = 16usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Format("header extends past end of file".into()))?;
    let header: Header = serde_json::from_slice(&bytes[16..payload_start])?;
    let payload = &bytes[payload_start..];
    if payload.len() % 8 != 0 {
        return Err(Error::Format("payload is not a whole number of f64 values".into()));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mut layers = Vec::with_capacity(header.layers.len());
    for e in &header.layers {
        let slice = values
            .get(e.offset..e.offset + e.len)
            .ok_or_else(|| Error::Format(format!("layer parameters at {}..{} out of range", e.offset, e.offset + e.len)))?;
        layers.push(e.spec.build_with(slice.to_vec())?);
    }
    let net = Network::with_activations(layers, header.activations)?;
    if net.widths() != header.widths {
        return Err(Error::Format("layer shapes disagree with recorded widths".into()));
    }
    Ok(net)
}

pub fn save(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(net)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mixed_net() -> Network {
        let specs = [
            LayerSpec::Hashed {
                n_in: 8,
                n_out: 6,
                base_seed: 11,
                layer_index: 0,
                bucket_count: 13,
                config: HashedLayerConfig::default(),
            },
            LayerSpec::EdgeRemoved { n_in: 6, n_out: 5, keep_prob: 0.5, mask_seed: 3, mask_bias: true },
            LayerSpec::LowRank { n_in: 5, n_out: 4, rank: 2, basis_seed: 8 },
            LayerSpec::Hashed {
                n_in: 4,
                n_out: 3,
                base_seed: 11,
                layer_index: 3,
                bucket_count: 5,
                config: HashedLayerConfig { hash_bias: false, ..Default::default() },
            },
            LayerSpec::Standard { n_in: 3, n_out: 2 },
        ];
        let layers = specs.iter().map(|s| s.build().unwrap()).collect();
        let mut net = Network::new(layers, Activation::Tanh).unwrap();
        net.init_weights(21);
        for l in net.layers_mut() {
            if let Layer::Hashed(h) = l {
                h.free_bias_mut().iter_mut().for_each(|b| *b = 0.25);
            }
        }
        net
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let net = mixed_net();
        let bytes = to_bytes(&net).unwrap();
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(to_bytes(&back).unwrap(), bytes);
        for (a, b) in net.layers().iter().zip(back.layers()) {
            assert_eq!(a.virtual_matrix(), b.virtual_matrix());
        }
    }

    #[test]
    fn rejects_corruption() {
        let bytes = to_bytes(&mixed_net()).unwrap();
        assert!(from_bytes(&bytes[..10]).is_err());
        assert!(from_bytes(&bytes[..bytes.len() - 8]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(from_bytes(&wrong).is_err());
    }
}
