//! Checkpoint archive.
//!
//! Layout: the 8-byte magic `HVCKPT01`, a little-endian `u64` header length,
//! a JSON header `{"config","fingerprint","step","params":[{"name","shape"}]}`,
//! then every parameter's values as little-endian `f64` in header order.

use std::collections::BTreeMap;
use std::path::Path;

use holivid_core::model::ModelConfig;
use holivid_core::tensor::Tensor;
use holivid_core::train::Checkpoint;
use serde::{Deserialize, Serialize};

use super::{read_bytes, write_atomic};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"HVCKPT01";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    fingerprint: String,
    step: u64,
    params: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let header = Header {
        config: ck.config.clone(),
        fingerprint: ck.fingerprint.clone(),
        step: ck.step,
        params: ck
            .params
            .iter()
            .map(|(name, t)| Entry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("serialisable header");
    let n: usize = ck.params.values().map(Tensor::len).sum();
    let mut out = Vec::with_capacity(16 + json.len() + 8 * n);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in ck.params.values() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(path: &Path, bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::format(path, "not a checkpoint archive"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes
        .get(16..16usize.saturating_add(hlen))
        .ok_or_else(|| Error::format(path, "truncated header"))?;
    let header: Header =
        serde_json::from_slice(body).map_err(|e| Error::format(path, format!("bad header: {e}")))?;
    let mut data = &bytes[16 + hlen..];
    let mut params = BTreeMap::new();
    for e in header.params {
        let n: usize = e.shape.iter().product();
        if data.len() < 8 * n {
            return Err(Error::format(path, format!("truncated data for {}", e.name)));
        }
        let values = data[..8 * n]
            .chunks(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        data = &data[8 * n..];
        params.insert(e.name, Tensor::from_vec(&e.shape, values)?);
    }
    if !data.is_empty() {
        return Err(Error::format(path, format!("{} trailing bytes", data.len())));
    }
    Ok(Checkpoint {
        config: header.config,
        params,
        fingerprint: header.fingerprint,
        step: header.step,
    })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    write_atomic(path, &encode_checkpoint(ck))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(path, &read_bytes(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use holivid_core::model::{Mode, Network};
    use holivid_core::taxonomy::Taxonomy;

    #[test]
    fn round_trip_reproduces_forward_bitwise() {
        let tax = Taxonomy::with_counts([1, 1, 1, 1, 1, 1]);
        let net = Network::new(ModelConfig::tiny(Mode::Hatnet, 4, &tax), 3).unwrap();
        let ck = Checkpoint::from_network(&net, "f00d", 12);
        let bytes = encode_checkpoint(&ck);
        let back = decode_checkpoint(Path::new("c"), &bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(encode_checkpoint(&back), bytes);
        let mut x = Tensor::zeros(&[1, 3, 4, 32, 32]);
        x.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v = (i % 7) as f64 / 7.0);
        assert_eq!(net.forward(&x).unwrap(), back.to_network().unwrap().forward(&x).unwrap());
    }

    #[test]
    fn corrupt_archives_are_rejected() {
        let tax = Taxonomy::with_counts([1, 0, 0, 0, 0, 0]);
        let net = Network::new(ModelConfig::tiny(Mode::Resnet3d, 4, &tax), 0).unwrap();
        let bytes = encode_checkpoint(&Checkpoint::from_network(&net, "", 0));
        let p = Path::new("c");
        assert!(decode_checkpoint(p, b"nonsense").is_err());
        assert!(decode_checkpoint(p, &bytes[..bytes.len() - 3]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_checkpoint(p, &extra).is_err());
    }
}
