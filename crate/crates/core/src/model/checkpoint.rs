//! Checkpoint files: one JSON header line, then every parameter tensor as
//! little-endian `f32` in storage order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::io::{decode_f32_payload, encode_f32_payload};
use crate::matrix::Matrix;

const FORMAT: &str = "stepalign-checkpoint";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    config: ModelConfig,
    step: u64,
    seed: u64,
    shapes: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub step: u64,
    pub seed: u64,
}

pub fn encode_checkpoint(params: &ModelParams, step: u64, seed: u64) -> Vec<u8> {
    let header = Header {
        format: FORMAT.into(),
        version: FORMAT_VERSION,
        config: params.config().clone(),
        step,
        seed,
        shapes: params.tensors().iter().map(Matrix::shape).collect(),
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    for t in params.tensors() {
        encode_f32_payload(t.as_slice(), &mut out);
    }
    out
}

pub fn save_checkpoint(path: impl AsRef<Path>, params: &ModelParams, step: u64, seed: u64) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(params, step, seed)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::InvalidData(format!("{}: missing checkpoint header", path.display())))?;
    let header: Header = serde_json::from_slice(&bytes[..split]).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    if header.format != FORMAT || header.version != FORMAT_VERSION {
        return Err(Error::InvalidData(format!(
            "{}: not a version {FORMAT_VERSION} checkpoint",
            path.display()
        )));
    }
    let payload = &bytes[split + 1..];
    let expected: usize = header.shapes.iter().map(|(r, c)| 4 * r * c).sum();
    if payload.len() != expected {
        return Err(Error::TruncatedPayload {
            path: path.to_path_buf(),
            expected: split + 1 + expected,
            found: bytes.len(),
        });
    }
    let mut offset = 0;
    let mut tensors = Vec::with_capacity(header.shapes.len());
    for &(r, c) in &header.shapes {
        let len = 4 * r * c;
        let values = decode_f32_payload(&payload[offset..offset + len]);
        tensors.push(Matrix::from_vec(r, c, values)?);
        offset += len;
    }
    Ok(Checkpoint {
        params: ModelParams::from_tensors(header.config, tensors)?,
        step: header.step,
        seed: header.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reload_is_bit_exact_at_f32() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = ModelParams::init(ModelConfig::default(), &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &params, 42, 7).unwrap();
        let ck = load_checkpoint(&path).unwrap();
        assert_eq!((ck.step, ck.seed), (42, 7));
        for (a, b) in params.tensors().iter().zip(ck.params.tensors()) {
            let rounded = a.map(|x| x as f32 as f64);
            assert_eq!(&rounded, b);
        }
        // saving the reloaded parameters reproduces the file
        let again = dir.path().join("again.ckpt");
        save_checkpoint(&again, &ck.params, 42, 7).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());
    }

    #[test]
    fn truncated_checkpoint_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = ModelParams::init(ModelConfig::default(), &mut rng).unwrap();
        let mut bytes = encode_checkpoint(&params, 0, 0);
        bytes.truncate(bytes.len() - 4);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        fs::write(&path, bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::TruncatedPayload { .. })));
    }
}
