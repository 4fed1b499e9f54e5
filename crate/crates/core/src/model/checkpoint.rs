//! Binary checkpoint container.
//!
//! Layout: magic `DNAFCKPT`, `u32` format version, `u64` header length,
//! a JSON header (model config, element type, named tensor shapes, optional
//! training state), then the little-endian payload: parameters, followed by
//! the Adam first and second moments when present.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::linalg::Real;
use super::params::{ModelConfig, ModelParams, ParamLayout, ParamSpec};
use crate::error::{Error, Result};
use crate::train::adam::AdamState;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"DNAFCKPT";

/// Progress counters restored on resume.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainState {
    pub epochs_done: usize,
    pub step: u64,
}

#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub params: ModelParams<T>,
    pub adam: Option<AdamState<T>>,
    pub train_state: Option<TrainState>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    dtype: String,
    tensors: Vec<ParamSpec>,
    adam_step: Option<u64>,
    train_state: Option<TrainState>,
}

fn elem_size(dtype: &str) -> Result<usize> {
    match dtype {
        "f32" => Ok(4),
        "f64" => Ok(8),
        other => Err(Error::Checkpoint(format!("unsupported dtype `{other}`"))),
    }
}

fn put<T: Real>(out: &mut Vec<u8>, values: &[T]) {
    for v in values {
        if T::DTYPE == "f32" {
            out.extend_from_slice(&v.to_f32().unwrap().to_le_bytes());
        } else {
            out.extend_from_slice(&v.to_f64().unwrap().to_le_bytes());
        }
    }
}

fn take<T: Real>(bytes: &[u8], dtype: &str) -> Vec<T> {
    if dtype == "f32" {
        bytes
            .chunks_exact(4)
            .map(|b| T::lit(f32::from_le_bytes(b.try_into().unwrap()) as f64))
            .collect()
    } else {
        bytes
            .chunks_exact(8)
            .map(|b| T::lit(f64::from_le_bytes(b.try_into().unwrap())))
            .collect()
    }
}

pub fn encode_checkpoint<T: Real>(ckpt: &Checkpoint<T>) -> Result<Vec<u8>> {
    let header = Header {
        config: ckpt.params.config.clone(),
        dtype: T::DTYPE.to_string(),
        tensors: ckpt.params.layout.specs.clone(),
        adam_step: ckpt.adam.as_ref().map(|a| a.step),
        train_state: ckpt.train_state,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(20 + json.len() + ckpt.params.len() * 3 * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    put(&mut out, &ckpt.params.data);
    if let Some(adam) = &ckpt.adam {
        put(&mut out, &adam.m);
        put(&mut out, &adam.v);
    }
    Ok(out)
}

pub fn decode_checkpoint<T: Real>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = &bytes[20..];
    if body.len() < hlen {
        return Err(bad("truncated header"));
    }
    let header: Header = serde_json::from_slice(&body[..hlen])?;
    header.config.validate()?;
    let layout = ParamLayout::new(&header.config);
    if layout.specs.len() != header.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, found {}",
            layout.specs.len(),
            header.tensors.len()
        )));
    }
    for (want, got) in layout.specs.iter().zip(&header.tensors) {
        if want.name != got.name {
            return Err(Error::Checkpoint(format!(
                "tensor `{}` found where `{}` was expected",
                got.name, want.name
            )));
        }
        if want.shape != got.shape || want.offset != got.offset {
            return Err(Error::ShapeMismatch {
                what: want.name.clone(),
                expected: want.shape.clone(),
                actual: got.shape.clone(),
            });
        }
    }
    let es = elem_size(&header.dtype)?;
    let n = layout.total;
    let payload = &body[hlen..];
    let arrays = if header.adam_step.is_some() { 3 } else { 1 };
    if payload.len() != arrays * n * es {
        return Err(Error::Checkpoint(format!(
            "payload holds {} bytes, expected {}",
            payload.len(),
            arrays * n * es
        )));
    }
    let data = take::<T>(&payload[..n * es], &header.dtype);
    let adam = header.adam_step.map(|step| AdamState {
        m: take(&payload[n * es..2 * n * es], &header.dtype),
        v: take(&payload[2 * n * es..], &header.dtype),
        step,
    });
    let params = ModelParams {
        config: header.config,
        layout,
        data,
    };
    if !super::linalg::all_finite(&params.data) {
        return Err(bad("non-finite parameter values"));
    }
    Ok(Checkpoint {
        params,
        adam,
        train_state: header.train_state,
    })
}

pub fn save_checkpoint<T: Real>(path: &Path, ckpt: &Checkpoint<T>) -> Result<()> {
    let bytes = encode_checkpoint(ckpt)?;
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            input_len: 10,
            output_len: 8,
            d_model: 8,
            kernel_sizes: vec![3, 5],
            depth_multiplier: 2,
            n_blocks: 1,
            n_heads: 2,
            d_ff: 16,
            seed: 3,
        }
    }

    #[test]
    fn round_trip_with_optimizer_state() {
        let params = ModelParams::<f32>::init(tiny()).unwrap();
        let n = params.len();
        let ckpt = Checkpoint {
            adam: Some(AdamState {
                m: (0..n).map(|i| i as f32 * 1e-3).collect(),
                v: vec![0.5; n],
                step: 17,
            }),
            params,
            train_state: Some(TrainState {
                epochs_done: 2,
                step: 17,
            }),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ckpt");
        save_checkpoint(&path, &ckpt).unwrap();
        let back: Checkpoint<f32> = load_checkpoint(&path).unwrap();
        assert_eq!(back.params.data, ckpt.params.data);
        assert_eq!(back.params.config, ckpt.params.config);
        let (a, b) = (back.adam.unwrap(), ckpt.adam.unwrap());
        assert_eq!((a.m, a.v, a.step), (b.m, b.v, b.step));
        assert_eq!(back.train_state, ckpt.train_state);
        // Converting on load keeps values exactly (f32 ⊂ f64).
        let wide: Checkpoint<f64> = load_checkpoint(&path).unwrap();
        assert_eq!(wide.params.data[5], back.params.data[5] as f64);
    }

    #[test]
    fn rejects_corrupted_shapes() {
        let params = ModelParams::<f32>::init(tiny()).unwrap();
        let ckpt = Checkpoint {
            params,
            adam: None,
            train_state: None,
        };
        let bytes = encode_checkpoint(&ckpt).unwrap();
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let header = std::str::from_utf8(&bytes[20..20 + hlen]).unwrap();
        let patched = header.replacen("\"shape\":[8,4]", "\"shape\":[4,8]", 1);
        assert_ne!(patched, header);
        let mut bad = bytes[..20].to_vec();
        bad.extend_from_slice(patched.as_bytes());
        bad.extend_from_slice(&bytes[20 + hlen..]);
        assert!(matches!(
            decode_checkpoint::<f32>(&bad),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(decode_checkpoint::<f32>(&bytes[..bytes.len() - 4]).is_err());
        assert!(decode_checkpoint::<f32>(b"garbage").is_err());
    }
}
