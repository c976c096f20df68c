//! Binary checkpoint format: magic string, config block, then named
//! parameter blobs as little-endian f64 with explicit shapes. Loading
//! against a mismatched config is an error.

use super::tensor::Tensor;
use super::{ModelConfig, ModelDims, ModelParams};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use thiserror::Error;

const MAGIC: &[u8; 8] = b"NARKCKP1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
}

fn write_u64(w: &mut impl Write, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_f64(w: &mut impl Write, v: f64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    write_u64(w, s.len() as u64)?;
    w.write_all(s.as_bytes())
}

fn read_u64(r: &mut impl Read) -> Result<u64, CheckpointError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64(r: &mut impl Read) -> Result<f64, CheckpointError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

fn read_str(r: &mut impl Read) -> Result<String, CheckpointError> {
    let len = read_u64(r)? as usize;
    if len > 1 << 20 {
        return Err(CheckpointError::Corrupt(format!("string of {len} bytes")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| CheckpointError::Corrupt(e.to_string()))
}

fn config_fields(config: &ModelConfig, dims: ModelDims) -> Vec<(&'static str, f64)> {
    vec![
        ("d_model", config.d_model as f64),
        ("n_heads", config.n_heads as f64),
        ("encoder_layers", config.encoder_layers as f64),
        ("decoder_layers", config.decoder_layers as f64),
        ("decoder_split", config.decoder_split as f64),
        ("conv_kernel", config.conv_kernel as f64),
        ("max_repair_length", config.max_repair_length as f64),
        ("confidence_threshold", config.confidence_threshold),
        ("alpha", config.alpha),
        ("lambda", config.lambda),
        ("max_seq_len", config.max_seq_len as f64),
        ("dropout", config.dropout),
        ("vocab_size", dims.vocab_size as f64),
        ("node_types", dims.node_types as f64),
    ]
}

pub fn save(
    w: &mut impl Write,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<(), CheckpointError> {
    w.write_all(MAGIC)?;
    let fields = config_fields(config, params.dims);
    write_u64(w, fields.len() as u64)?;
    for (name, value) in fields {
        write_str(w, name)?;
        write_f64(w, value)?;
    }
    write_u64(w, params.tensors.len() as u64)?;
    for (name, tensor) in &params.tensors {
        write_str(w, name)?;
        write_u64(w, tensor.shape().len() as u64)?;
        for &dim in tensor.shape() {
            write_u64(w, dim as u64)?;
        }
        for &v in tensor.data() {
            write_f64(w, v)?;
        }
    }
    Ok(())
}

/// Loads a checkpoint, verifying it matches `expected` field by field.
/// Returns the parameters and the stored dims.
pub fn load(
    r: &mut impl Read,
    expected: &ModelConfig,
) -> Result<ModelParams, CheckpointError> {
    let (params, stored) = load_raw(r)?;
    let want = config_fields(expected, params.dims);
    for ((name, got), (_, expect)) in stored.iter().zip(&want) {
        if (got - expect).abs() > 1e-12 {
            return Err(CheckpointError::ConfigMismatch(format!(
                "{name}: checkpoint has {got}, run configured {expect}"
            )));
        }
    }
    Ok(params)
}

/// Loads parameters plus the raw config fields without validating them;
/// used to reconstruct the run configuration from the artifact itself.
pub fn load_with_config(
    r: &mut impl Read,
) -> Result<(ModelParams, ModelConfig), CheckpointError> {
    let (params, stored) = load_raw(r)?;
    let mut map: BTreeMap<&str, f64> = BTreeMap::new();
    for (name, value) in &stored {
        map.insert(name.as_str(), *value);
    }
    let get = |name: &str| -> Result<f64, CheckpointError> {
        map.get(name)
            .copied()
            .ok_or_else(|| CheckpointError::Corrupt(format!("missing config field {name}")))
    };
    let config = ModelConfig {
        d_model: get("d_model")? as usize,
        n_heads: get("n_heads")? as usize,
        encoder_layers: get("encoder_layers")? as usize,
        decoder_layers: get("decoder_layers")? as usize,
        decoder_split: get("decoder_split")? as usize,
        conv_kernel: get("conv_kernel")? as usize,
        max_repair_length: get("max_repair_length")? as usize,
        confidence_threshold: get("confidence_threshold")?,
        alpha: get("alpha")?,
        lambda: get("lambda")?,
        max_seq_len: get("max_seq_len")? as usize,
        dropout: get("dropout")?,
    };
    Ok((params, config))
}

fn load_raw(
    r: &mut impl Read,
) -> Result<(ModelParams, Vec<(String, f64)>), CheckpointError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let n_fields = read_u64(r)? as usize;
    let mut fields = Vec::with_capacity(n_fields);
    for _ in 0..n_fields {
        let name = read_str(r)?;
        let value = read_f64(r)?;
        fields.push((name, value));
    }
    let dims = {
        let find = |key: &str| {
            fields
                .iter()
                .find(|(n, _)| n == key)
                .map(|(_, v)| *v as usize)
                .ok_or_else(|| CheckpointError::Corrupt(format!("missing {key}")))
        };
        ModelDims { vocab_size: find("vocab_size")?, node_types: find("node_types")? }
    };
    let n_tensors = read_u64(r)? as usize;
    let mut tensors = BTreeMap::new();
    for _ in 0..n_tensors {
        let name = read_str(r)?;
        let ndims = read_u64(r)? as usize;
        if ndims > 4 {
            return Err(CheckpointError::Corrupt(format!("{name}: {ndims} dims")));
        }
        let mut shape = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            shape.push(read_u64(r)? as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(read_f64(r)?);
        }
        tensors.insert(name, Tensor::from_vec(&shape, data));
    }
    Ok((ModelParams { dims, tensors }, fields))
}
