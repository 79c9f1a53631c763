//! Checkpoint format: one JSON header line
//! `{"layer_sizes":[..],"activation":"elu","checksum":"<sha256 hex>"}`
//! followed by every parameter as a little-endian f64, layer by layer, with
//! each weight matrix (row-major) before its bias.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::mlp::{Activation, ParamSet};
use super::tensors::{Layer, Tensors};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub checksum: String,
}

fn checksum(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_checkpoint(mut out: impl Write, params: &ParamSet) -> Result<()> {
    let mut body = vec![0u8; params.tensors.len() * 8];
    for (chunk, &v) in body.chunks_exact_mut(8).zip(params.tensors.iter()) {
        LittleEndian::write_f64(chunk, v);
    }
    let header = CheckpointHeader {
        layer_sizes: params.layer_sizes(),
        activation: params.activation,
        checksum: checksum(&body),
    };
    let io = |e| Error::Checkpoint(format!("write failed: {e}"));
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n").map_err(io)?;
    out.write_all(&body).map_err(io)?;
    Ok(())
}

pub fn read_checkpoint(input: impl Read) -> Result<ParamSet> {
    let mut reader = BufReader::new(input);
    let mut line = String::new();
    reader
        .read_line(&mut line)
        .map_err(|e| Error::Checkpoint(format!("header unreadable: {e}")))?;
    let header: CheckpointHeader = serde_json::from_str(line.trim_end())?;
    let mut body = Vec::new();
    reader
        .read_to_end(&mut body)
        .map_err(|e| Error::Checkpoint(format!("body unreadable: {e}")))?;
    if checksum(&body) != header.checksum {
        return Err(Error::Checkpoint("checksum mismatch".into()));
    }
    let sizes = &header.layer_sizes;
    if sizes.len() < 2 {
        return Err(Error::Checkpoint("fewer than two layer sizes".into()));
    }
    let expected: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
    if body.len() != expected * 8 {
        return Err(Error::Checkpoint(format!(
            "body holds {} bytes, layer sizes need {}",
            body.len(),
            expected * 8
        )));
    }
    let mut values = body.chunks_exact(8).map(LittleEndian::read_f64);
    let layers = sizes
        .windows(2)
        .map(|w| {
            let weight = Array2::from_shape_fn((w[0], w[1]), |_| values.next().unwrap());
            let bias = Array1::from_shape_fn(w[1], |_| values.next().unwrap());
            Layer { weight, bias }
        })
        .collect();
    ParamSet::new(header.activation, Tensors { layers })
}

pub fn save_checkpoint(path: impl AsRef<Path>, params: &ParamSet) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(std::io::BufWriter::new(file), params)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ParamSet> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(file)
}
