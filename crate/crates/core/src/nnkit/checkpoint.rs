//! Versioned binary weight checkpoints.
//!
//! Layout: the magic bytes `RHCK`, a little-endian `u32` format version, a
//! little-endian `u32` header length, the UTF-8 JSON header, then every weight
//! and bias as little-endian `f64` in layer order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlp::{Dense, MlpParams};
use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"RHCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub layer_sizes: Vec<usize>,
    pub activation: String,
    pub seed: u64,
    pub step: u64,
}

pub fn write_checkpoint(mut w: impl Write, net: &MlpParams, seed: u64, step: u64) -> Result<()> {
    let header = CheckpointHeader {
        layer_sizes: net.layer_sizes().to_vec(),
        activation: "relu".into(),
        seed,
        step,
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for x in net.to_flat() {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_checkpoint(mut r: impl Read) -> Result<(MlpParams, CheckpointHeader)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Parse("not a weight checkpoint".into()));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Parse(format!("unsupported checkpoint version {version}")));
    }
    r.read_exact(&mut word)?;
    let mut json = vec![0u8; u32::from_le_bytes(word) as usize];
    r.read_exact(&mut json)?;
    let header: CheckpointHeader = serde_json::from_slice(&json)?;
    if header.activation != "relu" {
        return Err(Error::Parse(format!("unsupported activation {}", header.activation)));
    }
    let mut layers = Vec::new();
    let mut read_tensor = |rows: usize, cols: usize| -> Result<Tensor> {
        let mut data = Vec::with_capacity(rows * cols);
        let mut buf = [0u8; 8];
        for _ in 0..rows * cols {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        Tensor::new(rows, cols, data)
    };
    for w in header.layer_sizes.windows(2) {
        let weight = read_tensor(w[0], w[1])?;
        let bias = read_tensor(1, w[1])?;
        layers.push(Dense { weight, bias });
    }
    Ok((MlpParams::from_layers(layers)?, header))
}

pub fn save_checkpoint(path: &Path, net: &MlpParams, seed: u64, step: u64) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_checkpoint(std::io::BufWriter::new(file), net, seed, step)
}

pub fn load_checkpoint(path: &Path) -> Result<(MlpParams, CheckpointHeader)> {
    read_checkpoint(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let net = MlpParams::init(&[2, 8, 8, 1], 42).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &net, 42, 1700).unwrap();
        let (back, header) = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back, net);
        assert_eq!(header.step, 1700);
        assert_eq!(header.layer_sizes, vec![2, 8, 8, 1]);
    }

    #[test]
    fn rejects_foreign_bytes() {
        assert!(read_checkpoint(&b"NOPE\x01\x00\x00\x00"[..]).is_err());
    }
}
