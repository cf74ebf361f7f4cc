//! `BKVM` model checkpoints.
//!
//! Layout (little-endian): magic `BKVM`, format version `u32`, config block
//! (`num_layers`, `num_heads`, `head_dim`, `hidden_dim`, `vocab_size`,
//! `max_seq_len` as `u32`, `rope_base` as `f64`, `seed` as `u64`), parameter
//! count `u64`, then every parameter as `f64` in [`ModelParams::tensors`]
//! order.

use std::path::Path;

use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};

use super::{ModelConfig, ModelParams, ToyModel};

pub const MAGIC: &[u8; 4] = b"BKVM";
pub const VERSION: u32 = 1;

pub fn to_bytes(model: &ToyModel) -> Vec<u8> {
    let c = model.config();
    let mut w = Writer::default();
    w.bytes(MAGIC);
    w.u32(VERSION);
    for v in [c.num_layers, c.num_heads, c.head_dim, c.hidden_dim, c.vocab_size, c.max_seq_len] {
        w.u32(v as u32);
    }
    w.f64(c.rope_base);
    w.u64(c.seed);
    let flat = model.params().to_flat();
    w.u64(flat.len() as u64);
    w.f64s(&flat);
    w.buf
}

pub fn from_bytes(buf: &[u8]) -> Result<ToyModel> {
    let mut r = Reader::new(buf);
    let magic = r.bytes(4).map_err(|_| Error::Format("file too short for magic bytes".into()))?;
    if magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected BKVM")));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let mut dims = [0usize; 6];
    for d in dims.iter_mut() {
        *d = r.u32()? as usize;
    }
    let rope_base = r.f64()?;
    let seed = r.u64()?;
    let config = ModelConfig {
        num_layers: dims[0],
        num_heads: dims[1],
        head_dim: dims[2],
        hidden_dim: dims[3],
        vocab_size: dims[4],
        max_seq_len: dims[5],
        rope_base,
        seed,
    };
    config
        .validate()
        .map_err(|e| Error::Corruption(format!("checkpoint config invalid: {e}")))?;
    let count = r.usize()?;
    let mut params = ModelParams::zeros(&config);
    if count != params.num_params() {
        return Err(Error::Corruption(format!(
            "checkpoint holds {count} parameters, config implies {}",
            params.num_params()
        )));
    }
    params.load_flat(&r.f64s(count)?);
    if !r.at_end() {
        return Err(Error::Corruption("trailing bytes after parameters".into()));
    }
    ToyModel::from_parts(config, params)
}

pub fn save(model: &ToyModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<ToyModel> {
    from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let m = ToyModel::new(ModelConfig::new(2, 2, 4, 19, 40, 77)).unwrap();
        let bytes = to_bytes(&m);
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back.fingerprint(), m.fingerprint());
        assert_eq!(to_bytes(&back), bytes);
    }

    #[test]
    fn rejects_bad_files() {
        let m = ToyModel::new(ModelConfig::new(1, 1, 2, 5, 8, 1)).unwrap();
        let mut bytes = to_bytes(&m);
        assert!(matches!(from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Corruption(_))));
        bytes[4] = 9;
        assert!(matches!(from_bytes(&bytes), Err(Error::Format(_))));
        bytes[0] = b'X';
        assert!(matches!(from_bytes(&bytes), Err(Error::Format(_))));
    }
}
