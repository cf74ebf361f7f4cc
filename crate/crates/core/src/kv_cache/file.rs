//! `BKVC` cache files.
//!
//! ```text
//! magic "BKVC" | version u32
//! stats: hits u64 | misses u64 | hit_tokens u64 | miss_tokens u64 | clock u64
//! entry_count u64
//! entry table, per entry:
//!   content_hash [32] | fingerprint [32] | token_len u64 | sink_count u64
//!   num_layers u32 | hidden u32 | last_used u64
//!   ids_offset u64 | tensor_offset u64
//! data: token ids (u32) and tensors (f64; per layer keys then values,
//!       token_len × hidden each) at the recorded absolute byte offsets
//! ```
//! All integers and floats are little-endian.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;

use super::block::{block_hash, KvBlock};
use super::store::{CacheStats, Entry, Inner, KvStore};
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::model::LayerKv;

pub const CACHE_MAGIC: &[u8; 4] = b"BKVC";
pub const CACHE_VERSION: u32 = 1;

const HEADER_LEN: usize = 4 + 4 + 5 * 8 + 8;
const ENTRY_LEN: usize = 32 + 32 + 8 + 8 + 4 + 4 + 8 + 8 + 8;

impl KvStore {
    pub fn to_bytes(&self) -> Vec<u8> {
        let inner = self.inner.read();
        let mut entries: Vec<(&[u8; 32], &Entry)> = inner.entries.iter().collect();
        entries.sort_by_key(|(h, _)| **h);

        let mut w = Writer::default();
        w.bytes(CACHE_MAGIC);
        w.u32(CACHE_VERSION);
        let s = inner.stats;
        for v in [s.hits, s.misses, s.hit_tokens, s.miss_tokens, inner.clock] {
            w.u64(v);
        }
        w.u64(entries.len() as u64);

        let mut data = Writer::default();
        let data_start = HEADER_LEN + ENTRY_LEN * entries.len();
        for (hash, e) in &entries {
            let b = &e.block;
            let hidden = b.layers.first().map_or(0, |l| l.keys.ncols());
            w.bytes(&hash[..]);
            w.bytes(b.fingerprint());
            w.u64(b.token_len() as u64);
            w.u64(b.sink_count() as u64);
            w.u32(b.layers.len() as u32);
            w.u32(hidden as u32);
            w.u64(e.last_used);
            let ids_offset = data_start + data.buf.len();
            for t in b.token_ids() {
                data.u32(*t);
            }
            let tensor_offset = data_start + data.buf.len();
            for l in &b.layers {
                data.f64s(l.keys.as_slice().expect("standard layout"));
                data.f64s(l.values.as_slice().expect("standard layout"));
            }
            w.u64(ids_offset as u64);
            w.u64(tensor_offset as u64);
        }
        w.buf.extend_from_slice(&data.buf);
        w.buf
    }

    pub fn from_bytes(buf: &[u8]) -> Result<KvStore> {
        let mut r = Reader::new(buf);
        let magic = r.bytes(4).map_err(|_| Error::Format("file too short for magic bytes".into()))?;
        if magic != CACHE_MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}, expected BKVC")));
        }
        let version = r.u32()?;
        if version != CACHE_VERSION {
            return Err(Error::Format(format!("unsupported cache file version {version}")));
        }
        let stats = CacheStats {
            hits: r.u64()?,
            misses: r.u64()?,
            hit_tokens: r.u64()?,
            miss_tokens: r.u64()?,
        };
        let clock = r.u64()?;
        let count = r.usize()?;
        if count > buf.len() / ENTRY_LEN {
            return Err(Error::Corruption(format!("entry count {count} larger than file")));
        }

        let mut entries = HashMap::with_capacity(count);
        for idx in 0..count {
            r.seek(HEADER_LEN + idx * ENTRY_LEN)?;
            let hash: [u8; 32] = r.bytes(32)?.try_into().expect("32 bytes");
            let fingerprint: [u8; 32] = r.bytes(32)?.try_into().expect("32 bytes");
            let token_len = r.usize()?;
            let sink_count = r.usize()?;
            let num_layers = r.u32()? as usize;
            let hidden = r.u32()? as usize;
            let last_used = r.u64()?;
            let ids_offset = r.usize()?;
            let tensor_offset = r.usize()?;

            let mut data = Reader::new(buf);
            data.seek(ids_offset)?;
            let ids: Vec<u32> = (0..token_len).map(|_| data.u32()).collect::<Result<_>>()?;
            data.seek(tensor_offset)?;
            let per = token_len
                .checked_mul(hidden)
                .ok_or_else(|| Error::Corruption("tensor size overflow".into()))?;
            let mut layers = Vec::with_capacity(num_layers);
            for _ in 0..num_layers {
                let keys = data.f64s(per)?;
                let values = data.f64s(per)?;
                let shape = (token_len, hidden);
                layers.push(LayerKv {
                    keys: Array2::from_shape_vec(shape, keys).map_err(|e| Error::Corruption(e.to_string()))?,
                    values: Array2::from_shape_vec(shape, values)
                        .map_err(|e| Error::Corruption(e.to_string()))?,
                });
            }
            if sink_count > token_len {
                return Err(Error::Corruption(format!("entry {idx}: sink count exceeds token length")));
            }
            if block_hash(&ids, &fingerprint, sink_count) != hash {
                return Err(Error::Corruption(format!("entry {idx}: content hash does not match payload")));
            }
            let block = KvBlock::new(fingerprint, ids, sink_count, layers);
            entries.insert(
                hash,
                Entry {
                    block: Arc::new(block),
                    last_used,
                },
            );
        }
        Ok(KvStore::from_inner(Inner { entries, stats, clock }))
    }

    /// Write the store atomically-enough for a single process: a temp file
    /// next to `path`, then rename.
    pub fn persist(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("bkvc.tmp");
        std::fs::write(&tmp, self.to_bytes())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<KvStore> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, ToyModel};

    fn filled() -> (ToyModel, KvStore) {
        let m = ToyModel::new(ModelConfig::new(2, 2, 4, 20, 64, 8)).unwrap();
        let store = KvStore::new();
        store.get_or_encode(&m, &[1, 2, 3], 0).unwrap();
        store.get_or_encode(&m, &[4, 5], 4).unwrap();
        store.get_or_encode(&m, &[6, 7, 8, 9], 0).unwrap();
        store.get_or_encode(&m, &[1, 2, 3], 0).unwrap();
        (m, store)
    }

    #[test]
    fn empty_store_round_trips() {
        let s = KvStore::new();
        let back = KvStore::from_bytes(&s.to_bytes()).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.stats(), CacheStats::default());
    }

    #[test]
    fn three_blocks_round_trip() {
        let (_, store) = filled();
        let bytes = store.to_bytes();
        let back = KvStore::from_bytes(&bytes).unwrap();
        assert_eq!(back.hashes(), store.hashes());
        assert_eq!(back.stats(), store.stats());
        for h in store.hashes() {
            assert!(store.lookup(&h).unwrap().same_bytes(&back.lookup(&h).unwrap()));
        }
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn flipped_magic_and_truncation() {
        let (_, store) = filled();
        let mut bytes = store.to_bytes();
        assert!(matches!(KvStore::from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Corruption(_))));
        assert!(matches!(KvStore::from_bytes(&bytes[..30]), Err(Error::Corruption(_))));
        bytes[5] ^= 0xff;
        assert!(matches!(KvStore::from_bytes(&bytes), Err(Error::Format(_))));
        bytes[0] = b'Z';
        assert!(matches!(KvStore::from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn tampered_payload_detected() {
        let (_, store) = filled();
        let mut bytes = store.to_bytes();
        // first entry's first token id sits right after the entry table
        let ids_at = HEADER_LEN + 3 * ENTRY_LEN;
        bytes[ids_at] ^= 1;
        assert!(matches!(KvStore::from_bytes(&bytes), Err(Error::Corruption(_))));
    }

    #[test]
    fn persist_and_load_file() {
        let (m, store) = filled();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.bkvc");
        store.persist(&path).unwrap();
        let back = KvStore::load(&path).unwrap();
        let (_, hit) = back.get_or_encode(&m, &[6, 7, 8, 9], 0).unwrap();
        assert!(hit);
    }
}
