use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use sha2::{Digest, Sha256};

use super::{EmbeddingVector, Encoder, EncoderDescriptor, EncoderError};

const MAGIC: &[u8; 8] = b"MRECACH1";

/// 32-byte content hash of (encoder name, exact input string).
pub type CacheKey = [u8; 32];

pub fn cache_key(encoder_name: &str, text: &str) -> CacheKey {
    let mut h = Sha256::new();
    h.update((encoder_name.len() as u64).to_le_bytes());
    h.update(encoder_name.as_bytes());
    h.update(text.as_bytes());
    h.finalize().into()
}

/// Append-only, content-addressed embedding store.
///
/// File layout: the 8-byte magic, then records of
/// `key[32] | dim: u32 LE | dim × f32 LE | crc32: u32 LE`, the checksum
/// covering key, dim and values. Values are stored as 32-bit floats.
pub struct EmbeddingCache {
    path: PathBuf,
    entries: RwLock<HashMap<CacheKey, EmbeddingVector>>,
    writer: Mutex<File>,
}

impl EmbeddingCache {
    /// Opens (or creates) the cache at `path`, verifying every record.
    pub fn open(path: &Path) -> Result<Self, EncoderError> {
        let io = |source| EncoderError::Io {
            path: path.to_path_buf(),
            source,
        };
        if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io)?;
        }
        let mut entries = HashMap::new();
        let exists = path.exists() && std::fs::metadata(path).map_err(io)?.len() > 0;
        if exists {
            let mut bytes = Vec::new();
            File::open(path).map_err(io)?.read_to_end(&mut bytes).map_err(io)?;
            entries = parse(&bytes).ok_or_else(|| EncoderError::CacheCorrupt(path.to_path_buf()))?;
        }
        let mut writer = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        if !exists {
            writer.write_all(MAGIC).map_err(io)?;
            writer.flush().map_err(io)?;
        }
        Ok(Self {
            path: path.to_path_buf(),
            entries: RwLock::new(entries),
            writer: Mutex::new(writer),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &CacheKey) -> Option<EmbeddingVector> {
        self.entries.read().expect("cache lock").get(key).cloned()
    }

    /// Stores `vector` (rounded to f32) and appends it to the file.
    pub fn put(&self, key: CacheKey, vector: &EmbeddingVector) -> Result<(), EncoderError> {
        let stored = EmbeddingVector::from_f32(&vector.to_f32())?;
        let mut writer = self.writer.lock().expect("cache writer lock");
        if self.entries.read().expect("cache lock").get(&key) == Some(&stored) {
            return Ok(());
        }
        let record = encode_record(&key, &stored);
        writer
            .write_all(&record)
            .and_then(|_| writer.flush())
            .map_err(|source| EncoderError::Io {
                path: self.path.clone(),
                source,
            })?;
        self.entries.write().expect("cache lock").insert(key, stored);
        Ok(())
    }
}

fn encode_record(key: &CacheKey, vector: &EmbeddingVector) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + 8 + 4 * vector.dim());
    out.extend_from_slice(key);
    out.extend_from_slice(&(vector.dim() as u32).to_le_bytes());
    for v in vector.to_f32() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn parse(bytes: &[u8]) -> Option<HashMap<CacheKey, EmbeddingVector>> {
    let mut rest = bytes.strip_prefix(MAGIC.as_slice())?;
    let mut entries = HashMap::new();
    while !rest.is_empty() {
        if rest.len() < 36 {
            return None;
        }
        let dim = u32::from_le_bytes(rest[32..36].try_into().ok()?) as usize;
        let body_len = 36 + 4 * dim;
        if dim == 0 || rest.len() < body_len + 4 {
            return None;
        }
        let (body, tail) = rest.split_at(body_len);
        let crc = u32::from_le_bytes(tail[..4].try_into().ok()?);
        if crc32fast::hash(body) != crc {
            return None;
        }
        let key: CacheKey = body[..32].try_into().ok()?;
        let values: Vec<f32> = body[36..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4-byte chunk")))
            .collect();
        entries.insert(key, EmbeddingVector::from_f32(&values).ok()?);
        rest = &tail[4..];
    }
    Some(entries)
}

/// An encoder whose results are served from, and recorded into, a cache.
pub struct CachedEncoder<E> {
    inner: E,
    cache: EmbeddingCache,
}

impl<E: Encoder> CachedEncoder<E> {
    pub fn new(inner: E, cache: EmbeddingCache) -> Self {
        Self { inner, cache }
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    pub fn cache(&self) -> &EmbeddingCache {
        &self.cache
    }

    fn key(&self, text: &str) -> CacheKey {
        cache_key(&self.inner.descriptor().name, text)
    }
}

impl<E: Encoder> Encoder for CachedEncoder<E> {
    fn descriptor(&self) -> &EncoderDescriptor {
        self.inner.descriptor()
    }

    fn encode(&self, text: &str) -> Result<EmbeddingVector, EncoderError> {
        let key = self.key(text);
        if let Some(v) = self.cache.get(&key) {
            return Ok(v);
        }
        let v = self.inner.encode(text)?;
        self.cache.put(key, &v)?;
        Ok(self.cache.get(&key).unwrap_or(v))
    }

    fn encode_batch(&self, texts: &[String], max_in_flight: usize) -> Result<Vec<EmbeddingVector>, EncoderError> {
        let keys: Vec<CacheKey> = texts.iter().map(|t| self.key(t)).collect();
        let mut seen = std::collections::HashSet::new();
        let misses: Vec<String> = texts
            .iter()
            .zip(&keys)
            .filter(|(_, k)| self.cache.get(k).is_none() && seen.insert(**k))
            .map(|(t, _)| t.clone())
            .collect();
        if !misses.is_empty() {
            let fresh = self.inner.encode_batch(&misses, max_in_flight)?;
            for (text, vector) in misses.iter().zip(&fresh) {
                self.cache.put(self.key(text), vector)?;
            }
        }
        keys.iter()
            .map(|k| {
                self.cache
                    .get(k)
                    .ok_or_else(|| EncoderError::CacheCorrupt(self.cache.path.clone()))
            })
            .collect()
    }
}
