//! Frozen text encoders behind one interface.
//!
//! [`HashingEncoder`] is the offline deterministic encoder, [`RemoteEncoder`]
//! talks to an embedding HTTP API, and [`CachedEncoder`] puts a persistent
//! content-addressed [`EmbeddingCache`] in front of either.

mod cache;
mod hashing;
mod remote;

use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{cache_key, CacheKey, CachedEncoder, EmbeddingCache};
pub use hashing::HashingEncoder;
pub use remote::{RemoteConfig, RemoteEncoder, API_KEY_ENV};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("cannot encode empty input")]
    EmptyInput,
    #[error("remote embedding request failed (status {}): {body}", status.map(|s| s.to_string()).unwrap_or_else(|| "none".into()))]
    RemoteFailure { status: Option<u16>, body: String },
    #[error("expected a {expected}-dimensional vector, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("embedding contains a non-finite component")]
    NonFinite,
    #[error("embedding cache {} is corrupt", .0.display())]
    CacheCorrupt(PathBuf),
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("encoder misconfigured: {0}")]
    Config(String),
}

/// A finite, fixed-dimension embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EncoderError> {
        if values.is_empty() {
            return Err(EncoderError::DimMismatch { expected: 1, got: 0 });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EncoderError::NonFinite);
        }
        Ok(Self(values))
    }

    pub fn from_f32(values: &[f32]) -> Result<Self, EncoderError> {
        Self::new(values.iter().map(|&v| f64::from(v)).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.0.iter().map(|&v| v as f32).collect()
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = EncoderError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Remote,
    DeterministicTest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderDescriptor {
    pub name: String,
    pub dim: usize,
    pub kind: EncoderKind,
}

/// A frozen text encoder.
pub trait Encoder: Send + Sync {
    fn descriptor(&self) -> &EncoderDescriptor;

    fn encode(&self, text: &str) -> Result<EmbeddingVector, EncoderError>;

    /// Encodes `texts` in input order with at most `max_in_flight` calls
    /// outstanding. The first failure aborts the whole batch.
    fn encode_batch(&self, texts: &[String], max_in_flight: usize) -> Result<Vec<EmbeddingVector>, EncoderError> {
        bounded_map(texts, max_in_flight, |t| self.encode(t))
    }
}

impl<E: Encoder + ?Sized> Encoder for &E {
    fn descriptor(&self) -> &EncoderDescriptor {
        (**self).descriptor()
    }

    fn encode(&self, text: &str) -> Result<EmbeddingVector, EncoderError> {
        (**self).encode(text)
    }

    fn encode_batch(&self, texts: &[String], max_in_flight: usize) -> Result<Vec<EmbeddingVector>, EncoderError> {
        (**self).encode_batch(texts, max_in_flight)
    }
}

impl<E: Encoder + ?Sized> Encoder for Box<E> {
    fn descriptor(&self) -> &EncoderDescriptor {
        (**self).descriptor()
    }

    fn encode(&self, text: &str) -> Result<EmbeddingVector, EncoderError> {
        (**self).encode(text)
    }

    fn encode_batch(&self, texts: &[String], max_in_flight: usize) -> Result<Vec<EmbeddingVector>, EncoderError> {
        (**self).encode_batch(texts, max_in_flight)
    }
}

/// Order-preserving map with at most `workers` items in flight.
///
/// Items are claimed in index order, so every item before a failing one has
/// been attempted; the lowest-index error is returned and no partial output
/// escapes.
pub(crate) fn bounded_map<T, R, E, F>(items: &[T], workers: usize, f: F) -> Result<Vec<R>, E>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(&T) -> Result<R, E> + Sync,
{
    let workers = workers.max(1).min(items.len());
    if workers <= 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let slots: Mutex<Vec<Option<Result<R, E>>>> =
        Mutex::new(std::iter::repeat_with(|| None).take(items.len()).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if abort.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let result = f(&items[i]);
                if result.is_err() {
                    abort.store(true, Ordering::SeqCst);
                }
                slots.lock().expect("worker panicked")[i] = Some(result);
            });
        }
    });
    let slots = slots.into_inner().expect("worker panicked");
    let mut out = Vec::with_capacity(items.len());
    let mut first_error = None;
    for slot in slots {
        match slot {
            Some(Ok(v)) if first_error.is_none() => out.push(v),
            Some(Err(e)) if first_error.is_none() => first_error = Some(e),
            _ => {}
        }
    }
    match first_error {
        Some(e) => Err(e),
        None => Ok(out),
    }
}
