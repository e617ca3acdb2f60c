use sha2::{Digest, Sha256};

use super::{EmbeddingVector, Encoder, EncoderDescriptor, EncoderError, EncoderKind};

/// Deterministic offline encoder: a normalized bag of hashed tokens.
///
/// Text is lowercased and split on non-alphanumeric characters; each token
/// adds one count to bucket `sha256(token)[..8] mod dim`. Strings sharing
/// many tokens therefore land close together, disjoint strings only meet
/// through bucket collisions. Output components are rounded to `f32` so the
/// vectors survive the 32-bit embedding cache unchanged.
#[derive(Debug, Clone)]
pub struct HashingEncoder {
    descriptor: EncoderDescriptor,
}

impl HashingEncoder {
    pub const DEFAULT_DIM: usize = 1024;

    pub fn new(dim: usize) -> Result<Self, EncoderError> {
        if dim == 0 {
            return Err(EncoderError::Config("dimension must be positive".into()));
        }
        Ok(Self {
            descriptor: EncoderDescriptor {
                name: format!("hashing-bow-{dim}"),
                dim,
                kind: EncoderKind::DeterministicTest,
            },
        })
    }

    fn bucket(&self, token: &str) -> usize {
        let digest = Sha256::digest(token.as_bytes());
        let mut first = [0u8; 8];
        first.copy_from_slice(&digest[..8]);
        (u64::from_le_bytes(first) % self.descriptor.dim as u64) as usize
    }
}

/// Lowercased alphanumeric runs.
pub(crate) fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

impl Encoder for HashingEncoder {
    fn descriptor(&self) -> &EncoderDescriptor {
        &self.descriptor
    }

    fn encode(&self, text: &str) -> Result<EmbeddingVector, EncoderError> {
        let trimmed = text.trim();
        if trimmed.is_empty() {
            return Err(EncoderError::EmptyInput);
        }
        let mut counts = vec![0.0f64; self.descriptor.dim];
        let mut any = false;
        for token in tokens(trimmed) {
            counts[self.bucket(&token)] += 1.0;
            any = true;
        }
        if !any {
            // Punctuation-only input: the whole string is the token.
            counts[self.bucket(trimmed)] += 1.0;
        }
        let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
        EmbeddingVector::new(counts.into_iter().map(|c| f64::from((c / norm) as f32)).collect())
    }
}
