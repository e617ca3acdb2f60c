use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{bounded_map, EmbeddingVector, Encoder, EncoderDescriptor, EncoderError, EncoderKind};

/// Environment variable holding the API key for remote calls.
pub const API_KEY_ENV: &str = "METARET_API_KEY";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    pub dim: usize,
    /// Texts per HTTP request.
    pub batch_size: usize,
    pub max_attempts: u32,
    /// Delay before the first retry; doubles on every further attempt.
    #[serde(with = "millis")]
    pub initial_backoff: Duration,
    #[serde(with = "millis")]
    pub timeout: Duration,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/embeddings".into(),
            model: "text-embedding-3-small".into(),
            dim: 1536,
            batch_size: 64,
            max_attempts: 5,
            initial_backoff: Duration::from_millis(500),
            timeout: Duration::from_secs(60),
        }
    }
}

impl RemoteConfig {
    /// Default settings for a named model, with its published dimension when known.
    pub fn for_model(model: &str) -> Self {
        let dim = match model {
            "text-embedding-3-small" | "text-embedding-ada-002" => 1536,
            "text-embedding-3-large" => 3072,
            "bge-m3" | "BAAI/bge-m3" => 1024,
            _ => 0,
        };
        Self {
            model: model.to_string(),
            dim,
            ..Self::default()
        }
    }
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    #[serde(default)]
    index: Option<usize>,
    embedding: Vec<f64>,
}

/// Client for an OpenAI-style embeddings endpoint.
///
/// Requests are `POST {"model": .., "input": [..]}` with a bearer token from
/// [`API_KEY_ENV`]. Transport errors, 429 and 5xx are retried with
/// exponential backoff up to `max_attempts`; other statuses fail at once.
pub struct RemoteEncoder {
    descriptor: EncoderDescriptor,
    config: RemoteConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
    requests: AtomicUsize,
}

impl RemoteEncoder {
    pub fn new(config: RemoteConfig, api_key: Option<String>) -> Result<Self, EncoderError> {
        if config.dim == 0 {
            return Err(EncoderError::Config(format!(
                "dimension of remote model `{}` must be configured",
                config.model
            )));
        }
        if config.batch_size == 0 || config.max_attempts == 0 {
            return Err(EncoderError::Config(
                "batch_size and max_attempts must be positive".into(),
            ));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            descriptor: EncoderDescriptor {
                name: config.model.clone(),
                dim: config.dim,
                kind: EncoderKind::Remote,
            },
            config,
            api_key,
            agent,
            requests: AtomicUsize::new(0),
        })
    }

    /// Reads the API key from the environment.
    pub fn from_env(config: RemoteConfig) -> Result<Self, EncoderError> {
        Self::new(config, std::env::var(API_KEY_ENV).ok())
    }

    /// HTTP requests issued so far, retries included.
    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    fn request_once(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, Attempt> {
        self.requests.fetch_add(1, Ordering::SeqCst);
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let body = EmbeddingRequest {
            model: &self.config.model,
            input: texts,
        };
        let mut resp = req.send_json(&body).map_err(|e| {
            Attempt::Retry(EncoderError::RemoteFailure {
                status: None,
                body: e.to_string(),
            })
        })?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            let text = resp.body_mut().read_to_string().unwrap_or_default();
            let err = EncoderError::RemoteFailure {
                status: Some(status),
                body: text,
            };
            return Err(if status == 429 || status >= 500 {
                Attempt::Retry(err)
            } else {
                Attempt::Fatal(err)
            });
        }
        let parsed: EmbeddingResponse = resp.body_mut().read_json().map_err(|e| {
            Attempt::Fatal(EncoderError::RemoteFailure {
                status: Some(status),
                body: format!("unparseable response: {e}"),
            })
        })?;
        self.collect(parsed, texts.len()).map_err(Attempt::Fatal)
    }

    fn collect(&self, response: EmbeddingResponse, expected: usize) -> Result<Vec<EmbeddingVector>, EncoderError> {
        if response.data.len() != expected {
            return Err(EncoderError::RemoteFailure {
                status: None,
                body: format!("expected {expected} embeddings, received {}", response.data.len()),
            });
        }
        let mut data = response.data;
        if data.iter().all(|d| d.index.is_some()) {
            data.sort_by_key(|d| d.index);
        }
        data.into_iter()
            .map(|d| {
                if d.embedding.len() != self.config.dim {
                    return Err(EncoderError::DimMismatch {
                        expected: self.config.dim,
                        got: d.embedding.len(),
                    });
                }
                EmbeddingVector::new(d.embedding)
            })
            .collect()
    }

    fn request_with_retries(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EncoderError> {
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(EncoderError::EmptyInput);
        }
        let mut delay = self.config.initial_backoff;
        let mut attempt = 1;
        loop {
            match self.request_once(texts) {
                Ok(v) => return Ok(v),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(e)) if attempt >= self.config.max_attempts => return Err(e),
                Err(Attempt::Retry(e)) => {
                    log::warn!(
                        "embedding request attempt {attempt}/{} failed: {e}; retrying in {delay:?}",
                        self.config.max_attempts
                    );
                    std::thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
            }
        }
    }
}

enum Attempt {
    Retry(EncoderError),
    Fatal(EncoderError),
}

impl Encoder for RemoteEncoder {
    fn descriptor(&self) -> &EncoderDescriptor {
        &self.descriptor
    }

    fn encode(&self, text: &str) -> Result<EmbeddingVector, EncoderError> {
        let mut out = self.request_with_retries(&[text.to_string()])?;
        Ok(out.remove(0))
    }

    fn encode_batch(&self, texts: &[String], max_in_flight: usize) -> Result<Vec<EmbeddingVector>, EncoderError> {
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(EncoderError::EmptyInput);
        }
        let batches: Vec<&[String]> = texts.chunks(self.config.batch_size).collect();
        let results = bounded_map(&batches, max_in_flight, |b| self.request_with_retries(b))?;
        Ok(results.into_iter().flatten().collect())
    }
}
