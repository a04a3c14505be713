use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("embedding has zero norm")]
    ZeroNorm,
    #[error("embedding contains non-finite values")]
    NonFinite,
    #[error("embedding has dimension {got}, expected {expected}")]
    Dimension { got: usize, expected: usize },
    #[error("provider error: {0}")]
    Provider(String),
}

/// Unit-normalized embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    /// Validates finiteness and non-zero norm, then normalizes.
    pub fn new(values: Vec<f32>) -> Result<Self, EmbedError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        let norm = values.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(EmbedError::ZeroNorm);
        }
        Ok(EmbeddingVector(values.into_iter().map(|v| (v as f64 / norm) as f32).collect()))
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }
}

/// Cosine of two unit vectors, accumulated in f64 and clamped to [-1, 1].
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    dot.clamp(-1.0, 1.0)
}

/// Embedding provider. Implementations must return vectors of a constant
/// dimension; normalization is done by the index.
pub trait Embedder: Send + Sync {
    /// Stable identifier recorded in persisted indexes.
    fn id(&self) -> &str;
    fn dimension(&self) -> usize;
    fn embed_text(&self, text: &str) -> Result<Vec<f32>, EmbedError>;
    fn embed_image(&self, payload: &[u8], alt_text: &str) -> Result<Vec<f32>, EmbedError>;
}

/// Offline deterministic embedder: character trigrams hashed (FNV-1a) into
/// signed buckets.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    dimension: usize,
    id: String,
}

impl MockEmbedder {
    pub const DEFAULT_DIMENSION: usize = 64;

    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "dimension must be positive");
        MockEmbedder {
            dimension,
            id: format!("mock-trigram-{dimension}"),
        }
    }
}

impl Default for MockEmbedder {
    fn default() -> Self {
        Self::new(Self::DEFAULT_DIMENSION)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl MockEmbedder {
    fn trigram_vector(&self, text: &str) -> Vec<f32> {
        let normalized: String = text
            .to_lowercase()
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ");
        let mut v = vec![0f32; self.dimension];
        if normalized.is_empty() {
            return v;
        }
        let chars: Vec<char> = std::iter::once(' ')
            .chain(normalized.chars())
            .chain(std::iter::once(' '))
            .collect();
        let mut buf = String::new();
        for w in chars.windows(3) {
            buf.clear();
            buf.extend(w);
            let h = fnv1a(buf.as_bytes());
            let bucket = (h % self.dimension as u64) as usize;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[bucket] += sign;
        }
        v
    }
}

impl Embedder for MockEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f32>, EmbedError> {
        Ok(self.trigram_vector(text))
    }

    fn embed_image(&self, _payload: &[u8], alt_text: &str) -> Result<Vec<f32>, EmbedError> {
        Ok(self.trigram_vector(alt_text))
    }
}

/// JSON-over-HTTP text embedder. The request body is
/// `{"model", "input"}` and the response carries `{"embedding": [f32]}`.
/// Images are embedded through their alt text. The bearer token is read
/// from the environment variable named in `api_key_env` at call time.
#[derive(Debug, Clone, PartialEq)]
pub struct HttpEmbedder {
    pub url: String,
    pub model: Option<String>,
    pub dimension: usize,
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    id: String,
}

#[derive(Deserialize)]
struct EmbeddingReply {
    embedding: Vec<f32>,
}

impl HttpEmbedder {
    pub fn new(url: impl Into<String>, model: Option<String>, dimension: usize) -> Self {
        let url = url.into();
        let id = format!("http:{}:{}", model.as_deref().unwrap_or("default"), dimension);
        HttpEmbedder {
            url,
            model,
            dimension,
            api_key_env: None,
            timeout_secs: 60,
            id,
        }
    }

    fn request(&self, input: &str) -> Result<Vec<f32>, EmbedError> {
        let agent = ureq::AgentBuilder::new()
            .timeout(std::time::Duration::from_secs(self.timeout_secs))
            .build();
        let mut req = agent.post(&self.url).set("content-type", "application/json");
        if let Some(var) = &self.api_key_env {
            let key = std::env::var(var)
                .map_err(|_| EmbedError::Provider(format!("environment variable {var} is not set")))?;
            req = req.set("authorization", &format!("Bearer {key}"));
        }
        let body = serde_json::json!({ "model": self.model, "input": input });
        let resp = req.send_json(body).map_err(|e| EmbedError::Provider(e.to_string()))?;
        let reply: EmbeddingReply = resp.into_json().map_err(|e| EmbedError::Provider(e.to_string()))?;
        if reply.embedding.len() != self.dimension {
            return Err(EmbedError::Dimension {
                got: reply.embedding.len(),
                expected: self.dimension,
            });
        }
        Ok(reply.embedding)
    }
}

impl Embedder for HttpEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f32>, EmbedError> {
        self.request(text)
    }

    fn embed_image(&self, _payload: &[u8], alt_text: &str) -> Result<Vec<f32>, EmbedError> {
        self.request(alt_text)
    }
}
