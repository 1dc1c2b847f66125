//! Sentence embedding providers and cosine similarity.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text;

pub const DEFAULT_DIMENSION: usize = 768;

/// Environment variable that overrides the service endpoint.
pub const ENDPOINT_ENV: &str = "AGRIQRS_EMBED_ENDPOINT";

/// Texts per request sent to the embedding service.
const SERVICE_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(pub Vec<f64>);

impl EmbeddingVector {
    pub fn zeros(dim: usize) -> Self {
        EmbeddingVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Unit-length copy; zero vectors are returned unchanged.
    pub fn normalized(&self) -> Self {
        let n = self.norm();
        if n == 0.0 {
            return self.clone();
        }
        EmbeddingVector(self.0.iter().map(|x| x / n).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

/// Which provider to use and its settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EmbedderSpec {
    Hashed { dimension: usize, seed: u64 },
    File { dimension: usize, path: PathBuf },
    Service { dimension: usize, endpoint: String },
}

impl Default for EmbedderSpec {
    fn default() -> Self {
        EmbedderSpec::Hashed {
            dimension: DEFAULT_DIMENSION,
            seed: 0,
        }
    }
}

impl EmbedderSpec {
    pub fn dimension(&self) -> usize {
        match self {
            EmbedderSpec::Hashed { dimension, .. }
            | EmbedderSpec::File { dimension, .. }
            | EmbedderSpec::Service { dimension, .. } => *dimension,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension() == 0 {
            return Err(Error::Config("embedding dimension must be >= 1".into()));
        }
        if let EmbedderSpec::Service { endpoint, .. } = self {
            if endpoint.is_empty() {
                return Err(Error::Config("service embedder needs an endpoint".into()));
            }
        }
        Ok(())
    }

    /// Applies `AGRIQRS_EMBED_ENDPOINT` to a service spec.
    pub fn with_env_override(self) -> Self {
        match (self, std::env::var(ENDPOINT_ENV)) {
            (EmbedderSpec::Service { dimension, .. }, Ok(url)) if !url.is_empty() => {
                EmbedderSpec::Service {
                    dimension,
                    endpoint: url,
                }
            }
            (spec, _) => spec,
        }
    }
}

/// A constructed provider. Immutable after construction.
#[derive(Debug)]
pub enum Embedder {
    Hashed {
        dimension: usize,
        seed: u64,
    },
    File {
        dimension: usize,
        table: HashMap<String, EmbeddingVector>,
    },
    Service {
        dimension: usize,
        endpoint: String,
    },
}

#[derive(Deserialize)]
struct FileEntry {
    text: String,
    embedding: Vec<f64>,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    dim: usize,
    embeddings: Vec<Vec<f64>>,
}

impl Embedder {
    pub fn from_spec(spec: &EmbedderSpec) -> Result<Self> {
        spec.validate()?;
        Ok(match spec {
            EmbedderSpec::Hashed { dimension, seed } => Embedder::Hashed {
                dimension: *dimension,
                seed: *seed,
            },
            EmbedderSpec::File { dimension, path } => Embedder::File {
                dimension: *dimension,
                table: read_embedding_file(path, *dimension)?,
            },
            EmbedderSpec::Service {
                dimension,
                endpoint,
            } => Embedder::Service {
                dimension: *dimension,
                endpoint: endpoint.trim_end_matches('/').to_owned(),
            },
        })
    }

    pub fn dimension(&self) -> usize {
        match self {
            Embedder::Hashed { dimension, .. }
            | Embedder::File { dimension, .. }
            | Embedder::Service { dimension, .. } => *dimension,
        }
    }

    pub fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        let mut out = self.embed_batch(std::slice::from_ref(&text.to_owned()))?;
        Ok(out.pop().expect("one vector per text"))
    }

    /// One vector per input text, in order.
    pub fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        match self {
            Embedder::Hashed { dimension, seed } => Ok(texts
                .iter()
                .map(|t| hashed_embedding(t, *dimension, *seed))
                .collect()),
            Embedder::File { table, .. } => texts
                .iter()
                .map(|t| table.get(t).cloned().ok_or_else(|| Error::Lookup(t.clone())))
                .collect(),
            Embedder::Service {
                dimension,
                endpoint,
            } => {
                let mut out = Vec::with_capacity(texts.len());
                for chunk in texts.chunks(SERVICE_CHUNK) {
                    out.extend(call_service(endpoint, chunk, *dimension)?);
                }
                Ok(out)
            }
        }
    }
}

pub fn embed_batch(texts: &[String], spec: &EmbedderSpec) -> Result<Vec<EmbeddingVector>> {
    Embedder::from_spec(spec)?.embed_batch(texts)
}

fn call_service(endpoint: &str, texts: &[String], dimension: usize) -> Result<Vec<EmbeddingVector>> {
    let url = format!("{endpoint}/embed");
    let provider = |e: &dyn std::fmt::Display| Error::Provider(format!("{url}: {e}"));
    let mut response = ureq::post(&url)
        .send_json(EmbedRequest { texts })
        .map_err(|e| provider(&e))?;
    let body: EmbedResponse = response
        .body_mut()
        .read_json()
        .map_err(|e| provider(&e))?;
    if body.dim != dimension {
        return Err(provider(&format!(
            "service reports dimension {}, expected {dimension}",
            body.dim
        )));
    }
    if body.embeddings.len() != texts.len() {
        return Err(provider(&format!(
            "sent {} texts, received {} embeddings",
            texts.len(),
            body.embeddings.len()
        )));
    }
    body.embeddings
        .into_iter()
        .map(|v| {
            let v = EmbeddingVector(v);
            if v.dim() != dimension || !v.is_finite() {
                Err(provider(&format!(
                    "malformed vector of length {} (expected {dimension})",
                    v.dim()
                )))
            } else {
                Ok(v)
            }
        })
        .collect()
}

/// Reads a JSON Lines embedding table: `{"text": .., "embedding": [..]}`.
pub fn read_embedding_file(path: &Path, dimension: usize) -> Result<HashMap<String, EmbeddingVector>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut table = HashMap::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: FileEntry = serde_json::from_str(&line).map_err(|e| Error::Ingest {
            line: i as u64 + 1,
            message: e.to_string(),
        })?;
        if entry.embedding.len() != dimension {
            return Err(Error::Provider(format!(
                "{}:{}: vector length {} != {dimension}",
                path.display(),
                i + 1,
                entry.embedding.len()
            )));
        }
        table.insert(entry.text, EmbeddingVector(entry.embedding));
    }
    Ok(table)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn token_hash(token: &str, seed: u64) -> u64 {
    // FNV-1a over the bytes, then seed-mixed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in token.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(h ^ splitmix64(seed))
}

/// Signed feature hashing of the text's tokens, L2-normalized.
/// Texts without tokens map to the zero vector.
pub fn hashed_embedding(text: &str, dimension: usize, seed: u64) -> EmbeddingVector {
    let mut v = vec![0.0f64; dimension];
    for token in text::tokenize(text) {
        let h = token_hash(&token, seed);
        let idx = (h % dimension as u64) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        v[idx] += sign;
    }
    EmbeddingVector(v).normalized()
}

/// Cosine of the angle between `u` and `v`, clamped to [-1, 1].
/// Defined as 0 when either vector is all zero.
pub fn cosine_similarity(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64> {
    if u.dim() != v.dim() {
        return Err(Error::Contract(format!(
            "cosine of vectors with lengths {} and {}",
            u.dim(),
            v.dim()
        )));
    }
    Ok(cosine_slices(u.as_slice(), v.as_slice()))
}

pub(crate) fn cosine_slices(u: &[f64], v: &[f64]) -> f64 {
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    (dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0)
}
