//! Passage embeddings, a flat vector index, and cosine-ranked selection
//! that balances relevance against redundancy.
//!
//! Selection is greedy: each round picks the candidate maximizing
//! `lambda * cos(d, query) - (1 - lambda) * max_sim(d, selected)`, with the
//! max over an empty selected set defined as 0. The result is the classic
//! relevance/diversity trade-off; `lambda = 1` collapses to pure cosine
//! ranking.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::PassageRef;

#[derive(Debug, Error)]
pub enum VecIndexError {
    #[error("embedding provider failed (status {status}): {body}")]
    Provider { status: u16, body: String },
    #[error("embedding provider rate-limited (retry-after: {retry_after:?} s)")]
    RateLimited { retry_after: Option<u64> },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("vectors from different models cannot be compared: {a} vs {b}")]
    ModelMismatch { a: String, b: String },
    #[error("zero-norm vector has no direction")]
    ZeroVector,
    #[error("non-finite vector component at index {index}")]
    NonFinite { index: usize },
    #[error("duplicate passage ref {0}")]
    DuplicateRef(PassageRef),
    #[error("no candidates to select from")]
    EmptyIndex,
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("index file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid config: {0}")]
    Config(String),
}

/// A fixed-dimension real vector tagged with the model that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub dims: usize,
    pub model_id: String,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>, model_id: impl Into<String>) -> Self {
        let dims = values.len();
        EmbeddingVector {
            values,
            dims,
            model_id: model_id.into(),
        }
    }

    fn check_finite(&self) -> Result<(), VecIndexError> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(VecIndexError::NonFinite { index }),
            None => Ok(()),
        }
    }
}

/// Cosine similarity, clamped to [-1, 1] against rounding drift.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, VecIndexError> {
    if a.model_id != b.model_id {
        return Err(VecIndexError::ModelMismatch {
            a: a.model_id.clone(),
            b: b.model_id.clone(),
        });
    }
    if a.dims != b.dims {
        return Err(VecIndexError::DimensionMismatch {
            expected: a.dims,
            got: b.dims,
        });
    }
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.values.iter().zip(&b.values) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(VecIndexError::ZeroVector);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// One indexed passage: its address plus its embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub passage_ref: PassageRef,
    pub vector: EmbeddingVector,
}

/// Selection parameters. `token_budget` caps how much selected text the
/// caller is willing to forward to a model, in estimated tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MmrConfig {
    pub lambda: f64,
    pub k: usize,
    pub token_budget: usize,
}

impl Default for MmrConfig {
    fn default() -> Self {
        MmrConfig {
            lambda: 0.5,
            k: 9,
            token_budget: 6000,
        }
    }
}

impl MmrConfig {
    pub fn validate(&self) -> Result<(), VecIndexError> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(VecIndexError::Config(format!(
                "lambda must be in [0, 1], got {}",
                self.lambda
            )));
        }
        if self.k == 0 {
            return Err(VecIndexError::Config("k must be at least 1".into()));
        }
        if self.token_budget == 0 {
            return Err(VecIndexError::Config(
                "token_budget must be positive".into(),
            ));
        }
        Ok(())
    }

    /// How many passages a selection may return: capped by `k`, by the
    /// candidate count, and by how many passages of the largest observed
    /// size fit the token budget (never below 1).
    pub fn effective_k(&self, n_candidates: usize, max_passage_tokens: usize) -> usize {
        let budget_k = usize::max(1, self.token_budget / usize::max(1, max_passage_tokens));
        usize::min(self.k, usize::min(n_candidates, budget_k))
    }
}

/// Greedy relevance/diversity selection over `candidates`.
///
/// `max_passage_tokens` is the largest token estimate among the candidate
/// passages; the index itself stores no sizes, so the caller supplies it to
/// drive the budget cap. Ties in the per-round argmax keep the earliest
/// candidate, making selection fully deterministic.
pub fn mmr_select(
    query: &EmbeddingVector,
    candidates: &[IndexEntry],
    cfg: &MmrConfig,
    max_passage_tokens: usize,
) -> Result<Vec<PassageRef>, VecIndexError> {
    cfg.validate()?;
    if candidates.is_empty() {
        return Err(VecIndexError::EmptyIndex);
    }
    let mut seen = BTreeSet::new();
    for entry in candidates {
        if !seen.insert(&entry.passage_ref) {
            return Err(VecIndexError::DuplicateRef(entry.passage_ref.clone()));
        }
    }
    let relevance: Vec<f64> = candidates
        .iter()
        .map(|c| cosine(&c.vector, query))
        .collect::<Result<_, _>>()?;

    let n = candidates.len();
    let effective_k = cfg.effective_k(n, max_passage_tokens);
    let mut picked = vec![false; n];
    let mut max_sim = vec![f64::NEG_INFINITY; n];
    let mut selection = Vec::with_capacity(effective_k);
    for _ in 0..effective_k {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..n {
            if picked[i] {
                continue;
            }
            // The redundancy term is a max over the selected set; before
            // anything is selected it is taken as 0, so the first pick is
            // ranked on relevance alone.
            let redundancy = if selection.is_empty() { 0.0 } else { max_sim[i] };
            let score = cfg.lambda * relevance[i] - (1.0 - cfg.lambda) * redundancy;
            match best {
                Some((_, best_score)) if score <= best_score => {}
                _ => best = Some((i, score)),
            }
        }
        let (winner, _) = best.expect("effective_k <= n leaves a candidate");
        picked[winner] = true;
        selection.push(candidates[winner].passage_ref.clone());
        for i in 0..n {
            if picked[i] {
                continue;
            }
            let sim = cosine(&candidates[i].vector, &candidates[winner].vector)?;
            if sim > max_sim[i] {
                max_sim[i] = sim;
            }
        }
    }
    Ok(selection)
}

/// Source of embeddings. Implementations must be deterministic per
/// (model_id, text).
pub trait EmbeddingProvider: Send + Sync {
    fn model_id(&self) -> String;
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, VecIndexError>;
}

/// Runs a provider and enforces the output contract: one vector per input,
/// uniform dims and model id, finite values.
pub fn embed_validated(
    provider: &dyn EmbeddingProvider,
    texts: &[String],
) -> Result<Vec<EmbeddingVector>, VecIndexError> {
    let vectors = provider.embed(texts)?;
    if vectors.len() != texts.len() {
        return Err(VecIndexError::Provider {
            status: 0,
            body: format!(
                "provider returned {} vectors for {} texts",
                vectors.len(),
                texts.len()
            ),
        });
    }
    let expected_model = provider.model_id();
    for v in &vectors {
        if v.model_id != expected_model {
            return Err(VecIndexError::ModelMismatch {
                a: expected_model,
                b: v.model_id.clone(),
            });
        }
        if v.values.len() != v.dims {
            return Err(VecIndexError::DimensionMismatch {
                expected: v.dims,
                got: v.values.len(),
            });
        }
        v.check_finite()?;
    }
    if let Some(first) = vectors.first() {
        for v in &vectors {
            if v.dims != first.dims {
                return Err(VecIndexError::DimensionMismatch {
                    expected: first.dims,
                    got: v.dims,
                });
            }
        }
    }
    Ok(vectors)
}

const MOCK_DIMS: usize = 64;
const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a64_step(hash: u64, byte: u8) -> u64 {
    (hash ^ u64::from(byte)).wrapping_mul(FNV_PRIME)
}

/// Offline embedding provider: projects byte-trigram counts through a
/// seeded pseudo-random sign matrix and unit-normalizes.
///
/// For each trigram window `w` of the UTF-8 bytes (texts shorter than 3
/// bytes contribute their whole byte string as a single window) and each
/// output dimension `j`, the sign is +1 when
/// `fnv1a64(seed_le_bytes || w || [j])` is even, else -1; signs accumulate
/// per window occurrence. A zero accumulation falls back to the first basis
/// vector so every output has a direction.
#[derive(Debug, Clone, Copy)]
pub struct MockEmbeddingProvider {
    pub seed: u64,
}

impl MockEmbeddingProvider {
    pub fn new(seed: u64) -> Self {
        MockEmbeddingProvider { seed }
    }

    fn vector_for(&self, text: &str) -> EmbeddingVector {
        let bytes = text.as_bytes();
        let mut values = vec![0.0f64; MOCK_DIMS];
        let mut accumulate = |window: &[u8]| {
            for (j, slot) in values.iter_mut().enumerate() {
                let mut h = FNV_OFFSET;
                for b in self.seed.to_le_bytes() {
                    h = fnv1a64_step(h, b);
                }
                for b in window {
                    h = fnv1a64_step(h, *b);
                }
                h = fnv1a64_step(h, j as u8);
                *slot += if h & 1 == 0 { 1.0 } else { -1.0 };
            }
        };
        if bytes.len() < 3 {
            accumulate(bytes);
        } else {
            for window in bytes.windows(3) {
                accumulate(window);
            }
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            values = vec![0.0; MOCK_DIMS];
            values[0] = 1.0;
        } else {
            for v in &mut values {
                *v /= norm;
            }
        }
        EmbeddingVector::new(values, self.model_id())
    }
}

impl EmbeddingProvider for MockEmbeddingProvider {
    fn model_id(&self) -> String {
        format!("mock-v1:{}", self.seed)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, VecIndexError> {
        Ok(texts.iter().map(|t| self.vector_for(t)).collect())
    }
}

/// Remote embedding endpoint speaking `POST {model, texts[]} -> {vectors[][]}`.
pub struct HttpEmbeddingProvider {
    url: String,
    api_key: Option<String>,
    model: String,
    agent: ureq::Agent,
}

impl HttpEmbeddingProvider {
    pub fn new(url: impl Into<String>, model: impl Into<String>, api_key: Option<String>) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(120)))
            .build();
        HttpEmbeddingProvider {
            url: url.into(),
            api_key,
            model: model.into(),
            agent: ureq::Agent::new_with_config(config),
        }
    }

    /// Endpoint from `EXTRACTOR_EMBED_URL`, key from `EXTRACTOR_EMBED_KEY`
    /// (optional).
    pub fn from_env(model: impl Into<String>) -> Result<Self, VecIndexError> {
        let url = std::env::var("EXTRACTOR_EMBED_URL")
            .map_err(|_| VecIndexError::Config("EXTRACTOR_EMBED_URL is not set".into()))?;
        let api_key = std::env::var("EXTRACTOR_EMBED_KEY").ok();
        Ok(Self::new(url, model, api_key))
    }
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn model_id(&self) -> String {
        self.model.clone()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, VecIndexError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let payload = serde_json::json!({ "model": self.model, "texts": texts });
        let mut request = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            request = request.header("authorization", &format!("Bearer {key}"));
        }
        let mut response = request.send_json(&payload).map_err(|e| VecIndexError::Provider {
            status: 0,
            body: e.to_string(),
        })?;
        let status = response.status().as_u16();
        if status == 429 {
            let retry_after = response
                .headers()
                .get("retry-after")
                .and_then(|v| v.to_str().ok())
                .and_then(|s| s.trim().parse().ok());
            return Err(VecIndexError::RateLimited { retry_after });
        }
        let body = response
            .body_mut()
            .read_to_string()
            .map_err(|e| VecIndexError::Provider {
                status,
                body: e.to_string(),
            })?;
        if !(200..300).contains(&status) {
            return Err(VecIndexError::Provider {
                status,
                body: body.chars().take(200).collect(),
            });
        }
        let parsed: EmbedResponse =
            serde_json::from_str(&body).map_err(|e| VecIndexError::Provider {
                status,
                body: format!("unparseable response body: {e}"),
            })?;
        let model_id = self.model_id();
        Ok(parsed
            .vectors
            .into_iter()
            .map(|values| EmbeddingVector::new(values, model_id.clone()))
            .collect())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexLine {
    doc_id: String,
    ordinal: usize,
    model_id: String,
    values: Vec<f64>,
}

/// Append-only in-memory index over passage embeddings, persisted as JSON
/// lines. All entries share one model id and dimensionality.
#[derive(Debug, Default, Clone)]
pub struct VectorIndex {
    entries: Vec<IndexEntry>,
    refs: BTreeSet<PassageRef>,
}

impl VectorIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, entry: IndexEntry) -> Result<(), VecIndexError> {
        entry.vector.check_finite()?;
        if entry.vector.values.len() != entry.vector.dims {
            return Err(VecIndexError::DimensionMismatch {
                expected: entry.vector.dims,
                got: entry.vector.values.len(),
            });
        }
        if let Some(first) = self.entries.first() {
            if first.vector.model_id != entry.vector.model_id {
                return Err(VecIndexError::ModelMismatch {
                    a: first.vector.model_id.clone(),
                    b: entry.vector.model_id.clone(),
                });
            }
            if first.vector.dims != entry.vector.dims {
                return Err(VecIndexError::DimensionMismatch {
                    expected: first.vector.dims,
                    got: entry.vector.dims,
                });
            }
        }
        if !self.refs.insert(entry.passage_ref.clone()) {
            return Err(VecIndexError::DuplicateRef(entry.passage_ref));
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn model_id(&self) -> Option<&str> {
        self.entries.first().map(|e| e.vector.model_id.as_str())
    }

    pub fn entries_for_doc(&self, doc_id: &str) -> Vec<IndexEntry> {
        self.entries
            .iter()
            .filter(|e| e.passage_ref.doc_id == doc_id)
            .cloned()
            .collect()
    }

    /// Writes entries in insertion order, one JSON object per line.
    pub fn save(&self, path: &Path) -> Result<(), VecIndexError> {
        let io_err = |source| VecIndexError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut out = Vec::new();
        for entry in &self.entries {
            let line = IndexLine {
                doc_id: entry.passage_ref.doc_id.clone(),
                ordinal: entry.passage_ref.ordinal,
                model_id: entry.vector.model_id.clone(),
                values: entry.vector.values.clone(),
            };
            serde_json::to_writer(&mut out, &line)
                .map_err(|e| io_err(std::io::Error::other(e)))?;
            out.push(b'\n');
        }
        let mut file = fs::File::create(path).map_err(io_err)?;
        file.write_all(&out).map_err(io_err)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, VecIndexError> {
        let file = fs::File::open(path).map_err(|source| VecIndexError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut index = Self::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| VecIndexError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: IndexLine =
                serde_json::from_str(&line).map_err(|e| VecIndexError::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            index.add(IndexEntry {
                passage_ref: PassageRef {
                    doc_id: parsed.doc_id,
                    ordinal: parsed.ordinal,
                },
                vector: EmbeddingVector::new(parsed.values, parsed.model_id),
            })?;
        }
        Ok(index)
    }
}
