//! Dense retrieval: deterministic hashed character-bigram embeddings and
//! brute-force maximum cosine similarity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::KnowledgeBase;
use crate::retrieval::{instance_text, rank, Hit, SNAPSHOT_VERSION};
use crate::text::{char_bigrams, normalize};

pub const DEFAULT_DIM: usize = 256;

/// Tag identifying the built-in embedder in snapshots.
pub const HASHED_BIGRAM_TAG: &str = "fnv1a-bigram";

const FNV_OFFSET: u64 = 0xCBF29CE484222325;
const FNV_PRIME: u64 = 0x100000001B3;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = FNV_OFFSET;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// Embed text as L2-normalized counts of FNV-1a-hashed character bigrams of
/// its normalized form. Texts with no bigrams are degenerate.
pub fn embed(text: &str, dim: usize) -> Result<Vec<f64>> {
    if dim < 2 {
        return Err(Error::InvalidArgument(format!("dim must be >= 2, got {dim}")));
    }
    let bigrams = char_bigrams(&normalize(text));
    if bigrams.is_empty() {
        return Err(Error::DegenerateEmbedding);
    }
    let mut counts = vec![0.0f64; dim];
    for bg in bigrams {
        let bucket = (fnv1a(bg.as_bytes()) % dim as u64) as usize;
        counts[bucket] += 1.0;
    }
    let norm = counts.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in counts.iter_mut() {
        *x /= norm;
    }
    Ok(counts)
}

/// Cosine similarity of two nonzero vectors of equal dimension.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch(u.len(), v.len()));
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok(dot / (nu * nv))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingIndex {
    version: String,
    vectors: Vec<(usize, Vec<f64>)>,
    dim: usize,
    embedder_tag: String,
}

impl EmbeddingIndex {
    /// Embed every knowledge instance with the built-in embedder.
    pub fn build(kb: &KnowledgeBase, dim: usize) -> Result<Self> {
        if kb.is_empty() {
            return Err(Error::EmptyKb);
        }
        let mut vectors = Vec::with_capacity(kb.len());
        for inst in kb.instances() {
            vectors.push((inst.id, embed(&instance_text(inst), dim)?));
        }
        Ok(Self {
            version: SNAPSHOT_VERSION.to_string(),
            vectors,
            dim,
            embedder_tag: HASHED_BIGRAM_TAG.to_string(),
        })
    }

    /// Build from precomputed unit vectors (external embedder).
    pub fn from_vectors(vectors: Vec<(usize, Vec<f64>)>, dim: usize, tag: &str) -> Result<Self> {
        for (id, v) in &vectors {
            if v.len() != dim {
                return Err(Error::DimensionMismatch(v.len(), dim));
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "vector for doc {id} is not unit norm ({norm})"
                )));
            }
        }
        Ok(Self {
            version: SNAPSHOT_VERSION.to_string(),
            vectors,
            dim,
            embedder_tag: tag.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embedder_tag(&self) -> &str {
        &self.embedder_tag
    }

    /// Top-k stored vectors by cosine against a query vector, ties broken by
    /// ascending doc id. Brute-force scan; corpus sizes here do not warrant
    /// an ANN structure.
    pub fn search_vector(&self, query: &[f64], k: usize) -> Result<Vec<Hit>> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be >= 1".into()));
        }
        if self.vectors.is_empty() {
            return Err(Error::EmptyKb);
        }
        let mut hits = Vec::with_capacity(self.vectors.len());
        for (doc_id, v) in &self.vectors {
            hits.push(Hit {
                doc_id: *doc_id,
                score: cosine(query, v)?,
            });
        }
        Ok(rank(hits, k))
    }

    /// Embed the query text with the index's embedder, then search.
    pub fn retrieve(&self, query: &str, k: usize) -> Result<Vec<Hit>> {
        let qv = embed(query, self.dim)?;
        self.search_vector(&qv, k)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let idx: Self = serde_json::from_reader(std::io::BufReader::new(file))?;
        if idx.version != SNAPSHOT_VERSION {
            return Err(Error::SnapshotVersion {
                found: idx.version,
                expected: SNAPSHOT_VERSION.to_string(),
            });
        }
        Ok(idx)
    }
}
