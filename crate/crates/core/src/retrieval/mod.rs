//! Retrieval baselines over knowledge instances: Okapi BM25 over an inverted
//! index and dense cosine-similarity search over hashed-bigram embeddings.
//!
//! Both index one document per knowledge instance, with the document text
//! being `"entity attribute content"`.

mod bm25;
mod dense;

pub use bm25::{Bm25Index, DEFAULT_B, DEFAULT_K1};
pub use dense::{cosine, embed, EmbeddingIndex, DEFAULT_DIM};

use crate::kb::KnowledgeInstance;

/// Snapshot format version checked on load.
pub const SNAPSHOT_VERSION: &str = "knowtune-index-v1";

/// Document text for one knowledge instance.
pub fn instance_text(inst: &KnowledgeInstance) -> String {
    format!("{} {} {}", inst.entity, inst.attribute, inst.content)
}

/// One ranked retrieval result.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Hit {
    pub doc_id: usize,
    pub score: f64,
}

/// Sort (score desc, id asc) and truncate to k.
pub(crate) fn rank(mut hits: Vec<Hit>, k: usize) -> Vec<Hit> {
    hits.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.doc_id.cmp(&b.doc_id))
    });
    hits.truncate(k);
    hits
}
