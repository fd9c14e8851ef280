//! Okapi BM25 inverted index.
//!
//! Scoring uses the +1-inside-log IDF so every score is non-negative:
//!
//! ```text
//! score(q, d) = sum over distinct query tokens t of
//!     ln(1 + (N - df + 0.5) / (df + 0.5))
//!       * tf * (k1 + 1) / (tf + k1 * (1 - b + b * |d| / avgdl))
//! ```

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::KnowledgeBase;
use crate::retrieval::{instance_text, rank, Hit, SNAPSHOT_VERSION};
use crate::text::tokenize;

pub const DEFAULT_K1: f64 = 1.2;
pub const DEFAULT_B: f64 = 0.75;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Bm25Index {
    version: String,
    postings: HashMap<String, Vec<(usize, u32)>>,
    doc_len: Vec<u32>,
    avgdl: f64,
    n: usize,
    k1: f64,
    b: f64,
}

impl Bm25Index {
    /// Index every knowledge instance as one document.
    pub fn build(kb: &KnowledgeBase, k1: f64, b: f64) -> Result<Self> {
        if kb.is_empty() {
            return Err(Error::EmptyKb);
        }
        if k1 <= 0.0 || k1.is_nan() {
            return Err(Error::InvalidArgument(format!("k1 must be > 0, got {k1}")));
        }
        if !(0.0..=1.0).contains(&b) {
            return Err(Error::InvalidArgument(format!("b must be in [0,1], got {b}")));
        }
        let texts: Vec<String> = kb.instances().iter().map(instance_text).collect();
        Self::build_from_texts(&texts, k1, b)
    }

    /// Index arbitrary documents; doc ids are positions in `texts`.
    pub fn build_from_texts(texts: &[String], k1: f64, b: f64) -> Result<Self> {
        if texts.is_empty() {
            return Err(Error::EmptyKb);
        }
        let mut postings: HashMap<String, Vec<(usize, u32)>> = HashMap::new();
        let mut doc_len = Vec::with_capacity(texts.len());
        for (doc_id, text) in texts.iter().enumerate() {
            let tokens = tokenize(text);
            doc_len.push(tokens.len() as u32);
            let mut tf: HashMap<String, u32> = HashMap::new();
            for tok in tokens {
                *tf.entry(tok).or_insert(0) += 1;
            }
            for (tok, count) in tf {
                postings.entry(tok).or_default().push((doc_id, count));
            }
        }
        for list in postings.values_mut() {
            list.sort_by_key(|&(id, _)| id);
        }
        let n = texts.len();
        let avgdl = doc_len.iter().map(|&l| l as f64).sum::<f64>() / n as f64;
        Ok(Self {
            version: SNAPSHOT_VERSION.to_string(),
            postings,
            doc_len,
            avgdl,
            n,
            k1,
            b,
        })
    }

    pub fn doc_count(&self) -> usize {
        self.n
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn doc_len(&self, doc_id: usize) -> Option<u32> {
        self.doc_len.get(doc_id).copied()
    }

    pub fn params(&self) -> (f64, f64) {
        (self.k1, self.b)
    }

    fn idf(&self, df: usize) -> f64 {
        (1.0 + (self.n as f64 - df as f64 + 0.5) / (df as f64 + 0.5)).ln()
    }

    fn term_score(&self, tf: u32, df: usize, doc_id: usize) -> f64 {
        let tf = tf as f64;
        let len_norm = 1.0 - self.b + self.b * self.doc_len[doc_id] as f64 / self.avgdl;
        self.idf(df) * tf * (self.k1 + 1.0) / (tf + self.k1 * len_norm)
    }

    /// BM25 score of one document for a query; unindexed tokens contribute 0.
    pub fn score(&self, query: &str, doc_id: usize) -> Result<f64> {
        if doc_id >= self.n {
            return Err(Error::InvalidDocId(doc_id));
        }
        let mut tokens = tokenize(query);
        tokens.sort_unstable();
        tokens.dedup();
        let mut total = 0.0;
        for tok in &tokens {
            if let Some(list) = self.postings.get(tok) {
                if let Ok(pos) = list.binary_search_by_key(&doc_id, |&(id, _)| id) {
                    total += self.term_score(list[pos].1, list.len(), doc_id);
                }
            }
        }
        Ok(total)
    }

    /// Top-k by (score desc, id asc); only positive scores are returned.
    pub fn retrieve(&self, query: &str, k: usize) -> Result<Vec<Hit>> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be >= 1".into()));
        }
        let mut tokens = tokenize(query);
        tokens.sort_unstable();
        tokens.dedup();
        let mut scores: HashMap<usize, f64> = HashMap::new();
        for tok in &tokens {
            if let Some(list) = self.postings.get(tok) {
                let df = list.len();
                for &(doc_id, tf) in list {
                    *scores.entry(doc_id).or_insert(0.0) += self.term_score(tf, df, doc_id);
                }
            }
        }
        let hits: Vec<Hit> = scores
            .into_iter()
            .filter(|&(_, s)| s > 0.0)
            .map(|(doc_id, score)| Hit { doc_id, score })
            .collect();
        Ok(rank(hits, k))
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

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy_corpus() -> Bm25Index {
        let docs = vec!["x y".to_string(), "x".to_string(), "z".to_string()];
        Bm25Index::build_from_texts(&docs, DEFAULT_K1, DEFAULT_B).unwrap()
    }

    /// Independent evaluation of the Okapi formula, kept free of the index
    /// internals so it can serve as an oracle.
    fn okapi_oracle(tf: f64, df: f64, n: f64, dl: f64, avgdl: f64, k1: f64, b: f64) -> f64 {
        let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
        idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl / avgdl))
    }

    #[test]
    fn avgdl_of_toy_corpus() {
        let idx = toy_corpus();
        assert!((idx.avgdl() - 4.0 / 3.0).abs() < 1e-12);
        assert_eq!(idx.doc_count(), 3);
    }

    #[test]
    fn single_doc_corpus() {
        let idx = Bm25Index::build_from_texts(&["a b c".to_string()], 1.2, 0.75).unwrap();
        assert_eq!(idx.doc_count(), 1);
        assert!((idx.avgdl() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn score_matches_hand_computed_value() {
        // d2 = "x": df(x)=2, N=3, tf=1, |d|=1, avgdl=4/3.
        let idx = toy_corpus();
        let expected = okapi_oracle(1.0, 2.0, 3.0, 1.0, 4.0 / 3.0, 1.2, 0.75);
        let got = idx.score("x", 1).unwrap();
        assert!((got - expected).abs() < 1e-12);
        // sanity pin against the rounded hand value
        assert!((got - 0.523).abs() < 1e-3, "got {got}");
    }

    #[test]
    fn no_overlap_scores_zero() {
        let idx = toy_corpus();
        assert_eq!(idx.score("x", 2).unwrap(), 0.0);
        assert_eq!(idx.score("q w", 0).unwrap(), 0.0);
    }

    #[test]
    fn invalid_doc_id_rejected() {
        let idx = toy_corpus();
        assert!(idx.score("x", 99).is_err());
    }

    #[test]
    fn shorter_doc_wins_under_length_normalization() {
        let idx = toy_corpus();
        let hits = idx.retrieve("x", 3).unwrap();
        assert_eq!(hits.len(), 2);
        assert_eq!(hits[0].doc_id, 1); // d2 = "x" outranks d1 = "x y"
        assert_eq!(hits[1].doc_id, 0);
    }

    #[test]
    fn full_document_query_ranks_itself_first() {
        let idx = toy_corpus();
        let hits = idx.retrieve("x y", 3).unwrap();
        assert_eq!(hits[0].doc_id, 0);
    }

    #[test]
    fn k_larger_than_matches_returns_shorter_list() {
        let idx = toy_corpus();
        assert_eq!(idx.retrieve("z", 10).unwrap().len(), 1);
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(Bm25Index::build_from_texts(&[], 1.2, 0.75).is_err());
    }

    #[test]
    fn rebuild_is_deterministic() {
        let docs = vec!["alpha beta".to_string(), "beta gamma".to_string()];
        let a = Bm25Index::build_from_texts(&docs, 1.2, 0.75).unwrap();
        let b = Bm25Index::build_from_texts(&docs, 1.2, 0.75).unwrap();
        assert_eq!(
            serde_json::to_value(&a.postings).unwrap(),
            serde_json::to_value(&b.postings).unwrap()
        );
    }

    #[test]
    fn snapshot_round_trip_and_version_check() {
        let idx = toy_corpus();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bm25.idx");
        idx.save(&path).unwrap();
        let loaded = Bm25Index::load(&path).unwrap();
        assert_eq!(loaded.doc_count(), 3);
        assert!((loaded.score("x", 1).unwrap() - idx.score("x", 1).unwrap()).abs() < 1e-15);

        // corrupt the version tag
        let mut val: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        val["version"] = serde_json::json!("bogus-v0");
        std::fs::write(&path, serde_json::to_string(&val).unwrap()).unwrap();
        assert!(matches!(
            Bm25Index::load(&path),
            Err(crate::error::Error::SnapshotVersion { .. })
        ));
    }

    #[test]
    fn score_at_avgdl_is_independent_of_b() {
        // every doc has length 2, so |d|/avgdl = 1 and b cancels
        let docs = vec!["a b".to_string(), "c d".to_string()];
        let s0 = Bm25Index::build_from_texts(&docs, 1.2, 0.0)
            .unwrap()
            .score("a", 0)
            .unwrap();
        let s1 = Bm25Index::build_from_texts(&docs, 1.2, 1.0)
            .unwrap()
            .score("a", 0)
            .unwrap();
        assert!((s0 - s1).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn score_monotone_in_tf(tf_extra in 1u32..20) {
            // doc 0 repeats the term; more repetitions never lower the score
            let base = vec!["a b".to_string(), "a c".to_string()];
            let more = vec![
                format!("a{} b", " a".repeat(tf_extra as usize)),
                "a c".to_string(),
            ];
            let idx_base = Bm25Index::build_from_texts(&base, 1.2, 0.0).unwrap();
            let idx_more = Bm25Index::build_from_texts(&more, 1.2, 0.0).unwrap();
            // b = 0 isolates tf from the length penalty
            prop_assert!(idx_more.score("a", 0).unwrap() >= idx_base.score("a", 0).unwrap());
        }

        #[test]
        fn retrieve_all_is_sorted_and_positive(seed in 0u64..500) {
            let mut rng = crate::rng::SplitMix64::new(seed);
            let vocab = ["a", "b", "c", "d", "e"];
            let docs: Vec<String> = (0..6)
                .map(|_| {
                    let len = 1 + rng.next_below(5) as usize;
                    (0..len)
                        .map(|_| vocab[rng.next_below(5) as usize])
                        .collect::<Vec<_>>()
                        .join(" ")
                })
                .collect();
            let idx = Bm25Index::build_from_texts(&docs, 1.2, 0.75).unwrap();
            let hits = idx.retrieve("a c e", docs.len()).unwrap();
            for w in hits.windows(2) {
                prop_assert!(
                    w[0].score > w[1].score
                        || (w[0].score == w[1].score && w[0].doc_id < w[1].doc_id)
                );
            }
            for h in &hits {
                prop_assert!(h.score > 0.0);
                let direct = idx.score("a c e", h.doc_id).unwrap();
                prop_assert!((h.score - direct).abs() < 1e-12);
            }
        }
    }
}
