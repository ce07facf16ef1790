//! Okapi BM25 retrieval over an in-memory inverted index.
//!
//! score(q, d) = Σ_{t ∈ distinct(q)} IDF(t) · tf·(k1+1) / (tf + k1·(1 − b + b·dl/avgdl))
//! IDF(t)      = ln(1 + (N − df + 0.5) / (df + 0.5))
//!
//! The IDF form is the non-negative Lucene variant, so every matching chunk
//! scores strictly above zero and non-matching chunks are left out of results.

mod persist;

pub use persist::{load_index, read_index, save_index, write_index, INDEX_MAGIC, INDEX_VERSION};

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{surfaces, Chunk, ChunkConfig};
use crate::exec::Execution;

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error("cannot build an index over zero chunks")]
    Empty,
    #[error("duplicate chunk_id {0:?}")]
    DuplicateChunkId(String),
    #[error("unknown chunk reference {0}")]
    UnknownChunk(usize),
    #[error("n must be positive")]
    ZeroN,
    #[error("invalid BM25 parameters k1={k1}, b={b}")]
    InvalidParams { k1: f64, b: f64 },
    #[error("index file: {0}")]
    Io(#[from] std::io::Error),
    #[error("not an index file (bad magic)")]
    BadMagic,
    #[error("unsupported index version {0}")]
    UnsupportedVersion(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn new(k1: f64, b: f64) -> Result<Self, IndexError> {
        if !(k1 >= 0.0 && k1.is_finite() && (0.0..=1.0).contains(&b)) {
            return Err(IndexError::InvalidParams { k1, b });
        }
        Ok(Self { k1, b })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub chunk: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalHit {
    /// Position of the chunk in [`InvertedIndex::chunks`].
    pub chunk_ref: usize,
    pub bm25_score: f64,
    pub rank: usize,
}

/// Term → postings map plus the chunk table it refers to.
///
/// Chunks are stored sorted by `chunk_id`, which makes chunk references, and
/// therefore the persisted file, independent of insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    pub params: Bm25Params,
    pub chunking: ChunkConfig,
    chunks: Vec<Chunk>,
    doc_lengths: Vec<u32>,
    postings: BTreeMap<String, Vec<Posting>>,
    avgdl: f64,
}

pub fn build_index(chunks: &[Chunk], params: Bm25Params) -> Result<InvertedIndex, IndexError> {
    InvertedIndex::build(chunks.to_vec(), params, ChunkConfig::default())
}

impl InvertedIndex {
    pub fn build(
        mut chunks: Vec<Chunk>,
        params: Bm25Params,
        chunking: ChunkConfig,
    ) -> Result<Self, IndexError> {
        if chunks.is_empty() {
            return Err(IndexError::Empty);
        }
        chunks.sort_by(|a, b| a.chunk_id.cmp(&b.chunk_id));
        if let Some(w) = chunks.windows(2).find(|w| w[0].chunk_id == w[1].chunk_id) {
            return Err(IndexError::DuplicateChunkId(w[0].chunk_id.clone()));
        }

        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_lengths = Vec::with_capacity(chunks.len());
        for (i, chunk) in chunks.iter().enumerate() {
            doc_lengths.push(chunk.len() as u32);
            let mut tf: BTreeMap<&str, u32> = BTreeMap::new();
            for s in chunk.surfaces() {
                *tf.entry(s).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term.to_string()).or_default().push(Posting {
                    chunk: i as u32,
                    tf: count,
                });
            }
        }
        Ok(Self::from_parts(params, chunking, chunks, postings))
    }

    pub(crate) fn from_parts(
        params: Bm25Params,
        chunking: ChunkConfig,
        chunks: Vec<Chunk>,
        postings: BTreeMap<String, Vec<Posting>>,
    ) -> Self {
        let doc_lengths: Vec<u32> = chunks.iter().map(|c| c.len() as u32).collect();
        let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
        let avgdl = total as f64 / doc_lengths.len().max(1) as f64;
        Self {
            params,
            chunking,
            chunks,
            doc_lengths,
            postings,
            avgdl,
        }
    }

    pub fn n_chunks(&self) -> usize {
        self.chunks.len()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn chunk(&self, chunk_ref: usize) -> &Chunk {
        &self.chunks[chunk_ref]
    }

    pub fn doc_length(&self, chunk_ref: usize) -> usize {
        self.doc_lengths[chunk_ref] as usize
    }

    pub fn find_chunk(&self, chunk_id: &str) -> Option<usize> {
        self.chunks
            .binary_search_by(|c| c.chunk_id.as_str().cmp(chunk_id))
            .ok()
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn terms(&self) -> impl Iterator<Item = (&str, &[Posting])> {
        self.postings.iter().map(|(t, p)| (t.as_str(), p.as_slice()))
    }

    pub fn document_frequency(&self, term: &str) -> usize {
        self.postings(term).len()
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.chunks.len() as f64;
        let df = self.document_frequency(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn term_weight(&self, idf: f64, tf: u32, chunk_ref: usize) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = tf as f64;
        let dl = self.doc_lengths[chunk_ref] as f64;
        idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl / self.avgdl))
    }

    pub fn bm25_score(&self, query_tokens: &[String], chunk_ref: usize) -> Result<f64, IndexError> {
        if chunk_ref >= self.chunks.len() {
            return Err(IndexError::UnknownChunk(chunk_ref));
        }
        let mut score = 0.0;
        for term in distinct(query_tokens) {
            let postings = self.postings(term);
            if let Ok(pos) = postings.binary_search_by_key(&(chunk_ref as u32), |p| p.chunk) {
                score += self.term_weight(self.idf(term), postings[pos].tf, chunk_ref);
            }
        }
        Ok(score)
    }

    /// Scores of every chunk with at least one query term, as `(chunk_ref, score)`.
    pub fn score_all(&self, query_tokens: &[String]) -> Vec<(usize, f64)> {
        let mut acc = vec![0.0f64; self.chunks.len()];
        let mut touched = Vec::new();
        for term in distinct(query_tokens) {
            let idf = self.idf(term);
            for p in self.postings(term) {
                let r = p.chunk as usize;
                if acc[r] == 0.0 {
                    touched.push(r);
                }
                acc[r] += self.term_weight(idf, p.tf, r);
            }
        }
        touched.into_iter().map(|r| (r, acc[r])).collect()
    }

    pub fn retrieve_top_n(&self, question: &str, n: usize) -> Result<Vec<RetrievalHit>, IndexError> {
        self.retrieve_tokens(&surfaces(question), n)
    }

    pub fn retrieve_tokens(
        &self,
        query_tokens: &[String],
        n: usize,
    ) -> Result<Vec<RetrievalHit>, IndexError> {
        if n == 0 {
            return Err(IndexError::ZeroN);
        }
        let mut scored = self.score_all(query_tokens);
        scored.retain(|&(_, s)| s > 0.0);
        let cmp = |a: &(usize, f64), b: &(usize, f64)| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(Ordering::Equal)
                .then_with(|| self.chunks[a.0].chunk_id.cmp(&self.chunks[b.0].chunk_id))
        };
        if scored.len() > n {
            scored.select_nth_unstable_by(n - 1, cmp);
            scored.truncate(n);
        }
        scored.sort_by(cmp);
        Ok(scored
            .into_iter()
            .enumerate()
            .map(|(i, (chunk_ref, bm25_score))| RetrievalHit {
                chunk_ref,
                bm25_score,
                rank: i + 1,
            })
            .collect())
    }

    /// Retrieve for many questions at once; output order follows `questions`.
    pub fn retrieve_batch(
        &self,
        questions: &[String],
        n: usize,
        exec: Execution,
    ) -> Result<Vec<Vec<RetrievalHit>>, IndexError> {
        if n == 0 {
            return Err(IndexError::ZeroN);
        }
        exec.map(questions, |q| self.retrieve_top_n(q, n))
            .into_iter()
            .collect()
    }
}

/// Distinct terms in order of first occurrence.
fn distinct(tokens: &[String]) -> impl Iterator<Item = &str> {
    let mut seen = HashSet::new();
    tokens
        .iter()
        .map(String::as_str)
        .filter(move |t| seen.insert(*t))
}
