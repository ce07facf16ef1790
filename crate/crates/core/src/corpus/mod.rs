//! Document ingestion and sliding-window chunking.

mod squad;
mod tokenize;

pub use squad::{load_squad, parse_squad, GoldAnswer, SquadDataset, SquadEntry};
pub use tokenize::{normalize_surface, surfaces, tokenize, Token};

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("invalid chunking: granularity {granularity}, stride {stride} (need 0 < stride <= granularity)")]
    InvalidChunking { granularity: usize, stride: usize },
    #[error("duplicate doc_id {0:?}")]
    DuplicateDocId(String),
    #[error("empty text in document {0:?}")]
    EmptyDocument(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("malformed SQuAD file: {0}")]
    MalformedSquad(String),
    #[error("question {question_id}: answer {text:?} does not occur at offset {answer_start}")]
    AnswerMismatch {
        question_id: String,
        text: String,
        answer_start: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    #[serde(default)]
    pub title: String,
    pub text: String,
}

/// Window size `granularity` and step `stride`, both in tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkConfig {
    pub granularity: usize,
    pub stride: usize,
}

impl ChunkConfig {
    pub fn new(granularity: usize, stride: usize) -> Result<Self, CorpusError> {
        if stride == 0 || stride > granularity {
            return Err(CorpusError::InvalidChunking {
                granularity,
                stride,
            });
        }
        Ok(Self {
            granularity,
            stride,
        })
    }
}

impl Default for ChunkConfig {
    fn default() -> Self {
        Self {
            granularity: 100,
            stride: 50,
        }
    }
}

/// A contiguous token window of one document.
///
/// Token offsets are relative to the parent document's text; `text` holds the
/// document slice `[char_start, char_end)` spanned by the tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub window_start: usize,
    pub tokens: Vec<Token>,
    pub char_start: usize,
    pub char_end: usize,
    pub text: String,
}

impl Chunk {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Source text covered by chunk tokens `first..=last`.
    pub fn span_text(&self, first: usize, last: usize) -> &str {
        let (start, end) = self.span_local_offsets(first, last);
        &self.text[start..end]
    }

    /// Byte offsets of tokens `first..=last` relative to `self.text`.
    pub fn span_local_offsets(&self, first: usize, last: usize) -> (usize, usize) {
        (
            self.tokens[first].char_start - self.char_start,
            self.tokens[last].char_end - self.char_start,
        )
    }

    pub fn surfaces(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.surface.as_str())
    }

    /// True when the document byte range `[start, end)` lies inside this chunk.
    pub fn contains_range(&self, start: usize, end: usize) -> bool {
        self.char_start <= start && end <= self.char_end
    }
}

pub fn chunk_id(doc_id: &str, window_start: usize) -> String {
    format!("{doc_id}#{window_start}")
}

/// Token windows `[start, end)` for a document of `n_tokens` tokens.
pub fn window_ranges(n_tokens: usize, config: ChunkConfig) -> Vec<(usize, usize)> {
    let mut ranges = Vec::new();
    let mut start = 0;
    while start < n_tokens {
        let end = (start + config.granularity).min(n_tokens);
        ranges.push((start, end));
        if end == n_tokens {
            break;
        }
        start += config.stride;
    }
    ranges
}

pub fn chunk_document(doc: &Document, config: ChunkConfig) -> Vec<Chunk> {
    let tokens = tokenize(&doc.text);
    chunk_tokens(doc, &tokens, config)
}

fn chunk_tokens(doc: &Document, tokens: &[Token], config: ChunkConfig) -> Vec<Chunk> {
    window_ranges(tokens.len(), config)
        .into_iter()
        .map(|(start, end)| {
            let window = tokens[start..end].to_vec();
            let char_start = window[0].char_start;
            let char_end = window[window.len() - 1].char_end;
            Chunk {
                chunk_id: chunk_id(&doc.doc_id, start),
                doc_id: doc.doc_id.clone(),
                window_start: start,
                tokens: window,
                char_start,
                char_end,
                text: doc.text[char_start..char_end].to_string(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub documents: usize,
    pub chunks: usize,
    pub mean_chunk_len: f64,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub config: ChunkConfig,
    pub chunks: Vec<Chunk>,
    pub stats: CorpusStats,
}

/// Chunk in-memory documents; output is ordered by `(doc_id, window_start)`.
pub fn ingest_documents(docs: &[Document], config: ChunkConfig) -> Result<Corpus, CorpusError> {
    let mut seen = HashSet::new();
    for doc in docs {
        if !seen.insert(doc.doc_id.as_str()) {
            return Err(CorpusError::DuplicateDocId(doc.doc_id.clone()));
        }
        if doc.text.is_empty() {
            return Err(CorpusError::EmptyDocument(doc.doc_id.clone()));
        }
    }
    let mut order: Vec<&Document> = docs.iter().collect();
    order.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));

    let chunks: Vec<Chunk> = order
        .into_iter()
        .flat_map(|doc| chunk_document(doc, config))
        .collect();
    let total: usize = chunks.iter().map(Chunk::len).sum();
    let mean_chunk_len = if chunks.is_empty() {
        0.0
    } else {
        total as f64 / chunks.len() as f64
    };
    Ok(Corpus {
        config,
        stats: CorpusStats {
            documents: docs.len(),
            chunks: chunks.len(),
            mean_chunk_len,
        },
        chunks,
    })
}

/// Read documents from JSON-lines files (`{"doc_id", "title", "text"}` per line).
pub fn read_documents<P: AsRef<Path>>(paths: &[P]) -> Result<Vec<Document>, CorpusError> {
    let mut docs = Vec::new();
    for path in paths {
        let path = path.as_ref();
        let io_err = |source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        };
        let reader = BufReader::new(File::open(path).map_err(io_err)?);
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(io_err)?;
            if line.trim().is_empty() {
                continue;
            }
            let doc: Document =
                serde_json::from_str(&line).map_err(|source| CorpusError::Json {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    source,
                })?;
            docs.push(doc);
        }
    }
    Ok(docs)
}

pub fn ingest_corpus<P: AsRef<Path>>(paths: &[P], config: ChunkConfig) -> Result<Corpus, CorpusError> {
    let docs = read_documents(paths)?;
    ingest_documents(&docs, config)
}

/// Serialize documents as JSON lines.
pub fn write_documents<W: std::io::Write>(docs: &[Document], mut out: W) -> std::io::Result<()> {
    for doc in docs {
        serde_json::to_writer(&mut out, doc)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
