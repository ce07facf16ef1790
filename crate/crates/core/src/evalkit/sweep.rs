use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::{ingest_documents, ChunkConfig, CorpusError, Document, SquadDataset};
use crate::encoder::{ModelParameters, Vocab};
use crate::pipeline::{PipelineError, Reader, ReaderOptions};
use crate::retriever::{Bm25Params, IndexError, InvertedIndex};

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

/// One chunking setting with the model trained for it.
#[derive(Debug, Clone)]
pub struct SweepSetting {
    pub chunking: ChunkConfig,
    pub params: ModelParameters,
    pub vocab: Vocab,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub granularity: usize,
    pub stride: usize,
    pub n_retrieve: usize,
    pub k: usize,
    pub em: f64,
    pub f1: f64,
}

/// Open-domain EM/F1 for every (setting, n_retrieve, k) combination, in that
/// nesting order.
pub fn granularity_sweep(
    documents: &[Document],
    questions: &SquadDataset,
    settings: &[SweepSetting],
    n_values: &[usize],
    k_values: &[usize],
    bm25: Bm25Params,
    options: ReaderOptions,
) -> Result<Vec<SweepCell>, SweepError> {
    let mut cells = Vec::new();
    for s in settings {
        let corpus = ingest_documents(documents, s.chunking)?;
        let index = InvertedIndex::build(corpus.chunks, bm25, s.chunking)?;
        let reader = Reader::new(s.params.clone(), s.vocab.clone(), index, options)?;
        for &n in n_values {
            for (k, report) in reader.evaluate_open(questions, n, k_values)? {
                cells.push(SweepCell {
                    granularity: s.chunking.granularity,
                    stride: s.chunking.stride,
                    n_retrieve: n,
                    k,
                    em: report.em,
                    f1: report.f1,
                });
            }
        }
    }
    Ok(cells)
}

pub fn write_sweep_csv<W: Write>(cells: &[SweepCell], mut w: W) -> std::io::Result<()> {
    writeln!(w, "granularity,stride,n_retrieve,k,em,f1")?;
    for c in cells {
        writeln!(w, "{},{},{},{},{},{}", c.granularity, c.stride, c.n_retrieve, c.k, c.em, c.f1)?;
    }
    Ok(())
}
