//! Retrieve, re-rank and extract.
//!
//! A [`Reader`] owns frozen parameters, the vocabulary and the index. For each
//! question it retrieves `n_retrieve` chunks with BM25, runs the multi-task
//! model once per chunk, orders chunks by the scorer output (ties by BM25
//! score, then chunk id) and returns the top `k` with their extracted spans.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{SquadDataset, SquadEntry};
use crate::encoder::{ModelParameters, Vocab};
use crate::evalkit::{exact_match, f1, MetricReport};
use crate::exec::Execution;
use crate::multitask::{
    chunk_ids, extract_span, forward_multitask_batched, question_ids, MultitaskError,
};
use crate::retriever::{IndexError, InvertedIndex};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("need 1 <= k <= n_retrieve, got k={k}, n_retrieve={n_retrieve}")]
    InvalidK { k: usize, n_retrieve: usize },
    #[error("vocabulary has {vocab} entries but the model expects {model}")]
    VocabMismatch { vocab: usize, model: usize },
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Model(#[from] MultitaskError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedAnswer {
    /// 1-based.
    pub rank: usize,
    pub answer_text: String,
    pub chunk_ref: usize,
    pub chunk_id: String,
    pub doc_id: String,
    pub paragraph_score: f64,
    /// Inclusive chunk-token indices.
    pub span: (usize, usize),
    pub span_score: f64,
    pub bm25_score: f64,
    /// Byte range of the answer inside the chunk text.
    pub text_range: (usize, usize),
}

impl RankedAnswer {
    /// `text_range` as code-point offsets into `chunk_text`.
    pub fn char_range(&self, chunk_text: &str) -> (usize, usize) {
        let (s, e) = self.text_range;
        let start = chunk_text[..s].chars().count();
        (start, start + chunk_text[s..e].chars().count())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReaderOptions {
    pub max_answer_len: usize,
    /// Chunks padded and encoded together; does not change results.
    pub batch_size: usize,
    #[serde(skip)]
    pub exec: Execution,
}

impl Default for ReaderOptions {
    fn default() -> Self {
        Self {
            max_answer_len: 30,
            batch_size: 1,
            exec: Execution::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Reader {
    params: ModelParameters,
    vocab: Vocab,
    index: InvertedIndex,
    pub options: ReaderOptions,
}

impl Reader {
    pub fn new(
        params: ModelParameters,
        vocab: Vocab,
        index: InvertedIndex,
        options: ReaderOptions,
    ) -> Result<Self, PipelineError> {
        if vocab.len() != params.config.vocab_size {
            return Err(PipelineError::VocabMismatch {
                vocab: vocab.len(),
                model: params.config.vocab_size,
            });
        }
        Ok(Self {
            params,
            vocab,
            index,
            options,
        })
    }

    pub fn params(&self) -> &ModelParameters {
        &self.params
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn index(&self) -> &InvertedIndex {
        &self.index
    }

    /// Every retrieved chunk with its span, in final rank order, before
    /// duplicate suppression and the `k` cut.
    pub fn rank_all(&self, question: &str, n_retrieve: usize) -> Result<Vec<RankedAnswer>, PipelineError> {
        let hits = self.index.retrieve_top_n(question, n_retrieve)?;
        if hits.is_empty() {
            return Ok(Vec::new());
        }
        let q = question_ids(&self.vocab, question);
        let paragraphs: Vec<Vec<u32>> = hits
            .iter()
            .map(|h| chunk_ids(&self.vocab, self.index.chunk(h.chunk_ref)))
            .collect();
        let out = forward_multitask_batched(
            &self.params,
            &q,
            &paragraphs,
            self.options.batch_size,
            self.options.exec,
        )?;

        let mut answers = Vec::with_capacity(hits.len());
        for (i, hit) in hits.iter().enumerate() {
            let Some(span) = extract_span(
                &out.start_logits[i],
                &out.end_logits[i],
                self.options.max_answer_len,
            ) else {
                continue;
            };
            let chunk = self.index.chunk(hit.chunk_ref);
            answers.push(RankedAnswer {
                rank: 0,
                answer_text: chunk.span_text(span.start, span.end).to_string(),
                chunk_ref: hit.chunk_ref,
                chunk_id: chunk.chunk_id.clone(),
                doc_id: chunk.doc_id.clone(),
                paragraph_score: out.scores[i],
                span: (span.start, span.end),
                span_score: span.score,
                bm25_score: hit.bm25_score,
                text_range: chunk.span_local_offsets(span.start, span.end),
            });
        }
        answers.sort_by(|a, b| {
            b.paragraph_score
                .total_cmp(&a.paragraph_score)
                .then_with(|| b.bm25_score.total_cmp(&a.bm25_score))
                .then_with(|| a.chunk_id.cmp(&b.chunk_id))
        });
        for (i, a) in answers.iter_mut().enumerate() {
            a.rank = i + 1;
        }
        Ok(answers)
    }

    /// Top `k` answers. An answer whose text repeats a higher-ranked answer
    /// from the same document is dropped; ranks are renumbered afterwards.
    pub fn answer(&self, question: &str, n_retrieve: usize, k: usize) -> Result<Vec<RankedAnswer>, PipelineError> {
        if k == 0 || k > n_retrieve {
            return Err(PipelineError::InvalidK { k, n_retrieve });
        }
        let mut seen = HashSet::new();
        let mut out: Vec<RankedAnswer> = self
            .rank_all(question, n_retrieve)?
            .into_iter()
            .filter(|a| seen.insert((a.doc_id.clone(), a.answer_text.clone())))
            .take(k)
            .collect();
        for (i, a) in out.iter_mut().enumerate() {
            a.rank = i + 1;
        }
        Ok(out)
    }

    /// Top-k EM/F1 for each `k`: a question counts as exact when any of its
    /// first `k` answers matches a gold answer; F1 takes the best of them.
    /// `precision_at_1` is the fraction of questions whose first answer comes
    /// from a chunk holding the gold span.
    pub fn evaluate_open(
        &self,
        questions: &SquadDataset,
        n_retrieve: usize,
        k_values: &[usize],
    ) -> Result<Vec<(usize, MetricReport)>, PipelineError> {
        let max_k = k_values.iter().copied().max().unwrap_or(1);
        let mut per_k: Vec<Vec<(f64, f64)>> = vec![Vec::new(); k_values.len()];
        let mut first_is_gold = Vec::with_capacity(questions.len());
        for entry in &questions.entries {
            let answers = self.answer(&entry.question, n_retrieve, max_k)?;
            let golds = entry.answer_texts();
            for (scores, &k) in per_k.iter_mut().zip(k_values) {
                let top = &answers[..k.min(answers.len())];
                let em = top.iter().map(|a| exact_match(&a.answer_text, &golds)).fold(0.0, f64::max);
                let f = top.iter().map(|a| f1(&a.answer_text, &golds)).fold(0.0, f64::max);
                scores.push((em, f));
            }
            first_is_gold.push(answers.first().is_some_and(|a| self.holds_gold(a, entry)));
        }
        let p1 = crate::evalkit::precision_at_1(&first_is_gold);
        Ok(k_values
            .iter()
            .zip(per_k)
            .map(|(&k, s)| (k, MetricReport::from_scores(&s).with_precision_at_1(p1)))
            .collect())
    }

    fn holds_gold(&self, answer: &RankedAnswer, entry: &SquadEntry) -> bool {
        crate::evalkit::chunk_holds_gold(self.index.chunk(answer.chunk_ref), entry)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ingest_documents, ChunkConfig, Document};
    use crate::encoder::EncoderConfig;
    use crate::retriever::Bm25Params;

    fn reader(texts: &[&str], cfg: ChunkConfig) -> Reader {
        let docs: Vec<Document> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Document {
                doc_id: format!("d{i}"),
                title: String::new(),
                text: t.to_string(),
            })
            .collect();
        let corpus = ingest_documents(&docs, cfg).unwrap();
        let vocab = Vocab::build(corpus.chunks.iter().flat_map(|c| c.surfaces()), 1);
        let index = InvertedIndex::build(corpus.chunks, Bm25Params::default(), cfg).unwrap();
        let params = ModelParameters::init(
            EncoderConfig {
                vocab_size: vocab.len(),
                d_model: 8,
                n_layers: 1,
                n_heads: 2,
                d_ff: 16,
                max_seq_len: 64,
                dropout_rate: 0.1,
            },
            4,
        );
        Reader::new(params, vocab, index, ReaderOptions::default()).unwrap()
    }

    #[test]
    fn single_chunk_corpus() {
        let r = reader(&["Paris is the capital of France ."], ChunkConfig::default());
        let a = r.answer("capital of France ?", 5, 1).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].rank, 1);
        assert_eq!(a[0].chunk_id, "d0#0");
        let chunk = r.index().chunk(a[0].chunk_ref);
        assert_eq!(a[0].answer_text, chunk.span_text(a[0].span.0, a[0].span.1));
    }

    #[test]
    fn ranking_contract_and_fidelity() {
        let texts = [
            "the red fox runs far . the fox sleeps",
            "a fox and a dog play in the yard",
            "the dog barks at night near the river",
            "red birds sing while the fox waits",
        ];
        let r = reader(&texts, ChunkConfig::new(4, 2).unwrap());
        let a = r.answer("where does the fox run ?", 100, 3).unwrap();
        assert!(a.len() <= 3 && !a.is_empty());
        for w in a.windows(2) {
            assert!(w[0].paragraph_score >= w[1].paragraph_score);
        }
        for (i, x) in a.iter().enumerate() {
            assert_eq!(x.rank, i + 1);
            let doc = texts[x.doc_id[1..].parse::<usize>().unwrap()];
            assert!(doc.contains(&x.answer_text));
        }
        let pairs: HashSet<_> = a.iter().map(|x| (&x.doc_id, &x.answer_text)).collect();
        assert_eq!(pairs.len(), a.len());
    }

    #[test]
    fn batching_and_execution_do_not_change_answers() {
        let texts = ["one fox two fox", "red fox blue fox", "fox in socks", "box of fox toys here"];
        let mut r = reader(&texts, ChunkConfig::new(3, 1).unwrap());
        let base = r.answer("fox ?", 20, 5).unwrap();
        for (bs, exec) in [(4, Execution::Parallel), (3, Execution::Sequential), (100, Execution::Parallel)] {
            r.options.batch_size = bs;
            r.options.exec = exec;
            let other = r.answer("fox ?", 20, 5).unwrap();
            assert_eq!(base.len(), other.len());
            for (a, b) in base.iter().zip(&other) {
                assert_eq!((a.chunk_ref, a.span, &a.answer_text), (b.chunk_ref, b.span, &b.answer_text));
                assert!((a.paragraph_score - b.paragraph_score).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn empty_retrieval_and_bad_k() {
        let r = reader(&["alpha beta"], ChunkConfig::default());
        assert!(r.answer("gamma", 10, 3).unwrap().is_empty());
        assert!(matches!(r.answer("alpha", 2, 3), Err(PipelineError::InvalidK { .. })));
        assert!(matches!(r.answer("alpha", 2, 0), Err(PipelineError::InvalidK { .. })));
    }

    #[test]
    fn char_range_counts_code_points() {
        let a = RankedAnswer {
            rank: 1,
            answer_text: "né".into(),
            chunk_ref: 0,
            chunk_id: "x#0".into(),
            doc_id: "x".into(),
            paragraph_score: 0.0,
            span: (1, 1),
            span_score: 1.0,
            bm25_score: 1.0,
            text_range: (6, 9),
        };
        assert_eq!(a.char_range("été né"), (4, 6));
    }
}
