//! Scoring and span heads on the shared encoder, their losses, and training.
//!
//! One encoder pass over `[CLS] question [SEP] paragraph [SEP]` feeds both
//! heads: the relevance score reads the CLS vector, the start/end logits read
//! every paragraph position.

mod adamw;
mod losses;
mod span;
mod train;

pub use adamw::{AdamW, AdamWConfig};
pub use losses::{
    log_sum_exp, qa_loss, qa_loss_and_grad, scoring_loss, scoring_loss_and_grad, softmax,
};
pub use span::{extract_span, SpanPrediction};
pub use train::{
    train, train_with, write_loss_log, LossRecord, Task, TrainConfig, TrainOutcome,
};

pub use crate::encoder::MultitaskHeads;

use std::collections::HashMap;

use ndarray::{s, Array2};

use crate::corpus::{surfaces, Chunk, SquadDataset};
use crate::encoder::{
    encode, encode_batch, pack, EncodeMode, EncoderConfig, Encoding, ModelError, ModelParameters, PackedInput,
    Vocab,
};
use crate::exec::Execution;
use crate::retriever::InvertedIndex;

#[derive(Debug, thiserror::Error)]
pub enum MultitaskError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid example: {0}")]
    InvalidExample(String),
    #[error("non-finite {0}")]
    NonFinite(String),
    #[error("non-finite {task} loss at step {step}")]
    NonFiniteLoss { step: usize, task: Task },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("empty {0} dataset")]
    EmptyDataset(&'static str),
}

/// A question with its retrieved candidate paragraphs; `gold_index` marks the
/// one holding the answer.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoringExample {
    pub question: String,
    pub candidates: Vec<Chunk>,
    pub gold_index: usize,
}

/// A question, a paragraph's token surfaces and the inclusive gold token span.
#[derive(Debug, Clone, PartialEq)]
pub struct QAExample {
    pub question: String,
    pub paragraph: Vec<String>,
    pub start: usize,
    pub end: usize,
}

/// Head outputs for one packed pair, with the encoding kept for backward.
#[derive(Debug, Clone)]
pub struct PairOutput {
    pub score: f64,
    pub start_logits: Vec<f64>,
    pub end_logits: Vec<f64>,
    pub encoding: Encoding,
    paragraph_offset: usize,
}

pub fn forward_pair(
    params: &ModelParameters,
    input: &PackedInput,
    mode: EncodeMode,
) -> Result<PairOutput, MultitaskError> {
    let encoding = encode(params, input, mode)?;
    let (score, start_logits, end_logits) = head_outputs(&params.heads, &encoding.hidden, input);
    Ok(PairOutput {
        score,
        start_logits,
        end_logits,
        encoding,
        paragraph_offset: input.paragraph_offset(),
    })
}

/// Score and start/end logits read off encoder states of `input`.
pub fn head_outputs(
    heads: &MultitaskHeads,
    hidden: &Array2<f64>,
    input: &PackedInput,
) -> (f64, Vec<f64>, Vec<f64>) {
    let score = hidden.row(0).dot(&heads.score_w) + heads.score_b[0];
    let off = input.paragraph_offset();
    let para = hidden.slice(s![off..off + input.paragraph_len, ..]);
    let logits = para.dot(&heads.span_w) + &heads.span_b;
    (score, logits.column(0).to_vec(), logits.column(1).to_vec())
}

/// Backpropagate head-output gradients through the heads and the encoder.
pub fn backward_pair(
    params: &ModelParameters,
    out: &PairOutput,
    d_score: f64,
    d_start: &[f64],
    d_end: &[f64],
    grads: &mut ModelParameters,
) -> Result<(), MultitaskError> {
    let n = out.start_logits.len();
    if d_start.len() != n || d_end.len() != n {
        return Err(ModelError::ShapeMismatch(format!(
            "span gradients of length {}/{} for {n} positions",
            d_start.len(),
            d_end.len()
        ))
        .into());
    }
    let h = &out.encoding.hidden;
    let heads = &params.heads;
    let mut dh = Array2::zeros(h.raw_dim());

    if d_score != 0.0 {
        grads.heads.score_w.scaled_add(d_score, &h.row(0));
        grads.heads.score_b[0] += d_score;
        dh.row_mut(0).scaled_add(d_score, &heads.score_w);
    }
    let off = out.paragraph_offset;
    for i in 0..n {
        let (ds, de) = (d_start[i], d_end[i]);
        if ds == 0.0 && de == 0.0 {
            continue;
        }
        let row = h.row(off + i);
        grads.heads.span_w.column_mut(0).scaled_add(ds, &row);
        grads.heads.span_w.column_mut(1).scaled_add(de, &row);
        grads.heads.span_b[0] += ds;
        grads.heads.span_b[1] += de;
        let mut dr = dh.row_mut(off + i);
        dr.scaled_add(ds, &heads.span_w.column(0));
        dr.scaled_add(de, &heads.span_w.column(1));
    }
    crate::encoder::forward_backward_into(params, &out.encoding.cache, &dh, grads)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultitaskOutput {
    pub scores: Vec<f64>,
    pub start_logits: Vec<Vec<f64>>,
    pub end_logits: Vec<Vec<f64>>,
}

/// Score every paragraph and produce its span logits, one encoder pass each.
pub fn forward_multitask(
    params: &ModelParameters,
    question: &[u32],
    paragraphs: &[Vec<u32>],
    exec: Execution,
) -> Result<MultitaskOutput, MultitaskError> {
    forward_multitask_batched(params, question, paragraphs, 1, exec)
}

/// [`forward_multitask`] with paragraphs padded and encoded in groups of
/// `batch_size`. Groups run through `exec`; output order follows `paragraphs`.
pub fn forward_multitask_batched(
    params: &ModelParameters,
    question: &[u32],
    paragraphs: &[Vec<u32>],
    batch_size: usize,
    exec: Execution,
) -> Result<MultitaskOutput, MultitaskError> {
    let inputs = paragraphs
        .iter()
        .map(|p| pack(question, p, &params.config))
        .collect::<Result<Vec<_>, _>>()?;
    let groups: Vec<&[PackedInput]> = inputs.chunks(batch_size.max(1)).collect();
    let encoded = exec
        .map(&groups, |g| encode_batch(params, g, EncodeMode::Eval))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let mut result = MultitaskOutput {
        scores: Vec::with_capacity(inputs.len()),
        start_logits: Vec::with_capacity(inputs.len()),
        end_logits: Vec::with_capacity(inputs.len()),
    };
    for (input, hidden) in inputs.iter().zip(encoded.iter().flatten()) {
        let (score, start, end) = head_outputs(&params.heads, hidden, input);
        result.scores.push(score);
        result.start_logits.push(start);
        result.end_logits.push(end);
    }
    Ok(result)
}

/// Scoring loss of one example and its gradient w.r.t. every parameter.
///
/// `mode_for(i)` picks the encode mode for candidate `i`.
pub fn scoring_example_grad(
    params: &ModelParameters,
    question: &[u32],
    candidates: &[Vec<u32>],
    gold_index: usize,
    mode_for: impl Fn(usize) -> EncodeMode,
) -> Result<(f64, ModelParameters), MultitaskError> {
    let outs = candidates
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let input = pack(question, p, &params.config)?;
            forward_pair(params, &input, mode_for(i))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let scores: Vec<f64> = outs.iter().map(|o| o.score).collect();
    let (loss, d_scores) = scoring_loss_and_grad(&scores, gold_index)?;
    let mut grads = params.zeros_like();
    for (o, &ds) in outs.iter().zip(&d_scores) {
        let zeros = vec![0.0; o.start_logits.len()];
        backward_pair(params, o, ds, &zeros, &zeros, &mut grads)?;
    }
    Ok((loss, grads))
}

/// Span loss of one example and its gradient w.r.t. every parameter.
pub fn qa_example_grad(
    params: &ModelParameters,
    question: &[u32],
    paragraph: &[u32],
    start: usize,
    end: usize,
    mode: EncodeMode,
) -> Result<(f64, ModelParameters), MultitaskError> {
    let input = pack(question, paragraph, &params.config)?;
    let out = forward_pair(params, &input, mode)?;
    let (loss, ds, de) = qa_loss_and_grad(&out.start_logits, &out.end_logits, start, end)?;
    let mut grads = params.zeros_like();
    backward_pair(params, &out, 0.0, &ds, &de, &mut grads)?;
    Ok((loss, grads))
}

/// Vocabulary over every indexed chunk token and every question token.
pub fn build_vocab(index: &InvertedIndex, questions: &SquadDataset) -> Vocab {
    let question_tokens: Vec<String> = questions
        .entries
        .iter()
        .flat_map(|e| surfaces(&e.question))
        .collect();
    Vocab::build(
        index
            .chunks()
            .iter()
            .flat_map(|c| c.surfaces())
            .chain(question_tokens.iter().map(String::as_str)),
        1,
    )
}

pub fn question_ids(vocab: &Vocab, question: &str) -> Vec<u32> {
    vocab.encode(surfaces(question).iter().map(String::as_str))
}

pub fn chunk_ids(vocab: &Vocab, chunk: &Chunk) -> Vec<u32> {
    vocab.encode(chunk.surfaces())
}

/// Inclusive token span of chunk tokens overlapping the byte range `[start, end)`.
pub fn token_span(chunk: &Chunk, start: usize, end: usize) -> Option<(usize, usize)> {
    let s = chunk.tokens.iter().position(|t| t.char_end > start)?;
    let e = chunk.tokens.iter().rposition(|t| t.char_start < end)?;
    (s <= e).then_some((s, e))
}

#[derive(Debug, Clone, Default)]
pub struct QaDatasetBuild {
    pub examples: Vec<QAExample>,
    /// Questions whose answer is not wholly inside any chunk, or is cut off by
    /// sequence-length truncation.
    pub dropped: usize,
}

/// Span-extraction examples from SQuAD entries, using the first gold answer
/// and the earliest chunk of its context that contains it.
pub fn build_qa_examples(
    squad: &SquadDataset,
    index: &InvertedIndex,
    config: &EncoderConfig,
) -> QaDatasetBuild {
    let mut by_doc: HashMap<&str, Vec<&Chunk>> = HashMap::new();
    for c in index.chunks() {
        by_doc.entry(c.doc_id.as_str()).or_default().push(c);
    }
    for chunks in by_doc.values_mut() {
        chunks.sort_by_key(|c| c.window_start);
    }
    let mut out = QaDatasetBuild::default();
    for entry in &squad.entries {
        let Some(answer) = entry.answers.first() else {
            out.dropped += 1;
            continue;
        };
        let chunk = by_doc.get(entry.context_id.as_str()).and_then(|cs| {
            cs.iter()
                .find(|c| c.contains_range(answer.byte_start, answer.byte_end))
        });
        let q_len = surfaces(&entry.question).len();
        let example = chunk.and_then(|c| {
            let (s, e) = token_span(c, answer.byte_start, answer.byte_end)?;
            let room = config.max_seq_len.checked_sub(q_len + 3)?;
            (e < room).then(|| QAExample {
                question: entry.question.clone(),
                paragraph: c.surfaces().map(str::to_string).collect(),
                start: s,
                end: e,
            })
        });
        match example {
            Some(ex) => out.examples.push(ex),
            None => out.dropped += 1,
        }
    }
    out
}
