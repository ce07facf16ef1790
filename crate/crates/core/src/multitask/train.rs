//! Alternating multi-task training.
//!
//! Even steps are span-extraction updates, odd steps are paragraph-scoring
//! updates. Each task has its own AdamW moments and its own learning rate, and
//! both rates decay linearly: at global step `t` of `T`, `lr = lr0 · (1 − t/T)`.
//! A scoring step accumulates gradients over `batch_score` examples before its
//! single update.

use std::fmt;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    chunk_ids, qa_example_grad, question_ids, scoring_example_grad, AdamW, AdamWConfig,
    MultitaskError, QAExample, ScoringExample,
};
use crate::encoder::{DropoutKey, EncodeMode, ModelParameters, Vocab};
use crate::exec::Execution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Qa,
    Score,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Qa => "qa",
            Task::Score => "score",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr_qa: f64,
    pub lr_score: f64,
    pub batch_qa: usize,
    /// Scoring examples accumulated per scoring update.
    pub batch_score: usize,
    /// Candidate paragraphs kept per scoring example (gold always kept).
    pub max_candidates: usize,
    pub adamw: AdamWConfig,
    pub seed: u64,
    pub total_steps: usize,
    #[serde(skip)]
    pub exec: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_qa: 5e-5,
            lr_score: 1e-5,
            batch_qa: 32,
            batch_score: 16,
            max_candidates: 30,
            adamw: AdamWConfig::default(),
            seed: 0,
            total_steps: 1000,
            exec: Execution::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), MultitaskError> {
        let bad = |m: &str| Err(MultitaskError::InvalidConfig(m.to_string()));
        if !(self.lr_qa > 0.0 && self.lr_score > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.batch_qa == 0 || self.batch_score == 0 {
            return bad("batch sizes must be positive");
        }
        if self.max_candidates < 2 {
            return bad("max_candidates must be at least 2");
        }
        if self.total_steps == 0 {
            return bad("total_steps must be positive");
        }
        Ok(())
    }

    pub fn lr_at(&self, task: Task, step: usize) -> f64 {
        let base = match task {
            Task::Qa => self.lr_qa,
            Task::Score => self.lr_score,
        };
        base * (1.0 - step as f64 / self.total_steps as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub task: Task,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParameters,
    pub log: Vec<LossRecord>,
}

pub fn write_loss_log<W: Write>(log: &[LossRecord], mut w: W) -> std::io::Result<()> {
    writeln!(w, "step,task,loss,lr")?;
    for r in log {
        writeln!(w, "{},{},{},{}", r.step, r.task, r.loss, r.lr)?;
    }
    Ok(())
}

/// Cycles through `0..n` in a fresh random order every epoch.
struct EpochSampler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl EpochSampler {
    fn new(n: usize, seed: u64) -> Self {
        let mut s = Self {
            order: (0..n).collect(),
            pos: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        s.order.shuffle(&mut s.rng);
        s
    }

    fn next(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

struct EncodedScoring {
    question: Vec<u32>,
    candidates: Vec<Vec<u32>>,
    gold: usize,
}

struct EncodedQa {
    question: Vec<u32>,
    paragraph: Vec<u32>,
    start: usize,
    end: usize,
}

fn encode_scoring(vocab: &Vocab, ex: &ScoringExample) -> EncodedScoring {
    EncodedScoring {
        question: question_ids(vocab, &ex.question),
        gold: ex.gold_index,
        candidates: ex.candidates.iter().map(|c| chunk_ids(vocab, c)).collect(),
    }
}

/// Candidate positions kept for one scoring update, in retrieval order, gold
/// included. Half the negatives are the best-ranked ones, the rest are drawn
/// at random.
fn subsample(n: usize, gold: usize, max_candidates: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if n <= max_candidates {
        return (0..n).collect();
    }
    let mut others: Vec<usize> = (0..n).filter(|&i| i != gold).collect();
    let hard = (max_candidates - 1).div_ceil(2);
    others[hard..].shuffle(rng);
    others.truncate(max_candidates - 1);
    others.push(gold);
    others.sort_unstable();
    others
}

pub fn train(
    params: ModelParameters,
    vocab: &Vocab,
    scoring: &[ScoringExample],
    qa: &[QAExample],
    config: &TrainConfig,
) -> Result<TrainOutcome, MultitaskError> {
    train_with(params, vocab, scoring, qa, config, |_| {})
}

/// [`train`] with a callback invoked after every update.
pub fn train_with(
    mut params: ModelParameters,
    vocab: &Vocab,
    scoring: &[ScoringExample],
    qa: &[QAExample],
    config: &TrainConfig,
    mut observer: impl FnMut(&LossRecord),
) -> Result<TrainOutcome, MultitaskError> {
    config.validate()?;
    if qa.is_empty() {
        return Err(MultitaskError::EmptyDataset("question-answering"));
    }
    if scoring.is_empty() {
        return Err(MultitaskError::EmptyDataset("scoring"));
    }
    for ex in scoring {
        if ex.candidates.len() < 2 || ex.gold_index >= ex.candidates.len() {
            return Err(MultitaskError::InvalidExample(format!(
                "scoring example {:?}: gold {} of {} candidates",
                ex.question,
                ex.gold_index,
                ex.candidates.len()
            )));
        }
    }

    let mut subsample_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5C0E);
    let scoring: Vec<EncodedScoring> = scoring.iter().map(|ex| encode_scoring(vocab, ex)).collect();
    let qa: Vec<EncodedQa> = qa
        .iter()
        .map(|ex| EncodedQa {
            question: question_ids(vocab, &ex.question),
            paragraph: vocab.encode(ex.paragraph.iter().map(String::as_str)),
            start: ex.start,
            end: ex.end,
        })
        .collect();

    let mut qa_sampler = EpochSampler::new(qa.len(), config.seed ^ 0xA11CE);
    let mut score_sampler = EpochSampler::new(scoring.len(), config.seed ^ 0xB0B);
    let mut qa_opt = AdamW::new(config.adamw, &params);
    let mut score_opt = AdamW::new(config.adamw, &params);
    let mut log = Vec::with_capacity(config.total_steps);

    for step in 0..config.total_steps {
        let task = if step % 2 == 0 { Task::Qa } else { Task::Score };
        let key = |slot: usize| DropoutKey::new(config.seed, step as u64, slot as u64);

        let results = match task {
            Task::Qa => {
                let batch: Vec<usize> = (0..config.batch_qa).map(|_| qa_sampler.next()).collect();
                let p = &params;
                config.exec.map_indexed(batch.len(), |b| {
                    let ex = &qa[batch[b]];
                    qa_example_grad(
                        p,
                        &ex.question,
                        &ex.paragraph,
                        ex.start,
                        ex.end,
                        EncodeMode::Train(key(b)),
                    )
                })
            }
            Task::Score => {
                let batch: Vec<(&EncodedScoring, Vec<Vec<u32>>, usize)> = (0..config.batch_score)
                    .map(|_| {
                        let ex = &scoring[score_sampler.next()];
                        let keep = subsample(
                            ex.candidates.len(),
                            ex.gold,
                            config.max_candidates,
                            &mut subsample_rng,
                        );
                        let gold = keep.iter().position(|&i| i == ex.gold).expect("gold kept");
                        let cands = keep.iter().map(|&i| ex.candidates[i].clone()).collect();
                        (ex, cands, gold)
                    })
                    .collect();
                let p = &params;
                config.exec.map_indexed(batch.len(), |b| {
                    let (ex, cands, gold) = &batch[b];
                    scoring_example_grad(p, &ex.question, cands, *gold, |i| {
                        EncodeMode::Train(key(b * 1024 + i))
                    })
                })
            }
        };

        // Fixed summation order keeps parallel and sequential runs bit-identical.
        let count = results.len() as f64;
        let mut grads = params.zeros_like();
        let mut loss = 0.0;
        for r in results {
            let (l, g) = r?;
            loss += l;
            grads.add_scaled(&g, 1.0 / count);
        }
        loss /= count;
        if !loss.is_finite() || !grads.all_finite() {
            return Err(MultitaskError::NonFiniteLoss { step, task });
        }

        let lr = config.lr_at(task, step);
        match task {
            Task::Qa => qa_opt.step(&mut params, &grads, lr),
            Task::Score => score_opt.step(&mut params, &grads, lr),
        }
        let record = LossRecord {
            step,
            task,
            loss,
            lr,
        };
        observer(&record);
        log.push(record);
    }
    Ok(TrainOutcome { params, log })
}
