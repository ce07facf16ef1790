use crate::corpus::{Chunk, SquadDataset, SquadEntry};
use crate::encoder::{ModelParameters, Vocab};
use crate::exec::Execution;
use crate::multitask::{chunk_ids, forward_multitask, question_ids, MultitaskError, ScoringExample};
use crate::retriever::{IndexError, InvertedIndex, RetrievalHit};

#[derive(Debug, Clone, Default)]
pub struct ScorerDatasetBuild {
    pub examples: Vec<ScoringExample>,
    pub questions: usize,
    /// Questions whose gold chunk was not among the retrieved chunks.
    pub missed: usize,
    /// Questions with a retrieved gold chunk but no other candidate.
    pub single_candidate: usize,
}

impl ScorerDatasetBuild {
    pub fn retention(&self) -> f64 {
        if self.questions == 0 {
            0.0
        } else {
            self.examples.len() as f64 / self.questions as f64
        }
    }
}

/// True when `chunk` comes from the entry's context and wholly contains one of
/// its gold answer spans.
pub(crate) fn chunk_holds_gold(chunk: &Chunk, entry: &SquadEntry) -> bool {
    chunk.doc_id == entry.context_id
        && entry
            .answers
            .iter()
            .any(|a| chunk.contains_range(a.byte_start, a.byte_end))
}

/// Retrieve `n` chunks per question and keep questions whose gold chunk is
/// among them.
///
/// The highest-ranked gold chunk becomes the positive. Other retrieved chunks
/// that also contain the gold span (overlapping windows) are left out of the
/// candidate list so each example has exactly one positive.
pub fn build_scorer_dataset(
    squad: &SquadDataset,
    index: &InvertedIndex,
    n: usize,
    exec: Execution,
) -> Result<ScorerDatasetBuild, IndexError> {
    let questions: Vec<String> = squad.entries.iter().map(|e| e.question.clone()).collect();
    let hits = index.retrieve_batch(&questions, n, exec)?;
    let mut out = ScorerDatasetBuild {
        questions: squad.len(),
        ..Default::default()
    };
    for (entry, hits) in squad.entries.iter().zip(hits) {
        match scoring_example(entry, index, &hits) {
            Ok(ex) => out.examples.push(ex),
            Err(Skip::Missed) => out.missed += 1,
            Err(Skip::Single) => out.single_candidate += 1,
        }
    }
    Ok(out)
}

enum Skip {
    Missed,
    Single,
}

fn scoring_example(
    entry: &SquadEntry,
    index: &InvertedIndex,
    hits: &[RetrievalHit],
) -> Result<ScoringExample, Skip> {
    let gold_pos = hits
        .iter()
        .position(|h| chunk_holds_gold(index.chunk(h.chunk_ref), entry))
        .ok_or(Skip::Missed)?;
    let mut candidates = Vec::with_capacity(hits.len());
    let mut gold_index = 0;
    for (i, h) in hits.iter().enumerate() {
        let chunk = index.chunk(h.chunk_ref);
        if i == gold_pos {
            gold_index = candidates.len();
        } else if chunk_holds_gold(chunk, entry) {
            continue;
        }
        candidates.push(chunk.clone());
    }
    if candidates.len() < 2 {
        return Err(Skip::Single);
    }
    Ok(ScoringExample {
        question: entry.question.clone(),
        candidates,
        gold_index,
    })
}

/// Fraction of examples whose gold candidate gets the highest score. A tie
/// goes to the earlier candidate, matching retrieval order.
pub fn scorer_precision_at_1(
    params: &ModelParameters,
    vocab: &Vocab,
    examples: &[ScoringExample],
    exec: Execution,
) -> Result<f64, MultitaskError> {
    let flags = exec
        .map(examples, |ex| {
            let q = question_ids(vocab, &ex.question);
            let paragraphs: Vec<Vec<u32>> = ex.candidates.iter().map(|c| chunk_ids(vocab, c)).collect();
            let out = forward_multitask(params, &q, &paragraphs, Execution::Sequential)?;
            let best = out
                .scores
                .iter()
                .enumerate()
                .fold(0, |best, (i, &s)| if s > out.scores[best] { i } else { best });
            Ok(best == ex.gold_index)
        })
        .into_iter()
        .collect::<Result<Vec<bool>, MultitaskError>>()?;
    Ok(super::precision_at_1(&flags))
}
