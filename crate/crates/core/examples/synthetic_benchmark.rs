//! Train and evaluate on the synthetic benchmark.
//!
//! Hyper-parameters can be overridden through environment variables, e.g.
//! `STEPS=400 D_MODEL=32 HEADS=2 cargo run --release --example synthetic_benchmark`.

use std::time::Instant;

use mixqa::corpus::{ingest_documents, ChunkConfig};
use mixqa::encoder::{EncoderConfig, ModelParameters};
use mixqa::evalkit::{build_scorer_dataset, generate_synthetic_benchmark, scorer_precision_at_1};
use mixqa::exec::Execution;
use mixqa::multitask::{
    build_qa_examples, build_vocab, extract_span, forward_multitask, question_ids, train_with, Task, TrainConfig,
};
use mixqa::pipeline::{Reader, ReaderOptions};
use mixqa::retriever::{Bm25Params, InvertedIndex};

fn env<T: std::str::FromStr>(name: &str, default: T) -> T {
    std::env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() {
    let seed: u64 = env("SEED", 0);
    let bench = generate_synthetic_benchmark(200, 200, seed);
    let chunking = ChunkConfig::default();
    let corpus = ingest_documents(&bench.documents, chunking).unwrap();
    let index = InvertedIndex::build(corpus.chunks, Bm25Params::default(), chunking).unwrap();
    let train_q = bench.squad.subset(0..150);
    let held_out = bench.squad.subset(150..200);

    let vocab = build_vocab(&index, &train_q);
    let config = EncoderConfig {
        vocab_size: vocab.len(),
        d_model: env("D_MODEL", 64),
        n_layers: env("LAYERS", 2),
        n_heads: env("HEADS", 4),
        d_ff: env("D_FF", 128),
        max_seq_len: 128,
        dropout_rate: env("DROPOUT", 0.1),
    };
    let n_candidates = env("CANDIDATES", 30);
    let train_corpus = ingest_documents(&train_q.documents(), chunking).unwrap();
    let train_index = InvertedIndex::build(train_corpus.chunks, Bm25Params::default(), chunking).unwrap();
    let scoring = build_scorer_dataset(&train_q, &train_index, n_candidates, Execution::Parallel).unwrap();
    let qa = build_qa_examples(&train_q, &train_index, &config);
    println!(
        "vocab {} scoring {} (retention {:.2}) qa {} (dropped {})",
        vocab.len(),
        scoring.examples.len(),
        scoring.retention(),
        qa.examples.len(),
        qa.dropped
    );

    let train_config = TrainConfig {
        lr_qa: env("LR_QA", 3e-3),
        lr_score: env("LR_SCORE", 5e-3),
        batch_qa: env("BATCH_QA", 16),
        batch_score: env("BATCH_SCORE", 32),
        max_candidates: env("MAX_CAND", 6),
        seed,
        total_steps: env("STEPS", 2000),
        ..Default::default()
    };
    let params = ModelParameters::init(config, seed);
    let t0 = Instant::now();
    let mut qa_avg = 0.0;
    let mut sc_avg = 0.0;
    let outcome = train_with(params, &vocab, &scoring.examples, &qa.examples, &train_config, |r| {
        match r.task {
            Task::Qa => qa_avg = 0.95 * qa_avg + 0.05 * r.loss,
            Task::Score => sc_avg = 0.95 * sc_avg + 0.05 * r.loss,
        }
        if r.step % 100 == 1 {
            println!(
                "step {:5} qa {:.4} score {:.4} ({:.1}s)",
                r.step,
                qa_avg,
                sc_avg,
                t0.elapsed().as_secs_f64()
            );
        }
    })
    .unwrap();
    println!("trained in {:.1}s", t0.elapsed().as_secs_f64());

    let train_p1 = scorer_precision_at_1(&outcome.params, &vocab, &scoring.examples, Execution::Parallel).unwrap();
    println!("train p@1 {:.3}", train_p1);
    let held_scoring = build_scorer_dataset(&held_out, &index, 30, Execution::Parallel).unwrap();
    let p1 = scorer_precision_at_1(&outcome.params, &vocab, &held_scoring.examples, Execution::Parallel).unwrap();
    println!("held-out p@1 {:.3} over {}", p1, held_scoring.examples.len());
    if std::env::var("DEBUG").is_ok() {
        for ex in held_scoring.examples.iter().take(5) {
            let q = question_ids(&vocab, &ex.question);
            let ps: Vec<Vec<u32>> = ex.candidates.iter().map(|c| mixqa::multitask::chunk_ids(&vocab, c)).collect();
            let out = forward_multitask(&outcome.params, &q, &ps, Execution::Sequential).unwrap();
            println!("{} gold={}", ex.question, ex.gold_index);
            for (i, c) in ex.candidates.iter().enumerate().take(6) {
                println!("  {:8.3} {}", out.scores[i], c.text);
            }
        }
    }
    let held_qa = build_qa_examples(&held_out, &index, &config);
    let mut hits = 0;
    for ex in &held_qa.examples {
        let q = question_ids(&vocab, &ex.question);
        let p = vocab.encode(ex.paragraph.iter().map(String::as_str));
        let out = forward_multitask(&outcome.params, &q, &[p], Execution::Sequential).unwrap();
        let span = extract_span(&out.start_logits[0], &out.end_logits[0], 30).unwrap();
        hits += usize::from((span.start, span.end) == (ex.start, ex.end));
    }
    println!("held-out span accuracy on gold paragraphs {:.3}", hits as f64 / held_qa.examples.len() as f64);
    let reader = Reader::new(outcome.params, vocab, index, ReaderOptions::default()).unwrap();
    for (k, r) in reader.evaluate_open(&held_out, 30, &[1, 2, 3]).unwrap() {
        println!("k={k} {}", r.to_json());
    }
    println!("total {:.1}s", t0.elapsed().as_secs_f64());
}
