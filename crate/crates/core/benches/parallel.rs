//! Sequential vs rayon execution for the three data-parallel stages:
//! batch retrieval, per-chunk multi-task forwards, and per-example gradients.
//!
//! Run with `cargo bench -p mixqa`; build with `--no-default-features` to get
//! the sequential-only crate.

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use mixqa::corpus::{ingest_documents, ChunkConfig};
use mixqa::encoder::{EncoderConfig, ModelParameters, Vocab};
use mixqa::evalkit::{build_scorer_dataset, generate_synthetic_benchmark};
use mixqa::exec::Execution;
use mixqa::multitask::{
    build_qa_examples, build_vocab, chunk_ids, forward_multitask, question_ids, train, QAExample,
    ScoringExample, TrainConfig,
};
use mixqa::retriever::{Bm25Params, InvertedIndex};

struct Fixture {
    index: InvertedIndex,
    vocab: Vocab,
    params: ModelParameters,
    questions: Vec<String>,
    scoring: Vec<ScoringExample>,
    qa: Vec<QAExample>,
}

fn fixture() -> Fixture {
    let bench = generate_synthetic_benchmark(1000, 200, 0);
    let chunking = ChunkConfig::default();
    let corpus = ingest_documents(&bench.documents, chunking).unwrap();
    let index = InvertedIndex::build(corpus.chunks, Bm25Params::default(), chunking).unwrap();
    let vocab = build_vocab(&index, &bench.squad);
    let config = EncoderConfig {
        vocab_size: vocab.len(),
        d_model: 32,
        n_layers: 2,
        n_heads: 2,
        d_ff: 64,
        max_seq_len: 128,
        dropout_rate: 0.1,
    };
    let scoring = build_scorer_dataset(&bench.squad, &index, 30, Execution::Parallel)
        .unwrap()
        .examples;
    let qa = build_qa_examples(&bench.squad, &index, &config).examples;
    Fixture {
        params: ModelParameters::init(config, 0),
        questions: bench.squad.entries.iter().map(|e| e.question.clone()).collect(),
        index,
        vocab,
        scoring,
        qa,
    }
}

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn benches(c: &mut Criterion) {
    let f = fixture();

    let mut g = c.benchmark_group("retrieve_batch_200q");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| f.index.retrieve_batch(black_box(&f.questions), 100, exec).unwrap())
        });
    }
    g.finish();

    let ex = &f.scoring[0];
    let q = question_ids(&f.vocab, &ex.question);
    let paragraphs: Vec<Vec<u32>> = ex.candidates.iter().map(|c| chunk_ids(&f.vocab, c)).collect();
    let mut g = c.benchmark_group("forward_multitask_30_chunks");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| forward_multitask(&f.params, black_box(&q), &paragraphs, exec).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("train_2_steps_accumulated");
    g.sample_size(10);
    for (name, exec) in MODES {
        let config = TrainConfig {
            total_steps: 2,
            batch_qa: 16,
            batch_score: 16,
            max_candidates: 8,
            exec,
            ..Default::default()
        };
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| train(f.params.clone(), &f.vocab, &f.scoring, &f.qa, &config).unwrap())
        });
    }
    g.finish();
}

criterion_group!(parallel, benches);
criterion_main!(parallel);
