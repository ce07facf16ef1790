use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use mixqa::corpus::{
    ingest_documents, load_squad, read_documents, write_documents, ChunkConfig, Document,
};
use mixqa::encoder::{load_checkpoint, save_checkpoint, EncoderConfig, ModelParameters};
use mixqa::evalkit::{
    build_scorer_dataset, generate_synthetic_benchmark, granularity_sweep, write_sweep_csv,
    SweepSetting,
};
use mixqa::exec::Execution;
use mixqa::multitask::{build_qa_examples, build_vocab, train_with, write_loss_log, TrainConfig};
use mixqa::pipeline::ReaderOptions;
use mixqa::retriever::{load_index, save_index, Bm25Params, InvertedIndex};
use mixqa_cli::config::ServiceConfigFile;
use mixqa_cli::server;
use serde_json::json;

#[derive(Parser)]
#[command(name = "mixqa", version, about = "Open-domain question answering over a BM25 index")]
struct Cli {
    /// Run every data-parallel stage on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Chunk a corpus and build a BM25 index file.
    Index(IndexArgs),
    /// Train the multi-task reader on SQuAD-format questions.
    Train(TrainArgs),
    /// Open-domain EM/F1 for one or more k.
    Eval(EvalArgs),
    /// EM/F1 grid over chunking settings and retrieval depths.
    Sweep(SweepArgs),
    /// Serve the query API over HTTP.
    Serve(ServeArgs),
    /// Write the synthetic benchmark (corpus JSONL and SQuAD JSON).
    BenchGen(BenchGenArgs),
}

#[derive(Args)]
struct CorpusSource {
    /// JSONL corpus files with `doc_id`, `text` and optional `title`.
    #[arg(long = "corpus", num_args = 1..)]
    corpus: Vec<PathBuf>,
    /// Use the contexts of a SQuAD file as the corpus.
    #[arg(long)]
    from_squad: Option<PathBuf>,
}

impl CorpusSource {
    fn documents(&self) -> anyhow::Result<Vec<Document>> {
        let mut docs = Vec::new();
        for p in self.corpus.iter().chain(&self.from_squad) {
            require_file(p)?;
        }
        if !self.corpus.is_empty() {
            docs.extend(read_documents(&self.corpus)?);
        }
        if let Some(p) = &self.from_squad {
            docs.extend(load_squad(p)?.documents());
        }
        if self.corpus.is_empty() && self.from_squad.is_none() {
            bail!(MissingInput("no corpus given (use --corpus or --from-squad)".into()));
        }
        Ok(docs)
    }
}

#[derive(Args)]
struct IndexArgs {
    #[command(flatten)]
    source: CorpusSource,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    granularity: usize,
    #[arg(long, default_value_t = 50)]
    stride: usize,
    #[arg(long, default_value_t = 1.2)]
    k1: f64,
    #[arg(long, default_value_t = 0.75)]
    b: f64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    squad: PathBuf,
    #[arg(long)]
    index: PathBuf,
    /// Checkpoint path; the vocabulary is written next to it with a `.vocab` suffix.
    #[arg(long)]
    out: PathBuf,
    /// Loss log CSV (default: `<out>.losses.csv`).
    #[arg(long)]
    loss_log: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5e-5)]
    lr_qa: f64,
    #[arg(long, default_value_t = 1e-5)]
    lr_score: f64,
    #[arg(long, default_value_t = 32)]
    batch_qa: usize,
    #[arg(long, default_value_t = 16)]
    batch_score: usize,
    /// Chunks retrieved per question when building scoring examples.
    #[arg(long, default_value_t = 30)]
    candidates: usize,
    /// Candidates kept per scoring example during training.
    #[arg(long, default_value_t = 30)]
    max_candidates: usize,
    #[arg(long, default_value_t = 64)]
    d_model: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 256)]
    d_ff: usize,
    #[arg(long, default_value_t = 256)]
    max_seq_len: usize,
    #[arg(long, default_value_t = 0.1)]
    dropout: f64,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    squad: PathBuf,
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    n_retrieve: Option<usize>,
    /// Comma-separated list, e.g. `1,2,3`.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    k: Vec<usize>,
    #[arg(long)]
    max_answer_len: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    source: CorpusSource,
    #[arg(long)]
    squad: PathBuf,
    /// `GRANULARITY:STRIDE:CHECKPOINT`, repeatable.
    #[arg(long = "setting", required = true)]
    settings: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "100,150,200")]
    n_retrieve: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    k: Vec<usize>,
    /// CSV output (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    host: Option<String>,
    #[arg(long)]
    port: Option<u16>,
    #[arg(long)]
    n_retrieve: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    max_answer_len: Option<usize>,
}

#[derive(Args)]
struct BenchGenArgs {
    #[arg(long, default_value_t = 200)]
    docs: usize,
    #[arg(long, default_value_t = 200)]
    questions: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

/// An input file or directory that does not exist; exits with status 2.
#[derive(Debug)]
struct MissingInput(String);

impl std::fmt::Display for MissingInput {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for MissingInput {}

fn require_file(p: &Path) -> anyhow::Result<()> {
    if !p.exists() {
        bail!(MissingInput(format!("{}: no such file", p.display())));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let result = match cli.command {
        Command::Index(a) => index(a),
        Command::Train(a) => train(a, exec),
        Command::Eval(a) => eval(a, exec),
        Command::Sweep(a) => sweep(a, exec),
        Command::Serve(a) => serve(a),
        Command::BenchGen(a) => bench_gen(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<MissingInput>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn index(a: IndexArgs) -> anyhow::Result<()> {
    let chunking = ChunkConfig::new(a.granularity, a.stride)?;
    let params = Bm25Params::new(a.k1, a.b)?;
    let corpus = ingest_documents(&a.source.documents()?, chunking)?;
    let stats = corpus.stats;
    let index = InvertedIndex::build(corpus.chunks, params, chunking)?;
    save_index(&index, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    println!(
        "{}",
        json!({
            "documents": stats.documents,
            "chunks": stats.chunks,
            "mean_chunk_len": stats.mean_chunk_len,
            "terms": index.terms().count(),
            "granularity": chunking.granularity,
            "stride": chunking.stride,
        })
    );
    Ok(())
}

fn train(a: TrainArgs, exec: Execution) -> anyhow::Result<()> {
    require_file(&a.squad)?;
    require_file(&a.index)?;
    let squad = load_squad(&a.squad)?;
    let index = load_index(&a.index)?;
    let vocab = build_vocab(&index, &squad);
    let config = EncoderConfig {
        vocab_size: vocab.len(),
        d_model: a.d_model,
        n_layers: a.layers,
        n_heads: a.heads,
        d_ff: a.d_ff,
        max_seq_len: a.max_seq_len,
        dropout_rate: a.dropout,
    };
    config.validate()?;
    let train_config = TrainConfig {
        lr_qa: a.lr_qa,
        lr_score: a.lr_score,
        batch_qa: a.batch_qa,
        batch_score: a.batch_score,
        max_candidates: a.max_candidates,
        seed: a.seed,
        total_steps: a.steps,
        exec,
        ..Default::default()
    };
    train_config.validate()?;

    let scoring = build_scorer_dataset(&squad, &index, a.candidates, exec)?;
    let qa = build_qa_examples(&squad, &index, &config);
    eprintln!(
        "scoring examples: {} of {} questions (gold not retrieved: {}, no negatives: {})",
        scoring.examples.len(),
        scoring.questions,
        scoring.missed,
        scoring.single_candidate
    );
    eprintln!(
        "qa examples: {} of {} questions ({} dropped)",
        qa.examples.len(),
        squad.len(),
        qa.dropped
    );
    if scoring.examples.is_empty() || qa.examples.is_empty() {
        bail!(
            "dataset build left {} scoring and {} qa examples from {} questions",
            scoring.examples.len(),
            qa.examples.len(),
            squad.len()
        );
    }

    let params = ModelParameters::init(config, a.seed);
    let report_every = (a.steps / 20).max(1);
    let outcome = train_with(params, &vocab, &scoring.examples, &qa.examples, &train_config, |r| {
        if r.step % report_every == 0 || r.step + 1 == a.steps {
            eprintln!("step {} {} loss {:.4} lr {:.2e}", r.step, r.task, r.loss, r.lr);
        }
    })?;

    save_checkpoint(&outcome.params, &vocab, &a.out)?;
    let log_path = a.loss_log.unwrap_or_else(|| {
        let mut s = a.out.clone().into_os_string();
        s.push(".losses.csv");
        PathBuf::from(s)
    });
    let mut w = BufWriter::new(File::create(&log_path)?);
    write_loss_log(&outcome.log, &mut w)?;
    w.flush()?;
    eprintln!("wrote {} and {}", a.out.display(), log_path.display());
    Ok(())
}

fn eval(a: EvalArgs, exec: Execution) -> anyhow::Result<()> {
    require_file(&a.squad)?;
    let config = ServiceConfigFile::from_env()?
        .overridden_by(ServiceConfigFile {
            index_path: a.index,
            checkpoint_path: a.checkpoint,
            n_retrieve: a.n_retrieve,
            max_answer_len: a.max_answer_len,
            k: a.k.iter().copied().max(),
            ..Default::default()
        });
    for p in config.index_path.iter().chain(&config.checkpoint_path) {
        require_file(p)?;
    }
    let config = config.resolve()?;
    if a.k.is_empty() || a.k.iter().any(|&k| k == 0 || k > config.n_retrieve) {
        bail!("every k must satisfy 1 <= k <= n_retrieve ({})", config.n_retrieve);
    }
    let squad = load_squad(&a.squad)?;
    let mut reader = server::load_reader(&config)?;
    reader.options.exec = exec;
    for (k, report) in reader.evaluate_open(&squad, config.n_retrieve, &a.k)? {
        let mut v = serde_json::to_value(report)?;
        v["k"] = json!(k);
        v["n_retrieve"] = json!(config.n_retrieve);
        println!("{v}");
    }
    Ok(())
}

fn sweep(a: SweepArgs, exec: Execution) -> anyhow::Result<()> {
    require_file(&a.squad)?;
    let docs = a.source.documents()?;
    let squad = load_squad(&a.squad)?;
    let mut settings = Vec::new();
    for s in &a.settings {
        let parts: Vec<&str> = s.splitn(3, ':').collect();
        let [g, st, ckpt] = parts[..] else {
            bail!("bad --setting {s:?}, expected GRANULARITY:STRIDE:CHECKPOINT");
        };
        let ckpt = PathBuf::from(ckpt);
        require_file(&ckpt)?;
        let (params, vocab) = load_checkpoint(&ckpt)?;
        settings.push(SweepSetting {
            chunking: ChunkConfig::new(g.parse()?, st.parse()?)?,
            params,
            vocab,
        });
    }
    let options = ReaderOptions {
        exec,
        ..Default::default()
    };
    let cells = granularity_sweep(
        &docs,
        &squad,
        &settings,
        &a.n_retrieve,
        &a.k,
        Bm25Params::default(),
        options,
    )?;
    match a.out {
        Some(p) => {
            let mut w = BufWriter::new(File::create(&p)?);
            write_sweep_csv(&cells, &mut w)?;
            w.flush()?;
        }
        None => write_sweep_csv(&cells, std::io::stdout().lock())?,
    }
    Ok(())
}

fn serve(a: ServeArgs) -> anyhow::Result<()> {
    let config = ServiceConfigFile::from_env()?
        .overridden_by(ServiceConfigFile {
            index_path: a.index,
            checkpoint_path: a.checkpoint,
            host: a.host,
            port: a.port,
            n_retrieve: a.n_retrieve,
            k: a.k,
            max_answer_len: a.max_answer_len,
        });
    for p in config.index_path.iter().chain(&config.checkpoint_path) {
        require_file(p)?;
    }
    let config = config.resolve()?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(server::serve(config))
}

fn bench_gen(a: BenchGenArgs) -> anyhow::Result<()> {
    if a.docs == 0 || a.questions == 0 {
        bail!("--docs and --questions must be at least 1");
    }
    let bench = generate_synthetic_benchmark(a.docs, a.questions, a.seed);
    std::fs::create_dir_all(&a.out_dir)?;
    let corpus_path = a.out_dir.join("corpus.jsonl");
    let squad_path = a.out_dir.join("squad.json");
    let mut w = BufWriter::new(File::create(&corpus_path)?);
    write_documents(&bench.documents, &mut w)?;
    w.flush()?;
    std::fs::write(&squad_path, bench.squad.to_json())?;
    println!(
        "{}",
        json!({
            "corpus": corpus_path,
            "squad": squad_path,
            "documents": bench.documents.len(),
            "questions": bench.squad.len(),
        })
    );
    Ok(())
}
