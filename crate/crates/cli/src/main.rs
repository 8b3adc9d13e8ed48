use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use recipegen::corpus::{self, synthetic, InputFormat, PrepOptions};
use recipegen::eval::{eval_harness, Scope, Smoothing};
use recipegen::generator::{generate, SamplingParams};
use recipegen::nn::Checkpoint;
use recipegen::tokenizer::Vocabulary;
use recipegen::trainer::{init_checkpoint, train, Arch, RunConfig, Sink};
use recipegen_service::{model_ids, router, serve, AppState, ServiceConfig};

/// Recipe corpus preparation, language-model training, generation and scoring.
#[derive(Parser)]
#[command(name = "recipegen", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Inspect, clean or synthesize recipe corpora.
    #[command(subcommand)]
    Corpus(CorpusCommand),
    /// Train a model on a prepared corpus.
    Train(TrainArgs),
    /// Generate a recipe from an ingredient list.
    Generate(GenerateArgs),
    /// Score checkpoints on held-out recipes with BLEU.
    Eval(EvalArgs),
    /// Run the HTTP generation service.
    Serve(ServeArgs),
}

#[derive(Subcommand)]
enum CorpusCommand {
    /// Length statistics and record counts.
    Stats {
        input: PathBuf,
        /// record-lines or delimited-table; guessed from the extension if absent.
        #[arg(long)]
        format: Option<InputFormat>,
    },
    /// Clean, split, window and merge into one tagged document per line.
    ///
    /// Also writes `<out>.heldout.jsonl` and `<out>.ingredients.txt`.
    Prep {
        input: PathBuf,
        out: PathBuf,
        #[arg(long)]
        format: Option<InputFormat>,
        #[arg(long, default_value_t = 2000)]
        cap: usize,
        #[arg(long)]
        no_merge: bool,
        /// Keep every record for training instead of holding out ~10%.
        #[arg(long)]
        no_heldout: bool,
    },
    /// Write a synthetic corpus.
    Synth {
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// normal, planted (with defects) or toy (tiny distinct recipes).
        #[arg(long, default_value = "normal")]
        kind: String,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    model: Arch,
    /// Output of `corpus prep`.
    #[arg(long)]
    corpus: PathBuf,
    /// key=value settings; defaults apply without one.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Continue from the checkpoint at `--out`.
    #[arg(long)]
    resume: bool,
    /// step<TAB>loss lines; defaults to `<out>.loss.tsv`.
    #[arg(long)]
    loss_log: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Comma-separated ingredient lines.
    #[arg(long)]
    ingredients: String,
    #[arg(long, default_value_t = 0.8)]
    temperature: f64,
    #[arg(long, default_value_t = 40)]
    top_k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1024)]
    max_new_tokens: usize,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long = "ckpt", required = true)]
    ckpts: Vec<PathBuf>,
    /// Held-out records (record-lines or delimited-table).
    #[arg(long)]
    heldout: PathBuf,
    #[arg(long, default_value = "add-one")]
    smoothing: Smoothing,
    #[arg(long, default_value = "completion")]
    scope: Scope,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.8)]
    temperature: f64,
    #[arg(long, default_value_t = 40)]
    top_k: usize,
    #[arg(long, default_value_t = 1024)]
    max_new_tokens: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long = "ckpt")]
    ckpts: Vec<PathBuf>,
    #[arg(long)]
    corpus_index: Option<PathBuf>,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Origin allowed to call the service from a browser; repeatable, `*` for any.
    #[arg(long)]
    allow_origin: Vec<String>,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli.command) {
        // library errors already quote their source, so skip repeats
        let mut msg = e.to_string();
        for cause in e.chain().skip(1) {
            let c = cause.to_string();
            if !msg.contains(&c) {
                msg = format!("{msg}: {c}");
            }
        }
        eprintln!("error: {msg}");
        std::process::exit(1);
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Corpus(c) => corpus_command(c),
        Command::Train(a) => train_command(a),
        Command::Generate(a) => generate_command(a),
        Command::Eval(a) => eval_command(a),
        Command::Serve(a) => serve_command(a),
    }
}

fn ingest(path: &Path, format: Option<InputFormat>) -> Result<corpus::IngestReport> {
    let report = corpus::ingest(path, format.unwrap_or_else(|| InputFormat::from_path(path)))?;
    for r in &report.rejects {
        eprintln!("skipped row {}: {}", r.row, r.reason);
    }
    Ok(report)
}

/// `<path><suffix>`, keeping the full file name.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn corpus_command(c: CorpusCommand) -> Result<()> {
    match c {
        CorpusCommand::Stats { input, format } => {
            let report = ingest(&input, format)?;
            let cleaned = corpus::clean(&report.records);
            let docs = corpus::prep::serialize_all(&cleaned.kept)?;
            let stats = corpus::length_stats(&docs)?;
            println!("rows skipped       {}", report.rejects.len());
            println!("records            {}", report.records.len());
            println!("valid, distinct    {}", cleaned.kept.len());
            for reason in ["incomplete", "redundant", "duplicate-id"] {
                let n = cleaned.rejected.iter().filter(|(_, r)| r.as_str() == reason).count();
                println!("rejected {reason:<13} {n}");
            }
            println!("mean length (mu)   {:.3}", stats.mean_len);
            println!("std length (sigma) {:.3}", stats.std_len);
            println!("min / max length   {} / {}", stats.min_len, stats.max_len);
            println!("length histogram (bin width {}):", stats.histogram.bin_width);
            for (i, n) in stats.histogram.counts.iter().enumerate() {
                let lo = stats.histogram.start + i * stats.histogram.bin_width;
                println!("  {lo:>6}  {n}");
            }
        }
        CorpusCommand::Prep {
            input,
            out,
            format,
            cap,
            no_merge,
            no_heldout,
        } => {
            let report = ingest(&input, format)?;
            let opts = PrepOptions {
                hard_cap: cap,
                merge: !no_merge,
                split_heldout: !no_heldout,
            };
            let prepared = corpus::prepare(&report.records, opts)?;
            corpus::write_documents(&prepared.docs, &out)?;
            let heldout = sibling(&out, ".heldout.jsonl");
            corpus::export(&prepared.heldout, &heldout, InputFormat::RecordLines)?;
            let index = sibling(&out, ".ingredients.txt");
            corpus::write_ingredient_index(&corpus::ingredient_index(&prepared.clean.kept), &index)?;
            println!("{}", prepared.summary);
            println!("wrote {} ({} documents)", out.display(), prepared.docs.len());
            println!("wrote {} ({} records)", heldout.display(), prepared.heldout.len());
            println!("wrote {}", index.display());
        }
        CorpusCommand::Synth { out, count, seed, kind } => {
            let records = match kind.as_str() {
                "normal" => synthetic::corpus(count, seed),
                "toy" => synthetic::toy(count, seed),
                "planted" => {
                    synthetic::planted(
                        synthetic::Plan {
                            total: count,
                            ..synthetic::Plan::default()
                        },
                        seed,
                    )
                    .records
                }
                other => bail!("unknown synthetic corpus kind {other:?} (normal, planted or toy)"),
            };
            corpus::export(&records, &out, InputFormat::from_path(&out))?;
            println!("wrote {} records to {}", records.len(), out.display());
        }
    }
    Ok(())
}

fn train_command(a: TrainArgs) -> Result<()> {
    let run = match &a.config {
        Some(p) => RunConfig::load(a.model, p)?,
        None => RunConfig::new(a.model),
    };
    let docs = corpus::read_documents(&a.corpus)?;
    let mut ckpt = if a.resume {
        let ckpt = Checkpoint::load(&a.out).with_context(|| format!("resuming from {}", a.out.display()))?;
        if ckpt.model.kind() != run.model_config(ckpt.vocab.size())?.kind() {
            bail!("{} holds a {} model, not {}", a.out.display(), ckpt.model.kind(), a.model);
        }
        ckpt
    } else {
        let vocab = Vocabulary::build(&docs, run.mode, run.min_freq)?;
        init_checkpoint(&run, vocab)?
    };
    let log_path = a.loss_log.clone().unwrap_or_else(|| sibling(&a.out, ".loss.tsv"));
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(a.resume)
        .truncate(!a.resume)
        .open(&log_path)
        .with_context(|| format!("opening {}", log_path.display()))?;
    let mut log = BufWriter::new(file);
    eprintln!(
        "training {} ({} parameters, vocab {}) from step {} to {}",
        a.model,
        ckpt.model.params().count(),
        ckpt.vocab.size(),
        ckpt.meta.steps,
        run.train.max_steps
    );
    let report = train(
        &mut ckpt,
        &docs,
        &run.train,
        Sink {
            out: Some(&a.out),
            loss_log: Some(&mut log),
        },
    )?;
    log.flush()?;
    for e in &report.log {
        eprintln!("step {:>6}  loss {:.4}  {:.0} tok/s", e.step, e.loss, e.tokens_per_sec);
    }
    println!(
        "wrote {} after {} steps (final loss {}) in {:.1}s",
        a.out.display(),
        report.total_steps,
        ckpt.meta.final_loss.map_or("n/a".into(), |l| format!("{l:.4}")),
        report.elapsed_secs
    );
    Ok(())
}

fn generate_command(a: GenerateArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.ckpt)?;
    let ingredients: Vec<&str> = a.ingredients.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    let params = SamplingParams {
        temperature: a.temperature,
        top_k: a.top_k,
        max_new_tokens: a.max_new_tokens,
        seed: a.seed,
    };
    let g = generate(&ckpt, &model_ids(std::slice::from_ref(&a.ckpt))[0], &ingredients, &params)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&g)?);
    } else {
        println!("{g}");
        if g.malformed {
            println!("\nraw text:\n{}", g.raw_text);
        }
    }
    Ok(())
}

fn eval_command(a: EvalArgs) -> Result<()> {
    let ckpts = a
        .ckpts
        .iter()
        .map(|p| Checkpoint::load(p).with_context(|| format!("loading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let models: Vec<(String, &Checkpoint)> = model_ids(&a.ckpts).into_iter().zip(&ckpts).collect();
    let heldout = ingest(&a.heldout, None)?.records;
    let params = SamplingParams {
        temperature: a.temperature,
        top_k: a.top_k,
        max_new_tokens: a.max_new_tokens,
        seed: a.seed,
    };
    let report = eval_harness(&models, &heldout, &params, a.smoothing, a.scope)?;
    let text = report.render();
    print!("{text}");
    if let Some(out) = &a.out {
        let mut f = File::create(out).with_context(|| format!("creating {}", out.display()))?;
        f.write_all(text.as_bytes())?;
    }
    Ok(())
}

fn serve_command(a: ServeArgs) -> Result<()> {
    let state = AppState::load(&a.ckpts, a.corpus_index.as_deref())?;
    for m in state.models() {
        eprintln!("loaded {} ({})", m.id, m.checkpoint.model.kind());
    }
    let app = router(
        state,
        &ServiceConfig {
            allow_origins: a.allow_origin,
        },
    )?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port))
            .await
            .with_context(|| format!("binding {}:{}", a.host, a.port))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        serve(listener, app).await?;
        Ok(())
    })
}
