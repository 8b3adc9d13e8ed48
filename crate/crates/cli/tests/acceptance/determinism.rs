//! Two complete command-line runs of synth, prep, train (500 steps), seeded
//! generate and seeded eval, per architecture, with byte-identical outputs.

use std::path::Path;
use std::process::Command;

use crate::{ensure, fail, Outcome};

const BIN: &str = env!("CARGO_BIN_EXE_recipegen");

const LSTM: &str = "embed_dim=16\nhidden_dim=32\nnum_layers=1\ncontext_len=48\nbatch_size=4\nmax_steps=500\nlearning_rate=0.005\nseed=5\n";
const GPT: &str = "d_model=16\nn_heads=2\nn_layers=1\nff_dim=32\ndropout_rate=0.1\ncontext_len=48\nbatch_size=4\nmax_steps=500\nlearning_rate=0.003\nseed=5\n";

fn recipegen(args: &[&str], dir: &Path) -> Result<Vec<u8>, String> {
    let out = Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(fail("spawn"))?;
    ensure!(
        out.status.success(),
        "recipegen {} failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    Ok(out.stdout)
}

struct Artifacts {
    checkpoint: Vec<u8>,
    generation: Vec<u8>,
    report: Vec<u8>,
}

fn pipeline(arch: &str, config: &str) -> Result<Artifacts, String> {
    let dir = tempfile::tempdir().map_err(fail("tempdir"))?;
    let d = dir.path();
    std::fs::write(d.join("model.cfg"), config).map_err(fail("config"))?;
    recipegen(&["corpus", "synth", "raw.jsonl", "--count", "200", "--seed", "9"], d)?;
    recipegen(&["corpus", "prep", "raw.jsonl", "train.txt"], d)?;
    recipegen(
        &["train", "--model", arch, "--corpus", "train.txt", "--config", "model.cfg", "--out", "m.ckpt"],
        d,
    )?;
    let generation = recipegen(
        &[
            "generate",
            "--ckpt",
            "m.ckpt",
            "--ingredients",
            "2 cups rice,1/2 tsp salt,butter",
            "--seed",
            "17",
            "--max-new-tokens",
            "300",
            "--json",
        ],
        d,
    )?;
    recipegen(
        &[
            "eval",
            "--ckpt",
            "m.ckpt",
            "--heldout",
            "train.txt.heldout.jsonl",
            "--seed",
            "23",
            "--max-new-tokens",
            "200",
            "--out",
            "report.json",
        ],
        d,
    )?;
    let read = |name: &str| std::fs::read(d.join(name)).map_err(fail(name));
    Ok(Artifacts {
        checkpoint: read("m.ckpt")?,
        generation,
        report: read("report.json")?,
    })
}

pub fn run() -> Outcome {
    let mut detail = Vec::new();
    for (arch, config) in [("char-lstm", LSTM), ("transformer", GPT)] {
        let a = pipeline(arch, config)?;
        let b = pipeline(arch, config)?;
        ensure!(a.checkpoint == b.checkpoint, "{arch}: checkpoints differ");
        ensure!(a.generation == b.generation, "{arch}: generations differ");
        ensure!(a.report == b.report, "{arch}: eval reports differ");
        ensure!(!a.generation.is_empty() && !a.report.is_empty(), "{arch}: empty output");
        detail.push(format!("{arch} ckpt {} B, report {} B identical", a.checkpoint.len(), a.report.len()));
    }
    Ok(detail.join("; "))
}
