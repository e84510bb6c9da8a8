//! Command-line front end: corpus generation, the three training regimes,
//! offline and model-backed evaluation, the δ sweep, and gradient checks.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 config
//! violation. Environment: `DIALM_RUN_ROOT` places run directories,
//! `RAYON_NUM_THREADS` caps worker threads.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use dialm::eval::{self, BucketSpec};
use dialm::harness::{
    checkpoint, config::Regime, config::RunConfig, default_grid, format_suite, format_table,
    gradient_suite, run_regime, sweep_delta, write_sweep_files, DirObserver, TrainOutput,
};
use dialm::synth::{self, SynthConfig};
use dialm::text::{load_jsonl, save_jsonl, DialogueExample};
use dialm::{Error, Result};

#[derive(Parser)]
#[command(
    name = "dialm",
    version,
    about = "Structural dialogue language modeling at desk scale"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dialogue corpus with train/valid/test splits.
    Synth(SynthArgs),
    /// Self-supervised post-training over a dialogue corpus.
    Posttrain(TrainArgs),
    /// Response-selection fine-tuning, from a checkpoint or from scratch.
    Finetune(TrainArgs),
    /// Single-stage multi-task fine-tuning.
    Mtf(TrainArgs),
    /// Ranking metrics from a checkpoint or a predictions file.
    Eval(EvalArgs),
    /// Train once per permutation ratio and tabulate the results.
    Sweep(SweepArgs),
    /// Numerically verify every training loss end to end.
    Gradcheck(GradArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for train/valid/test JSONL and the stats sidecar.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    dialogues: usize,
    #[arg(long, default_value_t = 10)]
    candidates: usize,
    #[arg(long, default_value_t = 0.8)]
    cue_strength: f64,
    #[arg(long, default_value_t = 0.5)]
    svo_density: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Split fractions, comma separated; must sum to 1.
    #[arg(long, default_value = "0.8,0.1,0.1")]
    split: String,
}

#[derive(Args)]
struct TrainArgs {
    /// Run configuration TOML.
    #[arg(long)]
    config: PathBuf,
    /// Overrides; flags win over the file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    mask_rate: Option<f64>,
    #[arg(long)]
    train_corpus: Option<PathBuf>,
    #[arg(long)]
    valid_corpus: Option<PathBuf>,
    /// Initial checkpoint (post-training: resume point).
    #[arg(long)]
    init: Option<PathBuf>,
    /// Keep the checkpoint's task heads instead of reinitializing.
    #[arg(long)]
    load_heads: bool,
    /// Fine-tune from random initialization even if the config names a
    /// checkpoint.
    #[arg(long)]
    baseline: bool,
    /// Where to create the run directory (default: $DIALM_RUN_ROOT or
    /// ./runs).
    #[arg(long)]
    run_root: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Scored instances as JSONL; evaluates offline.
    #[arg(long, conflicts_with_all = ["checkpoint", "corpus"])]
    predictions: Option<PathBuf>,
    /// Model checkpoint to score with.
    #[arg(long, requires = "corpus")]
    checkpoint: Option<PathBuf>,
    /// Corpus to score (requires --checkpoint).
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Recall cells as n:k pairs, comma separated.
    #[arg(long, default_value = "2:1,10:1,10:2,10:5")]
    pairs: String,
    /// Directory for report.json and report.txt (default: print only).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 128)]
    max_len: usize,
    #[arg(long, default_value_t = 20)]
    max_utterances: usize,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Grid values, comma separated; must include 0.
    #[arg(long)]
    deltas: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    run_root: Option<PathBuf>,
}

#[derive(Args)]
struct GradArgs {
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 16)]
    hidden: usize,
    #[arg(long, default_value_t = 3)]
    max_coords: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(match e {
                Error::Config(_) => 3,
                _ => 1,
            })
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Synth(a) => cmd_synth(a),
        Cmd::Posttrain(a) => cmd_train(a, Regime::DapPosttrain),
        Cmd::Finetune(a) => {
            let regime = if a.baseline { Regime::BaselineFinetune } else { Regime::DapFinetune };
            cmd_train(a, regime)
        }
        Cmd::Mtf(a) => cmd_train(a, Regime::Mtf),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Sweep(a) => cmd_sweep(a),
        Cmd::Gradcheck(a) => cmd_gradcheck(a),
    }
}

// ── shared helpers ──────────────────────────────────────────────────────

fn load_corpus(path: &Path) -> Result<Vec<DialogueExample>> {
    let (examples, _) = load_jsonl(path, false)?;
    Ok(examples)
}

fn parse_fractions(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("split fraction {:?}", p)))
        })
        .collect()
}

fn parse_deltas(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|p| {
            p.trim().parse::<f64>().map_err(|_| Error::Config(format!("delta {:?}", p)))
        })
        .collect()
}

fn parse_pairs(s: &str) -> Result<Vec<(usize, usize)>> {
    s.split(',')
        .map(|p| {
            let (n, k) = p
                .trim()
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("recall pair {:?}, expected n:k", p)))?;
            let n = n.parse().map_err(|_| Error::Config(format!("recall n {:?}", n)))?;
            let k = k.parse().map_err(|_| Error::Config(format!("recall k {:?}", k)))?;
            Ok((n, k))
        })
        .collect()
}

fn run_root(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("DIALM_RUN_ROOT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// `<root>/<regime>-<utc timestamp>-s<seed>`, suffixed on collision.
fn create_run_dir(root: &Path, regime: Regime, seed: u64) -> Result<PathBuf> {
    let stamp = chrono::Utc::now().format("%Y%m%d-%H%M%S");
    let base = format!("{}-{}-s{}", regime.as_str(), stamp, seed);
    for attempt in 0..100u32 {
        let name = if attempt == 0 { base.clone() } else { format!("{}-{}", base, attempt) };
        let dir = root.join(&name);
        if !dir.exists() {
            std::fs::create_dir_all(&dir)?;
            return Ok(dir);
        }
    }
    Err(Error::Io(std::io::Error::other(format!("no free run directory under {:?}", root))))
}

fn apply_overrides(cfg: &mut RunConfig, a: &TrainArgs, regime: Regime) {
    cfg.regime = regime;
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = Some(v);
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.delta {
        cfg.delta = v;
    }
    if let Some(v) = a.mask_rate {
        cfg.mask_rate = v;
    }
    if let Some(v) = &a.train_corpus {
        cfg.train_corpus = Some(v.clone());
    }
    if let Some(v) = &a.valid_corpus {
        cfg.valid_corpus = Some(v.clone());
    }
    if let Some(v) = &a.init {
        cfg.init_checkpoint = Some(v.clone());
    }
    if a.load_heads {
        cfg.load_heads = true;
    }
    if a.baseline {
        cfg.init_checkpoint = None;
    }
}

#[derive(serde::Serialize)]
struct RunSummary {
    regime: &'static str,
    seed: u64,
    steps: usize,
    epochs: usize,
    best_epoch: Option<usize>,
    selection: Option<f64>,
    final_total: Option<f64>,
    wall_ms: u128,
}

fn write_summary(dir: &Path, cfg: &RunConfig, out: &TrainOutput, wall_ms: u128) -> Result<()> {
    let selection =
        out.best_epoch.and_then(|e| out.epochs.get(e)).and_then(|e| e.selection);
    let summary = RunSummary {
        regime: cfg.regime.as_str(),
        seed: cfg.seed,
        steps: out.steps.len(),
        epochs: out.epochs.len(),
        best_epoch: out.best_epoch,
        selection,
        final_total: out.steps.last().map(|s| s.loss.total),
        wall_ms,
    };
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(())
}

// ── subcommands ─────────────────────────────────────────────────────────

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let fractions = parse_fractions(&a.split)?;
    let cfg = SynthConfig {
        dialogues: a.dialogues,
        candidates: a.candidates,
        cue_strength: a.cue_strength,
        svo_density: a.svo_density,
        seed: a.seed,
        ..SynthConfig::default()
    };
    let (corpus, stats) = synth::generate(&cfg)?;
    let splits = synth::split(&corpus, &fractions, cfg.seed)?;

    std::fs::create_dir_all(&a.out)?;
    let names = ["train.jsonl", "valid.jsonl", "test.jsonl"];
    for (i, part) in splits.iter().enumerate() {
        let name = names.get(i).map(|s| s.to_string()).unwrap_or(format!("split{}.jsonl", i));
        save_jsonl(&a.out.join(&name), part)?;
        println!("{}: {} dialogues", name, part.len());
    }
    synth::write_stats(&stats, &a.out.join("stats.json"))?;
    println!(
        "generated {} dialogues (mean turns {:.2}, mean words {:.2}) into {}",
        corpus.len(),
        stats.avg_turns_per_context,
        stats.avg_words_per_utterance,
        a.out.display()
    );
    Ok(())
}

fn cmd_train(a: TrainArgs, regime: Regime) -> Result<()> {
    let mut cfg = RunConfig::from_toml_path(&a.config)?;
    apply_overrides(&mut cfg, &a, regime);
    cfg.validate()?;

    let train_path = cfg
        .train_corpus
        .clone()
        .ok_or_else(|| Error::Config("train_corpus is required".into()))?;
    let train = load_corpus(&train_path)?;
    let valid = match (&cfg.valid_corpus, regime) {
        (_, Regime::DapPosttrain) => Vec::new(),
        (Some(p), _) => load_corpus(p)?,
        (None, _) => return Err(Error::Config("valid_corpus is required for fine-tuning".into())),
    };
    let init = match &cfg.init_checkpoint {
        Some(p) => Some(checkpoint::load(p)?),
        None => None,
    };

    let dir = create_run_dir(&run_root(a.run_root.clone()), cfg.regime, cfg.seed)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml_string()?)?;
    let mut obs = DirObserver::create(&dir)?;

    let started = Instant::now();
    let out = run_regime(&cfg, &train, &valid, init, &mut obs)?;
    let wall_ms = started.elapsed().as_millis();

    let final_name = match regime {
        Regime::DapPosttrain => "final.ckpt",
        _ => "best.ckpt",
    };
    checkpoint::save(&out.checkpoint, &dir.join(final_name))?;
    if let Some(report) = &out.report {
        eval::write_report_json(report, &dir.join("report.json"))?;
        std::fs::write(dir.join("report.txt"), eval::format_report_text(report))?;
        print!("{}", eval::format_report_text(report));
    }
    write_summary(&dir, &cfg, &out, wall_ms)?;

    for e in &out.epochs {
        match e.selection {
            Some(s) => println!("epoch {}: selection {:.6}", e.epoch, s),
            None => println!("epoch {}: done", e.epoch),
        }
    }
    if let Some(s) = out.steps.last() {
        println!("final step {}: total {:.6}", s.step, s.loss.total);
    }
    println!("run dir: {}", dir.display());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let pairs = parse_pairs(&a.pairs)?;
    let spec = BucketSpec::default();
    let report = match (&a.predictions, &a.checkpoint, &a.corpus) {
        (Some(pred), None, None) => {
            let instances = eval::read_predictions(pred)?;
            eval::evaluate_instances(&instances, &spec, &pairs)?
        }
        (None, Some(ckpt_path), Some(corpus_path)) => {
            let ckpt = checkpoint::load(ckpt_path)?;
            let corpus = load_corpus(corpus_path)?;
            let opts = dialm::text::AssembleOptions {
                max_len: a.max_len,
                max_utterances: a.max_utterances,
            };
            dialm::harness::evaluate_model(
                &ckpt.encoder,
                &ckpt.heads,
                &ckpt.vocab,
                &opts,
                &corpus,
                &spec,
                &pairs,
            )?
        }
        _ => {
            return Err(Error::Config(
                "eval needs either --predictions or --checkpoint with --corpus".into(),
            ))
        }
    };
    print!("{}", eval::format_report_text(&report));
    if let Some(out) = &a.out {
        std::fs::create_dir_all(out)?;
        eval::write_report_json(&report, &out.join("report.json"))?;
        std::fs::write(out.join("report.txt"), eval::format_report_text(&report))?;
        println!("report written to {}", out.display());
    }
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let mut cfg = RunConfig::from_toml_path(&a.config)?;
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    cfg.validate()?;
    let deltas = match &a.deltas {
        Some(s) => parse_deltas(s)?,
        None => default_grid(),
    };

    let train_path = cfg
        .train_corpus
        .clone()
        .ok_or_else(|| Error::Config("train_corpus is required".into()))?;
    let train = load_corpus(&train_path)?;
    let valid_path = cfg
        .valid_corpus
        .clone()
        .ok_or_else(|| Error::Config("valid_corpus is required".into()))?;
    let valid = load_corpus(&valid_path)?;
    let init = match &cfg.init_checkpoint {
        Some(p) => Some(checkpoint::load(p)?),
        None => None,
    };

    let dir = create_run_dir(&run_root(a.run_root.clone()), cfg.regime, cfg.seed)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml_string()?)?;

    let result = sweep_delta(&cfg, &deltas, &train, &valid, init.as_ref())?;
    write_sweep_files(&result.rows, &dir)?;
    print!("{}", format_table(&result.rows));
    println!("sweep files in {}", dir.display());
    Ok(())
}

fn cmd_gradcheck(a: GradArgs) -> Result<()> {
    if a.seeds == 0 {
        return Err(Error::Config("need at least one seed".into()));
    }
    let seeds: Vec<u64> = (0..a.seeds).collect();
    let cases = gradient_suite(a.layers, a.hidden, &seeds, a.max_coords)?;
    print!("{}", format_suite(&cases));
    if cases.iter().any(|c| !c.pass) {
        return Err(Error::NonFinite("gradient check failed".into()));
    }
    Ok(())
}
