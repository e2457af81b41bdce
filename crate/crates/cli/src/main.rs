use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use trajcql::config::RunConfig;
use trajcql::pipeline::{self, PipelineError};

const EXIT_USAGE: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "trajcql", version, about = "Offline-RL trajectory prediction: data, training, evaluation and plots")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Flat `key = value` config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// obs6pred3 or obs3pred6.
    #[arg(long, global = true)]
    preset: Option<String>,
    #[arg(long, global = true, env = "TRAJCQL_OUT_DIR", default_value = "trajcql-out")]
    out_dir: PathBuf,
    /// Corpus directory; defaults to `<out-dir>/corpus`.
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    /// Agent checkpoint; defaults to `<out-dir>/checkpoints/cql.ckpt`.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic corpus and crop archive.
    GenData,
    /// Train the agent and the behaviour-cloning baseline.
    Train,
    /// Write per-trajectory error reports for the agent and baselines.
    Eval,
    /// Write rollouts for one split.
    Infer {
        #[arg(long, default_value = "val")]
        split: String,
    },
    /// Write per-step pessimistic values along expert episodes.
    Qcurve {
        #[arg(long, default_value = "val")]
        split: String,
    },
    /// Render SVG charts from existing reports.
    Plot,
    /// Print the effective configuration.
    ShowConfig,
}

struct UsageError(String);

impl std::fmt::Debug for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        cfg.apply_text(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    }
    let mut set = |k: &str, v: String| cfg.set(k, &v).map_err(|e| usage(format!("--{k}: {e}")));
    if let Some(p) = &cli.preset {
        set("preset", p.clone())?;
    }
    if let Some(s) = cli.seed {
        set("seed", s.to_string())?;
    }
    if let Some(e) = cli.epochs {
        set("epochs", e.to_string())?;
        set("bc_epochs", e.to_string())?;
    }
    if let Some(t) = cli.threads {
        set("threads", t.to_string())?;
    }
    cfg.validate().map_err(|e| usage(format!("config: {e}")))?;
    Ok(cfg)
}

fn warn_all(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let out = cli.out_dir.as_path();
    let corpus = cli.corpus.clone().unwrap_or_else(|| out.join("corpus"));
    let checkpoint = cli.checkpoint.clone().unwrap_or_else(|| pipeline::cql_path(out));
    match &cli.command {
        Command::GenData => {
            let m = pipeline::gen_data(&cfg, &corpus, out)?;
            println!("corpus written to {} (sha256 {})", corpus.display(), m.corpus_sha256);
        }
        Command::Train => {
            pipeline::train(&cfg, &corpus, out)?;
            println!("checkpoints written to {}", out.join("checkpoints").display());
        }
        Command::Eval => {
            let ev = pipeline::evaluate(&cfg, &corpus, &checkpoint, out)?;
            warn_all(&ev.warnings);
            for (split, r) in &ev.reports {
                let s = r.summary();
                println!(
                    "{split:5} {:13} n={:4} ADE {:8.3} ± {:7.3}  FDE {:8.3} ± {:7.3}  FD {:8.3} ± {:7.3}",
                    s.method, s.n, s.ade_px.mean, s.ade_px.std, s.fde_px.mean, s.fde_px.std, s.fd_px.mean, s.fd_px.std
                );
            }
            for c in &ev.comparisons {
                match &c.test {
                    Some(t) => println!("{} {} vs {}: W={} p={:.4e}", c.split, c.method, c.baseline, t.statistic, t.p_value),
                    None => println!("{} {} vs {}: {}", c.split, c.method, c.baseline, c.note.as_deref().unwrap_or("")),
                }
            }
        }
        Command::Infer { split } => {
            let w = pipeline::infer(&cfg, &corpus, &checkpoint, out, split)?;
            warn_all(&w);
            println!("predictions written to {}", out.join("predictions").join(format!("{split}.jsonl")).display());
        }
        Command::Qcurve { split } => {
            let (frac, w) = pipeline::run_qcurve(&cfg, &corpus, &checkpoint, out, split)?;
            warn_all(&w);
            println!("q_policy >= q_expert at {:.1}% of steps", 100.0 * frac);
        }
        Command::Plot => {
            for p in pipeline::run_plot(out)? {
                println!("{}", p.display());
            }
        }
        Command::ShowConfig => print!("{}", cfg.to_text()),
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return EXIT_USAGE;
    }
    match err.downcast_ref::<PipelineError>() {
        Some(e) if e.is_usage() => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

