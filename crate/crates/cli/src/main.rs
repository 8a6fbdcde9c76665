use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dots_core::commands::{cmd_eval, cmd_export_dot, cmd_rankcorr, cmd_search, cmd_validate};
use dots_core::config::RunConfig;
use dots_core::space::Genotype;
use dots_core::{Error, Result};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// Decoupled operation and topology search for cell-based architectures.
#[derive(Parser)]
#[command(name = "dots", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `out_dir` from the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run operation and topology search; write genotype, checkpoint and metrics.
    Search(RunArgs),
    /// Rank-correlation experiment on the last (or configured) node.
    Rankcorr(RunArgs),
    /// Train a genotype from scratch over the configured evaluation seeds.
    Eval {
        /// Genotype JSON file.
        genotype: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Print a genotype as a Graphviz digraph (or write `cell.dot` under --out).
    ExportDot {
        genotype: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a genotype file and/or a configuration.
    Validate {
        genotype: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

const DEFAULT_OUT: &str = "runs/default";

fn resolve(args: &RunArgs) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out = args
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| DEFAULT_OUT.into());
    Ok((cfg, out))
}

fn fmt_tau(tau: Option<f64>) -> String {
    tau.map_or_else(|| "undefined (no-signal)".into(), |t| format!("{t:.4}"))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Search(args) => {
            let (cfg, out) = resolve(&args)?;
            let report = cmd_search(&cfg, &out)?;
            for w in report.outcome.genotype.warnings() {
                eprintln!("warning: {w}");
            }
            for f in &report.files {
                println!("wrote {}", f.display());
            }
        }
        Command::Rankcorr(args) => {
            let (cfg, out) = resolve(&args)?;
            let report = cmd_rankcorr(&cfg, &out)?;
            let s = &report.summary;
            println!(
                "node {}: {} combinations, train seeds {:?}",
                s.node, s.combinations, s.train_seeds
            );
            println!("tau_op    = {}", fmt_tau(s.tau_op));
            println!("tau_combo = {} ({})", fmt_tau(s.tau_combo), s.baseline);
            for c in &s.comparisons {
                println!("tau[{}] = {}", c.baseline, fmt_tau(c.tau));
            }
            let (hits, trained) = report.cache_stats;
            println!(
                "cache: {hits} hits, {trained} trainings; results in {}",
                out.display()
            );
        }
        Command::Eval { genotype, run } => {
            let (cfg, out) = resolve(&run)?;
            let g = Genotype::load(&genotype)?;
            let r = cmd_eval(&cfg, &g, &out)?;
            for (s, a) in r.seeds.iter().zip(&r.accuracies) {
                println!("seed {s}: {a:.4}");
            }
            println!("accuracy {:.4} ± {:.4}", r.acc_mean, r.acc_std);
        }
        Command::ExportDot { genotype, out } => {
            let dot = cmd_export_dot(&Genotype::load(&genotype)?)?;
            match out {
                Some(dir) => {
                    let path = dir.join("cell.dot");
                    dots_core::artifacts::write_text(&path, &dot)?;
                    println!("wrote {}", path.display());
                }
                None => print!("{dot}"),
            }
        }
        Command::Validate { genotype, config } => {
            if genotype.is_none() && config.is_none() {
                return Err(Error::InvalidArgument(
                    "give a genotype file and/or --config".into(),
                ));
            }
            if let Some(path) = config {
                let cfg = RunConfig::load(&path)?;
                println!(
                    "config ok: {} (hash {})",
                    path.display(),
                    cfg.config_hash()?
                );
            }
            if let Some(path) = genotype {
                let report = cmd_validate(&Genotype::load(&path)?)?;
                if report.is_valid() {
                    println!("genotype ok: {}", path.display());
                } else {
                    report.into_result()?;
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "error": e.category(), "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
