//! Entry points behind the `dots` subcommands. Each takes a resolved
//! [`RunConfig`] and an output directory and returns what it wrote.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::artifacts::{
    genotype_dot, metrics_csv, rank_csv, save_checkpoint, tau_status, write_json, write_text,
    ArtifactMeta, EvalReport, RankSummary,
};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::harness::{generate_task, rank_experiment, ExperimentCache, RankOutcome, TrainConfig};
use crate::rng::derive_seed;
use crate::space::{CellSpec, Genotype, OperationSet, ValidationReport};
use crate::stages::{ImportanceReport, SearchOutcome, SearchRun};

pub const GENOTYPE_FILE: &str = "genotype.json";
pub const DARTS_GENOTYPE_FILE: &str = "darts_genotype.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const IMPORTANCE_FILE: &str = "importance.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const RANK_CSV_FILE: &str = "rankcorr.csv";
pub const RANK_SUMMARY_FILE: &str = "rankcorr_summary.json";
pub const CACHE_FILE: &str = "experiment_cache.json";
pub const EVAL_FILE: &str = "eval.json";

fn meta(cfg: &RunConfig) -> Result<ArtifactMeta> {
    Ok(ArtifactMeta::new(cfg.config_hash()?, cfg.seed))
}

/// The resolved configuration, headed by its hash.
fn write_config(cfg: &RunConfig, meta: &ArtifactMeta, out: &Path) -> Result<()> {
    let text = format!(
        "# config_hash={} seed={} tool_version={}\n{}",
        meta.config_hash,
        meta.seed,
        meta.tool_version,
        cfg.to_toml()?
    );
    write_text(&out.join(CONFIG_FILE), &text)
}

#[derive(Serialize)]
struct ImportanceFile<'a> {
    meta: &'a ArtifactMeta,
    report: &'a ImportanceReport,
}

pub struct SearchReport {
    pub outcome: SearchOutcome,
    pub files: Vec<PathBuf>,
}

/// Run both search stages and write the genotype, the genotype derived from
/// the operation weights alone, the final checkpoint, per-epoch metrics and
/// the importance scores.
pub fn cmd_search(cfg: &RunConfig, out: &Path) -> Result<SearchReport> {
    cfg.validate()?;
    let meta = meta(cfg)?;
    let task = generate_task(&cfg.task)?;
    let mut run = SearchRun::new(cfg.search_setup()?, task.train.clone())?;
    let mut outcome = run.run_to_end()?;
    let mut files = Vec::new();
    let mut emit = |name: &str, text: String| -> Result<()> {
        let path = out.join(name);
        write_text(&path, &text)?;
        files.push(path);
        Ok(())
    };
    meta.stamp(&mut outcome.genotype);
    emit(GENOTYPE_FILE, outcome.genotype.to_json()?)?;
    if let Some(g) = outcome.darts_genotype.as_mut() {
        meta.stamp(g);
        emit(DARTS_GENOTYPE_FILE, g.to_json()?)?;
    }
    emit(
        METRICS_FILE,
        metrics_csv(&meta, &cfg.cell()?, &outcome.metrics)?,
    )?;
    let importance = ImportanceFile {
        meta: &meta,
        report: &outcome.importance,
    };
    emit(
        IMPORTANCE_FILE,
        serde_json::to_string_pretty(&importance)? + "\n",
    )?;
    let checkpoint = out.join(CHECKPOINT_FILE);
    save_checkpoint(&checkpoint, &meta, &run.checkpoint())?;
    files.push(checkpoint);
    write_config(cfg, &meta, out)?;
    files.push(out.join(CONFIG_FILE));
    Ok(SearchReport { outcome, files })
}

pub struct RankReport {
    pub outcome: RankOutcome,
    pub summary: RankSummary,
    /// `(cache hits, new trainings)` for stand-alone accuracies.
    pub cache_stats: (usize, usize),
}

/// Search, train every variant of the studied node and correlate. Searches
/// and accuracies are cached in `out`, so a rerun only reads the cache.
pub fn cmd_rankcorr(cfg: &RunConfig, out: &Path) -> Result<RankReport> {
    cfg.validate()?;
    let meta = meta(cfg)?;
    let task = generate_task(&cfg.task)?;
    let cache_path = out.join(CACHE_FILE);
    let mut cache = ExperimentCache::load_or_default(&cache_path)?;
    let result = rank_experiment(
        &task,
        cfg.search_setup()?,
        &cfg.rankcorr,
        &cfg.train,
        &mut cache,
    );
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    cache.save(&cache_path)?;
    let outcome = result?;
    let mut base = outcome.base.clone();
    meta.stamp(&mut base);
    let summary = RankSummary {
        meta: meta.clone(),
        node: outcome.node,
        combinations: outcome.records.len(),
        baseline: cfg.plan.baseline.clone(),
        tau_op: outcome.tau_op,
        tau_combo: outcome.tau_combo,
        status_op: tau_status(outcome.tau_op).into(),
        status_combo: tau_status(outcome.tau_combo).into(),
        train_seeds: outcome.train_seeds.clone(),
        comparisons: outcome.comparisons.clone(),
        base_genotype: base,
    };
    write_text(
        &out.join(RANK_CSV_FILE),
        &rank_csv(&meta, &outcome.records)?,
    )?;
    write_json(&out.join(RANK_SUMMARY_FILE), &summary)?;
    write_config(cfg, &meta, out)?;
    Ok(RankReport {
        outcome,
        summary,
        cache_stats: cache.stats(),
    })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (
        mean,
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt(),
    )
}

/// Seeds of the stand-alone trainings behind `cmd_eval`.
pub fn eval_seeds(cfg: &RunConfig) -> Vec<u64> {
    (0..cfg.eval.seeds as u64)
        .map(|k| derive_seed(cfg.seed, "eval", k))
        .collect()
}

/// Train `genotype` from scratch once per evaluation seed.
pub fn cmd_eval(cfg: &RunConfig, genotype: &Genotype, out: &Path) -> Result<EvalReport> {
    cfg.validate()?;
    let meta = meta(cfg)?;
    let task = generate_task(&cfg.task)?;
    let seeds = eval_seeds(cfg);
    let train: &TrainConfig = &cfg.train;
    let accuracies = seeds
        .iter()
        .map(|&s| crate::harness::train_standalone(genotype, &task, train, s))
        .collect::<Result<Vec<_>>>()?;
    let (acc_mean, acc_std) = mean_std(&accuracies);
    let report = EvalReport {
        meta,
        genotype: genotype.clone(),
        seeds,
        accuracies,
        acc_mean,
        acc_std,
    };
    write_json(&out.join(EVAL_FILE), &report)?;
    Ok(report)
}

/// Cell shape a genotype describes: as many intermediate nodes as it lists.
fn implied_cell(genotype: &Genotype) -> Result<CellSpec> {
    CellSpec::new(genotype.nodes.len(), 1).map_err(|e| Error::Genotype(e.to_string()))
}

/// Check `genotype` against its own policy and the canonical operations.
pub fn cmd_validate(genotype: &Genotype) -> Result<ValidationReport> {
    Ok(genotype.validate(
        &implied_cell(genotype)?,
        genotype.policy,
        &OperationSet::canonical(),
    ))
}

/// DOT text of a valid genotype, with its provenance when it has any.
pub fn cmd_export_dot(genotype: &Genotype) -> Result<String> {
    cmd_validate(genotype)?.into_result()?;
    let meta = genotype.meta.as_ref().and_then(|m| {
        Some(ArtifactMeta {
            config_hash: m.config_hash.clone()?,
            seed: m.seed?,
            tool_version: m.tool_version.clone()?,
        })
    });
    Ok(genotype_dot(genotype, meta.as_ref()))
}
