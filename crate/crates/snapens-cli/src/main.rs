//! Experiment driver: `prepare` persists the split, `train-base` persists
//! frozen snapshot predictions, `run` evaluates the requested ensemble
//! methods. Each subcommand recomputes earlier stages deterministically
//! from the root seed, so they can be used independently; `run` picks up
//! snapshot files from the output directory when they exist.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use snapens::experiment::{
    build_snapshots, prepare, render_table, run_with_snapshots, write_neighbors, write_records,
    write_split, Method, RunConfig,
};
use snapens::snapshot;

#[derive(Parser)]
#[command(
    name = "snapens",
    about = "Snapshot-ensemble recommenders with a learned per-example combiner",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load or generate the dataset, split it chronologically, and persist
    /// the split plus the capped neighborhood index.
    Prepare(Common),
    /// Train the base-model lane(s) and persist their predictions as
    /// snapens-v1 files.
    TrainBase(Common),
    /// Evaluate the requested ensemble methods and write the report.
    Run(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML). Built-in defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed override; every random stream derives from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated override: single,average,se,hse,neuse.
    #[arg(long)]
    methods: Option<String>,
    /// Task override: rating or ranking.
    #[arg(long)]
    task: Option<String>,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
        config.neuse.seed = seed;
        config.hse.seed = seed;
    }
    if let Some(methods) = &common.methods {
        config.ensemble.methods = parse_methods(methods)?;
    }
    if let Some(task) = &common.task {
        config.eval.task = task.parse()?;
    }
    if let Some(out) = &common.out {
        config.out_dir = out.clone();
    }
    config.validate()?;
    Ok(config)
}

fn parse_methods(text: &str) -> Result<Vec<Method>> {
    let mut methods = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        methods.push(part.parse::<Method>()?);
    }
    anyhow::ensure!(!methods.is_empty(), "--methods lists no methods");
    Ok(methods)
}

fn snapshot_path(config: &RunConfig) -> PathBuf {
    config.out_dir.join("snapshots.snapens")
}

fn cyclic_path(config: &RunConfig) -> PathBuf {
    config.out_dir.join("snapshots-cyclic.snapens")
}

fn cmd_prepare(config: &RunConfig) -> Result<()> {
    let prepared = prepare(config)?;
    let split_dir = config.out_dir.join("split");
    write_split(&prepared.split, &split_dir)?;
    let neighbors_path = config.out_dir.join("neighbors.tsv");
    write_neighbors(&prepared.neighbors, &neighbors_path)?;
    println!(
        "split {} train / {} validation / {} test -> {}",
        prepared.split.train.interactions.len(),
        prepared.split.validation.interactions.len(),
        prepared.split.test.interactions.len(),
        split_dir.display()
    );
    println!("neighborhoods -> {}", neighbors_path.display());
    Ok(())
}

fn cmd_train_base(config: &RunConfig) -> Result<()> {
    let prepared = prepare(config)?;
    let (set, cyclic) = build_snapshots(config, &prepared)?;
    fs::create_dir_all(&config.out_dir)
        .with_context(|| format!("creating {}", config.out_dir.display()))?;
    let path = snapshot_path(config);
    snapshot::save(&set, &path)?;
    println!(
        "{} snapshots x {} pairs -> {}",
        set.n_m(),
        set.len(),
        path.display()
    );
    if let Some(cyc) = cyclic {
        let path = cyclic_path(config);
        snapshot::save(&cyc, &path)?;
        println!(
            "{} cyclic snapshots x {} pairs -> {}",
            cyc.n_m(),
            cyc.len(),
            path.display()
        );
    }
    Ok(())
}

fn load_if_present(path: &Path) -> Result<Option<snapshot::SnapshotSet>> {
    if path.exists() {
        let set = snapshot::load(path)
            .with_context(|| format!("loading snapshots {}", path.display()))?;
        println!("reusing {}", path.display());
        Ok(Some(set))
    } else {
        Ok(None)
    }
}

fn cmd_run(config: &RunConfig) -> Result<()> {
    let prepared = prepare(config)?;
    let (set, cyclic) = match load_if_present(&snapshot_path(config))? {
        Some(set) => {
            let cyclic = if config.ensemble.methods.contains(&Method::Se) {
                load_if_present(&cyclic_path(config))?
            } else {
                None
            };
            (set, cyclic)
        }
        None => build_snapshots(config, &prepared)?,
    };
    let experiment = run_with_snapshots(config, prepared, set, cyclic)?;
    let report_path = config.out_dir.join("report.csv");
    write_records(&experiment.reports, &report_path)?;
    print!("{}", render_table(&experiment.reports));
    println!("records -> {}", report_path.display());
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Prepare(common) => cmd_prepare(&resolve(&common)?),
        Command::TrainBase(common) => cmd_train_base(&resolve(&common)?),
        Command::Run(common) => cmd_run(&resolve(&common)?),
    }
}
