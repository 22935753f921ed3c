//! `bqfl` command-line entry point.
//!
//! Exit codes: 0 success, 1 domain failure (data, training, chain
//! integrity), 2 usage or config error.

use clap::{Parser, ValueEnum};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bqfl_core::analytics::{encoding_time, fedavg_bound, total_time_bound, BoundConstants};
use bqfl_core::chain::{block_time, expected_block_time, ChainCheck, Ledger, StakeTable};
use bqfl_core::config::{load_config_with_overrides, RunConfig};
use bqfl_core::data::{class_filter, load_idx_files, RawDataset, ShardSpec};
use bqfl_core::error::Error;
use bqfl_core::runner;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Verb {
    /// Execute the configured federated rounds and write metrics + ledger.
    Run,
    /// Print the convergence/delay bound calculators for the configured
    /// constants.
    Bounds,
    /// Summarize the dataset: class counts before/after filtering and
    /// per-worker shard class sets.
    InspectData,
    /// Audit a persisted ledger and print per-block summaries.
    InspectChain,
}

#[derive(Debug, Parser)]
#[command(
    name = "bqfl",
    version,
    about = "Desk-scale blockchain quantum federated learning simulator"
)]
struct Cli {
    /// What to do.
    #[arg(value_enum)]
    verb: Verb,

    /// Flat key=value config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override the run seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Repeatable key=value config override, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn exit_code_for(err: &Error) -> ExitCode {
    match err {
        Error::Config(_) => ExitCode::from(2),
        _ => ExitCode::from(1),
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let text = match &cli.config {
        None => String::new(),
        Some(path) => std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?,
    };
    let mut overrides = cli.set.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    if let Some(out) = &cli.out {
        overrides.push(format!("out_dir={}", out.display()));
    }
    load_config_with_overrides(&text, &overrides)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();

    let cfg = match load_config(&cli) {
        Ok(cfg) => cfg,
        Err(err) => {
            eprintln!("error: {err}");
            return ExitCode::from(2);
        }
    };

    let result = match cli.verb {
        Verb::Run => cmd_run(&cfg),
        Verb::Bounds => cmd_bounds(&cfg),
        Verb::InspectData => cmd_inspect_data(&cfg),
        Verb::InspectChain => cmd_inspect_chain(&cfg),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code_for(&err)
        }
    }
}

fn cmd_run(cfg: &RunConfig) -> Result<(), Error> {
    let artifacts = runner::run_experiment(cfg)?;
    for outcome in &artifacts.rounds {
        println!(
            "round {:>3}: accepted {}/{} updates, block {}, test accuracy {:.4}, \
             comm {:.3}s, block gen {:.3}s",
            outcome.round,
            outcome.accepted,
            outcome.accepted + outcome.rejected,
            outcome.block_index,
            outcome.aggregate_test_accuracy,
            outcome.comm_time_s,
            outcome.block_gen_time_s,
        );
    }
    println!("metrics: {}", artifacts.metrics_path.display());
    println!("ledger:  {}", artifacts.ledger_path.display());
    println!("config:  {}", artifacts.config_path.display());
    println!(
        "measured wall time: {:.2}s (not persisted; recorded times are simulated)",
        artifacts.measured_wall_s
    );
    println!(
        "final global top-1 test accuracy: {:.4}",
        artifacts.final_accuracy
    );
    Ok(())
}

fn cmd_bounds(cfg: &RunConfig) -> Result<(), Error> {
    let constants = cfg
        .bounds
        .clone()
        .ok_or_else(|| Error::config("bounds command needs the bound_* constants".to_string()))?;

    println!("# constants");
    println!("bound_l = {}", constants.l_smooth);
    println!("bound_mu = {}", constants.mu);
    println!(
        "bound_sigma_k = {}",
        constants
            .sigma_k
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",")
    );
    println!(
        "bound_p_k = {}",
        constants
            .p_k
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",")
    );
    println!("bound_gamma = {}", constants.gamma);
    println!("bound_g = {}", constants.g_bound);
    println!("bound_e_local = {}", constants.e_local);
    println!("bound_t_rounds = {}", constants.t_rounds);
    println!("bound_theta_gap = {}", constants.theta_gap);

    let stakes = StakeTable::genesis(0..cfg.n_devices() as u64, 1.0);
    let node_time = block_time(cfg.block_create_s, cfg.latency_mean_s);
    let per_node: BTreeMap<u64, f64> = stakes.iter().map(|(id, _)| (id, node_time)).collect();
    let l_len = 1u64 << cfg.n_qubits;

    let convergence = fedavg_bound(&constants)?;
    let block = expected_block_time(&stakes, &per_node)?;
    let encode = encoding_time(l_len, cfg.n_qubits as u64, cfg.t_gate_s);
    let total = total_time_bound(
        &constants,
        &stakes,
        &per_node,
        l_len,
        cfg.n_qubits as u64,
        cfg.t_gate_s,
    )?;

    println!("\n# calculators");
    println!("convergence bound:    {convergence:.6e}");
    println!("expected block time:  {block:.6e} s");
    println!(
        "encoding time:        {encode:.6e} s  (L={l_len}, n={}, t_gate={})",
        cfg.n_qubits, cfg.t_gate_s
    );
    println!("total time bound:     {total:.6e}");

    println!("\n# T sweep");
    println!("{:>6}  {:>14}  {:>14}", "T", "bound", "total");
    for t in [1u64, 2, 5, 10, 20, 50, 100] {
        let swept = BoundConstants {
            t_rounds: t,
            ..constants.clone()
        };
        let bound = fedavg_bound(&swept)?;
        let total = bound + block + encode;
        println!("{t:>6}  {bound:>14.6e}  {total:>14.6e}");
    }
    Ok(())
}

fn class_counts(ds: &RawDataset) -> [usize; 10] {
    let mut counts = [0usize; 10];
    for label in &ds.labels {
        counts[*label as usize] += 1;
    }
    counts
}

fn print_counts(name: &str, ds: &RawDataset) {
    let counts = class_counts(ds);
    print!("{name}: {} samples |", ds.len());
    for (class, count) in counts.iter().enumerate() {
        if *count > 0 {
            print!(" {class}:{count}");
        }
    }
    println!();
}

fn cmd_inspect_data(cfg: &RunConfig) -> Result<(), Error> {
    for (key, path) in [
        ("train_images", &cfg.train_images),
        ("train_labels", &cfg.train_labels),
        ("test_images", &cfg.test_images),
        ("test_labels", &cfg.test_labels),
    ] {
        if path.is_empty() {
            return Err(Error::config(format!("{key} is not set")));
        }
    }
    let train = load_idx_files(Path::new(&cfg.train_images), Path::new(&cfg.train_labels))?;
    let test = load_idx_files(Path::new(&cfg.test_images), Path::new(&cfg.test_labels))?;

    println!("# before filter");
    print_counts("train", &train);
    print_counts("test", &test);

    let train_kept = class_filter(&train, &cfg.removed_classes);
    let test_kept = class_filter(&test, &cfg.removed_classes);
    println!("\n# after removing {:?}", cfg.removed_classes);
    print_counts("train", &train_kept);
    print_counts("test", &test_kept);

    let spec = ShardSpec {
        m_classes: cfg.m_classes,
        n_workers: cfg.n_workers,
        kept_classes: cfg.kept_classes(),
    };
    println!(
        "\n# cycle-{} shards over {} workers",
        cfg.m_classes, cfg.n_workers
    );
    for worker in 0..cfg.n_workers {
        println!("worker {worker}: classes {:?}", spec.classes_for(worker)?);
    }
    Ok(())
}

fn cmd_inspect_chain(cfg: &RunConfig) -> Result<(), Error> {
    let path = runner::ledger_path(cfg);
    let ledger = Ledger::read_file(&path)?;
    println!("ledger {} with {} blocks", path.display(), ledger.len());
    for block in ledger.blocks() {
        let miner = if block.miner_id == bqfl_core::chain::GENESIS_MINER {
            "genesis".to_string()
        } else {
            block.miner_id.to_string()
        };
        println!(
            "block {:>3}: miner {:>7}, {} updates, t={:.3}s, hash {}",
            block.index,
            miner,
            block.updates.len(),
            block.timestamp_s,
            hex_prefix(&block.block_hash),
        );
    }
    match ledger.validate_chain() {
        ChainCheck::Ok => {
            println!("chain ok");
            Ok(())
        }
        ChainCheck::BadBlock { index, reason } => Err(Error::Integrity(format!(
            "chain invalid at block {index}: {reason}"
        ))),
    }
}

fn hex_prefix(hash: &[u8; 32]) -> String {
    hash[..8].iter().map(|b| format!("{b:02x}")).collect()
}
