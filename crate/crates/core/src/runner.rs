//! End-to-end experiment driver: load data, build devices, run the
//! configured number of federated rounds, and persist metrics, ledger, and
//! the resolved config.

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::analytics::{write_metrics_file, MetricsRow};
use crate::chain::{ChainCheck, Ledger, StakeTable};
use crate::classical::{MlpParams, HIDDEN_UNITS};
use crate::config::{RunConfig, RunMode};
use crate::data::{self, PreparedSample, ShardSpec};
use crate::error::{Error, Result};
use crate::fed::{self, DeviceState, ModelParams, Role, RoundOutcome, SimState};
use crate::rng::substream;
use crate::vqc::CircuitParams;

/// Miners validate updates against this many leading test samples.
pub const VALIDATION_SLICE: usize = 500;

/// Everything a finished run leaves behind.
#[derive(Debug)]
pub struct RunArtifacts {
    pub final_accuracy: f64,
    pub rounds: Vec<RoundOutcome>,
    pub rows: Vec<MetricsRow>,
    pub ledger: Ledger,
    pub stakes: StakeTable,
    pub metrics_path: PathBuf,
    pub ledger_path: PathBuf,
    pub config_path: PathBuf,
    /// Measured wall time of the whole run; reported on stdout only, never
    /// persisted, since recorded times are simulated.
    pub measured_wall_s: f64,
}

fn file_stem(cfg: &RunConfig) -> String {
    format!("{}_{}", cfg.mode, cfg.seed)
}

pub fn metrics_path(cfg: &RunConfig) -> PathBuf {
    Path::new(&cfg.out_dir).join(format!("{}.csv", file_stem(cfg)))
}

pub fn ledger_path(cfg: &RunConfig) -> PathBuf {
    Path::new(&cfg.out_dir).join(format!("{}.ledger", file_stem(cfg)))
}

pub fn resolved_config_path(cfg: &RunConfig) -> PathBuf {
    Path::new(&cfg.out_dir).join(format!("{}.resolved.cfg", file_stem(cfg)))
}

/// Load, filter, and preprocess the train/test IDX files named by the
/// config. Returns (train, test) prepared sample sets.
pub fn load_datasets(cfg: &RunConfig) -> Result<(Vec<PreparedSample>, Vec<PreparedSample>)> {
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
    let train_raw =
        data::load_idx_files(Path::new(&cfg.train_images), Path::new(&cfg.train_labels))?;
    let test_raw = data::load_idx_files(Path::new(&cfg.test_images), Path::new(&cfg.test_labels))?;

    let train_filtered = data::class_filter(&train_raw, &cfg.removed_classes);
    let test_filtered = data::class_filter(&test_raw, &cfg.removed_classes);
    if train_filtered.is_empty() || test_filtered.is_empty() {
        return Err(Error::config(
            "no samples left after class filtering".to_string(),
        ));
    }

    let kept = cfg.kept_classes();
    let train_mean = match cfg.encoding {
        data::EncodingMode::Mean => Some(data::mean_image(&train_filtered)),
        _ => None,
    };
    let train = data::preprocess(
        &train_filtered,
        cfg.encoding,
        cfg.n_qubits,
        &kept,
        train_mean.as_deref(),
    )?;
    let test = data::preprocess(
        &test_filtered,
        cfg.encoding,
        cfg.n_qubits,
        &kept,
        train_mean.as_deref(),
    )?;
    Ok((train, test))
}

/// Initial global model drawn from the run seed.
pub fn init_global_params(cfg: &RunConfig) -> ModelParams {
    let mut rng = substream(cfg.seed, "init-global", &[]);
    match cfg.mode {
        RunMode::BcflAvg => ModelParams::Mlp(MlpParams::random_init(
            1 << cfg.n_qubits,
            HIDDEN_UNITS,
            cfg.n_classes(),
            &mut rng,
        )),
        RunMode::BqflAvg | RunMode::BqflInf => ModelParams::Vqc(CircuitParams::random_init(
            cfg.k_layers,
            cfg.n_qubits,
            &mut rng,
        )),
    }
}

/// Build devices 0..n_workers-1 as workers with cycle-m shards and the rest
/// as miners holding no training data.
pub fn build_devices(
    cfg: &RunConfig,
    train: &[PreparedSample],
    global: &ModelParams,
) -> Result<Vec<DeviceState>> {
    let spec = ShardSpec {
        m_classes: cfg.m_classes,
        n_workers: cfg.n_workers,
        kept_classes: cfg.kept_classes(),
    };
    let mut devices = Vec::with_capacity(cfg.n_devices());
    for w in 0..cfg.n_workers {
        let mut shard = data::cycle_m_shard(train, &spec, w)?;
        if cfg.samples_per_worker > 0 {
            shard.truncate(cfg.samples_per_worker);
        }
        devices.push(DeviceState::new(
            w as u64,
            Role::Worker,
            global.clone(),
            shard,
        ));
    }
    for m in 0..cfg.n_miners {
        devices.push(DeviceState::new(
            (cfg.n_workers + m) as u64,
            Role::Miner,
            global.clone(),
            Vec::new(),
        ));
    }
    Ok(devices)
}

/// Assemble the initial simulation state from prepared data.
pub fn build_state(
    cfg: &RunConfig,
    train: &[PreparedSample],
    test: Vec<PreparedSample>,
) -> Result<SimState> {
    let global = init_global_params(cfg);
    let devices = build_devices(cfg, train, &global)?;
    let stakes = StakeTable::genesis(0..cfg.n_devices() as u64, 1.0);
    let ledger = Ledger::genesis(&stakes);
    let validation = test.iter().take(VALIDATION_SLICE).cloned().collect();
    Ok(SimState {
        devices,
        global,
        stakes,
        ledger,
        clock_s: 0.0,
        validation,
        test,
    })
}

/// Execute a full configured run and write its artifacts.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunArtifacts> {
    cfg.validate()?;
    let started = Instant::now();

    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let config_path = resolved_config_path(cfg);
    std::fs::write(&config_path, cfg.echo()).map_err(|e| Error::io(&config_path, e))?;

    let (train, test) = load_datasets(cfg)?;
    let mut state = build_state(cfg, &train, test)?;

    let mut rounds = Vec::with_capacity(cfg.rounds);
    let mut rows = Vec::new();
    for round in 1..=cfg.rounds as u64 {
        let outcome = fed::run_round(&mut state, cfg, round)?;
        log::info!(
            "round {round}: accepted {}/{} updates, test accuracy {:.4}",
            outcome.accepted,
            outcome.accepted + outcome.rejected,
            outcome.aggregate_test_accuracy
        );
        rows.extend(outcome.rows.iter().cloned());
        rounds.push(outcome);
    }

    debug_assert_eq!(state.ledger.validate_chain(), ChainCheck::Ok);
    let metrics_path = metrics_path(cfg);
    write_metrics_file(&rows, &metrics_path)?;
    let ledger_path = ledger_path(cfg);
    state.ledger.write_file(&ledger_path)?;

    Ok(RunArtifacts {
        final_accuracy: rounds.last().map_or(0.0, |r| r.aggregate_test_accuracy),
        rounds,
        rows,
        ledger: state.ledger,
        stakes: state.stakes,
        metrics_path,
        ledger_path,
        config_path,
        measured_wall_s: started.elapsed().as_secs_f64(),
    })
}
