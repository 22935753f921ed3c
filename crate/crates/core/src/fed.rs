//! Federated orchestration: local Adam training on each worker, FedAvg
//! aggregation or federated-inference ensembling, and the per-round pipeline
//! that feeds updates through validation onto the ledger.
//!
//! All recorded times are simulated from seeded substreams and deterministic
//! work models, so a replayed run reproduces its ledger and metrics
//! byte for byte.

use rand::Rng;
use rayon::prelude::*;
use std::borrow::Cow;
use std::fmt;
use std::str::FromStr;

use crate::analytics::{encoding_time, MetricsRow};
use crate::chain::{
    self, block_time, select_validator, validate_update, ModelUpdate, RewardRule, StakeTable,
    UpdatePayload,
};
use crate::classical::{self, MlpParams};
use crate::config::{LedgerPayload, ReadoutKind, RunConfig, RunMode};
use crate::data::{self, PreparedSample};
use crate::error::{Error, Result};
use crate::qsim;
use crate::rng::substream;
use crate::vqc::{self, argmax, CircuitParams, ReadoutMode};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// What a device does in the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Worker,
    Miner,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Worker => "worker",
            Role::Miner => "miner",
        })
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "worker" => Ok(Role::Worker),
            "miner" => Ok(Role::Miner),
            other => Err(Error::argument(format!("unknown role `{other}`"))),
        }
    }
}

/// Adam moment estimates plus the step counter for bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        AdamState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update in place: bias-corrected first/second moments with
/// beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    learning_rate: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::dimension(format!(
            "adam shapes disagree: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(state.step as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(state.step as i32);
    for i in 0..params.len() {
        state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * grads[i];
        state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * grads[i] * grads[i];
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
    }
    Ok(())
}

/// Trainable model of either pipeline.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams {
    Vqc(CircuitParams),
    Mlp(MlpParams),
}

impl ModelParams {
    pub fn n_params(&self) -> usize {
        match self {
            ModelParams::Vqc(p) => p.n_params(),
            ModelParams::Mlp(p) => p.n_params(),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        match self {
            ModelParams::Vqc(p) => p.values().to_vec(),
            ModelParams::Mlp(p) => p.to_flat(),
        }
    }

    /// Same architecture, new parameter values.
    pub fn with_flat(&self, flat: &[f64]) -> Result<ModelParams> {
        match self {
            ModelParams::Vqc(p) => Ok(ModelParams::Vqc(p.with_values(flat.to_vec())?)),
            ModelParams::Mlp(p) => Ok(ModelParams::Mlp(p.with_flat(flat)?)),
        }
    }

    fn input_for<'a>(&self, sample: &'a PreparedSample) -> Cow<'a, [f64]> {
        match self {
            ModelParams::Vqc(_) => Cow::Borrowed(&sample.x),
            ModelParams::Mlp(_) => Cow::Owned(sample.classical_input()),
        }
    }

    /// Class probabilities for one prepared sample.
    pub fn predict_probs(
        &self,
        sample: &PreparedSample,
        readout: &ReadoutMode,
    ) -> Result<Vec<f64>> {
        match self {
            ModelParams::Vqc(p) => {
                let encoded = qsim::amplitude_encode(&sample.x, p.n_qubits())?;
                vqc::readout(&vqc::clf_apply(&encoded.state, p)?, readout)
            }
            ModelParams::Mlp(p) => classical::mlp_forward(p, &sample.classical_input()),
        }
    }

    /// Top-1 accuracy over prepared samples.
    pub fn batch_accuracy(
        &self,
        samples: &[&PreparedSample],
        readout: &ReadoutMode,
    ) -> Result<f64> {
        let inputs: Vec<Cow<'_, [f64]>> = samples.iter().map(|s| self.input_for(s)).collect();
        let xs: Vec<&[f64]> = inputs.iter().map(|c| c.as_ref()).collect();
        let ys: Vec<&[f64]> = samples.iter().map(|s| s.y.as_slice()).collect();
        match self {
            ModelParams::Vqc(p) => vqc::accuracy(p, &xs, &ys, readout),
            ModelParams::Mlp(p) => classical::mlp_accuracy(p, &xs, &ys),
        }
    }

    /// Mean NLL and its flat gradient over one batch.
    fn batch_loss_grad(
        &self,
        samples: &[&PreparedSample],
        readout: &ReadoutMode,
    ) -> Result<(f64, Vec<f64>)> {
        let inputs: Vec<Cow<'_, [f64]>> = samples.iter().map(|s| self.input_for(s)).collect();
        let xs: Vec<&[f64]> = inputs.iter().map(|c| c.as_ref()).collect();
        let ys: Vec<&[f64]> = samples.iter().map(|s| s.y.as_slice()).collect();
        match self {
            ModelParams::Vqc(p) => {
                let loss = vqc::loss_nll(p, &xs, &ys, readout)?;
                let grad = vqc::grad_parameter_shift(p, &xs, &ys, readout)?;
                Ok((loss, grad))
            }
            ModelParams::Mlp(p) => {
                let loss = classical::mlp_loss(p, &xs, &ys)?;
                let grad = classical::mlp_grad(p, &xs, &ys)?.to_flat();
                Ok((loss, grad))
            }
        }
    }
}

/// One simulated device.
#[derive(Debug, Clone)]
pub struct DeviceState {
    pub id: u64,
    pub role: Role,
    pub params: ModelParams,
    pub shard: Vec<PreparedSample>,
    pub opt_state: AdamState,
}

impl DeviceState {
    pub fn new(id: u64, role: Role, params: ModelParams, shard: Vec<PreparedSample>) -> Self {
        let opt_state = AdamState::new(params.n_params());
        DeviceState {
            id,
            role,
            params,
            shard,
            opt_state,
        }
    }
}

/// The readout head a config describes.
pub fn readout_mode(cfg: &RunConfig) -> ReadoutMode {
    match cfg.readout {
        ReadoutKind::Softmax => ReadoutMode::Softmax {
            n_classes: cfg.n_classes(),
        },
        ReadoutKind::Sample => ReadoutMode::Sample {
            n_classes: cfg.n_classes(),
        },
    }
}

/// Result of one device's local training pass.
#[derive(Debug, Clone)]
pub struct LocalOutcome {
    pub update: ModelUpdate,
    /// Mean loss of each local epoch, in order.
    pub epoch_losses: Vec<f64>,
}

/// Deterministic work model standing in for training wall time: evaluation
/// count times the per-evaluation encoding/gate (or flop) cost.
fn simulated_train_time(
    model: &ModelParams,
    n_samples: usize,
    epochs: usize,
    t_gate_s: f64,
) -> f64 {
    match model {
        ModelParams::Vqc(p) => {
            let n = p.n_qubits();
            let evals = (epochs * n_samples * (2 * p.n_params() + 2)) as f64;
            let gates = p.k_layers() * (n.saturating_sub(1) + 3 * n);
            let per_eval = encoding_time(1 << n, n as u64, t_gate_s) + gates as f64 * t_gate_s;
            evals * per_eval
        }
        ModelParams::Mlp(p) => {
            let passes = (epochs * n_samples * 2) as f64;
            let flops = 2 * (p.input_dim() * p.hidden() + p.hidden() * p.n_classes());
            passes * flops as f64 * t_gate_s
        }
    }
}

/// Train one worker for `cfg.epochs` local epochs starting from
/// `global_params`, returning its model update and per-epoch mean losses.
pub fn local_train(
    device: &mut DeviceState,
    cfg: &RunConfig,
    round: u64,
    global_params: &ModelParams,
) -> Result<LocalOutcome> {
    if device.role != Role::Worker {
        return Err(Error::argument(format!(
            "device {} is not a worker",
            device.id
        )));
    }
    if device.shard.is_empty() {
        return Err(Error::argument(format!(
            "device {} has an empty shard",
            device.id
        )));
    }
    let readout = readout_mode(cfg);
    device.params = global_params.clone();
    device.opt_state = AdamState::new(device.params.n_params());
    let mut flat = device.params.to_flat();

    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        // Shuffle key advances across rounds so no epoch repeats an order.
        let epoch_key = (round - 1) * cfg.epochs as u64 + epoch as u64;
        let batch_ixs = data::batches(
            device.shard.len(),
            cfg.batch_size,
            cfg.seed,
            device.id,
            epoch_key,
        )?;
        let mut loss_sum = 0.0;
        for batch in &batch_ixs {
            let samples: Vec<&PreparedSample> = batch.iter().map(|i| &device.shard[*i]).collect();
            let current = device.params.with_flat(&flat)?;
            let (loss, grad) = current.batch_loss_grad(&samples, &readout)?;
            adam_step(&mut flat, &grad, &mut device.opt_state, cfg.learning_rate)?;
            loss_sum += loss * batch.len() as f64;
        }
        epoch_losses.push(loss_sum / device.shard.len() as f64);
    }

    device.params = device.params.with_flat(&flat)?;
    let shard_refs: Vec<&PreparedSample> = device.shard.iter().collect();
    let train_accuracy = device.params.batch_accuracy(&shard_refs, &readout)?;
    let wall_time_s =
        simulated_train_time(&device.params, device.shard.len(), cfg.epochs, cfg.t_gate_s);

    Ok(LocalOutcome {
        update: ModelUpdate {
            device_id: device.id,
            round,
            payload: UpdatePayload::Params(flat),
            n_samples: device.shard.len() as u64,
            train_loss: *epoch_losses.last().expect("at least one epoch"),
            train_accuracy,
            wall_time_s,
        },
        epoch_losses,
    })
}

/// Sample-count-weighted elementwise mean of the updates' parameters:
/// `p_k = n_k / sum n_j`.
pub fn fed_avg(updates: &[ModelUpdate]) -> Result<Vec<f64>> {
    if updates.is_empty() {
        return Err(Error::argument(
            "fed_avg needs at least one update".to_string(),
        ));
    }
    let first = updates[0]
        .payload
        .params()
        .ok_or_else(|| Error::argument("fed_avg needs full parameter payloads".to_string()))?;
    let total: u64 = updates.iter().map(|u| u.n_samples).sum();
    if total == 0 {
        return Err(Error::argument(
            "fed_avg got zero total samples".to_string(),
        ));
    }
    // Identical inputs average to themselves exactly; weighted float
    // summation would otherwise introduce rounding.
    if updates[1..]
        .iter()
        .all(|u| u.payload.params() == Some(first))
    {
        return Ok(first.to_vec());
    }
    let mut out = vec![0.0; first.len()];
    for update in updates {
        let params = update
            .payload
            .params()
            .ok_or_else(|| Error::argument("fed_avg needs full parameter payloads".to_string()))?;
        if params.len() != out.len() {
            return Err(Error::dimension(format!(
                "update from device {} has {} params, expected {}",
                update.device_id,
                params.len(),
                out.len()
            )));
        }
        let weight = update.n_samples as f64 / total as f64;
        for (o, p) in out.iter_mut().zip(params) {
            *o += weight * p;
        }
    }
    Ok(out)
}

/// Uniform mean of per-model probability vectors.
pub fn average_probs(prob_rows: &[Vec<f64>]) -> Vec<f64> {
    let n = prob_rows.len() as f64;
    let mut mean = vec![0.0; prob_rows.first().map_or(0, |r| r.len())];
    for row in prob_rows {
        for (m, p) in mean.iter_mut().zip(row) {
            *m += p;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    mean
}

/// Federated inference: average the models' probability vectors per sample,
/// then take the argmax (ties to the lowest class).
pub fn fed_inference(
    models: &[ModelParams],
    samples: &[&PreparedSample],
    readout: &ReadoutMode,
) -> Result<Vec<usize>> {
    if models.is_empty() {
        return Err(Error::argument(
            "fed_inference needs at least one model".to_string(),
        ));
    }
    samples
        .par_iter()
        .map(|sample| {
            let rows: Result<Vec<Vec<f64>>> = models
                .iter()
                .map(|m| m.predict_probs(sample, readout))
                .collect();
            Ok(argmax(&average_probs(&rows?)))
        })
        .collect()
}

/// Ensemble top-1 accuracy of `fed_inference` predictions.
pub fn ensemble_accuracy(
    models: &[ModelParams],
    samples: &[&PreparedSample],
    readout: &ReadoutMode,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::argument("empty evaluation set".to_string()));
    }
    let predictions = fed_inference(models, samples, readout)?;
    let correct = predictions
        .iter()
        .zip(samples)
        .filter(|(pred, s)| **pred == s.class_index())
        .count();
    Ok(correct as f64 / samples.len() as f64)
}

/// Mutable world state threaded through the rounds.
#[derive(Debug, Clone)]
pub struct SimState {
    pub devices: Vec<DeviceState>,
    pub global: ModelParams,
    pub stakes: StakeTable,
    pub ledger: chain::Ledger,
    pub clock_s: f64,
    pub validation: Vec<PreparedSample>,
    pub test: Vec<PreparedSample>,
}

/// Everything one round produced.
#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub round: u64,
    pub rows: Vec<MetricsRow>,
    pub accepted: usize,
    pub rejected: usize,
    pub aggregate_test_accuracy: f64,
    pub worker_epoch_losses: Vec<(u64, Vec<f64>)>,
    pub block_index: u64,
    pub comm_time_s: f64,
    pub block_gen_time_s: f64,
}

/// Run one federated round: train workers, validate and record updates on
/// the ledger, aggregate per the configured mode, and emit metrics rows.
pub fn run_round(state: &mut SimState, cfg: &RunConfig, round: u64) -> Result<RoundOutcome> {
    let readout = readout_mode(cfg);
    let global = state.global.clone();

    // Workers train independently; results come back in device order.
    let outcomes: Vec<Option<Result<LocalOutcome>>> = state
        .devices
        .par_iter_mut()
        .map(|device| {
            if device.role != Role::Worker {
                return None;
            }
            if device.shard.is_empty() {
                log::warn!(
                    "round {round}: device {} has an empty shard, skipping",
                    device.id
                );
                return None;
            }
            let start = match cfg.mode {
                RunMode::BqflInf => device.params.clone(),
                RunMode::BqflAvg | RunMode::BcflAvg => global.clone(),
            };
            Some(local_train(device, cfg, round, &start))
        })
        .collect();

    let mut trained: Vec<LocalOutcome> = Vec::new();
    for outcome in outcomes.into_iter().flatten() {
        trained.push(outcome?);
    }
    if trained.is_empty() {
        return Err(Error::Aborted(format!(
            "round {round}: no worker produced an update"
        )));
    }

    // Simulated network latency and stake-weighted miner selection.
    let latency_s = draw_latency(cfg.seed, round, cfg.latency_mean_s);
    let miner_ids: Vec<u64> = state
        .devices
        .iter()
        .filter(|d| d.role == Role::Miner)
        .map(|d| d.id)
        .collect();
    let draw = substream(cfg.seed, "validator", &[round]).gen::<f64>();
    let miner_id = select_validator(&state.stakes.restricted_to(&miner_ids), draw)?;

    // The selected miner validates every update against its slice.
    let validation_refs: Vec<&PreparedSample> = state.validation.iter().collect();
    let mut accepted = Vec::new();
    let mut rejected = 0usize;
    for outcome in &trained {
        let verdict = validate_update(&outcome.update, cfg.tau, |params| {
            state
                .global
                .with_flat(params)?
                .batch_accuracy(&validation_refs, &readout)
        })?;
        match verdict {
            chain::Verdict::Accept => accepted.push(outcome.update.clone()),
            chain::Verdict::Reject(reason) => {
                rejected += 1;
                log::warn!(
                    "round {round}: update from device {} rejected: {reason:?}",
                    outcome.update.device_id
                );
            }
        }
    }
    if accepted.is_empty() {
        return Err(Error::Aborted(format!(
            "round {round}: all {} updates rejected by validation",
            trained.len()
        )));
    }

    // Aggregate per mode and evaluate on the held-out test set.
    let test_refs: Vec<&PreparedSample> = state.test.iter().collect();
    let aggregate_test_accuracy = match cfg.mode {
        RunMode::BqflAvg | RunMode::BcflAvg => {
            let averaged = state.global.with_flat(&fed_avg(&accepted)?)?;
            state.global = averaged.clone();
            for device in &mut state.devices {
                device.params = averaged.clone();
            }
            state.global.batch_accuracy(&test_refs, &readout)?
        }
        RunMode::BqflInf => {
            let models: Vec<ModelParams> = state
                .devices
                .iter()
                .filter(|d| d.role == Role::Worker)
                .map(|d| d.params.clone())
                .collect();
            ensemble_accuracy(&models, &test_refs, &readout)?
        }
    };

    // Record the round on the chain; the snapshot shows stakes at assembly
    // time, rewards land afterwards.
    let recorded: Vec<ModelUpdate> = accepted
        .iter()
        .map(|u| match cfg.ledger_payload {
            LedgerPayload::Params => u.clone(),
            LedgerPayload::Digest => ModelUpdate {
                payload: u.payload.digested(),
                ..u.clone()
            },
        })
        .collect();
    let max_train_s = trained
        .iter()
        .map(|o| o.update.wall_time_s)
        .fold(0.0, f64::max);
    let block_gen_time_s = block_time(cfg.block_create_s, latency_s);
    let timestamp_s = state.clock_s + max_train_s + block_gen_time_s;
    let block_index = {
        let block =
            state
                .ledger
                .append_block(recorded, miner_id, state.stakes.snapshot(), timestamp_s)?;
        block.index
    };
    state.clock_s = timestamp_s;
    let rule = RewardRule {
        r_update: cfg.r_update,
        r_block: cfg.r_block,
    };
    state.stakes = chain::apply_rewards(&state.stakes, state.ledger.tip(), &rule);

    // One metrics row per device, ascending id.
    let mut rows = Vec::with_capacity(state.devices.len());
    for device in &state.devices {
        let outcome = trained.iter().find(|o| o.update.device_id == device.id);
        let (train_loss, train_acc) = outcome
            .map(|o| (o.update.train_loss, o.update.train_accuracy))
            .unwrap_or((0.0, 0.0));
        let test_acc = match (device.role, cfg.mode) {
            (Role::Miner, _) => aggregate_test_accuracy,
            (Role::Worker, RunMode::BqflInf) => {
                device.params.batch_accuracy(&test_refs, &readout)?
            }
            (Role::Worker, _) => aggregate_test_accuracy,
        };
        rows.push(MetricsRow {
            round,
            device_id: device.id,
            role: device.role,
            mode: cfg.mode,
            train_loss,
            train_acc,
            test_acc_top1: test_acc,
            comm_time_s: latency_s,
            block_gen_time_s,
            stake: state.stakes.stake(device.id),
        });
    }

    Ok(RoundOutcome {
        round,
        rows,
        accepted: accepted.len(),
        rejected,
        aggregate_test_accuracy,
        worker_epoch_losses: trained
            .iter()
            .map(|o| (o.update.device_id, o.epoch_losses.clone()))
            .collect(),
        block_index,
        comm_time_s: latency_s,
        block_gen_time_s,
    })
}

fn draw_latency(seed: u64, round: u64, mean_s: f64) -> f64 {
    if mean_s <= 0.0 {
        return 0.0;
    }
    let exp = rand_distr::Exp::new(1.0 / mean_s).expect("positive rate");
    substream(seed, "latency", &[round]).sample(exp)
}
