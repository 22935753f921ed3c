//! Run description: flat `key = value` config files, defaults, validation,
//! and the resolved-config echo that makes every run reproducible from its
//! output directory alone.

use std::fmt;
use std::str::FromStr;

use crate::analytics::BoundConstants;
use crate::data::EncodingMode;
use crate::error::{Error, Result};

/// Which federated pipeline a run executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    /// Quantum models aggregated by weighted parameter averaging.
    BqflAvg,
    /// Quantum models kept per worker; predictions ensembled at evaluation.
    BqflInf,
    /// Classical MLP baseline aggregated by weighted parameter averaging.
    BcflAvg,
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunMode::BqflAvg => "bqfl-avg",
            RunMode::BqflInf => "bqfl-inf",
            RunMode::BcflAvg => "bcfl-avg",
        })
    }
}

impl FromStr for RunMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bqfl-avg" => Ok(RunMode::BqflAvg),
            "bqfl-inf" => Ok(RunMode::BqflInf),
            "bcfl-avg" => Ok(RunMode::BcflAvg),
            other => Err(Error::config(format!(
                "unknown mode `{other}` (expected bqfl-avg, bqfl-inf or bcfl-avg)"
            ))),
        }
    }
}

/// Readout head used by the quantum pipelines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadoutKind {
    Softmax,
    Sample,
}

impl fmt::Display for ReadoutKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReadoutKind::Softmax => "softmax",
            ReadoutKind::Sample => "sample",
        })
    }
}

impl FromStr for ReadoutKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(ReadoutKind::Softmax),
            "sample" => Ok(ReadoutKind::Sample),
            other => Err(Error::config(format!(
                "unknown readout `{other}` (expected softmax or sample)"
            ))),
        }
    }
}

/// How worker parameters are recorded in blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LedgerPayload {
    /// Full parameter vectors.
    Params,
    /// SHA-256 digests of the canonical parameter encoding.
    Digest,
}

impl fmt::Display for LedgerPayload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LedgerPayload::Params => "params",
            LedgerPayload::Digest => "digest",
        })
    }
}

impl FromStr for LedgerPayload {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "params" => Ok(LedgerPayload::Params),
            "digest" => Ok(LedgerPayload::Digest),
            other => Err(Error::config(format!(
                "unknown ledger payload `{other}` (expected params or digest)"
            ))),
        }
    }
}

/// Full description of one experiment run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: RunMode,
    pub n_qubits: usize,
    pub k_layers: usize,
    pub n_workers: usize,
    pub n_miners: usize,
    pub m_classes: usize,
    pub removed_classes: Vec<u8>,
    pub encoding: EncodingMode,
    pub readout: ReadoutKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub rounds: usize,
    pub seed: u64,
    /// Cap on each worker's shard; 0 means the whole shard.
    pub samples_per_worker: usize,
    pub latency_mean_s: f64,
    pub r_update: f64,
    pub r_block: f64,
    pub tau: f64,
    pub t_gate_s: f64,
    pub block_create_s: f64,
    pub ledger_payload: LedgerPayload,
    pub train_images: String,
    pub train_labels: String,
    pub test_images: String,
    pub test_labels: String,
    pub out_dir: String,
    pub bounds: Option<BoundConstants>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: RunMode::BqflAvg,
            n_qubits: 8,
            k_layers: 2,
            n_workers: 7,
            n_miners: 2,
            m_classes: 8,
            removed_classes: vec![8, 9],
            encoding: EncodingMode::Vanilla,
            readout: ReadoutKind::Sample,
            epochs: 5,
            batch_size: 128,
            learning_rate: 0.01,
            rounds: 3,
            seed: 1,
            samples_per_worker: 0,
            latency_mean_s: 0.1,
            r_update: 1.0,
            r_block: 2.0,
            tau: 0.0,
            t_gate_s: 1e-9,
            block_create_s: 0.05,
            ledger_payload: LedgerPayload::Params,
            train_images: String::new(),
            train_labels: String::new(),
            test_images: String::new(),
            test_labels: String::new(),
            out_dir: "out".to_string(),
            bounds: None,
        }
    }
}

/// Collects optional bound keys until resolution.
#[derive(Default)]
struct BoundKeys {
    l: Option<f64>,
    mu: Option<f64>,
    sigma_k: Option<Vec<f64>>,
    p_k: Option<Vec<f64>>,
    gamma: Option<f64>,
    g: Option<f64>,
    e_local: Option<u64>,
    t_rounds: Option<u64>,
    theta_gap: Option<f64>,
}

impl BoundKeys {
    fn from_config(bounds: &Option<BoundConstants>) -> Self {
        match bounds {
            None => BoundKeys::default(),
            Some(c) => BoundKeys {
                l: Some(c.l_smooth),
                mu: Some(c.mu),
                sigma_k: Some(c.sigma_k.clone()),
                p_k: Some(c.p_k.clone()),
                gamma: Some(c.gamma),
                g: Some(c.g_bound),
                e_local: Some(c.e_local),
                t_rounds: Some(c.t_rounds),
                theta_gap: Some(c.theta_gap),
            },
        }
    }

    fn any_set(&self) -> bool {
        self.l.is_some()
            || self.mu.is_some()
            || self.sigma_k.is_some()
            || self.p_k.is_some()
            || self.gamma.is_some()
            || self.g.is_some()
            || self.e_local.is_some()
            || self.t_rounds.is_some()
            || self.theta_gap.is_some()
    }

    fn resolve(self) -> Result<Option<BoundConstants>> {
        if !self.any_set() {
            return Ok(None);
        }
        let missing =
            |key: &str| Error::config(format!("bound constants incomplete: missing {key}"));
        Ok(Some(BoundConstants {
            l_smooth: self.l.ok_or_else(|| missing("bound_l"))?,
            mu: self.mu.ok_or_else(|| missing("bound_mu"))?,
            sigma_k: self.sigma_k.ok_or_else(|| missing("bound_sigma_k"))?,
            p_k: self.p_k.ok_or_else(|| missing("bound_p_k"))?,
            gamma: self.gamma.ok_or_else(|| missing("bound_gamma"))?,
            g_bound: self.g.ok_or_else(|| missing("bound_g"))?,
            e_local: self.e_local.ok_or_else(|| missing("bound_e_local"))?,
            t_rounds: self.t_rounds.ok_or_else(|| missing("bound_t_rounds"))?,
            theta_gap: self.theta_gap.ok_or_else(|| missing("bound_theta_gap"))?,
        }))
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(format!("key `{key}`: cannot parse `{value}`")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    let trimmed = value.trim();
    if trimmed.is_empty() {
        return Ok(Vec::new());
    }
    trimmed
        .split(',')
        .map(|part| parse_num(key, part))
        .collect()
}

fn join_list<T: fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl RunConfig {
    /// Classes kept after filtering, in ascending order.
    pub fn kept_classes(&self) -> Vec<u8> {
        (0u8..10)
            .filter(|c| !self.removed_classes.contains(c))
            .collect()
    }

    pub fn n_classes(&self) -> usize {
        self.kept_classes().len()
    }

    pub fn n_devices(&self) -> usize {
        self.n_workers + self.n_miners
    }

    /// Apply one `key = value` assignment.
    fn set(&mut self, key: &str, value: &str, bounds: &mut BoundKeys) -> Result<()> {
        let value = value.trim();
        match key {
            "mode" => self.mode = value.parse()?,
            "n_qubits" => self.n_qubits = parse_num(key, value)?,
            "k_layers" => self.k_layers = parse_num(key, value)?,
            "n_workers" => self.n_workers = parse_num(key, value)?,
            "n_miners" => self.n_miners = parse_num(key, value)?,
            "m_classes" => self.m_classes = parse_num(key, value)?,
            "removed_classes" => self.removed_classes = parse_list(key, value)?,
            "encoding" => self.encoding = value.parse()?,
            "readout" => self.readout = value.parse()?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "learning_rate" => self.learning_rate = parse_num(key, value)?,
            "rounds" => self.rounds = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "samples_per_worker" => self.samples_per_worker = parse_num(key, value)?,
            "latency_mean" => self.latency_mean_s = parse_num(key, value)?,
            "r_update" => self.r_update = parse_num(key, value)?,
            "r_block" => self.r_block = parse_num(key, value)?,
            "tau" => self.tau = parse_num(key, value)?,
            "t_gate" => self.t_gate_s = parse_num(key, value)?,
            "block_create_s" => self.block_create_s = parse_num(key, value)?,
            "ledger_payload" => self.ledger_payload = value.parse()?,
            "train_images" => self.train_images = value.to_string(),
            "train_labels" => self.train_labels = value.to_string(),
            "test_images" => self.test_images = value.to_string(),
            "test_labels" => self.test_labels = value.to_string(),
            "out_dir" => self.out_dir = value.to_string(),
            "bound_l" => bounds.l = Some(parse_num(key, value)?),
            "bound_mu" => bounds.mu = Some(parse_num(key, value)?),
            "bound_sigma_k" => bounds.sigma_k = Some(parse_list(key, value)?),
            "bound_p_k" => bounds.p_k = Some(parse_list(key, value)?),
            "bound_gamma" => bounds.gamma = Some(parse_num(key, value)?),
            "bound_g" => bounds.g = Some(parse_num(key, value)?),
            "bound_e_local" => bounds.e_local = Some(parse_num(key, value)?),
            "bound_t_rounds" => bounds.t_rounds = Some(parse_num(key, value)?),
            "bound_theta_gap" => bounds.theta_gap = Some(parse_num(key, value)?),
            other => return Err(Error::config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Check every invariant; called after load and after overrides.
    pub fn validate(&self) -> Result<()> {
        if self.n_workers == 0 {
            return Err(Error::config("n_workers must be >= 1".to_string()));
        }
        if self.n_miners == 0 {
            return Err(Error::config("n_miners must be >= 1".to_string()));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1".to_string()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.n_qubits % 2 != 0 || self.n_qubits == 0 || self.n_qubits > crate::qsim::MAX_QUBITS {
            return Err(Error::config(format!(
                "n_qubits must be even and within 2..={}, got {}",
                crate::qsim::MAX_QUBITS,
                self.n_qubits
            )));
        }
        if self.k_layers == 0 {
            return Err(Error::config("k_layers must be >= 1".to_string()));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be >= 1".to_string()));
        }
        if self.rounds == 0 {
            return Err(Error::config("rounds must be >= 1".to_string()));
        }
        if self.removed_classes.iter().any(|c| *c > 9) {
            return Err(Error::config(
                "removed_classes entries must be digits 0..=9".to_string(),
            ));
        }
        let n_classes = self.n_classes();
        if n_classes == 0 {
            return Err(Error::config(
                "every class is removed; nothing to learn".to_string(),
            ));
        }
        if self.m_classes == 0 || self.m_classes > n_classes {
            return Err(Error::config(format!(
                "m_classes must be in 1..={n_classes}, got {}",
                self.m_classes
            )));
        }
        match self.readout {
            ReadoutKind::Softmax if n_classes > self.n_qubits => {
                return Err(Error::config(format!(
                    "softmax readout needs n_classes <= n_qubits ({n_classes} > {})",
                    self.n_qubits
                )));
            }
            ReadoutKind::Sample if n_classes > (1 << self.n_qubits) => {
                return Err(Error::config(format!(
                    "sample readout needs n_classes <= 2^n_qubits ({n_classes} > {})",
                    1usize << self.n_qubits
                )));
            }
            _ => {}
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::config(format!(
                "tau must be in [0, 1], got {}",
                self.tau
            )));
        }
        for (name, v) in [
            ("latency_mean", self.latency_mean_s),
            ("r_update", self.r_update),
            ("r_block", self.r_block),
            ("t_gate", self.t_gate_s),
            ("block_create_s", self.block_create_s),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::config(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if let Some(bounds) = &self.bounds {
            bounds.validate()?;
        }
        Ok(())
    }

    /// Render the fully resolved config; `load_config` of the result yields
    /// an identical `RunConfig`.
    pub fn echo(&self) -> String {
        let mut out = String::from("# resolved run configuration\n");
        let mut push = |key: &str, value: String| {
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&value);
            out.push('\n');
        };
        push("mode", self.mode.to_string());
        push("n_qubits", self.n_qubits.to_string());
        push("k_layers", self.k_layers.to_string());
        push("n_workers", self.n_workers.to_string());
        push("n_miners", self.n_miners.to_string());
        push("m_classes", self.m_classes.to_string());
        push("removed_classes", join_list(&self.removed_classes));
        push("encoding", self.encoding.to_string());
        push("readout", self.readout.to_string());
        push("epochs", self.epochs.to_string());
        push("batch_size", self.batch_size.to_string());
        push("learning_rate", self.learning_rate.to_string());
        push("rounds", self.rounds.to_string());
        push("seed", self.seed.to_string());
        push("samples_per_worker", self.samples_per_worker.to_string());
        push("latency_mean", self.latency_mean_s.to_string());
        push("r_update", self.r_update.to_string());
        push("r_block", self.r_block.to_string());
        push("tau", self.tau.to_string());
        push("t_gate", self.t_gate_s.to_string());
        push("block_create_s", self.block_create_s.to_string());
        push("ledger_payload", self.ledger_payload.to_string());
        push("train_images", self.train_images.clone());
        push("train_labels", self.train_labels.clone());
        push("test_images", self.test_images.clone());
        push("test_labels", self.test_labels.clone());
        push("out_dir", self.out_dir.clone());
        if let Some(b) = &self.bounds {
            push("bound_l", b.l_smooth.to_string());
            push("bound_mu", b.mu.to_string());
            push("bound_sigma_k", join_list(&b.sigma_k));
            push("bound_p_k", join_list(&b.p_k));
            push("bound_gamma", b.gamma.to_string());
            push("bound_g", b.g_bound.to_string());
            push("bound_e_local", b.e_local.to_string());
            push("bound_t_rounds", b.t_rounds.to_string());
            push("bound_theta_gap", b.theta_gap.to_string());
        }
        out
    }
}

/// Parse a flat `key = value` config text. Missing keys take defaults,
/// unknown keys are rejected, `#` starts a comment.
pub fn load_config(text: &str) -> Result<RunConfig> {
    parse_into(RunConfig::default(), text, &[])
}

/// Parse a config text, then apply `key=value` override strings in order.
pub fn load_config_with_overrides(text: &str, overrides: &[String]) -> Result<RunConfig> {
    parse_into(RunConfig::default(), text, overrides)
}

fn parse_into(mut cfg: RunConfig, text: &str, overrides: &[String]) -> Result<RunConfig> {
    let mut bounds = BoundKeys::from_config(&cfg.bounds);
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::config(format!(
                "line {}: expected `key = value`, got `{line}`",
                lineno + 1
            ))
        })?;
        cfg.set(key.trim(), value, &mut bounds)?;
    }
    for entry in overrides {
        let (key, value) = entry.split_once('=').ok_or_else(|| {
            Error::config(format!("override `{entry}` is not of the form key=value"))
        })?;
        cfg.set(key.trim(), value, &mut bounds)?;
    }
    cfg.bounds = bounds.resolve()?;
    cfg.validate()?;
    Ok(cfg)
}
