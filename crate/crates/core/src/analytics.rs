//! Closed-form calculators for the convergence and delay model, plus the
//! per-round metrics sink.
//!
//! The total-time bound adds a dimensionless optimality gap to quantities in
//! seconds; it is implemented verbatim as the model states it, heterogeneous
//! units and all.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::chain::{expected_block_time, StakeTable};
use crate::config::RunMode;
use crate::error::{Error, Result};
use crate::fed::Role;

/// Inputs of the federated convergence bound.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundConstants {
    /// Smoothness constant L of the objectives.
    pub l_smooth: f64,
    /// Strong-convexity constant mu.
    pub mu: f64,
    /// Per-device stochastic gradient variance bounds sigma_k.
    pub sigma_k: Vec<f64>,
    /// Aggregation weights p_k (sum to 1).
    pub p_k: Vec<f64>,
    /// Heterogeneity gap Gamma.
    pub gamma: f64,
    /// Uniform bound G on the expected squared gradient norm.
    pub g_bound: f64,
    /// Local steps per round E.
    pub e_local: u64,
    /// Number of rounds T.
    pub t_rounds: u64,
    /// Expected squared distance of the initial iterate from the optimum.
    pub theta_gap: f64,
}

impl BoundConstants {
    pub fn validate(&self) -> Result<()> {
        if self.mu <= 0.0 {
            return Err(Error::config(format!(
                "bound_mu must be > 0, got {}",
                self.mu
            )));
        }
        if self.l_smooth < self.mu {
            return Err(Error::config(format!(
                "bound_l must be >= bound_mu ({} < {})",
                self.l_smooth, self.mu
            )));
        }
        if self.sigma_k.len() != self.p_k.len() {
            return Err(Error::config(format!(
                "bound_sigma_k has {} entries but bound_p_k has {}",
                self.sigma_k.len(),
                self.p_k.len()
            )));
        }
        if self.sigma_k.is_empty() {
            return Err(Error::config("bound_sigma_k must not be empty".to_string()));
        }
        if self.sigma_k.iter().any(|s| *s < 0.0) {
            return Err(Error::config(
                "bound_sigma_k entries must be >= 0".to_string(),
            ));
        }
        let p_sum: f64 = self.p_k.iter().sum();
        if (p_sum - 1.0).abs() > 1e-9 || self.p_k.iter().any(|p| *p < 0.0) {
            return Err(Error::config(format!(
                "bound_p_k must be nonnegative and sum to 1, sum is {p_sum}"
            )));
        }
        if self.gamma < 0.0 || self.g_bound < 0.0 || self.theta_gap < 0.0 {
            return Err(Error::config(
                "bound_gamma, bound_g and bound_theta_gap must be >= 0".to_string(),
            ));
        }
        if self.e_local == 0 {
            return Err(Error::config("bound_e_local must be >= 1".to_string()));
        }
        if self.t_rounds == 0 {
            return Err(Error::config("bound_t_rounds must be >= 1".to_string()));
        }
        Ok(())
    }

    pub fn kappa(&self) -> f64 {
        self.l_smooth / self.mu
    }

    /// gamma = max(8 kappa, E).
    pub fn gamma_mix(&self) -> f64 {
        (8.0 * self.kappa()).max(self.e_local as f64)
    }

    /// B = sum p_k^2 sigma_k^2 + 6 L Gamma + 8 (E-1)^2 G^2.
    pub fn b_term(&self) -> f64 {
        let variance: f64 = self
            .p_k
            .iter()
            .zip(&self.sigma_k)
            .map(|(p, s)| p * p * s * s)
            .sum();
        let drift = 8.0 * ((self.e_local - 1) as f64).powi(2) * self.g_bound * self.g_bound;
        variance + 6.0 * self.l_smooth * self.gamma + drift
    }
}

/// Optimality-gap bound of stake-free federated averaging after T rounds:
/// `kappa / (gamma + T - 1) * (2B/mu + mu*gamma/2 * theta_gap)`.
pub fn fedavg_bound(c: &BoundConstants) -> Result<f64> {
    c.validate()?;
    let kappa = c.kappa();
    let gamma = c.gamma_mix();
    let t = c.t_rounds as f64;
    Ok(kappa / (gamma + t - 1.0) * (2.0 * c.b_term() / c.mu + c.mu * gamma / 2.0 * c.theta_gap))
}

/// Decaying step size `eta_t = 2 / (mu (gamma + t))` of the theory-faithful
/// schedule; the training loop itself uses Adam.
pub fn eta_t(c: &BoundConstants, t: u64) -> f64 {
    2.0 / (c.mu * (c.gamma_mix() + t as f64))
}

/// Total amplitude-encoding time for a length-L vector on n qubits:
/// `L * n * t_gate`.
pub fn encoding_time(l_len: u64, n_qubits: u64, t_gate_s: f64) -> f64 {
    l_len as f64 * n_qubits as f64 * t_gate_s
}

/// Total-time bound: convergence gap + expected block time + encoding time,
/// added exactly as the model states.
pub fn total_time_bound(
    c: &BoundConstants,
    stakes: &StakeTable,
    per_node_time: &BTreeMap<u64, f64>,
    l_len: u64,
    n_qubits: u64,
    t_gate_s: f64,
) -> Result<f64> {
    Ok(fedavg_bound(c)?
        + expected_block_time(stakes, per_node_time)?
        + encoding_time(l_len, n_qubits, t_gate_s))
}

/// Meta-immersion experience score: `d_rate * (1 - uplink_err) * vr_e`.
pub fn meta_experience(d_rate_mbps: f64, uplink_err: f64, vr_e: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&uplink_err) {
        return Err(Error::argument(format!(
            "uplink error rate {uplink_err} outside [0, 1]"
        )));
    }
    if d_rate_mbps < 0.0 || vr_e < 0.0 {
        return Err(Error::argument(
            "download rate and experience score must be >= 0".to_string(),
        ));
    }
    Ok(d_rate_mbps * (1.0 - uplink_err) * vr_e)
}

/// One per-device, per-round output record.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub round: u64,
    pub device_id: u64,
    pub role: Role,
    pub mode: RunMode,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc_top1: f64,
    pub comm_time_s: f64,
    pub block_gen_time_s: f64,
    pub stake: f64,
}

pub const METRICS_HEADER: &str =
    "round,device_id,role,mode,train_loss,train_acc,test_acc_top1,comm_time_s,block_gen_time_s,stake";

impl MetricsRow {
    fn validate(&self) -> Result<()> {
        for (name, acc) in [
            ("train_acc", self.train_acc),
            ("test_acc_top1", self.test_acc_top1),
        ] {
            if !(0.0..=1.0).contains(&acc) {
                return Err(Error::argument(format!("{name} {acc} outside [0, 1]")));
            }
        }
        for (name, t) in [
            ("comm_time_s", self.comm_time_s),
            ("block_gen_time_s", self.block_gen_time_s),
        ] {
            if t < 0.0 {
                return Err(Error::argument(format!("{name} {t} is negative")));
            }
        }
        Ok(())
    }
}

// 17 significant digits round-trip any f64 exactly.
fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

/// Write rows as CSV (header first); returns the row count.
pub fn write_metrics(rows: &[MetricsRow], mut dest: impl Write) -> Result<usize> {
    let io_err = |e: std::io::Error| Error::io("<metrics stream>", e);
    writeln!(dest, "{METRICS_HEADER}").map_err(io_err)?;
    for row in rows {
        row.validate()?;
        writeln!(
            dest,
            "{},{},{},{},{},{},{},{},{},{}",
            row.round,
            row.device_id,
            row.role,
            row.mode,
            fmt_real(row.train_loss),
            fmt_real(row.train_acc),
            fmt_real(row.test_acc_top1),
            fmt_real(row.comm_time_s),
            fmt_real(row.block_gen_time_s),
            fmt_real(row.stake),
        )
        .map_err(io_err)?;
    }
    Ok(rows.len())
}

pub fn write_metrics_file(rows: &[MetricsRow], path: &Path) -> Result<usize> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = std::io::BufWriter::new(file);
    // Re-anchor stream-level failures to the file being written.
    let count = write_metrics(rows, &mut writer).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })?;
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(count)
}

/// Parse CSV produced by `write_metrics`; the round-trip is exact.
pub fn parse_metrics(src: impl BufRead) -> Result<Vec<MetricsRow>> {
    let mut rows = Vec::new();
    for (lineno, line) in src.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<metrics stream>", e))?;
        if lineno == 0 {
            if line != METRICS_HEADER {
                return Err(Error::Parse {
                    offset: 0,
                    what: format!("unexpected metrics header `{line}`"),
                });
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 10 {
            return Err(Error::Parse {
                offset: lineno,
                what: format!("expected 10 fields, got {}", fields.len()),
            });
        }
        let bad = |what: String| Error::Parse {
            offset: lineno,
            what,
        };
        rows.push(MetricsRow {
            round: fields[0]
                .parse()
                .map_err(|_| bad(format!("round `{}`", fields[0])))?,
            device_id: fields[1]
                .parse()
                .map_err(|_| bad(format!("device `{}`", fields[1])))?,
            role: fields[2].parse()?,
            mode: fields[3].parse()?,
            train_loss: fields[4]
                .parse()
                .map_err(|_| bad(format!("loss `{}`", fields[4])))?,
            train_acc: fields[5]
                .parse()
                .map_err(|_| bad(format!("acc `{}`", fields[5])))?,
            test_acc_top1: fields[6]
                .parse()
                .map_err(|_| bad(format!("test acc `{}`", fields[6])))?,
            comm_time_s: fields[7]
                .parse()
                .map_err(|_| bad(format!("comm `{}`", fields[7])))?,
            block_gen_time_s: fields[8]
                .parse()
                .map_err(|_| bad(format!("block time `{}`", fields[8])))?,
            stake: fields[9]
                .parse()
                .map_err(|_| bad(format!("stake `{}`", fields[9])))?,
        });
    }
    Ok(rows)
}
