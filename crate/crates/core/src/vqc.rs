//! Layered variational quantum classifier: circuit builder, readout, loss,
//! accuracy, and exact gradients via the parameter-shift rule (with a
//! finite-difference oracle for verification).
//!
//! Layer `j` entangles neighbouring qubits with a CNot chain, then rotates
//! every qubit `i` by `RotX(values[3j, i])`, `RotZ(values[3j+1, i])`,
//! `RotX(values[3j+2, i])`.

use rayon::prelude::*;
use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};
use crate::qsim::{self, Gate, StateVector};

/// Probability floor before taking the log, so a confidently wrong
/// prediction yields a large finite loss instead of infinity.
pub const PROB_CLAMP: f64 = 1e-12;

/// Below this total mass on the class states, sample-mode renormalization is
/// degenerate and falls back to the uniform distribution.
pub const DEGENERATE_MASS: f64 = 1e-12;

/// Trainable angles of the layered circuit, shape `[3 * k_layers, n_qubits]`
/// stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CircuitParams {
    k_layers: usize,
    n_qubits: usize,
    values: Vec<f64>,
}

impl CircuitParams {
    pub fn new(k_layers: usize, n_qubits: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != 3 * k_layers * n_qubits {
            return Err(Error::dimension(format!(
                "params for k={k_layers}, n={n_qubits} need {} values, got {}",
                3 * k_layers * n_qubits,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::argument("circuit params must be finite".to_string()));
        }
        Ok(CircuitParams {
            k_layers,
            n_qubits,
            values,
        })
    }

    pub fn zeros(k_layers: usize, n_qubits: usize) -> Self {
        CircuitParams {
            k_layers,
            n_qubits,
            values: vec![0.0; 3 * k_layers * n_qubits],
        }
    }

    /// I.i.d. normal(0, 0.1) initialization; near-identity start keeps early
    /// gradients informative.
    pub fn random_init(k_layers: usize, n_qubits: usize, rng: &mut impl rand::Rng) -> Self {
        let dist = rand_distr::Normal::new(0.0, 0.1).expect("valid stddev");
        let values = (0..3 * k_layers * n_qubits)
            .map(|_| rng.sample(dist))
            .collect();
        CircuitParams {
            k_layers,
            n_qubits,
            values,
        }
    }

    pub fn k_layers(&self) -> usize {
        self.k_layers
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn n_params(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Angle at parameter row `3j + r` and qubit column `i`.
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.n_qubits + col]
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        CircuitParams::new(self.k_layers, self.n_qubits, values)
    }
}

/// How class probabilities are read out of the final state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadoutMode {
    /// Logit of class `c` is the Z expectation on qubit `c`; probabilities
    /// are the softmax of those logits. Requires `n_classes <= n_qubits`.
    Softmax { n_classes: usize },
    /// Probability of class `c` is the renormalized wave-function probability
    /// of basis state `c`. Requires `n_classes <= 2^n_qubits`.
    Sample { n_classes: usize },
}

impl ReadoutMode {
    pub fn n_classes(&self) -> usize {
        match *self {
            ReadoutMode::Softmax { n_classes } | ReadoutMode::Sample { n_classes } => n_classes,
        }
    }

    pub fn validate(&self, n_qubits: usize) -> Result<()> {
        let c = self.n_classes();
        if c == 0 {
            return Err(Error::argument(
                "readout needs at least one class".to_string(),
            ));
        }
        match self {
            ReadoutMode::Softmax { .. } if c > n_qubits => Err(Error::config(format!(
                "softmax readout needs n_classes <= n_qubits ({c} > {n_qubits})"
            ))),
            ReadoutMode::Sample { .. } if c > (1 << n_qubits) => Err(Error::config(format!(
                "sample readout needs n_classes <= 2^n_qubits ({c} > {})",
                1usize << n_qubits
            ))),
            _ => Ok(()),
        }
    }
}

/// Apply the k-layer variational circuit to a state.
pub fn clf_apply(state: &StateVector, params: &CircuitParams) -> Result<StateVector> {
    if params.n_qubits != state.n_qubits() {
        return Err(Error::dimension(format!(
            "params built for {} qubits applied to a {}-qubit state",
            params.n_qubits,
            state.n_qubits()
        )));
    }
    let n = params.n_qubits;
    let mut out = state.clone();
    for j in 0..params.k_layers {
        for i in 0..n.saturating_sub(1) {
            out.apply_in_place(&Gate::CNot {
                control: i,
                target: i + 1,
            })?;
        }
        for i in 0..n {
            out.apply_in_place(&Gate::RotX {
                target: i,
                angle: params.get(3 * j, i),
            })?;
            out.apply_in_place(&Gate::RotZ {
                target: i,
                angle: params.get(3 * j + 1, i),
            })?;
            out.apply_in_place(&Gate::RotX {
                target: i,
                angle: params.get(3 * j + 2, i),
            })?;
        }
    }
    Ok(out)
}

/// Raw per-class quantities the readout head consumes: Z expectations in
/// softmax mode, unnormalized basis probabilities in sample mode.
fn class_heads(state: &StateVector, mode: &ReadoutMode) -> Result<Vec<f64>> {
    mode.validate(state.n_qubits())?;
    match *mode {
        ReadoutMode::Softmax { n_classes } => {
            (0..n_classes).map(|c| qsim::expect_z(state, c)).collect()
        }
        ReadoutMode::Sample { n_classes } => {
            Ok(qsim::basis_probabilities(state)[..n_classes].to_vec())
        }
    }
}

fn heads_to_probs(heads: &[f64], mode: &ReadoutMode) -> Vec<f64> {
    match mode {
        ReadoutMode::Softmax { .. } => softmax(heads),
        ReadoutMode::Sample { .. } => {
            let mass: f64 = heads.iter().sum();
            if mass < DEGENERATE_MASS {
                log::warn!(
                    "sample readout: class-state mass {mass:.3e} below {DEGENERATE_MASS:.0e}, returning uniform"
                );
                vec![1.0 / heads.len() as f64; heads.len()]
            } else {
                heads.iter().map(|q| q / mass).collect()
            }
        }
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// Class probabilities of a (post-circuit) state.
pub fn readout(state: &StateVector, mode: &ReadoutMode) -> Result<Vec<f64>> {
    Ok(heads_to_probs(&class_heads(state, mode)?, mode))
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn check_batch(batch_x: &[&[f64]], batch_y: &[&[f64]]) -> Result<()> {
    if batch_x.is_empty() {
        return Err(Error::argument("empty batch".to_string()));
    }
    if batch_x.len() != batch_y.len() {
        return Err(Error::dimension(format!(
            "batch has {} inputs but {} labels",
            batch_x.len(),
            batch_y.len()
        )));
    }
    Ok(())
}

fn forward_probs(params: &CircuitParams, x: &[f64], mode: &ReadoutMode) -> Result<Vec<f64>> {
    let encoded = qsim::amplitude_encode(x, params.n_qubits)?;
    let out = clf_apply(&encoded.state, params)?;
    readout(&out, mode)
}

fn sample_nll(params: &CircuitParams, x: &[f64], y: &[f64], mode: &ReadoutMode) -> Result<f64> {
    let probs = forward_probs(params, x, mode)?;
    let true_class = argmax(y);
    Ok(-(probs[true_class].max(PROB_CLAMP)).ln())
}

/// Mean negative log likelihood of the true class over a batch of encoded
/// inputs and one-hot labels.
pub fn loss_nll(
    params: &CircuitParams,
    batch_x: &[&[f64]],
    batch_y: &[&[f64]],
    mode: &ReadoutMode,
) -> Result<f64> {
    check_batch(batch_x, batch_y)?;
    let losses: Result<Vec<f64>> = batch_x
        .par_iter()
        .zip(batch_y.par_iter())
        .map(|(x, y)| sample_nll(params, x, y, mode))
        .collect();
    // Fixed-order reduction keeps sums bitwise reproducible.
    Ok(losses?.iter().sum::<f64>() / batch_x.len() as f64)
}

/// Fraction of samples whose predicted class matches the label.
pub fn accuracy(
    params: &CircuitParams,
    batch_x: &[&[f64]],
    batch_y: &[&[f64]],
    mode: &ReadoutMode,
) -> Result<f64> {
    check_batch(batch_x, batch_y)?;
    let hits: Result<Vec<bool>> = batch_x
        .par_iter()
        .zip(batch_y.par_iter())
        .map(|(x, y)| Ok(argmax(&forward_probs(params, x, mode)?) == argmax(y)))
        .collect();
    let correct = hits?.iter().filter(|h| **h).count();
    Ok(correct as f64 / batch_x.len() as f64)
}

/// d(loss)/d(heads) for one sample, evaluated at the unshifted circuit.
fn head_gradient(heads: &[f64], true_class: usize, mode: &ReadoutMode) -> Vec<f64> {
    match mode {
        ReadoutMode::Softmax { .. } => {
            // loss = -ln softmax(logits)[y]  =>  d/dlogit_c = p_c - 1{c=y}
            let probs = softmax(heads);
            probs
                .iter()
                .enumerate()
                .map(|(c, p)| p - if c == true_class { 1.0 } else { 0.0 })
                .collect()
        }
        ReadoutMode::Sample { .. } => {
            // p_y = q_y / S with S the mass on the class states;
            // d(-ln p_y)/dq_c = 1/S - 1{c=y}/q_y. Degenerate or clamped
            // samples sit on a locally flat branch, so their gradient is 0.
            let mass: f64 = heads.iter().sum();
            if mass < DEGENERATE_MASS || heads[true_class] / mass <= PROB_CLAMP {
                return vec![0.0; heads.len()];
            }
            (0..heads.len())
                .map(|c| {
                    1.0 / mass
                        - if c == true_class {
                            1.0 / heads[true_class]
                        } else {
                            0.0
                        }
                })
                .collect()
        }
    }
}

fn sample_gradient(
    params: &CircuitParams,
    x: &[f64],
    y: &[f64],
    mode: &ReadoutMode,
) -> Result<Vec<f64>> {
    let encoded = qsim::amplitude_encode(x, params.n_qubits)?;
    let input = encoded.state;
    let heads0 = class_heads(&clf_apply(&input, params)?, mode)?;
    let head_grad = head_gradient(&heads0, argmax(y), mode);

    let mut grad = vec![0.0; params.n_params()];
    let mut shifted = params.values.clone();
    for p in 0..params.n_params() {
        let original = shifted[p];
        shifted[p] = original + FRAC_PI_2;
        let plus = class_heads(
            &clf_apply(&input, &params.with_values(shifted.clone())?)?,
            mode,
        )?;
        shifted[p] = original - FRAC_PI_2;
        let minus = class_heads(
            &clf_apply(&input, &params.with_values(shifted.clone())?)?,
            mode,
        )?;
        shifted[p] = original;

        // Shift rule for exp(-i*th*P/2) generators: dE/dth = (E+ - E-)/2,
        // chained through the readout head analytically.
        grad[p] = head_grad
            .iter()
            .zip(plus.iter().zip(minus.iter()))
            .map(|(g, (hp, hm))| g * (hp - hm) / 2.0)
            .sum();
    }
    Ok(grad)
}

/// Exact gradient of `loss_nll` by the +-pi/2 parameter-shift rule, chained
/// analytically through the readout head. Shape matches `params.values()`.
pub fn grad_parameter_shift(
    params: &CircuitParams,
    batch_x: &[&[f64]],
    batch_y: &[&[f64]],
    mode: &ReadoutMode,
) -> Result<Vec<f64>> {
    check_batch(batch_x, batch_y)?;
    mode.validate(params.n_qubits)?;
    let per_sample: Result<Vec<Vec<f64>>> = batch_x
        .par_iter()
        .zip(batch_y.par_iter())
        .map(|(x, y)| sample_gradient(params, x, y, mode))
        .collect();
    let per_sample = per_sample?;

    let mut grad = vec![0.0; params.n_params()];
    for sample in &per_sample {
        for (g, s) in grad.iter_mut().zip(sample) {
            *g += s;
        }
    }
    let scale = 1.0 / batch_x.len() as f64;
    for g in &mut grad {
        *g *= scale;
    }
    Ok(grad)
}

fn central_diff(
    point: &[f64],
    h: f64,
    mut f: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<Vec<f64>> {
    let mut shifted = point.to_vec();
    let mut grad = vec![0.0; point.len()];
    for (p, g) in grad.iter_mut().enumerate() {
        let original = shifted[p];
        shifted[p] = original + h;
        let plus = f(&shifted)?;
        shifted[p] = original - h;
        let minus = f(&shifted)?;
        shifted[p] = original;
        *g = (plus - minus) / (2.0 * h);
    }
    Ok(grad)
}

/// Central finite differences of `loss_nll`; the independent oracle for
/// `grad_parameter_shift`.
pub fn grad_finite_diff(
    params: &CircuitParams,
    batch_x: &[&[f64]],
    batch_y: &[&[f64]],
    mode: &ReadoutMode,
    h: f64,
) -> Result<Vec<f64>> {
    if h <= 0.0 {
        return Err(Error::argument(format!(
            "finite-difference step must be > 0, got {h}"
        )));
    }
    check_batch(batch_x, batch_y)?;
    central_diff(params.values(), h, |values| {
        loss_nll(
            &params.with_values(values.to_vec())?,
            batch_x,
            batch_y,
            mode,
        )
    })
}
