//! Classical baseline: a one-hidden-layer dense network with tanh activation
//! and softmax output, trained with the same federated Adam loop as the
//! quantum path.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::vqc::{argmax, PROB_CLAMP};

/// Hidden width of the baseline network.
pub const HIDDEN_UNITS: usize = 32;

/// Dense network parameters. Matrices are stored row-major:
/// `w1[i * hidden + j]` connects input `i` to hidden unit `j`,
/// `w2[j * n_classes + c]` connects hidden unit `j` to class `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    input_dim: usize,
    hidden: usize,
    n_classes: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl MlpParams {
    pub fn zeros(input_dim: usize, hidden: usize, n_classes: usize) -> Self {
        MlpParams {
            input_dim,
            hidden,
            n_classes,
            w1: vec![0.0; input_dim * hidden],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden * n_classes],
            b2: vec![0.0; n_classes],
        }
    }

    /// Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
    pub fn random_init(
        input_dim: usize,
        hidden: usize,
        n_classes: usize,
        rng: &mut impl rand::Rng,
    ) -> Self {
        let mut out = MlpParams::zeros(input_dim, hidden, n_classes);
        let bound1 = 1.0 / (input_dim as f64).sqrt();
        let bound2 = 1.0 / (hidden as f64).sqrt();
        for w in out.w1.iter_mut().chain(out.b1.iter_mut()) {
            *w = rng.gen_range(-bound1..bound1);
        }
        for w in out.w2.iter_mut().chain(out.b2.iter_mut()) {
            *w = rng.gen_range(-bound2..bound2);
        }
        out
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// Flatten in the fixed order w1, b1, w2, b2.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.n_params());
        flat.extend_from_slice(&self.w1);
        flat.extend_from_slice(&self.b1);
        flat.extend_from_slice(&self.w2);
        flat.extend_from_slice(&self.b2);
        flat
    }

    /// Rebuild a same-shaped parameter set from a flat vector.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.n_params() {
            return Err(Error::dimension(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                flat.len()
            )));
        }
        let (w1, rest) = flat.split_at(self.w1.len());
        let (b1, rest) = rest.split_at(self.b1.len());
        let (w2, b2) = rest.split_at(self.w2.len());
        Ok(MlpParams {
            input_dim: self.input_dim,
            hidden: self.hidden,
            n_classes: self.n_classes,
            w1: w1.to_vec(),
            b1: b1.to_vec(),
            w2: w2.to_vec(),
            b2: b2.to_vec(),
        })
    }
}

struct Forward {
    hidden_act: Vec<f64>,
    probs: Vec<f64>,
}

fn forward_pass(params: &MlpParams, x: &[f64]) -> Result<Forward> {
    if x.len() != params.input_dim {
        return Err(Error::dimension(format!(
            "mlp expects input of length {}, got {}",
            params.input_dim,
            x.len()
        )));
    }
    let hidden_act: Vec<f64> = (0..params.hidden)
        .map(|j| {
            let z: f64 = x
                .iter()
                .enumerate()
                .map(|(i, xi)| xi * params.w1[i * params.hidden + j])
                .sum::<f64>()
                + params.b1[j];
            z.tanh()
        })
        .collect();
    let logits: Vec<f64> = (0..params.n_classes)
        .map(|c| {
            hidden_act
                .iter()
                .enumerate()
                .map(|(j, h)| h * params.w2[j * params.n_classes + c])
                .sum::<f64>()
                + params.b2[c]
        })
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(Forward {
        hidden_act,
        probs: exps.iter().map(|e| e / sum).collect(),
    })
}

/// Class probabilities: `softmax(w2^T tanh(w1^T x + b1) + b2)`.
pub fn mlp_forward(params: &MlpParams, x: &[f64]) -> Result<Vec<f64>> {
    Ok(forward_pass(params, x)?.probs)
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

/// Mean negative log likelihood over a batch.
pub fn mlp_loss(params: &MlpParams, batch_x: &[&[f64]], batch_y: &[&[f64]]) -> Result<f64> {
    check_batch(batch_x, batch_y)?;
    let losses: Result<Vec<f64>> = batch_x
        .par_iter()
        .zip(batch_y.par_iter())
        .map(|(x, y)| {
            let probs = mlp_forward(params, x)?;
            Ok(-(probs[argmax(y)].max(PROB_CLAMP)).ln())
        })
        .collect();
    Ok(losses?.iter().sum::<f64>() / batch_x.len() as f64)
}

/// Fraction of samples whose argmax probability matches the label.
pub fn mlp_accuracy(params: &MlpParams, batch_x: &[&[f64]], batch_y: &[&[f64]]) -> Result<f64> {
    check_batch(batch_x, batch_y)?;
    let hits: Result<Vec<bool>> = batch_x
        .par_iter()
        .zip(batch_y.par_iter())
        .map(|(x, y)| Ok(argmax(&mlp_forward(params, x)?) == argmax(y)))
        .collect();
    Ok(hits?.iter().filter(|h| **h).count() as f64 / batch_x.len() as f64)
}

/// Exact gradient of the mean NLL, in a params-shaped container.
pub fn mlp_grad(params: &MlpParams, batch_x: &[&[f64]], batch_y: &[&[f64]]) -> Result<MlpParams> {
    check_batch(batch_x, batch_y)?;
    let per_sample: Result<Vec<MlpParams>> = batch_x
        .par_iter()
        .zip(batch_y.par_iter())
        .map(|(x, y)| sample_grad(params, x, y))
        .collect();
    let per_sample = per_sample?;

    let mut grad = MlpParams::zeros(params.input_dim, params.hidden, params.n_classes);
    for g in &per_sample {
        accumulate(&mut grad.w1, &g.w1);
        accumulate(&mut grad.b1, &g.b1);
        accumulate(&mut grad.w2, &g.w2);
        accumulate(&mut grad.b2, &g.b2);
    }
    let scale = 1.0 / batch_x.len() as f64;
    for v in grad
        .w1
        .iter_mut()
        .chain(grad.b1.iter_mut())
        .chain(grad.w2.iter_mut())
        .chain(grad.b2.iter_mut())
    {
        *v *= scale;
    }
    Ok(grad)
}

fn accumulate(into: &mut [f64], from: &[f64]) {
    for (a, b) in into.iter_mut().zip(from) {
        *a += b;
    }
}

fn sample_grad(params: &MlpParams, x: &[f64], y: &[f64]) -> Result<MlpParams> {
    let fwd = forward_pass(params, x)?;
    let true_class = argmax(y);
    let hidden = params.hidden;
    let n_classes = params.n_classes;

    // d(-ln p_y)/dlogit_c = p_c - 1{c=y}
    let dlogits: Vec<f64> = fwd
        .probs
        .iter()
        .enumerate()
        .map(|(c, p)| p - if c == true_class { 1.0 } else { 0.0 })
        .collect();

    let mut grad = MlpParams::zeros(params.input_dim, hidden, n_classes);
    for j in 0..hidden {
        for c in 0..n_classes {
            grad.w2[j * n_classes + c] = fwd.hidden_act[j] * dlogits[c];
        }
    }
    grad.b2.copy_from_slice(&dlogits);

    let dz1: Vec<f64> = (0..hidden)
        .map(|j| {
            let dh: f64 = (0..n_classes)
                .map(|c| params.w2[j * n_classes + c] * dlogits[c])
                .sum();
            dh * (1.0 - fwd.hidden_act[j] * fwd.hidden_act[j])
        })
        .collect();
    for (i, xi) in x.iter().enumerate() {
        for (j, d) in dz1.iter().enumerate() {
            grad.w1[i * hidden + j] = xi * d;
        }
    }
    grad.b1.copy_from_slice(&dz1);
    Ok(grad)
}
