//! Dense statevector engine.
//!
//! States are little-endian: basis index `b` holds qubit `q` in bit
//! `(b >> q) & 1`, so a flattened image index maps directly onto its
//! amplitude index. Rotation conventions are `RotX(th) = exp(-i*th*X/2)` and
//! `RotZ(th) = exp(-i*th*Z/2)`, which makes the parameter-shift rule exact at
//! +-pi/2 shifts.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Largest supported register; 2^12 amplitudes keeps everything dense.
pub const MAX_QUBITS: usize = 12;

/// Unit-norm complex amplitude vector over the 2^n computational basis.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    amplitudes: Vec<Complex64>,
}

/// One gate of the three kinds the layered circuit uses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gate {
    RotX { target: usize, angle: f64 },
    RotZ { target: usize, angle: f64 },
    CNot { control: usize, target: usize },
}

/// Result of amplitude encoding; `degenerate` flags an all-zero input that
/// fell back to the basis-0 state.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub state: StateVector,
    pub degenerate: bool,
}

impl StateVector {
    /// The |0...0> state on `n_qubits` qubits.
    pub fn zero(n_qubits: usize) -> Result<Self> {
        check_qubit_count(n_qubits)?;
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); 1 << n_qubits];
        amplitudes[0] = Complex64::new(1.0, 0.0);
        Ok(StateVector {
            n_qubits,
            amplitudes,
        })
    }

    /// Build directly from amplitudes; rejects non-power-of-two lengths and
    /// vectors that are not unit norm.
    pub fn from_amplitudes(amplitudes: Vec<Complex64>, n_qubits: usize) -> Result<Self> {
        check_qubit_count(n_qubits)?;
        if amplitudes.len() != 1 << n_qubits {
            return Err(Error::dimension(format!(
                "state of {} qubits needs {} amplitudes, got {}",
                n_qubits,
                1usize << n_qubits,
                amplitudes.len()
            )));
        }
        let state = StateVector {
            n_qubits,
            amplitudes,
        };
        let norm2: f64 = state.amplitudes.iter().map(|a| a.norm_sqr()).sum();
        if (norm2 - 1.0).abs() > 1e-10 {
            return Err(Error::argument(format!(
                "amplitudes have squared norm {norm2}, expected 1"
            )));
        }
        Ok(state)
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub(crate) fn apply_in_place(&mut self, gate: &Gate) -> Result<()> {
        match *gate {
            Gate::RotX { target, angle } => {
                self.check_qubit(target)?;
                let half = angle / 2.0;
                let cos = Complex64::new(half.cos(), 0.0);
                let misin = Complex64::new(0.0, -half.sin());
                let step = 1 << target;
                for base in (0..self.amplitudes.len()).step_by(2 * step) {
                    for offset in 0..step {
                        let j = base + offset;
                        let k = j + step;
                        let a = self.amplitudes[j];
                        let b = self.amplitudes[k];
                        self.amplitudes[j] = cos * a + misin * b;
                        self.amplitudes[k] = misin * a + cos * b;
                    }
                }
            }
            Gate::RotZ { target, angle } => {
                self.check_qubit(target)?;
                let phase0 = Complex64::from_polar(1.0, -angle / 2.0);
                let phase1 = Complex64::from_polar(1.0, angle / 2.0);
                for (i, amp) in self.amplitudes.iter_mut().enumerate() {
                    *amp *= if (i >> target) & 1 == 0 {
                        phase0
                    } else {
                        phase1
                    };
                }
            }
            Gate::CNot { control, target } => {
                self.check_qubit(control)?;
                self.check_qubit(target)?;
                if control == target {
                    return Err(Error::dimension(format!(
                        "cnot control and target must differ, both are {control}"
                    )));
                }
                let cmask = 1 << control;
                let tmask = 1 << target;
                for i in 0..self.amplitudes.len() {
                    if i & cmask != 0 && i & tmask == 0 {
                        self.amplitudes.swap(i, i | tmask);
                    }
                }
            }
        }
        Ok(())
    }

    fn check_qubit(&self, q: usize) -> Result<()> {
        if q >= self.n_qubits {
            return Err(Error::dimension(format!(
                "qubit index {q} out of range for {} qubits",
                self.n_qubits
            )));
        }
        Ok(())
    }
}

fn check_qubit_count(n_qubits: usize) -> Result<()> {
    if n_qubits == 0 || n_qubits > MAX_QUBITS {
        return Err(Error::dimension(format!(
            "qubit count {n_qubits} outside supported range 1..={MAX_QUBITS}"
        )));
    }
    Ok(())
}

/// Load a classical vector of length 2^n as state amplitudes
/// (`amplitudes[i] = data[i] / ||data||`). An all-zero input falls back to
/// the basis-0 state with `degenerate` set, keeping runs total on blank
/// images.
pub fn amplitude_encode(data: &[f64], n_qubits: usize) -> Result<Encoded> {
    check_qubit_count(n_qubits)?;
    if data.len() != 1 << n_qubits {
        return Err(Error::dimension(format!(
            "encoding on {} qubits needs {} values, got {}",
            n_qubits,
            1usize << n_qubits,
            data.len()
        )));
    }
    let norm = data.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Ok(Encoded {
            state: StateVector::zero(n_qubits)?,
            degenerate: true,
        });
    }
    let amplitudes = data
        .iter()
        .map(|&x| Complex64::new(x / norm, 0.0))
        .collect();
    Ok(Encoded {
        state: StateVector {
            n_qubits,
            amplitudes,
        },
        degenerate: false,
    })
}

/// Apply one gate, returning the transformed state.
pub fn apply_gate(state: &StateVector, gate: &Gate) -> Result<StateVector> {
    let mut out = state.clone();
    out.apply_in_place(gate)?;
    Ok(out)
}

/// `|amplitude[i]|^2` for every basis state; sums to 1.
pub fn basis_probabilities(state: &StateVector) -> Vec<f64> {
    state.amplitudes.iter().map(|a| a.norm_sqr()).collect()
}

/// Expectation of Pauli Z on one qubit: +1 weight where its bit is 0,
/// -1 where it is 1.
pub fn expect_z(state: &StateVector, qubit: usize) -> Result<f64> {
    state.check_qubit(qubit)?;
    let mask = 1usize << qubit;
    Ok(state
        .amplitudes
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let sign = if i & mask == 0 { 1.0 } else { -1.0 };
            sign * a.norm_sqr()
        })
        .sum())
}
