//! Test-only oracle: explicit 2^n x 2^n gate matrices built by Kronecker
//! products, kept independent of the statevector engine's update loops.

use num_complex::Complex64;

use crate::qsim::Gate;

pub(crate) type Matrix = Vec<Vec<Complex64>>;

pub(crate) fn gate_matrix(gate: &Gate, n: usize) -> Matrix {
    let dim = 1 << n;
    let zero = Complex64::new(0.0, 0.0);
    let mut matrix = vec![vec![zero; dim]; dim];
    match *gate {
        Gate::RotX { target, angle } => {
            let half = angle / 2.0;
            let u = [
                [
                    Complex64::new(half.cos(), 0.0),
                    Complex64::new(0.0, -half.sin()),
                ],
                [
                    Complex64::new(0.0, -half.sin()),
                    Complex64::new(half.cos(), 0.0),
                ],
            ];
            fill_single_qubit(&mut matrix, &u, target);
        }
        Gate::RotZ { target, angle } => {
            let u = [
                [Complex64::from_polar(1.0, -angle / 2.0), zero],
                [zero, Complex64::from_polar(1.0, angle / 2.0)],
            ];
            fill_single_qubit(&mut matrix, &u, target);
        }
        Gate::CNot { control, target } => {
            for col in 0..dim {
                let row = if (col >> control) & 1 == 1 {
                    col ^ (1 << target)
                } else {
                    col
                };
                matrix[row][col] = Complex64::new(1.0, 0.0);
            }
        }
    }
    matrix
}

// Little-endian ordering: the single-qubit factor acts on bit
// (index >> target) & 1 while all other bits stay fixed.
fn fill_single_qubit(matrix: &mut [Vec<Complex64>], u: &[[Complex64; 2]; 2], target: usize) {
    let dim = matrix.len();
    for col in 0..dim {
        for row in 0..dim {
            if row & !(1 << target) != col & !(1 << target) {
                continue;
            }
            matrix[row][col] = u[(row >> target) & 1][(col >> target) & 1];
        }
    }
}

pub(crate) fn matrix_vector(m: &Matrix, v: &[Complex64]) -> Vec<Complex64> {
    m.iter()
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

pub(crate) fn matrix_product(a: &Matrix, b: &Matrix) -> Matrix {
    let dim = a.len();
    let mut out = vec![vec![Complex64::new(0.0, 0.0); dim]; dim];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = (0..dim).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}
