//! Dense-matrix reference for the simulator, used by tests.
//!
//! Each gate is written as an explicit small matrix and lifted to the full
//! register by Kronecker products with identities. Two-qubit gates are split
//! into `sum_mn |m><n| (x) G_mn` over the first qubit so every term is a
//! plain tensor product.

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::circuit::CircuitIR;
use super::gate::GateKind;
use crate::error::{Error, Result};

pub const MAX_ORACLE_QUBITS: usize = 6;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn mat(rows: usize, data: &[Complex64]) -> DMatrix<Complex64> {
    DMatrix::from_row_slice(rows, data.len() / rows, data)
}

pub fn ry_matrix(t: f64) -> DMatrix<Complex64> {
    let (s, co) = (t / 2.0).sin_cos();
    mat(2, &[c(co, 0.0), c(-s, 0.0), c(s, 0.0), c(co, 0.0)])
}

pub fn rz_matrix(t: f64) -> DMatrix<Complex64> {
    mat(2, &[Complex64::cis(-t / 2.0), c(0.0, 0.0), c(0.0, 0.0), Complex64::cis(t / 2.0)])
}

pub fn h_matrix() -> DMatrix<Complex64> {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    mat(2, &[c(r, 0.0), c(r, 0.0), c(r, 0.0), c(-r, 0.0)])
}

/// Matrix of a gate in its own basis. Two-qubit matrices are indexed by
/// `2 * bit(first) + bit(second)`.
pub fn gate_matrix(kind: GateKind, angles: &[f64]) -> DMatrix<Complex64> {
    let (o, z) = (c(1.0, 0.0), c(0.0, 0.0));
    match kind {
        GateKind::Ry => ry_matrix(angles[0]),
        GateKind::Rz => rz_matrix(angles[0]),
        GateKind::U3 => rz_matrix(angles[0]) * ry_matrix(angles[1]) * rz_matrix(angles[2]),
        GateKind::H => h_matrix(),
        GateKind::Cnot => mat(4, &[o, z, z, z, z, o, z, z, z, z, z, o, z, z, o, z]),
        GateKind::Crz => {
            let mut m = DMatrix::identity(4, 4);
            m[(2, 2)] = Complex64::cis(-angles[0] / 2.0);
            m[(3, 3)] = Complex64::cis(angles[0] / 2.0);
            m
        }
        GateKind::Pswap => {
            let (s, co) = (angles[0] / 2.0).sin_cos();
            let mut m = DMatrix::identity(4, 4);
            m[(1, 1)] = c(co, 0.0);
            m[(2, 2)] = c(co, 0.0);
            m[(1, 2)] = c(0.0, -s);
            m[(2, 1)] = c(0.0, -s);
            m
        }
    }
}

/// `A (x) B`.
pub fn kron(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = DMatrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[(i, j)];
            for k in 0..br {
                for l in 0..bc {
                    out[(i * br + k, j * bc + l)] = aij * b[(k, l)];
                }
            }
        }
    }
    out
}

/// Tensor product over the whole register with the given per-qubit factors
/// and identities elsewhere. Qubit `n-1` is the leftmost factor.
fn lift(num_qubits: usize, factors: &[(usize, &DMatrix<Complex64>)]) -> DMatrix<Complex64> {
    let id = DMatrix::<Complex64>::identity(2, 2);
    let mut out = DMatrix::from_element(1, 1, c(1.0, 0.0));
    for q in (0..num_qubits).rev() {
        let f = factors.iter().find(|(fq, _)| *fq == q).map(|(_, m)| *m).unwrap_or(&id);
        out = kron(&out, f);
    }
    out
}

/// Expands a gate to the full `2^n x 2^n` operator.
pub fn expand_gate(
    num_qubits: usize,
    kind: GateKind,
    qubits: &[usize],
    angles: &[f64],
) -> DMatrix<Complex64> {
    let g = gate_matrix(kind, angles);
    if qubits.len() == 1 {
        return lift(num_qubits, &[(qubits[0], &g)]);
    }
    let dim = 1 << num_qubits;
    let mut out = DMatrix::zeros(dim, dim);
    for m in 0..2 {
        for n in 0..2 {
            let mut e = DMatrix::<Complex64>::zeros(2, 2);
            e[(m, n)] = c(1.0, 0.0);
            let block = g.view((2 * m, 2 * n), (2, 2)).into_owned();
            out += lift(num_qubits, &[(qubits[0], &e), (qubits[1], &block)]);
        }
    }
    out
}

/// Full circuit unitary by explicit expansion; limited to 6 qubits.
pub fn dense_unitary_oracle(
    circuit: &CircuitIR,
    params: &[f64],
    features: &[f64],
) -> Result<DMatrix<Complex64>> {
    if circuit.num_qubits > MAX_ORACLE_QUBITS {
        return Err(Error::QubitCount(circuit.num_qubits));
    }
    circuit.validate()?;
    circuit.check_inputs(params, features)?;
    let dim = 1 << circuit.num_qubits;
    let mut u = DMatrix::<Complex64>::identity(dim, dim);
    for g in &circuit.gates {
        let angles = g.resolve_angles(params, features);
        u = expand_gate(circuit.num_qubits, g.kind, &g.qubits, &angles) * u;
    }
    Ok(u)
}
