//! Parameter-shift gradients of per-qubit `<Z>`.
//!
//! Every parameterized gate is a product of commuting Pauli rotations
//! `exp(-i c t P / 2)` sharing one angle `t`:
//!
//! | gate    | factors (P, c)                      |
//! |---------|-------------------------------------|
//! | RY, RZ  | (Y or Z, 1)                         |
//! | U3      | one Z/Y/Z rotation per angle slot   |
//! | CRZ     | (Z_t, 1/2), (Z_c Z_t, -1/2)         |
//! | PSWAP   | (X_a X_b, 1/2), (Y_a Y_b, 1/2)      |
//!
//! For each factor the two-term rule
//! `c * (f(+pi/2) - f(-pi/2)) / 2` is exact, where only that factor's angle
//! is shifted. Contributions are summed over factors and over every gate
//! slot that reads the same source, which covers re-uploaded features.

use std::f64::consts::FRAC_PI_2;

use nalgebra::DMatrix;

use super::circuit::CircuitIR;
use super::gate::{AngleSource, GateKind};
use super::state::{Pauli, StateVector};
use crate::error::Result;

/// Expectations together with their Jacobians.
#[derive(Debug, Clone)]
pub struct CircuitEvaluation {
    /// `<Z_k>` for every qubit.
    pub expectations: Vec<f64>,
    /// `d<Z_k>/d theta_j`, shape `Q x num_variational_params`.
    pub d_params: DMatrix<f64>,
    /// `d<Z_k>/d x_i`, shape `Q x num_encoding_features`.
    pub d_features: DMatrix<f64>,
}

enum Shift {
    /// Shift the slot's own angle; used when the gate is a single rotation
    /// per slot.
    Angle(usize),
    /// Keep the gate and append an extra rotation about a commuting factor.
    Factor(Vec<(usize, Pauli)>),
}

fn shift_rules(kind: GateKind, qubits: &[usize], slot: usize) -> Vec<(Shift, f64)> {
    match kind {
        GateKind::Ry | GateKind::Rz | GateKind::U3 => vec![(Shift::Angle(slot), 1.0)],
        GateKind::Crz => {
            let (c, t) = (qubits[0], qubits[1]);
            vec![
                (Shift::Factor(vec![(t, Pauli::Z)]), 0.5),
                (Shift::Factor(vec![(c, Pauli::Z), (t, Pauli::Z)]), -0.5),
            ]
        }
        GateKind::Pswap => {
            let (a, b) = (qubits[0], qubits[1]);
            vec![
                (Shift::Factor(vec![(a, Pauli::X), (b, Pauli::X)]), 0.5),
                (Shift::Factor(vec![(a, Pauli::Y), (b, Pauli::Y)]), 0.5),
            ]
        }
        GateKind::Cnot | GateKind::H => Vec::new(),
    }
}

/// Runs the circuit and returns expectations plus exact gradients with
/// respect to both variational parameters and encoded features.
pub fn evaluate_with_gradients(
    circuit: &CircuitIR,
    params: &[f64],
    features: &[f64],
) -> Result<CircuitEvaluation> {
    circuit.check_inputs(params, features)?;
    let nq = circuit.num_qubits;
    let gates = &circuit.gates;
    let resolved: Vec<Vec<f64>> =
        gates.iter().map(|g| g.resolve_angles(params, features)).collect();

    // prefix[g] is the state before gate g
    let mut prefix = Vec::with_capacity(gates.len() + 1);
    let mut state = StateVector::zero(nq)?;
    prefix.push(state.clone());
    for (g, angles) in gates.iter().zip(&resolved) {
        state.apply_unchecked(g.kind, &g.qubits, angles);
        prefix.push(state.clone());
    }
    let expectations = state.expectations_z();

    let mut d_params = DMatrix::zeros(nq, circuit.num_variational_params);
    let mut d_features = DMatrix::zeros(nq, circuit.num_encoding_features);

    let run_shifted = |g: usize, shift: &Shift, s: f64| -> Vec<f64> {
        let gate = &gates[g];
        let mut st = prefix[g].clone();
        match shift {
            Shift::Angle(slot) => {
                let mut angles = resolved[g].clone();
                angles[*slot] += s;
                st.apply_unchecked(gate.kind, &gate.qubits, &angles);
            }
            Shift::Factor(factors) => {
                st.apply_unchecked(gate.kind, &gate.qubits, &resolved[g]);
                st.apply_pauli_rotation(factors, s);
            }
        }
        for (h, angles) in gates.iter().zip(&resolved).skip(g + 1) {
            st.apply_unchecked(h.kind, &h.qubits, angles);
        }
        st.expectations_z()
    };

    for (g, gate) in gates.iter().enumerate() {
        for (slot, src) in gate.angles.iter().enumerate() {
            let (target, col) = match *src {
                AngleSource::Constant(_) => continue,
                AngleSource::Variational(j) => (&mut d_params, j),
                AngleSource::Encoding(i) => (&mut d_features, i),
            };
            for (shift, coeff) in shift_rules(gate.kind, &gate.qubits, slot) {
                let plus = run_shifted(g, &shift, FRAC_PI_2);
                let minus = run_shifted(g, &shift, -FRAC_PI_2);
                for k in 0..nq {
                    target[(k, col)] += coeff * 0.5 * (plus[k] - minus[k]);
                }
            }
        }
    }

    Ok(CircuitEvaluation { expectations, d_params, d_features })
}

/// `(d<Z_k>/d theta_j, d<Z_k>/d x_i)` by the parameter-shift rule.
pub fn circuit_gradients(
    circuit: &CircuitIR,
    params: &[f64],
    features: &[f64],
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let e = evaluate_with_gradients(circuit, params, features)?;
    Ok((e.d_params, e.d_features))
}
