use serde::{Deserialize, Serialize};

use super::gate::{AngleSource, GateKind, GateOp};
use super::state::{StateVector, MAX_QUBITS};
use crate::error::{Error, Result};

/// An ordered gate list over a fixed register, with the sizes of the
/// variational parameter and encoded feature vectors it reads from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitIR {
    pub num_qubits: usize,
    pub gates: Vec<GateOp>,
    pub num_variational_params: usize,
    pub num_encoding_features: usize,
}

impl CircuitIR {
    pub fn new(
        num_qubits: usize,
        gates: Vec<GateOp>,
        num_variational_params: usize,
        num_encoding_features: usize,
    ) -> Result<Self> {
        let c = Self { num_qubits, gates, num_variational_params, num_encoding_features };
        c.validate()?;
        Ok(c)
    }

    pub fn empty(num_qubits: usize) -> Self {
        Self { num_qubits, gates: Vec::new(), num_variational_params: 0, num_encoding_features: 0 }
    }

    /// Checks register size, every gate, index ranges, and that each
    /// variational parameter drives exactly one gate slot.
    pub fn validate(&self) -> Result<()> {
        if self.num_qubits == 0 || self.num_qubits > MAX_QUBITS {
            return Err(Error::QubitCount(self.num_qubits));
        }
        let mut uses = vec![0usize; self.num_variational_params];
        for g in &self.gates {
            g.validate(self.num_qubits)?;
            for a in &g.angles {
                match *a {
                    AngleSource::Variational(i) => {
                        if i >= self.num_variational_params {
                            return Err(Error::invalid(format!(
                                "variational index {i} >= {}",
                                self.num_variational_params
                            )));
                        }
                        uses[i] += 1;
                    }
                    AngleSource::Encoding(i) if i >= self.num_encoding_features => {
                        return Err(Error::invalid(format!(
                            "feature index {i} >= {}",
                            self.num_encoding_features
                        )));
                    }
                    AngleSource::Constant(v) if !v.is_finite() => {
                        return Err(Error::invalid("non-finite constant angle"));
                    }
                    _ => {}
                }
            }
        }
        if let Some(i) = uses.iter().position(|&u| u != 1) {
            return Err(Error::invalid(format!(
                "variational parameter {i} used {} times, expected exactly once",
                uses[i]
            )));
        }
        Ok(())
    }

    pub(crate) fn check_inputs(&self, params: &[f64], features: &[f64]) -> Result<()> {
        if params.len() != self.num_variational_params {
            return Err(Error::LengthMismatch {
                what: "variational parameters",
                expected: self.num_variational_params,
                got: params.len(),
            });
        }
        if features.len() != self.num_encoding_features {
            return Err(Error::LengthMismatch {
                what: "encoded features",
                expected: self.num_encoding_features,
                got: features.len(),
            });
        }
        Ok(())
    }

    /// Final state `U(params, features)|0...0>`.
    pub fn final_state(&self, params: &[f64], features: &[f64]) -> Result<StateVector> {
        self.check_inputs(params, features)?;
        let mut state = StateVector::zero(self.num_qubits)?;
        let mut angles = Vec::with_capacity(3);
        for g in &self.gates {
            angles.clear();
            angles.extend(g.angles.iter().map(|a| a.resolve(params, features)));
            state.apply_unchecked(g.kind, &g.qubits, &angles);
        }
        Ok(state)
    }

    /// Per-qubit `<Z>` of the final state.
    pub fn run(&self, params: &[f64], features: &[f64]) -> Result<Vec<f64>> {
        Ok(self.final_state(params, features)?.expectations_z())
    }

    pub fn count_kind(&self, kind: GateKind) -> usize {
        self.gates.iter().filter(|g| g.kind == kind).count()
    }

    pub fn has_entangling_gates(&self) -> bool {
        self.gates.iter().any(|g| g.kind.is_entangling())
    }

    /// Number of gate slots that read encoded feature `i`.
    pub fn feature_occurrences(&self, i: usize) -> usize {
        self.gates
            .iter()
            .flat_map(|g| g.angles.iter())
            .filter(|a| matches!(a, AngleSource::Encoding(j) if *j == i))
            .count()
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::sim::AngleSource::{Constant, Encoding, Variational};

    #[test]
    fn identity_circuit_gives_plus_one() {
        let c = CircuitIR::new(
            3,
            vec![
                GateOp::ry(0, Variational(0)),
                GateOp::u3(1, Variational(1), Variational(2), Variational(3)),
                GateOp::cnot(0, 2),
                GateOp::crz(1, 2, Encoding(0)),
                GateOp::pswap(0, 1, Constant(0.0)),
            ],
            4,
            1,
        )
        .unwrap();
        let z = c.run(&[0.0; 4], &[0.0]).unwrap();
        assert!(z.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn equator_state() {
        let c = CircuitIR::new(1, vec![GateOp::ry(0, Encoding(0))], 0, 1).unwrap();
        assert!(c.run(&[], &[PI / 2.0]).unwrap()[0].abs() < 1e-12);
    }

    #[test]
    fn ry_then_cnot_gives_zero_expectations() {
        let c = CircuitIR::new(
            2,
            vec![GateOp::ry(0, Constant(PI / 2.0)), GateOp::cnot(0, 1)],
            0,
            0,
        )
        .unwrap();
        let z = c.run(&[], &[]).unwrap();
        assert!(z[0].abs() < 1e-12 && z[1].abs() < 1e-12);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let c = CircuitIR::new(1, vec![GateOp::ry(0, Variational(0))], 1, 0).unwrap();
        assert!(matches!(c.run(&[], &[]), Err(Error::LengthMismatch { .. })));
        assert!(matches!(c.run(&[0.0], &[1.0]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn shared_variational_parameter_is_invalid() {
        let r = CircuitIR::new(
            1,
            vec![GateOp::ry(0, Variational(0)), GateOp::rz(0, Variational(0))],
            1,
            0,
        );
        assert!(r.is_err());
        // unused parameter
        assert!(CircuitIR::new(1, vec![], 1, 0).is_err());
    }
}
