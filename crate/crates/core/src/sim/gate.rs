use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where a rotation angle comes from when a circuit is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngleSource {
    Constant(f64),
    /// Index into the trainable parameter vector.
    Variational(usize),
    /// Index into the encoded feature vector.
    Encoding(usize),
}

impl AngleSource {
    pub fn resolve(&self, params: &[f64], features: &[f64]) -> f64 {
        match *self {
            AngleSource::Constant(v) => v,
            AngleSource::Variational(i) => params[i],
            AngleSource::Encoding(i) => features[i],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum GateKind {
    Ry,
    Rz,
    U3,
    Cnot,
    Crz,
    Pswap,
    H,
}

impl GateKind {
    pub fn arity(self) -> usize {
        match self {
            GateKind::Ry | GateKind::Rz | GateKind::U3 | GateKind::H => 1,
            GateKind::Cnot | GateKind::Crz | GateKind::Pswap => 2,
        }
    }

    pub fn num_angles(self) -> usize {
        match self {
            GateKind::Cnot | GateKind::H => 0,
            GateKind::Ry | GateKind::Rz | GateKind::Crz | GateKind::Pswap => 1,
            GateKind::U3 => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GateKind::Ry => "RY",
            GateKind::Rz => "RZ",
            GateKind::U3 => "U3",
            GateKind::Cnot => "CNOT",
            GateKind::Crz => "CRZ",
            GateKind::Pswap => "PSWAP",
            GateKind::H => "H",
        }
    }

    pub fn is_entangling(self) -> bool {
        self.arity() == 2
    }
}

/// One gate in a compiled circuit.
///
/// For two-qubit gates `qubits[0]` is the control (CNOT, CRZ); PSWAP is
/// symmetric. U3 angles are stored in `(a, b, c)` order for
/// `RZ(a) RY(b) RZ(c)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateOp {
    pub kind: GateKind,
    pub qubits: Vec<usize>,
    pub angles: Vec<AngleSource>,
}

impl GateOp {
    pub fn ry(q: usize, angle: AngleSource) -> Self {
        Self { kind: GateKind::Ry, qubits: vec![q], angles: vec![angle] }
    }

    pub fn rz(q: usize, angle: AngleSource) -> Self {
        Self { kind: GateKind::Rz, qubits: vec![q], angles: vec![angle] }
    }

    pub fn u3(q: usize, a: AngleSource, b: AngleSource, c: AngleSource) -> Self {
        Self { kind: GateKind::U3, qubits: vec![q], angles: vec![a, b, c] }
    }

    pub fn h(q: usize) -> Self {
        Self { kind: GateKind::H, qubits: vec![q], angles: vec![] }
    }

    pub fn cnot(control: usize, target: usize) -> Self {
        Self { kind: GateKind::Cnot, qubits: vec![control, target], angles: vec![] }
    }

    pub fn crz(control: usize, target: usize, angle: AngleSource) -> Self {
        Self { kind: GateKind::Crz, qubits: vec![control, target], angles: vec![angle] }
    }

    pub fn pswap(a: usize, b: usize, angle: AngleSource) -> Self {
        Self { kind: GateKind::Pswap, qubits: vec![a, b], angles: vec![angle] }
    }

    /// Checks qubit indices and angle arity against a register size.
    pub fn validate(&self, num_qubits: usize) -> Result<()> {
        if self.qubits.len() != self.kind.arity() {
            return Err(Error::invalid(format!(
                "{} acts on {} qubit(s), got {}",
                self.kind.name(),
                self.kind.arity(),
                self.qubits.len()
            )));
        }
        for &q in &self.qubits {
            if q >= num_qubits {
                return Err(Error::QubitOutOfRange { index: q, num_qubits });
            }
        }
        if self.qubits.len() == 2 && self.qubits[0] == self.qubits[1] {
            return Err(Error::DuplicateQubit(self.qubits[0]));
        }
        self.check_angle_count(self.angles.len())
    }

    pub(crate) fn check_angle_count(&self, got: usize) -> Result<()> {
        let expected = self.kind.num_angles();
        if got != expected {
            return Err(Error::AngleCount { kind: self.kind.name(), expected, got });
        }
        Ok(())
    }

    pub fn resolve_angles(&self, params: &[f64], features: &[f64]) -> Vec<f64> {
        self.angles.iter().map(|a| a.resolve(params, features)).collect()
    }
}
