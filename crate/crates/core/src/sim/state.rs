use num_complex::Complex64;

use super::gate::{GateKind, GateOp};
use crate::error::{Error, Result};

pub const MAX_QUBITS: usize = 12;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Amplitudes of an `n`-qubit pure state; qubit 0 is the least-significant
/// bit of the basis index.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    num_qubits: usize,
    amps: Vec<Complex64>,
}

/// Single-qubit Pauli factor, used for shifted rotations in gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Pauli {
    X,
    Y,
    Z,
}

impl StateVector {
    /// `|0...0>` on `num_qubits` qubits.
    pub fn zero(num_qubits: usize) -> Result<Self> {
        if num_qubits == 0 || num_qubits > MAX_QUBITS {
            return Err(Error::QubitCount(num_qubits));
        }
        let mut amps = vec![Complex64::new(0.0, 0.0); 1 << num_qubits];
        amps[0] = Complex64::new(1.0, 0.0);
        Ok(Self { num_qubits, amps })
    }

    /// Wraps raw amplitudes. The vector must have length `2^n` and unit norm
    /// within `1e-10`.
    pub fn from_amplitudes(amps: Vec<Complex64>) -> Result<Self> {
        let n = amps.len();
        if n < 2 || !n.is_power_of_two() {
            return Err(Error::shape(format!("amplitude count {n} is not a power of two >= 2")));
        }
        let num_qubits = n.trailing_zeros() as usize;
        if num_qubits > MAX_QUBITS {
            return Err(Error::QubitCount(num_qubits));
        }
        let s = Self { num_qubits, amps };
        if (s.norm_sqr() - 1.0).abs() > 1e-10 {
            return Err(Error::invalid("state is not normalised"));
        }
        Ok(s)
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    fn check_qubit(&self, q: usize) -> Result<()> {
        if q >= self.num_qubits {
            return Err(Error::QubitOutOfRange { index: q, num_qubits: self.num_qubits });
        }
        Ok(())
    }

    /// Applies one gate with already-resolved angles.
    pub fn apply_gate(&mut self, gate: &GateOp, angles: &[f64]) -> Result<()> {
        gate.validate(self.num_qubits)?;
        gate.check_angle_count(angles.len())?;
        self.apply_unchecked(gate.kind, &gate.qubits, angles);
        Ok(())
    }

    /// Gate application without validation; callers validate the circuit once.
    pub(crate) fn apply_unchecked(&mut self, kind: GateKind, qubits: &[usize], angles: &[f64]) {
        match kind {
            GateKind::Ry => {
                let (s, c) = (angles[0] / 2.0).sin_cos();
                let m = [
                    [Complex64::new(c, 0.0), Complex64::new(-s, 0.0)],
                    [Complex64::new(s, 0.0), Complex64::new(c, 0.0)],
                ];
                self.apply_1q(qubits[0], &m);
            }
            GateKind::Rz => {
                let half = angles[0] / 2.0;
                self.apply_diag_1q(qubits[0], Complex64::cis(-half), Complex64::cis(half));
            }
            GateKind::U3 => {
                let (a, b, c) = (angles[0], angles[1], angles[2]);
                let (sb, cb) = (b / 2.0).sin_cos();
                let m = [
                    [Complex64::cis(-(a + c) / 2.0) * cb, -Complex64::cis(-(a - c) / 2.0) * sb],
                    [Complex64::cis((a - c) / 2.0) * sb, Complex64::cis((a + c) / 2.0) * cb],
                ];
                self.apply_1q(qubits[0], &m);
            }
            GateKind::H => {
                let r = std::f64::consts::FRAC_1_SQRT_2;
                let m = [
                    [Complex64::new(r, 0.0), Complex64::new(r, 0.0)],
                    [Complex64::new(r, 0.0), Complex64::new(-r, 0.0)],
                ];
                self.apply_1q(qubits[0], &m);
            }
            GateKind::Cnot => {
                let (cm, tm) = (1usize << qubits[0], 1usize << qubits[1]);
                for i in 0..self.amps.len() {
                    if i & cm != 0 && i & tm == 0 {
                        self.amps.swap(i, i | tm);
                    }
                }
            }
            GateKind::Crz => {
                let (cm, tm) = (1usize << qubits[0], 1usize << qubits[1]);
                let half = angles[0] / 2.0;
                let (p0, p1) = (Complex64::cis(-half), Complex64::cis(half));
                for (i, a) in self.amps.iter_mut().enumerate() {
                    if i & cm != 0 {
                        *a *= if i & tm == 0 { p0 } else { p1 };
                    }
                }
            }
            GateKind::Pswap => {
                let (am, bm) = (1usize << qubits[0], 1usize << qubits[1]);
                let (s, c) = (angles[0] / 2.0).sin_cos();
                let (c, mis) = (Complex64::new(c, 0.0), Complex64::new(0.0, -s));
                for i in 0..self.amps.len() {
                    if i & am == 0 && i & bm != 0 {
                        let j = (i | am) & !bm;
                        let (x, y) = (self.amps[i], self.amps[j]);
                        self.amps[i] = c * x + mis * y;
                        self.amps[j] = mis * x + c * y;
                    }
                }
            }
        }
    }

    fn apply_1q(&mut self, q: usize, m: &[[Complex64; 2]; 2]) {
        let mask = 1usize << q;
        for i in 0..self.amps.len() {
            if i & mask == 0 {
                let j = i | mask;
                let (a, b) = (self.amps[i], self.amps[j]);
                self.amps[i] = m[0][0] * a + m[0][1] * b;
                self.amps[j] = m[1][0] * a + m[1][1] * b;
            }
        }
    }

    fn apply_diag_1q(&mut self, q: usize, d0: Complex64, d1: Complex64) {
        let mask = 1usize << q;
        for (i, a) in self.amps.iter_mut().enumerate() {
            *a *= if i & mask == 0 { d0 } else { d1 };
        }
    }

    /// Applies `exp(-i phi P / 2)` for a Pauli string `P`.
    pub(crate) fn apply_pauli_rotation(&mut self, factors: &[(usize, Pauli)], phi: f64) {
        let mut flip = 0usize;
        for &(q, p) in factors {
            if p != Pauli::Z {
                flip |= 1 << q;
            }
        }
        // P|x> = phase(x) |x ^ flip>
        let phase = |x: usize| -> Complex64 {
            let mut ph = Complex64::new(1.0, 0.0);
            for &(q, p) in factors {
                let bit = (x >> q) & 1;
                match p {
                    Pauli::X => {}
                    Pauli::Y => ph *= if bit == 0 { I } else { -I },
                    Pauli::Z => {
                        if bit == 1 {
                            ph = -ph;
                        }
                    }
                }
            }
            ph
        };
        let (s, c) = (phi / 2.0).sin_cos();
        let old = self.amps.clone();
        for (y, a) in self.amps.iter_mut().enumerate() {
            let x = y ^ flip;
            *a = c * old[y] - I * s * phase(x) * old[x];
        }
    }

    /// Per-qubit `<Z_k>`.
    pub fn expectations_z(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.num_qubits];
        for (i, a) in self.amps.iter().enumerate() {
            let p = a.norm_sqr();
            for (k, o) in out.iter_mut().enumerate() {
                if (i >> k) & 1 == 0 {
                    *o += p;
                } else {
                    *o -= p;
                }
            }
        }
        out
    }

    pub fn expectation_z(&self, q: usize) -> Result<f64> {
        self.check_qubit(q)?;
        Ok(self.expectations_z()[q])
    }
}

/// `<Z_a Z_b>` on a state.
pub fn two_point_z_correlation(state: &StateVector, a: usize, b: usize) -> Result<f64> {
    state.check_qubit(a)?;
    state.check_qubit(b)?;
    if a == b {
        return Err(Error::DuplicateQubit(a));
    }
    Ok(state
        .amps
        .iter()
        .enumerate()
        .map(|(i, amp)| {
            let parity = ((i >> a) ^ (i >> b)) & 1;
            if parity == 0 {
                amp.norm_sqr()
            } else {
                -amp.norm_sqr()
            }
        })
        .sum())
}
