//! Dense statevector simulation of parameterized circuits.
//!
//! Conventions are fixed and shared with the dense oracle:
//!
//! * qubit 0 is the least-significant bit of the amplitude index;
//! * `RY(t) = exp(-i t Y / 2)`, `RZ(t) = exp(-i t Z / 2)`;
//! * `U3(a, b, c) = RZ(a) RY(b) RZ(c)`;
//! * `CRZ(t) = diag(1, 1, e^{-it/2}, e^{it/2})` in `|control, target>` order;
//! * `PSWAP(t)` is the identity on `|00>, |11>` and
//!   `[[cos t/2, -i sin t/2], [-i sin t/2, cos t/2]]` on `|01>, |10>`.
//!
//! Expectations are exact; there is no shot sampling.

mod circuit;
mod gate;
mod gradient;
pub mod oracle;
mod state;

pub use circuit::CircuitIR;
pub use gate::{AngleSource, GateKind, GateOp};
pub use gradient::{circuit_gradients, evaluate_with_gradients, CircuitEvaluation};
pub use state::{two_point_z_correlation, StateVector, MAX_QUBITS};

pub use num_complex::Complex64;
