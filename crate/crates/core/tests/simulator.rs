use std::f64::consts::PI;

use nalgebra::DVector;
use proptest::prelude::*;
use qmcnet_core::design::{instantiate, CircuitSpec, Entanglement, Parameterization, Preset};
use qmcnet_core::sim::oracle::dense_unitary_oracle;
use qmcnet_core::sim::{
    evaluate_with_gradients, two_point_z_correlation, AngleSource, CircuitIR, Complex64, GateKind, GateOp,
    StateVector,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const KINDS: [GateKind; 7] =
    [GateKind::Ry, GateKind::Rz, GateKind::U3, GateKind::Cnot, GateKind::Crz, GateKind::Pswap, GateKind::H];
const FEATURES: usize = 3;

/// Random circuit over every gate kind; each rotation slot is either a fresh
/// variational parameter or one of three features (features may repeat).
fn random_circuit(n: usize, len: usize, seed: u64) -> CircuitIR {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = 0;
    let mut gates = Vec::new();
    for _ in 0..len {
        let kind = if n == 1 {
            [GateKind::Ry, GateKind::Rz, GateKind::U3, GateKind::H][rng.gen_range(0..4)]
        } else {
            KINDS[rng.gen_range(0..KINDS.len())]
        };
        let a = rng.gen_range(0..n);
        let mut b = rng.gen_range(0..n - 1 + usize::from(n == 1));
        if b >= a {
            b += 1;
        }
        let qubits = if kind.arity() == 1 { vec![a] } else { vec![a, b] };
        let angles = (0..kind.num_angles())
            .map(|_| {
                if rng.gen_bool(0.75) {
                    params += 1;
                    AngleSource::Variational(params - 1)
                } else {
                    AngleSource::Encoding(rng.gen_range(0..FEATURES))
                }
            })
            .collect();
        gates.push(GateOp { kind, qubits, angles });
    }
    CircuitIR::new(n, gates, params, FEATURES).unwrap()
}

fn random_inputs(c: &CircuitIR, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let p = (0..c.num_variational_params).map(|_| rng.gen_range(-PI..PI)).collect();
    let x = (0..c.num_encoding_features).map(|_| rng.gen_range(-PI..PI)).collect();
    (p, x)
}

fn oracle_state(c: &CircuitIR, p: &[f64], x: &[f64]) -> Vec<Complex64> {
    let u = dense_unitary_oracle(c, p, x).unwrap();
    let dim = 1 << c.num_qubits;
    let mut e0 = DVector::<Complex64>::zeros(dim);
    e0[0] = Complex64::new(1.0, 0.0);
    (u * e0).iter().copied().collect()
}

fn finite_difference(c: &CircuitIR, p: &[f64], x: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let h = 1e-5;
    let col = |f: &dyn Fn(f64) -> Vec<f64>| -> Vec<f64> {
        let (a, b) = (f(h), f(-h));
        a.iter().zip(&b).map(|(a, b)| (a - b) / (2.0 * h)).collect()
    };
    let dp = (0..p.len())
        .map(|j| {
            col(&|d| {
                let mut q = p.to_vec();
                q[j] += d;
                c.run(&q, x).unwrap()
            })
        })
        .collect();
    let dx = (0..x.len())
        .map(|i| {
            col(&|d| {
                let mut y = x.to_vec();
                y[i] += d;
                c.run(p, &y).unwrap()
            })
        })
        .collect();
    (dp, dx)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn statevector_matches_dense_oracle(n in 1usize..=4, len in 0usize..14, seed in any::<u64>()) {
        let c = random_circuit(n, len, seed);
        let (p, x) = random_inputs(&c, seed);
        let fast = c.final_state(&p, &x).unwrap();
        let slow = oracle_state(&c, &p, &x);
        for (a, b) in fast.amplitudes().iter().zip(&slow) {
            prop_assert!((a - b).norm() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn norm_is_preserved(n in 1usize..=6, len in 0usize..30, seed in any::<u64>()) {
        let c = random_circuit(n, len, seed);
        let (p, x) = random_inputs(&c, seed);
        let s = c.final_state(&p, &x).unwrap();
        prop_assert!((s.norm_sqr() - 1.0).abs() < 1e-10);
        for z in s.expectations_z() {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&z));
        }
    }

    #[test]
    fn shift_gradients_match_finite_differences(n in 1usize..=4, len in 1usize..10, seed in any::<u64>()) {
        let c = random_circuit(n, len, seed);
        let (p, x) = random_inputs(&c, seed);
        let e = evaluate_with_gradients(&c, &p, &x).unwrap();
        let (dp, dx) = finite_difference(&c, &p, &x);
        for (j, col) in dp.iter().enumerate() {
            for (k, v) in col.iter().enumerate() {
                prop_assert!((e.d_params[(k, j)] - v).abs() < 1e-6, "param {j} qubit {k}");
            }
        }
        for (i, col) in dx.iter().enumerate() {
            for (k, v) in col.iter().enumerate() {
                prop_assert!((e.d_features[(k, i)] - v).abs() < 1e-6, "feature {i} qubit {k}");
            }
        }
    }
}

#[test]
fn presets_match_oracle_up_to_six_qubits() {
    for p in Preset::ALL {
        let c = p.circuit();
        if c.num_qubits > 6 {
            continue;
        }
        let (params, x) = random_inputs(&c, 7);
        let fast = c.final_state(&params, &x).unwrap();
        let slow = oracle_state(&c, &params, &x);
        for (a, b) in fast.amplitudes().iter().zip(&slow) {
            assert!((a - b).norm() < 1e-10, "{p}");
        }
    }
}

#[test]
fn preset_gradients_match_finite_differences() {
    for (p, draw) in Preset::ALL.iter().flat_map(|&p| (0..50u64).map(move |d| (p, d))) {
        let c = p.circuit();
        let (params, x) = random_inputs(&c, draw);
        let e = evaluate_with_gradients(&c, &params, &x).unwrap();
        let (dp, dx) = finite_difference(&c, &params, &x);
        for (j, col) in dp.iter().enumerate() {
            for (k, v) in col.iter().enumerate() {
                assert!((e.d_params[(k, j)] - v).abs() < 1e-6, "{p} param {j}");
            }
        }
        for (i, col) in dx.iter().enumerate() {
            for (k, v) in col.iter().enumerate() {
                assert!((e.d_features[(k, i)] - v).abs() < 1e-6, "{p} feature {i}");
            }
        }
    }
}

#[test]
fn pswap_mixes_single_excitations() {
    let t = 0.8;
    let c = CircuitIR::new(
        2,
        vec![GateOp::ry(0, AngleSource::Constant(PI)), GateOp::pswap(0, 1, AngleSource::Constant(t))],
        0,
        0,
    )
    .unwrap();
    let s = c.final_state(&[], &[]).unwrap();
    let a = s.amplitudes();
    // |01> (qubit 0 set) -> cos(t/2)|01> - i sin(t/2)|10>
    assert!((a[1] - Complex64::new((t / 2.0).cos(), 0.0)).norm() < 1e-12);
    assert!((a[2] - Complex64::new(0.0, -(t / 2.0).sin())).norm() < 1e-12);
    assert!(a[0].norm() < 1e-12 && a[3].norm() < 1e-12);
}

#[test]
fn crz_phases_only_when_control_set() {
    let t = 1.3;
    let plus = |q| GateOp::h(q);
    for control_on in [false, true] {
        let mut gates = vec![plus(1)];
        if control_on {
            gates.insert(0, GateOp::ry(0, AngleSource::Constant(PI)));
        }
        gates.push(GateOp::crz(0, 1, AngleSource::Constant(t)));
        gates.push(GateOp::h(1));
        let c = CircuitIR::new(2, gates, 0, 0).unwrap();
        let z1 = c.run(&[], &[]).unwrap()[1];
        let expect = if control_on { t.cos() } else { 1.0 };
        assert!((z1 - expect).abs() < 1e-12);
    }
}

#[test]
fn product_circuit_has_zero_correlation() {
    let c = instantiate(&CircuitSpec::new(3, 1, Entanglement::Linear, Parameterization::OnePerQubit, false))
        .unwrap();
    let product = CircuitIR::new(
        3,
        c.gates.iter().filter(|g| !g.kind.is_entangling()).cloned().collect(),
        c.num_variational_params,
        3,
    )
    .unwrap();
    let s = product.final_state(&[0.3, 0.5, 0.7], &[0.2, 1.1, -0.4]).unwrap();
    let z = s.expectations_z();
    assert!((two_point_z_correlation(&s, 0, 2).unwrap() - z[0] * z[2]).abs() < 1e-12);

    let half = AngleSource::Constant(PI / 2.0);
    let equator = CircuitIR::new(2, vec![GateOp::ry(0, half), GateOp::ry(1, half)], 0, 0).unwrap();
    let s = equator.final_state(&[], &[]).unwrap();
    assert!(two_point_z_correlation(&s, 0, 1).unwrap().abs() < 1e-12);

    let bell = CircuitIR::new(2, vec![GateOp::h(0), GateOp::cnot(0, 1)], 0, 0).unwrap();
    let s = bell.final_state(&[], &[]).unwrap();
    assert!((two_point_z_correlation(&s, 0, 1).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn zero_state_limits() {
    assert!(StateVector::zero(12).is_ok());
    assert!(StateVector::zero(13).is_err());
    assert!(StateVector::zero(0).is_err());
}
