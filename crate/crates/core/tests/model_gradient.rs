use qmcnet_core::design::{assignment, BandCircuit, Preset};
use qmcnet_core::features::{Band, MultiBandImage, PatchGrid, RasterBand, ValueRange};
use qmcnet_core::model::{Example, ModelConfig, QmcNet, StepKey};
use qmcnet_core::sim::{AngleSource, CircuitIR, GateOp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn image(h: usize, w: usize, seed: u64) -> MultiBandImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bands = (0..6)
        .map(|_| RasterBand::new(h, w, (0..h * w).map(|_| rng.gen()).collect(), ValueRange::Unit).unwrap())
        .collect();
    MultiBandImage::new(bands, 0).unwrap()
}

/// Largest |analytic - numeric| over the largest |numeric|.
fn relative_gradient_error(model: &QmcNet, size: usize, n: usize) -> f64 {
    let grids: Vec<PatchGrid> = (0..n).map(|s| model.prepare(&image(size, size, s as u64)).unwrap()).collect();
    let batch: Vec<Example> = grids
        .iter()
        .enumerate()
        .map(|(i, g)| Example { grid: g, label: i % model.config.num_classes, id: i as u64 })
        .collect();
    let key = StepKey { seed: 3, step: 1 };
    let mut trained = model.clone();
    let step = trained.train_batch(&batch, key).unwrap();
    assert!((step.loss - model.train_loss(&batch, key).unwrap()).abs() < 1e-14);
    let analytic = step.grad.trainable();
    let base = model.params.trainable();
    let loss = |p: &[f64]| {
        let mut m = model.clone();
        m.params.set_trainable(p).unwrap();
        m.train_loss(&batch, key).unwrap()
    };
    let h = 1e-6;
    let mut max_diff: f64 = 0.0;
    let mut max_num: f64 = 0.0;
    for i in 0..base.len() {
        let mut a = base.clone();
        let mut b = base.clone();
        a[i] += h;
        b[i] -= h;
        let num = (loss(&a) - loss(&b)) / (2.0 * h);
        max_diff = max_diff.max((num - analytic[i]).abs());
        max_num = max_num.max(num.abs());
    }
    assert!(max_num > 1e-6, "gradient vanished");
    max_diff / max_num
}

#[test]
fn single_qubit_toy_pipeline() {
    let circuit = CircuitIR::new(
        1,
        vec![GateOp::ry(0, AngleSource::Encoding(0)), GateOp::ry(0, AngleSource::Variational(0))],
        1,
        1,
    )
    .unwrap();
    let bands = vec![BandCircuit { band: Band::Ndvi, name: "toy".into(), circuit }];
    let mut config = ModelConfig::new(2, bands, 2);
    config.hidden = 4;
    let model = QmcNet::new(config, 11).unwrap();
    assert!(relative_gradient_error(&model, 4, 3) < 1e-5);
}

#[test]
fn toy_assignment_with_residual_and_dropout() {
    let mut config = ModelConfig::new(2, assignment("toy").unwrap(), 3);
    config.residual = true;
    config.hidden = 6;
    let model = QmcNet::new(config, 2).unwrap();
    assert!(relative_gradient_error(&model, 4, 4) < 1e-5);
}

#[test]
fn crz_and_pswap_circuits_in_pipeline() {
    let bands = vec![BandCircuit { band: Band::Evi, name: "c".into(), circuit: Preset::Sat6Complex.circuit() }];
    let mut config = ModelConfig::new(2, bands, 2);
    config.hidden = 3;
    let model = QmcNet::new(config, 5).unwrap();
    assert!(relative_gradient_error(&model, 2, 2) < 1e-5);
}

#[test]
fn no_quantum_pipeline() {
    let mut config = ModelConfig::new(2, assignment("toy").unwrap(), 2);
    config.quantum = false;
    config.hidden = 4;
    let model = QmcNet::new(config, 9).unwrap();
    assert!(relative_gradient_error(&model, 4, 3) < 1e-5);
}

#[test]
fn infer_is_deterministic_and_bounded() {
    let model = QmcNet::new(ModelConfig::new(2, assignment("toy").unwrap(), 4), 1).unwrap();
    let g = model.prepare(&image(6, 6, 4)).unwrap();
    let a = model.predict(&[&g]).unwrap();
    let b = model.predict(&[&g]).unwrap();
    assert_eq!(a, b);
    assert!(model.feature_map(&g).unwrap().data().iter().all(|v| v.abs() <= 1.0 + 1e-12));
}
