use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensorcore::AdamConfig;
use whilter::frontend::LayerStack;
use whilter::model::{
    load_checkpoint, load_checkpoint_expecting, save_checkpoint, Checkpoint, ModelConfig, ModelError, Trainer, WhilterModel,
};
use whilter::LabelVector;

fn batch(rng: &mut ChaCha8Rng, n: usize) -> Vec<(LayerStack, LabelVector)> {
    let cfg = ModelConfig::reduced();
    (0..n)
        .map(|_| {
            let len = cfg.encoder_layers * cfg.frames * cfg.enc_dim;
            let s = LayerStack::new(3, 8, 16, (0..len).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).unwrap();
            (s, LabelVector::from_flags(std::array::from_fn(|_| rng.gen_bool(0.5))))
        })
        .collect()
}

fn fresh(seed: u64) -> Checkpoint {
    let model = WhilterModel::new(ModelConfig::reduced(), seed).unwrap();
    let trainer = Trainer::new(&model, AdamConfig::default(), seed);
    Checkpoint {
        model,
        trainer,
        meta: [("stage".to_string(), "simulated".to_string())].into(),
    }
}

#[test]
fn round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut ck = fresh(1);
    let data = batch(&mut rng, 4);
    for _ in 0..3 {
        ck.trainer.train_step(&mut ck.model, &data, 1e-3).unwrap();
    }
    ck.trainer.epoch = 2;
    save_checkpoint(dir.path(), &ck).unwrap();
    let back = load_checkpoint(dir.path()).unwrap();
    assert_eq!(back.model.config(), ck.model.config());
    assert_eq!(back.trainer.adam, ck.trainer.adam);
    assert_eq!(back.trainer.rng, ck.trainer.rng);
    assert_eq!((back.trainer.epoch, back.trainer.step), (2, 3));
    assert_eq!(back.meta, ck.meta);
    for (s, _) in &data {
        assert_eq!(back.model.forward(s).unwrap(), ck.model.forward(s).unwrap());
    }
    for ((_, na, a), (_, nb, b)) in ck.model.params().iter().zip(back.model.params().iter()) {
        assert_eq!(na, nb);
        assert_eq!(a.data(), b.data());
    }
}

#[test]
fn wrong_class_count_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(dir.path(), &fresh(2)).unwrap();
    let expected = ModelConfig {
        n_classes: 4,
        ..ModelConfig::reduced()
    };
    match load_checkpoint_expecting(dir.path(), &expected) {
        Err(ModelError::Config(msg)) => assert!(msg.contains("n_classes"), "{msg}"),
        other => panic!("expected config error, got {other:?}"),
    }
    load_checkpoint_expecting(dir.path(), &ModelConfig::reduced()).unwrap();
}

#[test]
fn corrupt_params_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(dir.path(), &fresh(3)).unwrap();
    let p = dir.path().join("params");
    let bytes = std::fs::read(&p).unwrap();
    std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(load_checkpoint(dir.path()), Err(ModelError::Checkpoint { .. })));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    std::fs::write(&p, &bad).unwrap();
    let err = load_checkpoint(dir.path()).unwrap_err().to_string();
    assert!(err.contains("bad magic"), "{err}");
}

#[test]
fn missing_directory_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(load_checkpoint(dir.path().join("nope")).is_err());
}

#[test]
fn resume_reproduces_uninterrupted_run() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let data = batch(&mut rng, 6);
    let steps = 8;

    let mut full = fresh(4);
    let curve: Vec<f64> = (0..steps)
        .map(|_| full.trainer.train_step(&mut full.model, &data, 1e-3).unwrap())
        .collect();

    let dir = tempfile::tempdir().unwrap();
    let mut first = fresh(4);
    let mut resumed_curve: Vec<f64> = (0..steps / 2)
        .map(|_| first.trainer.train_step(&mut first.model, &data, 1e-3).unwrap())
        .collect();
    save_checkpoint(dir.path(), &first).unwrap();
    drop(first);
    let mut second = load_checkpoint(dir.path()).unwrap();
    resumed_curve.extend((steps / 2..steps).map(|_| second.trainer.train_step(&mut second.model, &data, 1e-3).unwrap()));
    assert_eq!(curve, resumed_curve);
}
