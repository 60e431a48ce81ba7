use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensorcore::{grad_check, AdamConfig, Tape, Tensor};
use whilter::frontend::LayerStack;
use whilter::model::{bce_loss, Mode, ModelConfig, ModelError, Prediction, Trainer, WhilterModel};
use whilter::LabelVector;

fn random_stack(cfg: &ModelConfig, rng: &mut impl Rng) -> LayerStack {
    let n = cfg.encoder_layers * cfg.frames * cfg.enc_dim;
    LayerStack::new(
        cfg.encoder_layers,
        cfg.frames,
        cfg.enc_dim,
        (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
    )
    .unwrap()
}

fn random_labels(rng: &mut impl Rng) -> LabelVector {
    LabelVector::from_flags(std::array::from_fn(|_| rng.gen_bool(0.5)))
}

fn reduced_model(seed: u64) -> WhilterModel<f32> {
    WhilterModel::new(ModelConfig::reduced(), seed).unwrap()
}

fn set_fusion(model: &mut WhilterModel<f32>, raw: &[f32]) {
    let id = model.fusion_param();
    model.params_mut().set_data(id, raw);
}

fn max_diff(a: &[f32], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y).abs()).fold(0.0, f64::max)
}

#[test]
fn saturated_fusion_selects_one_layer() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut model = reduced_model(0);
    let stack = random_stack(model.config(), &mut rng);
    for l in 0..3 {
        let raw: Vec<f32> = (0..3).map(|i| if i == l { 30.0 } else { -30.0 }).collect();
        set_fusion(&mut model, &raw);
        let fused = model.fuse_layers(&stack).unwrap();
        let want: Vec<f64> = stack.layer(l).iter().map(|&v| v as f64).collect();
        assert!(max_diff(fused.data(), &want) < 1e-4);
    }
}

#[test]
fn uniform_fusion_is_layer_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = reduced_model(0);
    let stack = random_stack(model.config(), &mut rng);
    let fused = model.fuse_layers(&stack).unwrap();
    assert_eq!(fused.shape(), &[8, 16]);
    let n = 8 * 16;
    let mean: Vec<f64> = (0..n)
        .map(|i| (0..3).map(|l| stack.layer(l)[i] as f64).sum::<f64>() / 3.0)
        .collect();
    assert!(max_diff(fused.data(), &mean) < 1e-6);
}

#[test]
fn fusion_matches_f64_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let mut model = reduced_model(0);
        let raw: Vec<f32> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
        set_fusion(&mut model, &raw);
        let stack = random_stack(model.config(), &mut rng);
        let max = raw.iter().fold(f64::MIN, |m, &r| m.max(r as f64));
        let e: Vec<f64> = raw.iter().map(|&r| (r as f64 - max).exp()).collect();
        let z: f64 = e.iter().sum();
        let want: Vec<f64> = (0..8 * 16)
            .map(|i| (0..3).map(|l| e[l] / z * stack.layer(l)[i] as f64).sum())
            .collect();
        let got = model.fuse_layers(&stack).unwrap();
        assert!(max_diff(got.data(), &want) < 1e-5);
        let w: f32 = model.fusion_weights().iter().sum();
        assert!((w - 1.0).abs() < 1e-6);
    }
}

#[test]
fn layer_count_mismatch_is_rejected() {
    let model = reduced_model(0);
    let bad = LayerStack::new(2, 8, 16, vec![0.0; 2 * 8 * 16]).unwrap();
    assert!(matches!(model.fuse_layers(&bad), Err(ModelError::InputShape { .. })));
    assert!(matches!(model.forward(&bad), Err(ModelError::InputShape { .. })));
}

#[test]
fn full_size_prediction_network_shape() {
    let model = WhilterModel::<f32>::new(ModelConfig::default(), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let f0 = Tensor::from_fn([1500, 768], |_| rng.gen_range(-1.0f32..1.0));
    let f = model.prediction_network(&f0).unwrap();
    assert_eq!(f.shape(), &[1500, 256]);
    assert!(f.is_finite());
    let again = model.prediction_network(&f0).unwrap();
    assert_eq!(f, again);
}

/// Scalar re-implementation of one pooling head in f64.
fn head_oracle(model: &WhilterModel<f32>, f: &[f64], t: usize, d: usize, n: usize) -> (f64, Vec<f64>) {
    let p = model.params();
    let get = |name: &str| -> Vec<f64> {
        let id = p.find(&format!("head{n}.{name}")).unwrap();
        p.get(id).data().iter().map(|&v| v as f64).collect()
    };
    let (w1, b1, w2, b2, wo, bo) = (
        get("hidden.weight"),
        get("hidden.bias"),
        get("score.weight"),
        get("score.bias"),
        get("out.weight"),
        get("out.bias"),
    );
    let hdim = b1.len();
    let scores: Vec<f64> = (0..t)
        .map(|ti| {
            let mut s = b2[0];
            for j in 0..hdim {
                let mut h = b1[j];
                for k in 0..d {
                    h += f[ti * d + k] * w1[k * hdim + j];
                }
                s += h.max(0.0) * w2[j];
            }
            s
        })
        .collect();
    let m = scores.iter().cloned().fold(f64::MIN, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = e.iter().sum();
    let a: Vec<f64> = e.iter().map(|x| x / z).collect();
    let mut logit = bo[0];
    for k in 0..d {
        let pooled: f64 = (0..t).map(|ti| a[ti] * f[ti * d + k]).sum();
        let mean: f64 = (0..t).map(|ti| f[ti * d + k]).sum::<f64>() / t as f64;
        logit += (pooled + mean) * wo[k];
    }
    (logit, a)
}

#[test]
fn pooling_head_matches_f64_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..10 {
        let model = reduced_model(trial);
        let f = Tensor::from_fn([8, 8], |_| rng.gen_range(-2.0f32..2.0));
        let f64s: Vec<f64> = f.data().iter().map(|&v| v as f64).collect();
        for n in 0..5 {
            let (logit, attn) = model.attention_pool_head(&f, n).unwrap();
            let (want, want_a) = head_oracle(&model, &f64s, 8, 8, n);
            assert!((logit as f64 - want).abs() < 1e-5, "{logit} vs {want}");
            assert!(max_diff(&attn, &want_a) < 1e-6);
            assert!((attn.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn constant_input_pools_to_twice_the_row() {
    let model = reduced_model(6);
    let row: Vec<f32> = (0..8).map(|i| 0.3 * i as f32 - 1.0).collect();
    let f = Tensor::from_fn([8, 8], |i| row[i % 8]);
    let p = model.params();
    let wo = p.get(p.find("head2.out.weight").unwrap()).data();
    let bo = p.get(p.find("head2.out.bias").unwrap()).data()[0];
    let want: f32 = bo + row.iter().zip(wo).map(|(r, w)| 2.0 * r * w).sum::<f32>();
    let (logit, attn) = model.attention_pool_head(&f, 2).unwrap();
    assert!((logit - want).abs() < 1e-5);
    assert!(attn.iter().all(|&a| (a - 0.125).abs() < 1e-6));
}

#[test]
fn forward_outputs_five_probabilities_deterministically() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let model = reduced_model(7);
    let stack = random_stack(model.config(), &mut rng);
    let a = model.forward(&stack).unwrap();
    let b = model.forward(&stack).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.probs.len(), 5);
    for (p, l) in a.probs.iter().zip(&a.logits) {
        assert!(*p > 0.0 && *p < 1.0);
        assert!((p - 1.0 / (1.0 + (-l).exp())).abs() < 1e-6);
    }
}

#[test]
fn fresh_model_is_near_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let model = reduced_model(8);
    let mut mean = [0.0f64; 5];
    for _ in 0..100 {
        let p = model.forward(&random_stack(model.config(), &mut rng)).unwrap();
        for (m, l) in mean.iter_mut().zip(&p.logits) {
            *m += *l as f64 / 100.0;
        }
    }
    for m in mean {
        assert!(m.abs() < 0.25, "mean logit {m}");
    }
}

#[test]
fn every_head_attends_over_all_frames() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let model = reduced_model(9);
    let stack = random_stack(model.config(), &mut rng);
    let mut tape = Tape::new();
    let vars = model.forward_on_tape(&mut tape, &stack, Mode::Eval).unwrap();
    assert_eq!(vars.attention.len(), 5);
    for a in vars.attention {
        let w = tape.value(a).data();
        assert_eq!(w.len(), 8);
        assert!(w.iter().all(|&x| x >= 0.0));
        assert!((w.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn bce_reference_values() {
    let y = LabelVector::from_flags([true, false, true, false, false]);
    let half = Prediction {
        logits: vec![0.0; 5],
        probs: vec![0.5; 5],
    };
    assert!((bce_loss(&half, &y) - std::f64::consts::LN_2).abs() < 1e-9);
    let perfect = Prediction {
        logits: vec![0.0; 5],
        probs: y.targets().to_vec(),
    };
    assert!(bce_loss(&perfect, &y) <= 1e-6);
    let two = Prediction {
        logits: vec![0.0; 2],
        probs: vec![0.9, 0.2],
    };
    let y2 = LabelVector::from_flags([true, false, false, false, false]);
    let want = (-(0.9f64.ln()) - 0.8f64.ln()) / 2.0;
    assert!((bce_loss(&two, &y2) - want).abs() < 1e-7);
    assert!((want - 0.164252033486018).abs() < 1e-12);
}

#[test]
fn full_model_gradient_check() {
    let start = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let cfg = ModelConfig::reduced();
    let model = WhilterModel::<f32>::new(cfg, 10).unwrap().cast::<f64>();
    let mut model = model;
    // Non-zero fusion logits so the fusion gradient is not at a symmetric point.
    let fid = model.fusion_param();
    model.params_mut().set_data(fid, &[0.3, -0.2, 0.1]);
    let stack = random_stack(&cfg, &mut rng);
    let y = random_labels(&mut rng);
    let mut store = model.params().clone();
    let report = grad_check(&mut store, 1e-4, |params, tape| {
        let mut m = model.clone();
        *m.params_mut() = params.clone();
        let vars = m
            .forward_on_tape(tape, &stack, Mode::Eval)
            .map_err(|e| tensorcore::TensorError::Config(e.to_string()))?;
        m.bce_on_tape(tape, vars.probs, &y)
            .map_err(|e| tensorcore::TensorError::Config(e.to_string()))
    })
    .unwrap();
    assert_eq!(report.checked, model.params().num_elements());
    assert!(report.max_rel_error < 1e-3, "{report:?}");
    assert!(start.elapsed().as_secs() < 60);
}

#[test]
fn overfits_a_fixed_batch() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut model = WhilterModel::<f32>::new(ModelConfig::small(), 11).unwrap();
    let batch: Vec<_> = (0..8)
        .map(|_| (random_stack(model.config(), &mut rng), random_labels(&mut rng)))
        .collect();
    let mut trainer = Trainer::new(&model, AdamConfig::default(), 11);
    let mut last = f64::MAX;
    for _ in 0..500 {
        last = trainer.train_step(&mut model, &batch, 1e-3).unwrap();
    }
    let eval = whilter::model::eval_loss(&model, &batch).unwrap();
    assert!(last < 0.01 && eval < 0.01, "train {last}, eval {eval}");
}

#[test]
fn zero_learning_rate_leaves_parameters_untouched() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut model = reduced_model(12);
    let before = model.params().clone();
    let batch = vec![(random_stack(model.config(), &mut rng), random_labels(&mut rng))];
    let mut trainer = Trainer::new(&model, AdamConfig::default(), 0);
    for _ in 0..3 {
        trainer.train_step(&mut model, &batch, 0.0).unwrap();
    }
    for ((_, _, a), (_, _, b)) in before.iter().zip(model.params().iter()) {
        assert_eq!(a.data(), b.data());
    }
}

#[test]
fn single_small_step_usually_decreases_loss() {
    let mut decreased = 0;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut model = reduced_model(seed);
        let batch: Vec<_> = (0..4)
            .map(|_| (random_stack(model.config(), &mut rng), random_labels(&mut rng)))
            .collect();
        let before = whilter::model::eval_loss(&model, &batch).unwrap();
        let mut trainer = Trainer::new(&model, AdamConfig::default(), seed);
        trainer.train_step(&mut model, &batch, 1e-4).unwrap();
        let after = whilter::model::eval_loss(&model, &batch).unwrap();
        if after < before {
            decreased += 1;
        }
    }
    assert!(decreased >= 18, "{decreased}/20");
}

#[test]
fn empty_batch_is_an_error() {
    let mut model = reduced_model(0);
    let mut trainer = Trainer::new(&model, AdamConfig::default(), 0);
    assert!(matches!(trainer.train_step(&mut model, &[], 1e-3), Err(ModelError::EmptyBatch)));
}

#[test]
fn batch_permutation_is_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let cfg = ModelConfig {
        dropout_p: 0.0,
        ..ModelConfig::reduced()
    };
    let model = WhilterModel::<f32>::new(cfg, 13).unwrap();
    let batch: Vec<_> = (0..5).map(|_| (random_stack(&cfg, &mut rng), random_labels(&mut rng))).collect();
    let order = [3, 0, 4, 1, 2];
    let permuted: Vec<_> = order.iter().map(|&j| batch[j].clone()).collect();
    let preds: Vec<_> = batch.iter().map(|(s, _)| model.forward(s).unwrap()).collect();
    for (k, &j) in order.iter().enumerate() {
        assert_eq!(model.forward(&permuted[k].0).unwrap(), preds[j]);
    }
    let mut m1 = model.clone();
    let mut m2 = model.clone();
    let l1 = Trainer::new(&m1, AdamConfig::default(), 0)
        .train_step(&mut m1, &batch, 1e-3)
        .unwrap();
    let l2 = Trainer::new(&m2, AdamConfig::default(), 0)
        .train_step(&mut m2, &permuted, 1e-3)
        .unwrap();
    assert!((l1 - l2).abs() < 1e-6);
    for ((_, _, a), (_, _, b)) in m1.params().iter().zip(m2.params().iter()) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-5);
        }
    }
}

#[test]
fn encoder_features_get_no_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let model = reduced_model(14);
    let stack = random_stack(model.config(), &mut rng);
    let mut tape = Tape::new();
    let s = model.stack_constant(&mut tape, &stack).unwrap();
    let vars = model.forward_from_matrix(&mut tape, s, &mut Mode::Eval).unwrap();
    let loss = model.bce_on_tape(&mut tape, vars.probs, &random_labels(&mut rng)).unwrap();
    let g = tape.backward(loss).unwrap();
    assert!(g.wrt(s).is_none());
    assert!(g.param(model.fusion_param()).is_some());
    assert_eq!(stack.to_matrix().data(), tape.value(s).data());
}
