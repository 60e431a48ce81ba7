use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensorcore::nn::MultiHeadAttention;
use tensorcore::{grad_check, ParamId, ParamStore, Result, Tape, Tensor, Var};

const CONFIGS: u64 = 60;
const TOL_F64: f64 = 1e-6;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(lo..hi))
}

/// Values bounded away from zero so kinked primitives stay differentiable
/// within the finite-difference step.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let (lo, hi) = (0.05, 1.5);
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = rng.gen_range(lo..hi);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Reduces any node to a scalar with fixed random weights of magnitude at
/// least 0.05, so every output element contributes.
fn readout(tape: &mut Tape<f64>, v: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = tape.shape(v).to_vec();
    let w = tape.constant(away_from_zero(&mut rng, &shape).cast::<f64>());
    let p = tape.mul(v, w)?;
    Ok(tape.sum(p))
}

fn check(
    name: &str,
    mut build: impl FnMut(
        &mut ChaCha8Rng,
    ) -> (
        ParamStore<f64>,
        Box<dyn Fn(&ParamStore<f64>, &mut Tape<f64>, &[ParamId]) -> Result<Var>>,
    ),
) {
    let mut worst = 0.0f64;
    for seed in 0..CONFIGS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed * 7919 + 1);
        let (mut store, f) = build(&mut rng);
        let ids: Vec<ParamId> = store.ids().collect();
        let report = grad_check(&mut store, 1e-4, |st, tape| {
            let out = f(st, tape, &ids)?;
            readout(tape, out, seed)
        })
        .unwrap();
        worst = worst.max(report.max_rel_error);
        assert!(report.max_rel_error < TOL_F64, "{name} seed {seed}: {report:?}");
    }
    println!("{name}: worst relative error {worst:.3e} over {CONFIGS} configs");
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (rng.gen_range(1..6), rng.gen_range(1..6), rng.gen_range(1..6))
}

#[test]
fn matmul_gradients() {
    check("matmul", |rng| {
        let (m, k, n) = dims(rng);
        let mut s = ParamStore::new();
        s.add("a", random_tensor(rng, &[m, k], -1.0, 1.0));
        s.add("b", random_tensor(rng, &[k, n], -1.0, 1.0));
        (
            s,
            Box::new(|s, t, ids| {
                let a = t.param(s, ids[0]);
                let b = t.param(s, ids[1]);
                t.matmul(a, b)
            }),
        )
    });
}

#[test]
fn matmul_transposed_gradients() {
    check("matmul_t", |rng| {
        let (m, k, n) = dims(rng);
        let mut s = ParamStore::new();
        s.add("a", random_tensor(rng, &[m, k], -1.0, 1.0));
        s.add("b", random_tensor(rng, &[n, k], -1.0, 1.0));
        (
            s,
            Box::new(|s, t, ids| {
                let a = t.param(s, ids[0]);
                let b = t.param(s, ids[1]);
                t.matmul_t(a, b)
            }),
        )
    });
}

#[test]
fn elementwise_binary_gradients() {
    check("add/mul/add_row", |rng| {
        let (m, n, _) = dims(rng);
        let mut s = ParamStore::new();
        s.add("a", random_tensor(rng, &[m, n], -1.0, 1.0));
        s.add("b", random_tensor(rng, &[m, n], -1.0, 1.0));
        s.add("bias", random_tensor(rng, &[n], -1.0, 1.0));
        (
            s,
            Box::new(|s, t, ids| {
                let a = t.param(s, ids[0]);
                let b = t.param(s, ids[1]);
                let c = t.param(s, ids[2]);
                let x = t.mul(a, b)?;
                let x = t.add(x, a)?;
                let x = t.add_row(x, c)?;
                Ok(t.scale(x, -1.7))
            }),
        )
    });
}

#[test]
fn activation_gradients() {
    check("relu/gelu/sigmoid/tanh", |rng| {
        let (m, n, _) = dims(rng);
        let mut s = ParamStore::new();
        s.add("x", away_from_zero(rng, &[m, n]));
        (
            s,
            Box::new(|s, t, ids| {
                let x = t.param(s, ids[0]);
                let a = t.relu(x);
                let b = t.gelu(x);
                let c = t.sigmoid(x);
                let d = t.tanh(x);
                let ab = t.add(a, b)?;
                let cd = t.mul(c, d)?;
                t.add(ab, cd)
            }),
        )
    });
}

#[test]
fn softmax_gradients_both_axes() {
    check("softmax", |rng| {
        let (m, n, _) = dims(rng);
        let mut s = ParamStore::new();
        s.add("x", random_tensor(rng, &[m, n], -2.0, 2.0));
        (
            s,
            Box::new(|s, t, ids| {
                let x = t.param(s, ids[0]);
                let r = t.softmax(x, 1)?;
                let c = t.softmax(x, 0)?;
                t.add(r, c)
            }),
        )
    });
}

#[test]
fn layer_norm_gradients() {
    check("layer_norm", |rng| {
        let m = rng.gen_range(1..5);
        let n = rng.gen_range(2..8);
        let mut s = ParamStore::new();
        s.add("x", random_tensor(rng, &[m, n], -2.0, 2.0));
        s.add("g", random_tensor(rng, &[n], 0.5, 1.5));
        s.add("b", random_tensor(rng, &[n], -0.5, 0.5));
        (
            s,
            Box::new(|s, t, ids| {
                let x = t.param(s, ids[0]);
                let g = t.param(s, ids[1]);
                let b = t.param(s, ids[2]);
                t.layer_norm(x, g, b, 1e-5)
            }),
        )
    });
}

#[test]
fn reduction_and_shape_gradients() {
    check("mean_rows/mean/sum/reshape/slice/concat", |rng| {
        let m = rng.gen_range(1..5);
        let n = rng.gen_range(2..7);
        let mut s = ParamStore::new();
        s.add("x", random_tensor(rng, &[m, n], -1.0, 1.0));
        (
            s,
            Box::new(move |s, t, ids| {
                let x = t.param(s, ids[0]);
                let mr = t.mean_rows(x)?;
                let head = t.slice_cols(x, 0, 1)?;
                let tail = t.slice_cols(x, 1, n - 1)?;
                let cat = t.concat_cols(&[tail, head])?;
                let flat = t.reshape(cat, [1, m * n])?;
                let total = t.sum(x);
                let avg = t.mean(x)?;
                let both = t.concat_cols(&[mr, flat])?;
                let tot = t.reshape(total, [1, 1])?;
                let avg = t.reshape(avg, [1, 1])?;
                t.concat_cols(&[both, tot, avg])
            }),
        )
    });
}

#[test]
fn bce_gradients() {
    for seed in 0..CONFIGS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(1..8);
        let targets: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
        let mut s = ParamStore::new();
        s.add("p", random_tensor(&mut rng, &[1, n], 0.1, 0.9));
        let id = s.ids().next().unwrap();
        let r = grad_check(&mut s, 1e-4, |st, t| {
            let p = t.param(st, id);
            t.bce(p, &targets, 1e-7, 1.0 - 1e-7)
        })
        .unwrap();
        assert!(r.max_rel_error < TOL_F64, "{r:?}");
    }
}

#[test]
fn attention_gradients() {
    check("multi_head_attention", |rng| {
        let heads = rng.gen_range(1..3);
        let d = heads * rng.gen_range(1..4);
        let tlen = rng.gen_range(1..5);
        let mut s = ParamStore::new();
        let x = s.add("x", random_tensor(rng, &[tlen, d], -1.0, 1.0));
        let mha = MultiHeadAttention::new(&mut s, "mha", d, heads, rng).unwrap();
        (
            s,
            Box::new(move |s, t, _| {
                let xv = t.param(s, x);
                mha.forward(t, s, xv)
            }),
        )
    });
}

fn linear_f64(x: &[Vec<f64>], w: &Tensor<f32>, b: &Tensor<f32>) -> Vec<Vec<f64>> {
    let (d_in, d_out) = (w.shape()[0], w.shape()[1]);
    x.iter()
        .map(|row| {
            (0..d_out)
                .map(|o| b.data()[o] as f64 + (0..d_in).map(|i| row[i] * w.data()[i * d_out + o] as f64).sum::<f64>())
                .collect()
        })
        .collect()
}

#[test]
fn attention_matches_scalar_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut store = ParamStore::<f32>::new();
    let mha = MultiHeadAttention::new(&mut store, "mha", 4, 1, &mut rng).unwrap();
    for id in [mha.q.bias, mha.k.bias, mha.v.bias, mha.out.bias] {
        let vals: Vec<f32> = (0..4).map(|_| rng.gen_range(-0.3..0.3)).collect();
        store.set_data(id, &vals);
    }
    let x: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..4).map(|_| rng.gen_range(-1.0f32..1.0) as f64).collect())
        .collect();

    let mut tape = Tape::<f32>::new();
    let xt = tape.constant(Tensor::new([3, 4], x.iter().flatten().map(|&v| v as f32).collect()).unwrap());
    let out = mha.attend(&mut tape, &store, xt, xt, xt).unwrap();

    // scalar f64 oracle
    let p = |id| store.get(id);
    let q = linear_f64(&x, p(mha.q.weight), p(mha.q.bias));
    let k = linear_f64(&x, p(mha.k.weight), p(mha.k.bias));
    let v = linear_f64(&x, p(mha.v.weight), p(mha.v.bias));
    let mut ctx = vec![vec![0.0f64; 4]; 3];
    for i in 0..3 {
        let scores: Vec<f64> = (0..3).map(|j| (0..4).map(|c| q[i][c] * k[j][c]).sum::<f64>() / 2.0).collect();
        let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
        let z: f64 = e.iter().sum();
        for j in 0..3 {
            for c in 0..4 {
                ctx[i][c] += e[j] / z * v[j][c];
            }
        }
    }
    let expected = linear_f64(&ctx, p(mha.out.weight), p(mha.out.bias));
    let got = tape.value(out.output).data();
    let max_diff = expected
        .iter()
        .flatten()
        .zip(got)
        .map(|(e, &g)| (e - g as f64).abs())
        .fold(0.0, f64::max);
    assert!(max_diff < 1e-5, "max diff {max_diff}");
}

#[test]
fn single_position_attention_passes_value_through() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::<f64>::new();
    let mha = MultiHeadAttention::new(&mut store, "mha", 8, 2, &mut rng).unwrap();
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(random_tensor(&mut rng, &[1, 8], -1.0, 1.0));
    let out = mha.attend(&mut tape, &store, x, x, x).unwrap();
    for w in &out.weights {
        assert_eq!(tape.value(*w).data(), &[1.0]);
    }
    let v = mha.v.forward(&mut tape, &store, x).unwrap();
    let expected = mha.out.forward(&mut tape, &store, v).unwrap();
    assert_eq!(tape.value(out.output).data(), tape.value(expected).data());
}

#[test]
fn attention_rows_are_distributions() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let mut store = ParamStore::<f32>::new();
        let heads = rng.gen_range(1..5);
        let d = heads * rng.gen_range(1..5);
        let tlen = rng.gen_range(1..30);
        let mha = MultiHeadAttention::new(&mut store, "mha", d, heads, &mut rng).unwrap();
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::from_fn([tlen, d], |_| rng.gen_range(-3.0..3.0)));
        let out = mha.attend(&mut tape, &store, x, x, x).unwrap();
        for w in &out.weights {
            for r in 0..tlen {
                let s: f64 = tape.value(*w).row(r).iter().map(|&v| v as f64).sum();
                assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }
}
