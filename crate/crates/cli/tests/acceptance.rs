//! The ten acceptance criteria, one test each. Every test prints a single
//! `criterion N ... PASS|FAIL` line (straight to stderr, so it shows up even
//! under captured output) and then asserts.

mod common;

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::time::Instant;

use common::{mask_timing, Toy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensorcore::{grad_check, AdamConfig, Tape, Tensor, TensorError};
use whilter::datapipe::{batches, iterations_per_epoch, mix_at_snr, parse_manifest, sample_weighted, write_manifest, ManifestEntry, Split};
use whilter::evalkit::{eer, parse_report_csv, ScoredSet};
use whilter::frontend::{read_features, write_features, FrontendError, LayerStack, Waveform, DTYPE_F16};
use whilter::model::{bce_loss, eval_loss, Mode, ModelConfig, Prediction, Trainer, WhilterModel};
use whilter::{Class, LabelVector};
use whilter_cli::config::{RunConfig, Settings, Stage};
use whilter_cli::eval::{cmd_eval, EvalOptions, REPORT_CSV};
use whilter_cli::filter::{cmd_filter, Action, FilterDecision, FilterOptions, DECISIONS, KEPT, REJECTED};
use whilter_cli::toy::ToySpec;
use whilter_cli::train::{cmd_finetune, cmd_train, read_loss_log, LOSS_LOG};

fn verdict(n: u32, name: &str, ok: bool, detail: impl std::fmt::Display) {
    let status = if ok { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {n:>2} {name:<22} {status}  {detail}");
}

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

#[test]
fn criterion_01_gradient_fidelity() {
    let start = Instant::now();
    let cfg = ModelConfig::reduced();
    assert_eq!(
        (cfg.encoder_layers, cfg.frames, cfg.enc_dim, cfg.model_dim, cfg.n_classes),
        (3, 8, 16, 8, 5)
    );
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut model = WhilterModel::<f32>::new(cfg, 101).unwrap().cast::<f64>();
    let fid = model.fusion_param();
    model.params_mut().set_data(fid, &[0.3, -0.2, 0.1]);
    let stack = random_stack(&cfg, &mut rng);
    let y = random_labels(&mut rng);
    let mut store = model.params().clone();
    let cfg_err = |e: whilter::model::ModelError| TensorError::Config(e.to_string());
    let report = grad_check(&mut store, 1e-4, |params, tape| {
        let mut m = model.clone();
        *m.params_mut() = params.clone();
        let vars = m.forward_on_tape(tape, &stack, Mode::Eval).map_err(cfg_err)?;
        m.bce_on_tape(tape, vars.probs, &y).map_err(cfg_err)
    })
    .unwrap();
    let secs = start.elapsed().as_secs_f64();
    let ok = report.max_rel_error < 1e-3 && report.checked == model.params().num_elements() && secs < 60.0;
    verdict(
        1,
        "gradient fidelity",
        ok,
        format!(
            "max rel err {:.2e} over {} params in {secs:.1} s",
            report.max_rel_error, report.checked
        ),
    );
    assert!(ok, "{report:?}");
}

/// Recounts FPR and FNR from scratch at every distinct score and
/// interpolates where FPR − FNR first changes sign.
fn brute_force_eer(scores: &[f64], labels: &[bool]) -> f64 {
    let n_pos = labels.iter().filter(|&&l| l).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    let mut ts: Vec<f64> = scores.to_vec();
    ts.push(f64::INFINITY);
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    let rate = |t: f64| {
        let fp = scores.iter().zip(labels).filter(|(s, l)| **s >= t && !**l).count() as f64;
        let fn_ = scores.iter().zip(labels).filter(|(s, l)| **s < t && **l).count() as f64;
        (fp / n_neg, fn_ / n_pos)
    };
    let mut prev = rate(ts[0]);
    if prev.0 == prev.1 {
        return prev.0;
    }
    for &t in &ts[1..] {
        let cur = rate(t);
        let (d0, d1) = (prev.0 - prev.1, cur.0 - cur.1);
        if d0 > 0.0 && d1 <= 0.0 {
            return prev.0 + d0 / (d0 - d1) * (cur.0 - prev.0);
        }
        if d1 == 0.0 {
            return cur.0;
        }
        prev = cur;
    }
    unreachable!("FPR falls to 0 while FNR rises to 1")
}

#[test]
fn criterion_02_eer_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.gen_range(2..=200);
        let coarse = rng.gen_bool(0.5);
        let p = rng.gen_range(0.1..0.9);
        let skill = rng.gen_range(-0.4..0.6);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(p)).collect();
        labels[0] = true;
        labels[1] = false;
        let scores: Vec<f64> = labels
            .iter()
            .map(|&l| {
                let s = (rng.gen_range(0.0f64..1.0) + if l { skill } else { 0.0 }).clamp(0.0, 1.0);
                if coarse {
                    (s * 8.0).round() / 8.0
                } else {
                    s
                }
            })
            .collect();
        let got = eer(&ScoredSet::new("c", scores.clone(), labels.clone()).unwrap()).unwrap().0;
        worst = worst.max((got - brute_force_eer(&scores, &labels)).abs());
    }
    let fixed = |s: &[f64], l: &[u8]| {
        eer(&ScoredSet::new("c", s.to_vec(), l.iter().map(|&x| x == 1).collect()).unwrap())
            .unwrap()
            .0
    };
    let perfect = fixed(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]);
    let inverted = fixed(&[0.1, 0.2, 0.8, 0.9], &[1, 1, 0, 0]);
    let interleaved = fixed(&[0.8, 0.6, 0.4, 0.2], &[1, 0, 1, 0]);
    let ok = worst <= 1e-9 && perfect == 0.0 && inverted == 1.0 && (interleaved - 0.5).abs() <= 1e-9;
    verdict(
        2,
        "EER oracle",
        ok,
        format!("max |Δ| {worst:.1e} on 200 sets; fixed cases {perfect}/{inverted}/{interleaved}"),
    );
    assert!(ok);
}

#[test]
fn criterion_03_loss_sanity() {
    let y = LabelVector::from_flags([true, false, false, true, false]);
    let half = Prediction {
        logits: vec![0.0; 5],
        probs: vec![0.5; 5],
    };
    let perfect = Prediction {
        logits: vec![0.0; 5],
        probs: y.targets().to_vec(),
    };
    let uniform = bce_loss(&half, &y);
    let exact = bce_loss(&perfect, &y);
    // The tape loss used for training must agree.
    let model = WhilterModel::<f32>::new(ModelConfig::reduced(), 0).unwrap().cast::<f64>();
    let tape_loss = |p: Vec<f64>| {
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::new([1, 5], p).unwrap());
        let l = model.bce_on_tape(&mut tape, v, &y).unwrap();
        tape.value(l).data()[0]
    };
    let tape_uniform = tape_loss(vec![0.5; 5]);
    let tape_exact = tape_loss(y.targets().iter().map(|&t| t as f64).collect());
    let ln2 = std::f64::consts::LN_2;
    let ok = (uniform - ln2).abs() <= 1e-9 && (tape_uniform - ln2).abs() <= 1e-9 && exact < 1e-6 && tape_exact < 1e-6;
    verdict(3, "loss sanity", ok, format!("uniform {uniform:.12}, perfect {exact:.1e}"));
    assert!(ok);
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

#[test]
fn criterion_04_mixing_accuracy() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst = 0.0f64;
    let mut lengths_ok = true;
    for _ in 0..100 {
        let tlen = rng.gen_range(200..6000);
        let ilen = rng.gen_range(50..9000);
        let snr = rng.gen_range(-5.0..=10.0);
        let amp_t = rng.gen_range(0.05f32..0.9);
        let amp_i = rng.gen_range(0.05f32..0.9);
        let t = Waveform::new((0..tlen).map(|_| amp_t * rng.gen_range(-1.0f32..1.0)).collect(), "t");
        let i = Waveform::new((0..ilen).map(|_| amp_i * rng.gen_range(-1.0f32..1.0)).collect(), "i");
        let out = mix_at_snr(&t, &i, snr).unwrap();
        lengths_ok &= out.mixture.len() == tlen;
        // Separate the mixture back into its parts using only the inputs and
        // the reported normalization.
        let target: Vec<f64> = t.samples.iter().map(|&x| x as f64 * out.peak_scale).collect();
        let residual: Vec<f64> = out.mixture.samples.iter().zip(&target).map(|(&m, &s)| m as f64 - s).collect();
        let realized = 20.0 * (rms(&target) / rms(&residual)).log10();
        worst = worst.max((realized - snr).abs());
    }
    let ok = worst <= 0.1 && lengths_ok;
    verdict(4, "mixing accuracy", ok, format!("max SNR error {worst:.2e} dB over 100 triples"));
    assert!(ok);
}

#[test]
fn criterion_05_sampler() {
    // Ten entries, one of them at weight 9: total weight 18.
    let mut w = vec![1.0; 10];
    w[5] = 9.0;
    let n = 15000;
    let draws = sample_weighted(&w, &mut ChaCha8Rng::seed_from_u64(505), n).unwrap();
    let hits = draws.iter().filter(|&&i| i == 5).count() as f64;
    let p = 9.0 / 18.0;
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    let z = (hits - n as f64 * p) / sigma;
    let iters = iterations_per_epoch(15000, 64);
    let epoch = sample_weighted(&w, &mut ChaCha8Rng::seed_from_u64(506), iters * 64).unwrap();
    let b = batches(&epoch, 64);
    let ok = z.abs() <= 3.0 && b.len() == 235 && b.iter().all(|x| x.len() == 64);
    verdict(
        5,
        "sampler",
        ok,
        format!("freq {:.4} (z = {z:+.2}); {} batches of 64", hits / n as f64, b.len()),
    );
    assert!(ok);
}

#[test]
fn criterion_06_toy_end_to_end() {
    let start = Instant::now();
    let toy = Toy::new(ToySpec::default());
    let s = toy.ds.settings(&toy.spec);
    let summary = cmd_train(&RunConfig::from_settings(&s, Stage::Simulated).unwrap()).unwrap();
    let ckpt = summary.best_checkpoint.unwrap_or(summary.last_checkpoint);
    let opts = EvalOptions::from_settings(&toy.eval_settings(&ckpt, "eval")).unwrap();
    let ev = cmd_eval(&opts).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let mut detail = Vec::new();
    let mut ok = secs <= 15.0 * 60.0;
    for r in &ev.reports {
        let e = r.eer.unwrap_or(1.0);
        ok &= r.f1 >= 0.95 && e <= 0.05;
        detail.push(format!("{} F1 {:.3} EER {:.3}", r.class, r.f1, e));
    }
    verdict(6, "toy end-to-end", ok, format!("{:.0} s; {}", secs, detail.join(", ")));
    assert!(ok);
}

#[test]
fn criterion_07_overfit() {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut model = WhilterModel::<f32>::new(ModelConfig::small(), 707).unwrap();
    let batch: Vec<_> = (0..8)
        .map(|_| (random_stack(model.config(), &mut rng), random_labels(&mut rng)))
        .collect();
    let mut trainer = Trainer::new(&model, AdamConfig::default(), 707);
    let mut reached = None;
    for step in 1..=500 {
        trainer.train_step(&mut model, &batch, 1e-3).unwrap();
        if reached.is_none() && eval_loss(&model, &batch).unwrap() < 0.01 {
            reached = Some(step);
        }
    }
    let last = eval_loss(&model, &batch).unwrap();
    let ok = reached.is_some() && last < 0.01;
    verdict(7, "overfit", ok, format!("BCE < 0.01 at step {reached:?}; final {last:.2e}"));
    assert!(ok);
}

#[test]
fn criterion_08_determinism() {
    let toy = Toy::tiny(808);
    let run = |name: &str| {
        let s = toy.settings(name);
        let summary = cmd_train(&RunConfig::from_settings(&s, Stage::Simulated).unwrap()).unwrap();
        let out = format!("{name}-eval");
        cmd_eval(&EvalOptions::from_settings(&toy.eval_settings(&summary.last_checkpoint, &out)).unwrap()).unwrap();
        let log = fs::read(toy.path(name).join(LOSS_LOG)).unwrap();
        let csv = fs::read_to_string(toy.path(&out).join(REPORT_CSV)).unwrap();
        (log, csv)
    };
    let (log_a, csv_a) = run("a");
    let (log_b, csv_b) = run("b");
    // T_proc is measured wall-clock time; every other cell must match.
    let ok = log_a == log_b && mask_timing(&csv_a) == mask_timing(&csv_b) && parse_report_csv(&csv_a).unwrap().len() == 5;
    verdict(
        8,
        "determinism",
        ok,
        format!("{} loss-log bytes identical; CSVs identical except T_proc", log_a.len()),
    );
    assert!(ok);
}

#[test]
fn criterion_09_schedule() {
    let toy = Toy::new(ToySpec {
        n_train: 16,
        n_val: 4,
        n_test: 4,
        n_pool: 2,
        p_class: 0.5,
        seed: 909,
        ..ToySpec::default()
    });
    let base = |out: &str| {
        toy.settings(out)
            .without("eta")
            .without("gamma")
            .without("epochs")
            .with("samples_per_epoch", 8)
            .with("batch_size", 8)
    };
    let s1 = base("stage1");
    let c1 = RunConfig::from_settings(&s1, Stage::Simulated).unwrap();
    let last = cmd_train(&c1).unwrap().last_checkpoint;
    let s2 = base("stage2").with("base_checkpoint", last.display());
    let c2 = RunConfig::from_settings(&s2, Stage::Finetune).unwrap();
    cmd_finetune(&c2).unwrap();

    let check = |dir: &str, epochs: u32, eta: f64, gamma: f64| {
        let log = read_loss_log(&toy.path(dir).join(LOSS_LOG)).unwrap();
        let logged: BTreeSet<u32> = log.iter().map(|r| r.epoch).collect();
        let mut product = eta;
        let mut exact = logged == (0..epochs).collect();
        for e in 0..epochs {
            for r in log.iter().filter(|r| r.epoch == e) {
                exact &= r.lr == eta * gamma.powi(e as i32);
                exact &= (r.lr - product).abs() <= 1e-12;
            }
            product *= gamma;
        }
        exact
    };
    let ok1 = (c1.epochs, c1.eta, c1.gamma) == (10, 1e-5, 0.7) && check("stage1", 10, 1e-5, 0.7);
    let ok2 = (c2.epochs, c2.eta, c2.gamma) == (100, 1e-5, 0.98) && check("stage2", 100, 1e-5, 0.98);
    verdict(
        9,
        "schedule",
        ok1 && ok2,
        format!("10 epochs at gamma 0.7: {ok1}; 100 epochs at gamma 0.98: {ok2}"),
    );
    assert!(ok1 && ok2);
}

fn fuzz_path(rng: &mut impl Rng, i: usize) -> String {
    const PIECES: [&str; 8] = ["clip", "ü", " space", "\"q\"", "日本", "a\\b", "\t", "é"];
    let mut s = format!("dir{}/", rng.gen_range(0..5));
    for _ in 0..rng.gen_range(1..4) {
        s.push_str(PIECES[rng.gen_range(0..PIECES.len())]);
    }
    format!("{s}-{i}.wav")
}

#[test]
fn criterion_10_format_robustness() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1010);

    // WHLF round trip, including awkward values.
    let mut data: Vec<f32> = (0..3 * 7 * 5).map(|_| rng.gen_range(-1e3f32..1e3)).collect();
    data[..5].copy_from_slice(&[-0.0, f32::MIN_POSITIVE / 2.0, f32::MAX, f32::MIN, 1e-30]);
    let stack = LayerStack::new(3, 7, 5, data).unwrap();
    let p = dir.path().join("x.whlf");
    write_features(&stack, &p).unwrap();
    let back = read_features(&p).unwrap();
    let bits = |s: &LayerStack| s.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let round_trip = back.dims() == stack.dims() && bits(&back) == bits(&stack);

    let bytes = fs::read(&p).unwrap();
    let corrupt = |f: &dyn Fn(&mut Vec<u8>)| {
        let mut b = bytes.clone();
        f(&mut b);
        let q = dir.path().join("bad.whlf");
        fs::write(&q, b).unwrap();
        read_features(&q)
    };
    let variants = [
        matches!(corrupt(&|b| b[..4].copy_from_slice(b"XXXX")), Err(FrontendError::BadMagic { .. })),
        matches!(corrupt(&|b| b[4] = 9), Err(FrontendError::UnsupportedVersion { version: 9, .. })),
        matches!(corrupt(&|b| b[20] = DTYPE_F16 as u8), Err(FrontendError::DtypeMismatch { .. })),
        matches!(corrupt(&|b| b.truncate(10)), Err(FrontendError::TruncatedHeader { .. })),
        matches!(corrupt(&|b| b.truncate(b.len() - 4)), Err(FrontendError::TruncatedPayload { .. })),
        matches!(corrupt(&|b| b.push(0)), Err(FrontendError::TrailingBytes { .. })),
    ];
    let corruption = variants.iter().all(|&v| v);

    // Partition over a fuzzed 1000-entry manifest, replayed through the filter.
    let entries: Vec<ManifestEntry> = (0..1000)
        .map(|i| ManifestEntry {
            audio_path: fuzz_path(&mut rng, i),
            labels: random_labels(&mut rng).with_speakers(rng.gen_range(0..4)),
            split: [Split::Train, Split::Val, Split::Test][rng.gen_range(0..3)],
            source: "fuzz".into(),
            duration_s: rng.gen_range(0.0..30.0),
        })
        .collect();
    let manifest = dir.path().join("in.jsonl");
    write_manifest(&manifest, &entries).unwrap();
    let input = parse_manifest(&manifest).unwrap();
    let thresholds: [f64; 5] = std::array::from_fn(|_| rng.gen_range(0.6..0.95));
    let mut scores = String::new();
    for e in &input {
        // Some probabilities land exactly on a threshold.
        let probs: [f32; 5] = std::array::from_fn(|c| {
            if rng.gen_bool(0.05) {
                thresholds[c] as f32
            } else {
                rng.gen_range(0.0..=1.0)
            }
        });
        let d = FilterDecision {
            entry: e.clone(),
            probs,
            kept: true,
            reasons: Vec::new(),
            action: Action::Keep,
        };
        scores.push_str(&serde_json::to_string(&d).unwrap());
        scores.push('\n');
    }
    let scores_path = dir.path().join("scores.jsonl");
    fs::write(&scores_path, scores).unwrap();
    let mut s = Settings::new()
        .with("scores", scores_path.display())
        .with("out_dir", dir.path().join("out").display())
        .with("policy", "tiered");
    for c in Class::ALL {
        s.set(&format!("threshold_{}", c.name()), (thresholds[c.index()] as f32).to_string())
            .unwrap();
    }
    let summary = cmd_filter(&FilterOptions::from_settings(&s).unwrap()).unwrap();
    let kept = parse_manifest(dir.path().join("out").join(KEPT)).unwrap();
    let rejected = parse_manifest(dir.path().join("out").join(REJECTED)).unwrap();
    let key = |e: &ManifestEntry| e.audio_path.clone();
    let kept_set: BTreeSet<String> = kept.iter().map(key).collect();
    let rejected_set: BTreeSet<String> = rejected.iter().map(key).collect();
    let input_set: BTreeSet<String> = input.iter().map(key).collect();
    let union: BTreeSet<String> = kept_set.union(&rejected_set).cloned().collect();
    let mut merged: Vec<&ManifestEntry> = kept.iter().chain(&rejected).collect();
    merged.sort_by_key(|e| &e.audio_path);
    let mut sorted_input: Vec<&ManifestEntry> = input.iter().collect();
    sorted_input.sort_by_key(|e| &e.audio_path);
    let decisions: Vec<FilterDecision> = whilter_cli::train::read_jsonl(&dir.path().join("out").join(DECISIONS)).unwrap();
    let rule_holds = decisions
        .iter()
        .all(|d| d.kept == d.probs.iter().zip(&thresholds).all(|(&p, &t)| p < t as f32));
    let partition = input == entries
        && input_set.len() == 1000
        && union == input_set
        && kept_set.is_disjoint(&rejected_set)
        && merged == sorted_input
        && summary.kept + summary.rejected == 1000
        && rule_holds;

    let ok = round_trip && corruption && partition;
    verdict(
        10,
        "format robustness",
        ok,
        format!(
            "round trip {round_trip}; corruptions {}/6; partition {partition} ({} kept, {} rejected)",
            variants.iter().filter(|&&v| v).count(),
            summary.kept,
            summary.rejected
        ),
    );
    assert!(ok);
}
