//! Fine-tuning augmentations. Every augmentation preserves length.

use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::frontend::Waveform;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Augmentation {
    FreqDrop,
    FrameDrop,
    BitReduction,
    SignFlip,
    Speed,
}

/// Independent application probability for each augmentation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub p_freq_drop: f64,
    pub p_frame_drop: f64,
    pub p_bit_reduction: f64,
    pub p_sign_flip: f64,
    pub p_speed: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self::uniform(0.2)
    }
}

impl AugmentConfig {
    pub fn uniform(p: f64) -> Self {
        Self {
            p_freq_drop: p,
            p_frame_drop: p,
            p_bit_reduction: p,
            p_sign_flip: p,
            p_speed: p,
        }
    }
}

/// Zeroes the FFT bins in `[lo_hz, hi_hz)` (and their mirror images).
pub fn freq_drop(x: &[f32], sample_rate: u32, lo_hz: f64, hi_hz: f64) -> Vec<f32> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v as f64, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    let hz_per_bin = sample_rate as f64 / n as f64;
    for k in 0..=n / 2 {
        let f = k as f64 * hz_per_bin;
        if f >= lo_hz && f < hi_hz {
            buf[k] = Complex::new(0.0, 0.0);
            if k != 0 {
                buf[n - k] = Complex::new(0.0, 0.0);
            }
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| (c.re / n as f64) as f32).collect()
}

/// Zeroes `[start, start + len)` for each segment.
pub fn frame_drop(x: &[f32], segments: &[(usize, usize)]) -> Vec<f32> {
    let mut y = x.to_vec();
    for &(start, len) in segments {
        let end = (start + len).min(y.len());
        y[start.min(end)..end].iter_mut().for_each(|v| *v = 0.0);
    }
    y
}

/// Uniform quantization of `[-1, 1]` to `bits` bits, step `2^(1-bits)`.
pub fn quantize_bits(x: &[f32], bits: u32) -> Vec<f32> {
    let levels = (1u64 << (bits - 1)) as f64;
    x.iter().map(|&v| ((v as f64 * levels).round() / levels) as f32).collect()
}

pub fn sign_flip(x: &[f32]) -> Vec<f32> {
    x.iter().map(|&v| -v).collect()
}

/// Plays the signal `factor` times faster by linear-interpolation resampling,
/// then pads or truncates back to the input length.
pub fn speed_perturb(x: &[f32], factor: f64) -> Vec<f32> {
    if x.is_empty() {
        return Vec::new();
    }
    let out_len = ((x.len() as f64) / factor).round().max(1.0) as usize;
    let last = x.len() - 1;
    let mut resampled: Vec<f32> = (0..out_len)
        .map(|i| {
            let pos = i as f64 * factor;
            let j = (pos.floor() as usize).min(last);
            let frac = pos - j as f64;
            let a = x[j] as f64;
            let b = x[(j + 1).min(last)] as f64;
            (a + (b - a) * frac) as f32
        })
        .collect();
    resampled.resize(x.len(), 0.0);
    resampled
}

/// Applies each augmentation independently with its configured probability,
/// in a fixed order. Returns the augmented waveform and what was applied.
pub fn augment(w: &Waveform, rng: &mut impl Rng, cfg: &AugmentConfig) -> (Waveform, Vec<Augmentation>) {
    let sr = w.sample_rate;
    let mut x = w.samples.clone();
    let mut applied = Vec::new();
    let n = x.len();
    if n > 0 && rng.gen_bool(cfg.p_freq_drop) {
        let width = rng.gen_range(100.0..=1000.0);
        let lo = rng.gen_range(0.0..(sr as f64 / 2.0 - width));
        x = freq_drop(&x, sr, lo, lo + width);
        applied.push(Augmentation::FreqDrop);
    }
    if n > 0 && rng.gen_bool(cfg.p_frame_drop) {
        let count = rng.gen_range(1..=3);
        let segs: Vec<(usize, usize)> = (0..count)
            .map(|_| {
                let len = (rng.gen_range(0.05..=0.2) * sr as f64) as usize;
                let len = len.min(n);
                (rng.gen_range(0..=n - len), len)
            })
            .collect();
        x = frame_drop(&x, &segs);
        applied.push(Augmentation::FrameDrop);
    }
    if rng.gen_bool(cfg.p_bit_reduction) {
        x = quantize_bits(&x, rng.gen_range(8..=14));
        applied.push(Augmentation::BitReduction);
    }
    if rng.gen_bool(cfg.p_sign_flip) {
        x = sign_flip(&x);
        applied.push(Augmentation::SignFlip);
    }
    if n > 0 && rng.gen_bool(cfg.p_speed) {
        let factor = if rng.gen_bool(0.5) { 0.9 } else { 1.1 };
        x = speed_perturb(&x, factor);
        applied.push(Augmentation::Speed);
    }
    (
        Waveform {
            samples: x,
            sample_rate: sr,
            source_path: w.source_path.clone(),
        },
        applied,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(n: usize, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::new((0..n).map(|_| rng.gen_range(-0.5f32..0.5)).collect(), "n")
    }

    #[test]
    fn zero_probability_is_identity() {
        let w = noise(4000, 1);
        let (out, applied) = augment(&w, &mut ChaCha8Rng::seed_from_u64(0), &AugmentConfig::uniform(0.0));
        assert_eq!(out, w);
        assert!(applied.is_empty());
    }

    #[test]
    fn sign_flip_negates_exactly() {
        let w = noise(100, 2);
        let (out, applied) = augment(
            &w,
            &mut ChaCha8Rng::seed_from_u64(0),
            &AugmentConfig {
                p_sign_flip: 1.0,
                ..AugmentConfig::uniform(0.0)
            },
        );
        assert_eq!(applied, vec![Augmentation::SignFlip]);
        assert!(out.samples.iter().zip(&w.samples).all(|(a, b)| *a == -*b));
    }

    #[test]
    fn eight_bit_ramp_error_is_bounded() {
        let ramp: Vec<f32> = (0..=2000).map(|i| -1.0 + i as f32 / 1000.0).collect();
        let q = quantize_bits(&ramp, 8);
        let err = q.iter().zip(&ramp).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        assert!(err <= 1.0 / 256.0 + 1e-7, "{err}");
    }

    #[test]
    fn freq_drop_removes_a_tone() {
        use std::f64::consts::PI;
        let n = 16000;
        let x: Vec<f32> = (0..n)
            .map(|i| {
                let t = i as f64 / 16000.0;
                ((2.0 * PI * 1000.0 * t).sin() + (2.0 * PI * 3000.0 * t).sin()) as f32
            })
            .collect();
        let y = freq_drop(&x, 16000, 2500.0, 3500.0);
        let want: Vec<f32> = (0..n).map(|i| (2.0 * PI * 1000.0 * i as f64 / 16000.0).sin() as f32).collect();
        let err = y.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn frame_drop_zeroes_segments() {
        let y = frame_drop(&[1.0; 10], &[(2, 3), (8, 5)]);
        assert_eq!(y, vec![1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn speed_perturbation_resamples_linearly() {
        let x: Vec<f32> = (0..100).map(|i| i as f32).collect();
        let fast = speed_perturb(&x, 1.1);
        assert_eq!(fast.len(), 100);
        assert!((fast[10] - 11.0).abs() < 1e-4);
        let slow = speed_perturb(&x, 0.9);
        assert!((slow[10] - 9.0).abs() < 1e-4);
    }

    proptest! {
        #[test]
        fn every_augmentation_preserves_length(len in 1usize..6000, seed in any::<u64>()) {
            let w = noise(len, seed);
            let (out, _) = augment(&w, &mut ChaCha8Rng::seed_from_u64(seed), &AugmentConfig::uniform(1.0));
            prop_assert_eq!(out.len(), len);
            prop_assert!(out.samples.iter().all(|v| v.is_finite()));
        }
    }
}
