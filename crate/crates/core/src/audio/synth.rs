use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::signal::{Signal, SAMPLE_RATE};
use crate::error::{Error, Result};

/// Synthetic signal families used in place of speech and noise corpora.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SynthKind {
    /// Pure sine at `freq_hz`, amplitude 0.5.
    Tone { freq_hz: f64 },
    /// Linear sweep from `f0_hz` to `f1_hz`, amplitude 0.5.
    Chirp { f0_hz: f64, f1_hz: f64 },
    /// Gaussian noise with standard deviation 0.1.
    WhiteNoise,
    /// Drifting fundamental with eight harmonics under a syllabic envelope.
    SpeechLike,
}

pub const WHITE_NOISE_STD: f64 = 0.1;

/// Deterministic for a fixed `(kind, duration_s, seed)`.
pub fn gen_synthetic(kind: SynthKind, duration_s: f64, seed: u64) -> Result<Signal> {
    if !(duration_s > 0.0) || !duration_s.is_finite() {
        return Err(Error::InvalidArgument(format!("duration {duration_s} s must be positive")));
    }
    let n = (duration_s * SAMPLE_RATE as f64).round() as usize;
    let sr = SAMPLE_RATE as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<f32> = match kind {
        SynthKind::Tone { freq_hz } => {
            let phase = rng.gen_range(0.0..2.0 * PI);
            (0..n)
                .map(|i| (0.5 * (2.0 * PI * freq_hz * i as f64 / sr + phase).sin()) as f32)
                .collect()
        }
        SynthKind::Chirp { f0_hz, f1_hz } => {
            let k = (f1_hz - f0_hz) / duration_s;
            (0..n)
                .map(|i| {
                    let t = i as f64 / sr;
                    (0.5 * (2.0 * PI * (f0_hz * t + 0.5 * k * t * t)).sin()) as f32
                })
                .collect()
        }
        SynthKind::WhiteNoise => {
            let dist = Normal::new(0.0, WHITE_NOISE_STD).expect("valid normal");
            (0..n).map(|_| dist.sample(&mut rng) as f32).collect()
        }
        SynthKind::SpeechLike => speech_like(n, &mut rng),
    };
    Signal::new(samples)
}

fn speech_like(n: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let sr = SAMPLE_RATE as f64;
    let mut f0: f64 = rng.gen_range(100.0..220.0);
    let syllable_hz = rng.gen_range(3.0..5.0);
    let env_phase = rng.gen_range(0.0..2.0 * PI);
    let step = Normal::new(0.0, 0.05).expect("valid normal");
    let mut phase = 0.0f64;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        // bounded random walk of the fundamental
        f0 = (f0 + step.sample(rng)).clamp(80.0, 260.0);
        phase += 2.0 * PI * f0 / sr;
        let t = i as f64 / sr;
        let env = 0.15 + 0.85 * (PI * syllable_hz * t + env_phase).sin().powi(2);
        let mut v = 0.0;
        for h in 1..=8 {
            v += (h as f64 * phase).sin() / h as f64;
        }
        out.push((0.2 * env * v) as f32);
    }
    out
}
