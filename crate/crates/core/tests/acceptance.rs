//! One PASS/FAIL line per acceptance criterion. Exits non-zero if any fail.

mod common;

use std::time::{Duration, Instant};

use common::*;
use dpcrn::audio::{gen_synthetic, mix_at_snr, MixSpec, SynthKind};
use dpcrn::model::{apply_mask, flops_per_frame, CrmMask, ModelConfig, ModelWeights};
use dpcrn::stft::{Spectrogram, Stft, StftConfig};
use dpcrn::stream::{bench_rtf, StreamState, LATENCY_SAMPLES};
use dpcrn::train::{breakdown, gradcheck, loss_neg_snr, loss_snr_mse, metric_si_snr, metric_snr, train_toy, ToyConfig};
use realfft::num_complex::Complex32;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STFT_PR_TOL: f64 = 1e-6;
const STFT_BUDGET: Duration = Duration::from_secs(1);
const CAUSALITY_TRIALS: usize = 50;
const CAUSALITY_BUDGET: Duration = Duration::from_secs(30);
const STREAM_TRIALS: usize = 30;
const STREAM_TOL: f64 = 1e-5;
const STREAM_BUDGET: Duration = Duration::from_secs(120);
const GRAD_BUDGET: Duration = Duration::from_secs(300);
const PARAM_RANGE: (usize, usize) = (700_000, 900_000);
const PARAM_FROZEN: usize = 803_750;
const DPRNN_FREQ: usize = 50;
const LOSS_CASES: usize = 1000;
const LOSS_TOL: f64 = 1e-9;
const LOSS_BUDGET: Duration = Duration::from_secs(10);
const MASK_BINS: usize = 1_000_000;
const TOY_STEPS: usize = 200;
const TOY_MIN_DB: f64 = 5.0;
const TOY_TAIL: usize = 10;
const TOY_BUDGET: Duration = Duration::from_secs(600);
const MIXER_TOL_DB: f64 = 1e-6;
const GFLOPS_RANGE: (f64, f64) = (5.0, 10.0);
const BENCH_SECONDS: f64 = 10.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn timed(f: impl FnOnce() -> Outcome) -> (Outcome, Duration) {
    let t = Instant::now();
    let o = f();
    (o, t.elapsed())
}

fn stft_perfect_reconstruction() -> Outcome {
    let stft = Stft::<f32>::new(StftConfig::default()).unwrap();
    let mut worst = 0.0f64;
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f32> = (0..16_000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let spec = stft.analyze(&x).unwrap();
        let m = CrmMask::ones(spec.frames, spec.bins);
        let y = stft.synthesize(&apply_mask(&spec, &m).unwrap()).unwrap();
        let r = WIN..x.len() - WIN;
        let err: f64 = r.clone().map(|n| (y[n] as f64 - x[n] as f64).powi(2)).sum();
        let sig: f64 = r.map(|n| (x[n] as f64).powi(2)).sum();
        worst = worst.max((err / sig).sqrt());
    }
    Outcome { pass: worst <= STFT_PR_TOL, detail: format!("worst relative RMS {worst:.2e} over 10 x 1 s (tol {STFT_PR_TOL:e})") }
}

fn causality() -> Outcome {
    let mut bad = Vec::new();
    for i in 0..CAUSALITY_TRIALS {
        let t = causality_trial(i);
        if !(t.mask_identical && t.output_identical) {
            bad.push(i);
        }
    }
    Outcome { pass: bad.is_empty(), detail: format!("{CAUSALITY_TRIALS} triples, bit-identical, failing trials {bad:?}") }
}

fn streaming() -> Outcome {
    let worst = (0..STREAM_TRIALS).map(streaming_trial).fold(0.0, f64::max);
    Outcome { pass: worst <= STREAM_TOL, detail: format!("{STREAM_TRIALS} x 3 s, max relative deviation {worst:.2e} (tol {STREAM_TOL:e})") }
}

fn latency() -> Outcome {
    let w = ModelWeights::build(&ModelConfig::default(), 0).unwrap();
    let mut st = StreamState::for_weights(&w).unwrap();
    let x = noisy_input(0.05, 0);
    let mut first = None;
    for (k, &v) in x.iter().enumerate() {
        let out = st.push(&[v]).unwrap();
        if !out.is_empty() {
            first = Some((k + 1, out.len()));
            break;
        }
    }
    Outcome {
        pass: first == Some((LATENCY_SAMPLES, HOP)),
        detail: format!("first output (after samples, length) = {first:?}, required ({LATENCY_SAMPLES}, {HOP})"),
    }
}

fn gradients() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for st in all_layer_grads() {
        pass &= st.fraction() >= GRAD_MIN_FRACTION;
        parts.push(format!("{} {}/{}", st.name, st.passed, st.coords));
    }
    for seed in [0, 1] {
        let r = gradcheck(&ModelConfig::gradcheck(), seed).unwrap();
        pass &= r.params <= 2000 && r.passed();
        parts.push(format!("end-to-end seed {seed} ({} params) {:.2}%", r.params, 100.0 * r.pass_fraction));
    }
    Outcome { pass, detail: parts.join("; ") }
}

fn param_budget() -> Outcome {
    let cfg = ModelConfig::default();
    let n = ModelWeights::build(&cfg, 0).unwrap().param_count();
    let f = cfg.dprnn_freq().unwrap();
    Outcome {
        pass: (PARAM_RANGE.0..=PARAM_RANGE.1).contains(&n) && n == PARAM_FROZEN && f == DPRNN_FREQ,
        detail: format!("{n} parameters (frozen {PARAM_FROZEN}, intra hidden 64 per direction), DPRNN frequency {f}"),
    }
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn loss_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    let mut note = |v: f64| worst = worst.max(if v.is_nan() { f64::INFINITY } else { v });
    for _ in 0..LOSS_CASES {
        let n = rng.gen_range(16..512);
        let s = rand_vec(&mut rng, n);
        let noise = rand_vec(&mut rng, n);
        let eps = rng.gen_range(0.01..2.0);
        let s_hat: Vec<f64> = s.iter().zip(&noise).map(|(a, b)| a + eps * b).collect();
        let (frames, bins) = (rng.gen_range(1..6), rng.gen_range(1..20));
        let spec = |rng: &mut ChaCha8Rng| {
            Spectrogram::new(frames, bins, rand_vec(rng, frames * bins), rand_vec(rng, frames * bins)).unwrap()
        };
        let (clean, est) = (spec(&mut rng), spec(&mut rng));

        // negative SNR against a direct evaluation, and the metric duality
        let es: f64 = s.iter().map(|v| v * v).sum();
        let er: f64 = s.iter().zip(&s_hat).map(|(a, b)| (a - b).powi(2)).sum();
        let neg = loss_neg_snr(&s, &s_hat).unwrap();
        note((neg - (-10.0 * (es / er).log10())).abs());
        note((neg + metric_snr(&s, &s_hat).unwrap()).abs());

        // the combined loss decomposes into its two terms
        let b = loss_snr_mse(&s, &s_hat, &clean, &est).unwrap();
        let m = clean.real.len() as f64;
        let (mut mr, mut mi, mut mm) = (0.0, 0.0, 0.0);
        for k in 0..clean.real.len() {
            mr += (clean.real[k] - est.real[k]).powi(2);
            mi += (clean.imag[k] - est.imag[k]).powi(2);
            mm += (clean.real[k].hypot(clean.imag[k]) - est.real[k].hypot(est.imag[k])).powi(2);
        }
        note((b.neg_snr - neg).abs());
        note((b.log_mse_term - ((mr + mi + mm) / m).ln()).abs());
        note((b.total - (b.neg_snr + b.log_mse_term)).abs());
        let plain = breakdown(false, &s, &s_hat, &clean, &est).unwrap();
        note((plain.total - neg).abs());

        // SI-SNR is the SNR against the projected reference and ignores gain
        let si = metric_si_snr(&s, &s_hat).unwrap();
        let alpha = s.iter().zip(&s_hat).map(|(a, b)| a * b).sum::<f64>() / es;
        let proj: Vec<f64> = s.iter().map(|v| alpha * v).collect();
        note((si - metric_snr(&proj, &s_hat).unwrap()).abs());
        let g = rng.gen_range(0.1..10.0) * if rng.gen() { 1.0 } else { -1.0 };
        let scaled: Vec<f64> = s_hat.iter().map(|v| g * v).collect();
        note((metric_si_snr(&s, &scaled).unwrap() - si).abs());

        // with noise orthogonal to the reference the two metrics coincide
        let dot = s.iter().zip(&noise).map(|(a, b)| a * b).sum::<f64>() / es;
        let orth: Vec<f64> = s.iter().zip(&noise).map(|(a, b)| a + eps * (b - dot * a)).collect();
        note((metric_si_snr(&s, &orth).unwrap() - metric_snr(&s, &orth).unwrap()).abs());
    }
    Outcome { pass: worst <= LOSS_TOL, detail: format!("{LOSS_CASES} cases, worst identity gap {worst:.2e} (tol {LOSS_TOL:e})") }
}

fn mask_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (frames, bins) = (MASK_BINS / 200, 200);
    let mut v = |scale: f32| (0..MASK_BINS).map(|_| rng.gen_range(-scale..scale)).collect::<Vec<f32>>();
    let x = Spectrogram::new(frames, bins, v(100.0), v(100.0)).unwrap();
    let m = CrmMask { frames, bins, real: v(4.0), imag: v(4.0) };
    let y = apply_mask(&x, &m).unwrap();
    let mismatches = (0..MASK_BINS)
        .filter(|&k| {
            let p = Complex32::new(x.real[k], x.imag[k]) * Complex32::new(m.real[k], m.imag[k]);
            p.re.to_bits() != y.real[k].to_bits() || p.im.to_bits() != y.imag[k].to_bits()
        })
        .count();
    Outcome { pass: mismatches == 0, detail: format!("{MASK_BINS} bins, {mismatches} differ from complex multiplication") }
}

fn toy_training() -> Outcome {
    let cfg = ToyConfig::default();
    let a = train_toy(&cfg, TOY_STEPS, 0).unwrap();
    let b = train_toy(&cfg, TOY_STEPS, 0).unwrap();
    let gain = a.improvement_db(TOY_TAIL);
    let same = a.curve == b.curve && a.weights.checksum() == b.weights.checksum();
    Outcome {
        pass: gain >= TOY_MIN_DB && same && a.curve.len() == TOY_STEPS,
        detail: format!(
            "negative SNR {:.2} -> {:.2} dB (last {TOY_TAIL} mean), improvement {gain:.2} dB (min {TOY_MIN_DB}), repeat identical: {same}",
            a.curve[0].neg_snr,
            a.curve[0].neg_snr - gain
        ),
    }
}

fn mixer() -> Outcome {
    let mut worst = 0.0f64;
    for snr_db in [-5.0, 0.0, 5.0] {
        for seed in 0..20 {
            let s = gen_synthetic(SynthKind::SpeechLike, 1.0, seed).unwrap();
            let n = gen_synthetic(SynthKind::WhiteNoise, 2.0, seed + 100).unwrap();
            let (_, noise) = mix_at_snr(&s, &n, MixSpec { snr_db, seed }).unwrap();
            let measured = 10.0 * (s.energy() / noise.energy()).log10();
            worst = worst.max((measured - snr_db).abs());
        }
    }
    Outcome { pass: worst <= MIXER_TOL_DB, detail: format!("SNR in {{-5, 0, 5}} dB x 20 seeds, worst error {worst:.2e} dB (tol {MIXER_TOL_DB:e})") }
}

fn bench_sanity() -> Outcome {
    let cfg = ModelConfig::default();
    let w = ModelWeights::build(&cfg, 0).unwrap();
    let r = bench_rtf(&w, BENCH_SECONDS, 1).unwrap();
    let analytic = flops_per_frame(&cfg).unwrap().gflops_per_second();
    Outcome {
        pass: (GFLOPS_RANGE.0..=GFLOPS_RANGE.1).contains(&r.gflops_per_s) && r.gflops_per_s == analytic,
        detail: format!(
            "{:.3} GFLOP/s analytic (range {:?}); informational: {:.2} ms/frame, RTF {:.2}",
            r.gflops_per_s, GFLOPS_RANGE, r.mean_ms, r.rtf
        ),
    }
}

fn main() {
    type Check = (&'static str, fn() -> Outcome, Option<Duration>);
    let checks: [Check; 11] = [
        ("stft perfect reconstruction", stft_perfect_reconstruction, Some(STFT_BUDGET)),
        ("end-to-end causality", causality, Some(CAUSALITY_BUDGET)),
        ("streaming equals offline", streaming, Some(STREAM_BUDGET)),
        ("latency 600 samples", latency, None),
        ("gradient correctness", gradients, Some(GRAD_BUDGET)),
        ("parameter budget", param_budget, None),
        ("loss identities", loss_identities, Some(LOSS_BUDGET)),
        ("mask algebra", mask_algebra, None),
        ("toy training efficacy", toy_training, Some(TOY_BUDGET)),
        ("mixer exactness", mixer, None),
        ("benchmark flops", bench_sanity, None),
    ];
    let mut failed = 0;
    for (i, (name, f, budget)) in checks.into_iter().enumerate() {
        let (o, took) = timed(f);
        let in_time = budget.is_none_or(|b| took <= b);
        let pass = o.pass && in_time;
        if !pass {
            failed += 1;
        }
        let limit = budget.map_or(String::new(), |b| format!(" / {:.0} s", b.as_secs_f64()));
        println!(
            "{} {:>2} {name}: {} [{:.2} s{limit}]",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail,
            took.as_secs_f64()
        );
    }
    if failed > 0 {
        eprintln!("{failed} criteria failed");
        std::process::exit(1);
    }
}
