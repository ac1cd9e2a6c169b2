use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use realfft::RealFftPlanner;

use super::signal::{energy, Signal, SAMPLE_RATE};
use crate::error::{Error, Result};

/// Default SNR sampling interval for training mixtures, in dB.
pub const TRAIN_SNR_RANGE_DB: (f64, f64) = (-5.0, 5.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixSpec {
    pub snr_db: f64,
    /// Selects the noise segment when the noise is longer than the speech.
    pub seed: u64,
}

impl MixSpec {
    /// SNR drawn uniformly from [`TRAIN_SNR_RANGE_DB`].
    pub fn sample(rng: &mut impl Rng) -> Self {
        Self {
            snr_db: rng.gen_range(TRAIN_SNR_RANGE_DB.0..=TRAIN_SNR_RANGE_DB.1),
            seed: rng.gen(),
        }
    }
}

/// Scales a segment of `noise` so that `speech` sits exactly `snr_db` above
/// it and returns `(speech + scaled_noise, scaled_noise)`.
pub fn mix_at_snr(speech: &Signal, noise: &Signal, spec: MixSpec) -> Result<(Signal, Signal)> {
    if !spec.snr_db.is_finite() {
        return Err(Error::InvalidArgument(format!("SNR {} dB is not finite", spec.snr_db)));
    }
    if noise.len() < speech.len() {
        return Err(Error::InvalidArgument(format!(
            "noise of {} samples is shorter than speech of {}",
            noise.len(),
            speech.len()
        )));
    }
    let es = speech.energy();
    if es <= 0.0 {
        return Err(Error::DegenerateMix("speech has zero energy"));
    }
    let offset = ChaCha8Rng::seed_from_u64(spec.seed).gen_range(0..=noise.len() - speech.len());
    let seg = &noise.samples()[offset..offset + speech.len()];
    let en = energy(seg);
    if en <= 0.0 {
        return Err(Error::DegenerateMix("noise segment has zero energy"));
    }
    let gain = (es / (en * 10f64.powf(spec.snr_db / 10.0))).sqrt();
    let scaled: Vec<f32> = seg.iter().map(|&v| (v as f64 * gain) as f32).collect();
    let mixture: Vec<f32> = speech.samples().iter().zip(&scaled).map(|(&s, &n)| s + n).collect();
    Ok((Signal::new(mixture)?, Signal::new(scaled)?))
}

/// Linear convolution with a room impulse response, truncated to the
/// length of `speech` so the output stays sample-aligned with it.
pub fn convolve_rir(speech: &Signal, rir: &Signal) -> Result<Signal> {
    if rir.is_empty() {
        return Err(Error::InvalidArgument("empty impulse response".into()));
    }
    if speech.is_empty() {
        return Ok(Signal::default());
    }
    let n = speech.len();
    let full = n + rir.len() - 1;
    let size = full.next_power_of_two();
    let mut planner = RealFftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let spectrum = |x: &[f32]| {
        let mut buf = vec![0.0f64; size];
        buf.iter_mut().zip(x).for_each(|(b, &v)| *b = v as f64);
        let mut out = fwd.make_output_vec();
        fwd.process(&mut buf, &mut out).expect("planned FFT");
        out
    };
    let a = spectrum(speech.samples());
    let b = spectrum(rir.samples());
    let mut prod: Vec<_> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
    prod[0].im = 0.0;
    prod[size / 2].im = 0.0;
    let mut time = inv.make_output_vec();
    inv.process(&mut prod, &mut time).expect("planned FFT");
    let scale = 1.0 / size as f64;
    Signal::new(time[..n].iter().map(|&v| (v * scale) as f32).collect())
}

/// Exponentially decaying Gaussian impulse response with a unit direct path
/// and a tail of about unit expected energy (direct-to-reverberant ratio
/// near 0 dB).
pub fn synthetic_rir(rt60_s: f64, len: usize, seed: u64) -> Result<Signal> {
    if len == 0 || !(rt60_s > 0.0) {
        return Err(Error::InvalidArgument("RIR needs a positive length and RT60".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // 60 dB amplitude decay over rt60: exp(-6.91 t / rt60)
    let decay = 6.91 / (rt60_s * SAMPLE_RATE as f64);
    // sum of exp(-2 decay k) is about 1 / (2 decay)
    let tail = Normal::new(0.0, (2.0 * decay).sqrt()).expect("valid normal");
    let h = (0..len)
        .map(|k| {
            if k == 0 {
                1.0
            } else {
                (tail.sample(&mut rng) * (-decay * k as f64).exp()) as f32
            }
        })
        .collect();
    Signal::new(h)
}
