//! Sine-windowed STFT analysis and overlap-add synthesis.
//!
//! Frame `t` covers samples `[t * hop, t * hop + win_len)` with no centering
//! or leading padding. The forward FFT is unnormalized and the inverse is
//! scaled by `1 / fft_len`. The same window is applied before the forward
//! transform and after the inverse one; at 50% overlap the squared windows
//! sum to one, so analysis followed by synthesis is the identity away from
//! the first and last half-window.

mod dump;

use std::sync::Arc;

use realfft::num_complex::Complex;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};

use crate::audio::Signal;
use crate::error::{Error, Result};
use crate::nn::Real;

pub use dump::{read_dump, write_dump, DUMP_MAGIC};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftConfig {
    pub win_len: usize,
    pub hop: usize,
    pub fft_len: usize,
}

impl Default for StftConfig {
    /// 25 ms window, 12.5 ms hop and a 400-point FFT at 16 kHz.
    fn default() -> Self {
        Self {
            win_len: 400,
            hop: 200,
            fft_len: 400,
        }
    }
}

impl StftConfig {
    pub fn n_bins(&self) -> usize {
        self.fft_len / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.win_len == 0 || self.win_len % 2 != 0 {
            return Err(Error::InvalidConfig(format!("window length {} must be even and positive", self.win_len)));
        }
        if self.hop * 2 != self.win_len {
            return Err(Error::InvalidConfig(format!(
                "hop {} must be half the window {} for sine-window overlap-add",
                self.hop, self.win_len
            )));
        }
        if self.fft_len != self.win_len {
            return Err(Error::InvalidConfig(format!(
                "FFT length {} must equal the window length {}",
                self.fft_len, self.win_len
            )));
        }
        Ok(())
    }

    /// Number of complete frames in `len` samples.
    pub fn frames_for(&self, len: usize) -> usize {
        if len < self.win_len {
            0
        } else {
            (len - self.win_len) / self.hop + 1
        }
    }

    /// Overlap-add output length of `frames` frames.
    pub fn samples_for(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            (frames - 1) * self.hop + self.win_len
        }
    }
}

/// `w[k] = sin(pi * (k + 0.5) / n)`.
pub fn sine_window(n: usize) -> Result<Vec<f64>> {
    if n == 0 || n % 2 != 0 {
        return Err(Error::InvalidArgument(format!("sine window length {n} must be even and positive")));
    }
    let half: Vec<f64> = (0..n / 2)
        .map(|k| (std::f64::consts::PI * (k as f64 + 0.5) / n as f64).sin())
        .collect();
    // mirrored so that w[k] == w[n - 1 - k] holds exactly
    Ok(half.iter().chain(half.iter().rev()).copied().collect())
}

/// Complex time-frequency matrix stored as separate `[frames, bins]` planes.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram<T = f32> {
    pub frames: usize,
    pub bins: usize,
    pub real: Vec<T>,
    pub imag: Vec<T>,
}

impl<T: Real> Spectrogram<T> {
    pub fn zeros(frames: usize, bins: usize) -> Self {
        Self {
            frames,
            bins,
            real: vec![T::zero(); frames * bins],
            imag: vec![T::zero(); frames * bins],
        }
    }

    pub fn new(frames: usize, bins: usize, real: Vec<T>, imag: Vec<T>) -> Result<Self> {
        if real.len() != frames * bins || imag.len() != frames * bins {
            return Err(Error::ShapeMismatch(format!(
                "spectrogram planes of {}/{} values for {frames}x{bins}",
                real.len(),
                imag.len()
            )));
        }
        Ok(Self { frames, bins, real, imag })
    }

    pub fn validate(&self) -> Result<()> {
        if self.real.len() != self.frames * self.bins || self.imag.len() != self.real.len() {
            return Err(Error::ShapeMismatch(format!(
                "malformed spectrogram: {} x {} with planes {}/{}",
                self.frames,
                self.bins,
                self.real.len(),
                self.imag.len()
            )));
        }
        if !self.real.iter().chain(&self.imag).all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("spectrogram holds non-finite values".into()));
        }
        Ok(())
    }

    pub fn scale(&mut self, s: T) {
        self.real.iter_mut().chain(self.imag.iter_mut()).for_each(|v| *v *= s);
    }

    pub fn cast<U: Real>(&self) -> Spectrogram<U> {
        Spectrogram {
            frames: self.frames,
            bins: self.bins,
            real: self.real.iter().map(|v| U::of(v.as_f64())).collect(),
            imag: self.imag.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    /// Frames `[start, end)`.
    pub fn slice_frames(&self, start: usize, end: usize) -> Self {
        let b = self.bins;
        Self {
            frames: end - start,
            bins: b,
            real: self.real[start * b..end * b].to_vec(),
            imag: self.imag[start * b..end * b].to_vec(),
        }
    }
}

/// Planned transforms and window for one [`StftConfig`].
#[derive(Clone)]
pub struct Stft<T: Real> {
    cfg: StftConfig,
    window: Vec<T>,
    forward: Arc<dyn RealToComplex<T>>,
    inverse: Arc<dyn ComplexToReal<T>>,
}

impl<T: Real> std::fmt::Debug for Stft<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft").field("cfg", &self.cfg).finish()
    }
}

impl<T: Real> Stft<T> {
    pub fn new(cfg: StftConfig) -> Result<Self> {
        cfg.validate()?;
        let mut planner = RealFftPlanner::<T>::new();
        Ok(Self {
            cfg,
            window: sine_window(cfg.win_len)?.into_iter().map(T::of).collect(),
            forward: planner.plan_fft_forward(cfg.fft_len),
            inverse: planner.plan_fft_inverse(cfg.fft_len),
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.cfg
    }

    pub fn window(&self) -> &[T] {
        &self.window
    }

    /// Window and transform one `win_len` frame into `bins` real/imag values.
    pub fn analyze_frame(&self, frame: &[T], re: &mut [T], im: &mut [T]) {
        let mut buf: Vec<T> = frame.iter().zip(&self.window).map(|(&x, &w)| x * w).collect();
        let mut spec = self.forward.make_output_vec();
        self.forward
            .process(&mut buf, &mut spec)
            .expect("planned forward FFT sizes are consistent");
        for (k, c) in spec.iter().enumerate() {
            re[k] = c.re;
            im[k] = c.im;
        }
    }

    /// Inverse transform of one frame followed by the synthesis window.
    pub fn synth_frame(&self, re: &[T], im: &[T], out: &mut [T]) {
        let n = self.cfg.fft_len;
        let mut spec: Vec<Complex<T>> = re.iter().zip(im).map(|(&r, &i)| Complex::new(r, i)).collect();
        spec[0].im = T::zero();
        spec[n / 2].im = T::zero();
        let mut buf = self.inverse.make_output_vec();
        self.inverse
            .process(&mut spec, &mut buf)
            .expect("planned inverse FFT sizes are consistent");
        let scale = T::one() / T::of(n as f64);
        for ((o, &x), &w) in out.iter_mut().zip(&buf).zip(&self.window) {
            *o = x * scale * w;
        }
    }

    pub fn analyze(&self, samples: &[T]) -> Result<Spectrogram<T>> {
        let cfg = &self.cfg;
        if samples.len() < cfg.win_len {
            return Err(Error::InvalidArgument(format!(
                "signal of {} samples is shorter than one {}-sample window",
                samples.len(),
                cfg.win_len
            )));
        }
        let frames = cfg.frames_for(samples.len());
        let bins = cfg.n_bins();
        let mut spec = Spectrogram::zeros(frames, bins);
        for t in 0..frames {
            let frame = &samples[t * cfg.hop..t * cfg.hop + cfg.win_len];
            let (re, im) = (
                &mut spec.real[t * bins..(t + 1) * bins],
                &mut spec.imag[t * bins..(t + 1) * bins],
            );
            self.analyze_frame(frame, re, im);
        }
        Ok(spec)
    }

    pub fn synthesize(&self, spec: &Spectrogram<T>) -> Result<Vec<T>> {
        let cfg = &self.cfg;
        if spec.bins != cfg.n_bins() {
            return Err(Error::ShapeMismatch(format!(
                "spectrogram has {} bins, expected {}",
                spec.bins,
                cfg.n_bins()
            )));
        }
        if spec.real.len() != spec.frames * spec.bins || spec.imag.len() != spec.real.len() {
            return Err(Error::ShapeMismatch("malformed spectrogram planes".into()));
        }
        let mut out = vec![T::zero(); cfg.samples_for(spec.frames)];
        let mut frame = vec![T::zero(); cfg.win_len];
        let b = spec.bins;
        for t in 0..spec.frames {
            self.synth_frame(&spec.real[t * b..(t + 1) * b], &spec.imag[t * b..(t + 1) * b], &mut frame);
            for (o, &v) in out[t * cfg.hop..].iter_mut().zip(&frame) {
                *o += v;
            }
        }
        Ok(out)
    }

    /// Gradient of a loss with respect to the spectrogram fed to
    /// [`Stft::synthesize`], given the gradient `grad` with respect to its
    /// output samples.
    pub fn synthesize_backward(&self, grad: &[T], frames: usize) -> Spectrogram<T> {
        let cfg = &self.cfg;
        let n = cfg.fft_len;
        let bins = cfg.n_bins();
        let mut out = Spectrogram::zeros(frames, bins);
        let inv_n = T::one() / T::of(n as f64);
        let two = T::of(2.0);
        let mut buf = vec![T::zero(); n];
        let mut spec = self.forward.make_output_vec();
        for t in 0..frames {
            for k in 0..n {
                let g = grad.get(t * cfg.hop + k).copied().unwrap_or(T::zero());
                buf[k] = g * self.window[k];
            }
            self.forward
                .process(&mut buf, &mut spec)
                .expect("planned forward FFT sizes are consistent");
            for (f, c) in spec.iter().enumerate() {
                let edge = f == 0 || f == n / 2;
                let w = if edge { inv_n } else { two * inv_n };
                out.real[t * bins + f] = w * c.re;
                out.imag[t * bins + f] = if edge { T::zero() } else { w * c.im };
            }
        }
        out
    }
}

/// STFT of a validated signal.
pub fn analyze(s: &Signal, cfg: &StftConfig) -> Result<Spectrogram<f32>> {
    Stft::<f32>::new(*cfg)?.analyze(s.samples())
}

/// Overlap-add reconstruction back to a signal.
pub fn synthesize(spec: &Spectrogram<f32>, cfg: &StftConfig) -> Result<Signal> {
    let samples = Stft::<f32>::new(*cfg)?.synthesize(spec)?;
    Signal::new(samples)
}
