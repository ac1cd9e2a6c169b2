//! Signal-approximation losses and evaluation metrics.
//!
//! Losses are accumulated in `f64` whatever the sample type, and gradients
//! are returned in the sample type.

use std::f64::consts::LN_10;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::nn::Real;
use crate::stft::Spectrogram;

/// Magnitude of the dB value returned for a (near) perfect estimate.
pub const SNR_CAP_DB: f64 = 100.0;
/// Residual-to-reference energy ratio below which an estimate is perfect.
pub const PERFECT_RATIO: f64 = 1e-12;
/// Lower clamp of the log-MSE argument.
pub const LOG_MSE_FLOOR: f64 = 1e-12;

fn energies<T: Real>(s: &[T], s_hat: &[T]) -> Result<(f64, f64)> {
    if s.len() != s_hat.len() {
        return Err(Error::ShapeMismatch(format!(
            "reference has {} samples, estimate {}",
            s.len(),
            s_hat.len()
        )));
    }
    let es: f64 = s.iter().map(|v| v.as_f64() * v.as_f64()).sum();
    if !(es > 0.0) {
        return Err(Error::InvalidArgument("reference signal has zero energy".into()));
    }
    let er: f64 = s.iter().zip(s_hat).map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2)).sum();
    Ok((es, er))
}

/// `-10 log10(sum s^2 / sum (s - s_hat)^2)`, capped at `-SNR_CAP_DB` when
/// the residual energy drops below `PERFECT_RATIO * sum s^2`.
pub fn loss_neg_snr<T: Real>(s: &[T], s_hat: &[T]) -> Result<f64> {
    let (es, er) = energies(s, s_hat)?;
    if er < PERFECT_RATIO * es {
        return Ok(-SNR_CAP_DB);
    }
    Ok(-10.0 * (es / er).log10())
}

/// Negative SNR and its gradient with respect to `s_hat`.
pub fn neg_snr_grad<T: Real>(s: &[T], s_hat: &[T]) -> Result<(f64, Vec<T>)> {
    let (es, er) = energies(s, s_hat)?;
    if er < PERFECT_RATIO * es {
        return Ok((-SNR_CAP_DB, vec![T::zero(); s.len()]));
    }
    let k = 20.0 / (LN_10 * er);
    let g = s.iter().zip(s_hat).map(|(a, b)| T::of(k * (b.as_f64() - a.as_f64()))).collect();
    Ok((-10.0 * (es / er).log10(), g))
}

pub fn metric_snr<T: Real>(s: &[T], s_hat: &[T]) -> Result<f64> {
    Ok(-loss_neg_snr(s, s_hat)?)
}

/// Scale-invariant SNR: `s_hat` is first projected onto `s`. Clamped to
/// `[-SNR_CAP_DB, SNR_CAP_DB]`.
pub fn metric_si_snr<T: Real>(s: &[T], s_hat: &[T]) -> Result<f64> {
    let (es, _) = energies(s, s_hat)?;
    let eh: f64 = s_hat.iter().map(|v| v.as_f64().powi(2)).sum();
    if !(eh > 0.0) {
        return Err(Error::InvalidArgument("estimate has zero energy".into()));
    }
    let dot: f64 = s.iter().zip(s_hat).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
    let alpha = dot / es;
    let target = alpha * alpha * es;
    let noise: f64 = s.iter().zip(s_hat).map(|(a, b)| (b.as_f64() - alpha * a.as_f64()).powi(2)).sum();
    if noise < PERFECT_RATIO * target {
        return Ok(SNR_CAP_DB);
    }
    if target == 0.0 {
        return Ok(-SNR_CAP_DB);
    }
    Ok((10.0 * (target / noise).log10()).clamp(-SNR_CAP_DB, SNR_CAP_DB))
}

/// Components of the training loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub neg_snr: f64,
    pub mse_real: f64,
    pub mse_imag: f64,
    pub mse_mag: f64,
    /// `ln(max(mse_real + mse_imag + mse_mag, LOG_MSE_FLOOR))`
    pub log_mse_term: f64,
    /// `neg_snr`, plus `log_mse_term` when the log-MSE term is enabled.
    pub total: f64,
}

fn check_specs<T: Real>(a: &Spectrogram<T>, b: &Spectrogram<T>) -> Result<()> {
    if a.frames != b.frames || a.bins != b.bins || a.real.len() != b.real.len() {
        return Err(Error::ShapeMismatch(format!(
            "spectrograms {}x{} and {}x{}",
            a.frames, a.bins, b.frames, b.bins
        )));
    }
    if a.real.is_empty() {
        return Err(Error::InvalidArgument("empty spectrogram".into()));
    }
    Ok(())
}

fn spectral_mse<T: Real>(clean: &Spectrogram<T>, est: &Spectrogram<T>) -> (f64, f64, f64) {
    let n = clean.real.len() as f64;
    let (mut r, mut i, mut m) = (0.0, 0.0, 0.0);
    for k in 0..clean.real.len() {
        let (cr, ci) = (clean.real[k].as_f64(), clean.imag[k].as_f64());
        let (er, ei) = (est.real[k].as_f64(), est.imag[k].as_f64());
        r += (cr - er).powi(2);
        i += (ci - ei).powi(2);
        m += (cr.hypot(ci) - er.hypot(ei)).powi(2);
    }
    (r / n, i / n, m / n)
}

/// Negative SNR plus the log of the summed real, imaginary and magnitude
/// spectral MSEs (means over all bins, natural log).
pub fn loss_snr_mse<T: Real>(s: &[T], s_hat: &[T], clean: &Spectrogram<T>, est: &Spectrogram<T>) -> Result<LossBreakdown> {
    breakdown(true, s, s_hat, clean, est)
}

/// Loss of a configured objective; `with_log_mse` selects whether the
/// log-MSE term enters the total.
pub fn breakdown<T: Real>(
    with_log_mse: bool,
    s: &[T],
    s_hat: &[T],
    clean: &Spectrogram<T>,
    est: &Spectrogram<T>,
) -> Result<LossBreakdown> {
    check_specs(clean, est)?;
    let neg_snr = loss_neg_snr(s, s_hat)?;
    let (mse_real, mse_imag, mse_mag) = spectral_mse(clean, est);
    let log_mse_term = (mse_real + mse_imag + mse_mag).max(LOG_MSE_FLOOR).ln();
    Ok(LossBreakdown {
        neg_snr,
        mse_real,
        mse_imag,
        mse_mag,
        log_mse_term,
        total: if with_log_mse { neg_snr + log_mse_term } else { neg_snr },
    })
}

/// Loss together with its gradients with respect to the estimated waveform
/// and (for the log-MSE term) the estimated spectrogram.
pub fn breakdown_grad<T: Real>(
    with_log_mse: bool,
    s: &[T],
    s_hat: &[T],
    clean: &Spectrogram<T>,
    est: &Spectrogram<T>,
) -> Result<(LossBreakdown, Vec<T>, Spectrogram<T>)> {
    let b = breakdown(with_log_mse, s, s_hat, clean, est)?;
    let (_, d_wave) = neg_snr_grad(s, s_hat)?;
    let mut d_spec = Spectrogram::zeros(est.frames, est.bins);
    let sum = b.mse_real + b.mse_imag + b.mse_mag;
    if with_log_mse && sum > LOG_MSE_FLOOR {
        let k = 2.0 / (sum * clean.real.len() as f64);
        for i in 0..clean.real.len() {
            let (cr, ci) = (clean.real[i].as_f64(), clean.imag[i].as_f64());
            let (er, ei) = (est.real[i].as_f64(), est.imag[i].as_f64());
            let mag = er.hypot(ei);
            // the magnitude term has no gradient at |S_hat| = 0; use zero there
            let pull = if mag > 0.0 { (mag - cr.hypot(ci)) / mag } else { 0.0 };
            d_spec.real[i] = T::of(k * ((er - cr) + pull * er));
            d_spec.imag[i] = T::of(k * ((ei - ci) + pull * ei));
        }
    }
    Ok((b, d_wave, d_spec))
}
