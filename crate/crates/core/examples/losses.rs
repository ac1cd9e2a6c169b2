//! Training loss terms and evaluation metrics on a scaled estimate.
//!
//!     cargo run --release --example losses

use dpcrn::audio::{gen_synthetic, SynthKind};
use dpcrn::stft::{Stft, StftConfig};
use dpcrn::train::{breakdown, metric_si_snr, metric_snr};

fn main() -> dpcrn::Result<()> {
    let stft = Stft::<f64>::new(StftConfig::default())?;
    let x: Vec<f64> = gen_synthetic(SynthKind::SpeechLike, 1.0, 2)?.samples().iter().map(|&v| v as f64).collect();
    let target = stft.analyze(&x)?;
    // a reference consistent with its own spectrogram, so gain 1 is exact
    let s = &stft.synthesize(&target)?;
    for gain in [1.0, 0.99, 0.5, -1.0] {
        let mut est = target.clone();
        est.scale(gain);
        let s_hat = stft.synthesize(&est)?;
        let b = breakdown(true, s, &s_hat, &target, &est)?;
        println!(
            "gain {gain:+.2}: snr {:7.2} dB  si-snr {:7.2} dB  -snr {:7.2}  log-mse {:7.3}  total {:7.3}",
            metric_snr(s, &s_hat)?,
            metric_si_snr(s, &s_hat)?,
            b.neg_snr,
            b.log_mse_term,
            b.total
        );
    }
    Ok(())
}
