//! Analysis and overlap-add synthesis with the sine window.
//!
//!     cargo run --release --example stft_roundtrip

use dpcrn::audio::{gen_synthetic, SynthKind};
use dpcrn::stft::{analyze, synthesize, StftConfig};

fn main() -> dpcrn::Result<()> {
    let cfg = StftConfig::default();
    let x = gen_synthetic(SynthKind::Chirp { f0_hz: 100.0, f1_hz: 6000.0 }, 1.0, 0)?;
    let spec = analyze(&x, &cfg)?;
    println!("{} samples -> {} frames x {} bins", x.len(), spec.frames, spec.bins);

    let y = synthesize(&spec, &cfg)?;
    // the first and last hop are covered by a single window
    let edge = cfg.win_len;
    let (a, b) = (&x.samples()[edge..y.len() - edge], &y.samples()[edge..y.len() - edge]);
    let err: f64 = a.iter().zip(b).map(|(p, q)| (*p as f64 - *q as f64).powi(2)).sum();
    let sig: f64 = a.iter().map(|p| (*p as f64).powi(2)).sum();
    println!("interior relative rms error {:.2e}", (err / sig).sqrt());
    println!("synthesized {} of {} samples", y.len(), x.len());
    Ok(())
}
