//! Offline and streaming enhancement of a noisy signal with a saved model.
//!
//!     cargo run --release --example enhance -- [weights.dpcw]
//!
//! Without a weight file a toy model is trained for a few seconds first.

use dpcrn::audio::{gen_synthetic, mix_at_snr, MixSpec, SynthKind};
use dpcrn::model::{enhance_offline, load_weights, save_weights};
use dpcrn::stream::enhance_streaming;
use dpcrn::train::{metric_si_snr, metric_snr, train_toy, ToyConfig};

fn main() -> dpcrn::Result<()> {
    let w = match std::env::args().nth(1) {
        Some(p) => load_weights(p)?,
        None => {
            let w = train_toy(&ToyConfig::default(), 60, 1)?.weights;
            let path = std::env::temp_dir().join("dpcrn_toy.dpcw");
            save_weights(&w, &path)?;
            println!("trained toy model saved to {}", path.display());
            w
        }
    };
    println!("{} parameters, variant {}", w.param_count(), w.config().variant.name());

    let tone = gen_synthetic(SynthKind::Tone { freq_hz: 880.0 }, 2.0, 3)?;
    let noise = gen_synthetic(SynthKind::WhiteNoise, 2.0, 4)?;
    let (noisy, _) = mix_at_snr(&tone, &noise, MixSpec { snr_db: 0.0, seed: 5 })?;

    let offline = enhance_offline(&w, &noisy)?;
    let streamed = enhance_streaming(&w, noisy.samples(), 160)?;
    let n = offline.len();
    let clean = &tone.samples()[..n];
    println!("noisy     snr {:6.2} dB  si-snr {:6.2} dB", metric_snr(clean, &noisy.samples()[..n])?, metric_si_snr(clean, &noisy.samples()[..n])?);
    println!("enhanced  snr {:6.2} dB  si-snr {:6.2} dB", metric_snr(clean, offline.samples())?, metric_si_snr(clean, offline.samples())?);
    let same = streamed[..n - 200] == offline.samples()[..n - 200];
    println!("streaming output identical to offline over the common region: {same}");
    Ok(())
}
