//! Reverberant speech mixed with noise at controlled SNRs, written as WAV.
//!
//!     cargo run --release --example mix_and_reverb -- [out_dir]

use dpcrn::audio::{convolve_rir, gen_synthetic, mix_at_snr, synthetic_rir, write_wav, MixSpec, SynthKind};
use dpcrn::train::metric_snr;

fn main() -> dpcrn::Result<()> {
    let dir = std::env::args().nth(1).map(Into::into).unwrap_or_else(std::env::temp_dir);
    let speech = gen_synthetic(SynthKind::SpeechLike, 2.0, 7)?;
    let noise = gen_synthetic(SynthKind::WhiteNoise, 3.0, 8)?;
    let rir = synthetic_rir(0.4, 8000, 9)?;
    let wet = convolve_rir(&speech, &rir)?;
    println!("rir rt60 0.4 s, {} taps; reverberant energy {:.1} vs dry {:.1}", rir.len(), wet.energy(), speech.energy());

    for snr_db in [-5.0, 0.0, 5.0] {
        let (mix, scaled) = mix_at_snr(&wet, &noise, MixSpec { snr_db, seed: 1 })?;
        let noise_only: Vec<f32> = mix.samples().iter().zip(wet.samples()).map(|(m, s)| m - s).collect();
        let measured = 10.0 * (wet.energy() / dpcrn::audio::energy(&noise_only)).log10();
        let path = dir.join(format!("mix_{snr_db:+}db.wav"));
        write_wav(&path, &mix)?;
        println!(
            "requested {snr_db:+.1} dB  measured {measured:+.6} dB  input snr {:+.2} dB  -> {}",
            metric_snr(wet.samples(), mix.samples())?,
            path.display()
        );
        debug_assert_eq!(scaled.len(), mix.len());
    }
    Ok(())
}
