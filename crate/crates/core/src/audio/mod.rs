//! Waveform I/O, synthetic signals, reverberation and SNR-controlled mixing.

mod mix;
mod signal;
mod synth;
mod wav;

pub use mix::{convolve_rir, mix_at_snr, synthetic_rir, MixSpec, TRAIN_SNR_RANGE_DB};
pub use signal::{energy, Signal, SAMPLE_RATE};
pub use synth::{gen_synthetic, SynthKind};
pub use wav::{read_wav, write_wav, write_wav_float};
