use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::signal::{Signal, SAMPLE_RATE};
use crate::error::{Error, Result};

/// Reads a mono 16 kHz PCM16 or float32 RIFF/WAVE file. PCM16 is scaled by
/// `1 / 32768`; float samples pass through unchanged.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Signal> {
    let reader = WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::UnsupportedChannels(spec.channels));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::UnsupportedSampleRate(spec.sample_rate));
    }
    let samples = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<Result<Vec<_>, _>>()?,
        (SampleFormat::Float, 32) => reader.into_samples::<f32>().collect::<Result<Vec<_>, _>>()?,
        (fmt, bits) => {
            return Err(Error::UnsupportedFormat(format!("{bits}-bit {fmt:?}")));
        }
    };
    Signal::new(samples)
}

/// Writes PCM16, clipping to `[-1, 1]` before quantization.
pub fn write_wav(path: impl AsRef<Path>, s: &Signal) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut w = WavWriter::create(path, spec)?;
    for &v in s.samples() {
        let q = (v.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        w.write_sample(q)?;
    }
    w.finalize()?;
    Ok(())
}

/// Writes IEEE float32 samples unchanged.
pub fn write_wav_float(path: impl AsRef<Path>, s: &Signal) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut w = WavWriter::create(path, spec)?;
    for &v in s.samples() {
        w.write_sample(v)?;
    }
    w.finalize()?;
    Ok(())
}
