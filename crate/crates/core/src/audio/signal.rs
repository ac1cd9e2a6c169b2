use crate::error::{Error, Result};

/// The only sample rate the engine accepts.
pub const SAMPLE_RATE: u32 = 16_000;

/// Mono 16 kHz waveform with finite samples.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Signal {
    samples: Vec<f32>,
}

impl Signal {
    pub fn new(samples: Vec<f32>) -> Result<Self> {
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteSample(i));
        }
        Ok(Self { samples })
    }

    pub fn with_rate(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate != SAMPLE_RATE {
            return Err(Error::UnsupportedSampleRate(sample_rate));
        }
        Self::new(samples)
    }

    pub fn zeros(len: usize) -> Self {
        Self { samples: vec![0.0; len] }
    }

    pub fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / SAMPLE_RATE as f64
    }

    /// Sum of squares, accumulated in `f64`.
    pub fn energy(&self) -> f64 {
        energy(&self.samples)
    }

    pub fn scaled(&self, gain: f32) -> Self {
        Self {
            samples: self.samples.iter().map(|v| v * gain).collect(),
        }
    }
}

pub fn energy(x: &[f32]) -> f64 {
    x.iter().map(|&v| (v as f64) * (v as f64)).sum()
}
