use serde::Serialize;

use super::config::ModelConfig;
use crate::error::Result;

/// Frames per second at a 200-sample hop and 16 kHz.
pub const FRAMES_PER_SECOND: f64 = 80.0;

/// Analytic floating-point operations to process one frame, counting a
/// multiply-accumulate as two operations. Pointwise work (normalization,
/// activations, gate nonlinearities) and the FFTs are not included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlopCount {
    pub encoder: u64,
    pub dprnn: u64,
    pub decoder: u64,
    pub total: u64,
}

impl FlopCount {
    pub fn gflops_per_second(&self) -> f64 {
        self.total as f64 * FRAMES_PER_SECOND / 1e9
    }
}

fn lstm_step(d_in: usize, h: usize) -> u64 {
    2 * (4 * h * (d_in + h)) as u64
}

pub fn flops_per_frame(cfg: &ModelConfig) -> Result<FlopCount> {
    let plan = cfg.plan()?;
    let mut encoder = 0u64;
    let mut decoder = 0u64;
    for l in &plan {
        let taps = (l.c_in * l.kernel.0 * l.kernel.1) as u64;
        encoder += 2 * taps * (l.f_out * l.c_out) as u64;
        // the transposed layer scatters every input element over its taps
        let dec_in = 2 * l.c_out;
        decoder += 2 * (l.f_out * dec_in * l.c_in * l.kernel.0 * l.kernel.1) as u64;
    }
    let f = cfg.dprnn_freq()? as u64;
    let c = cfg.bottleneck_channels();
    let module = f
        * (2 * lstm_step(c, cfg.intra_hidden)
            + 2 * (c * 2 * cfg.intra_hidden) as u64
            + lstm_step(c, cfg.inter_hidden)
            + 2 * (c * cfg.inter_hidden) as u64);
    let dprnn = cfg.n_dprnn as u64 * module;
    Ok(FlopCount {
        encoder,
        dprnn,
        decoder,
        total: encoder + dprnn + decoder,
    })
}
