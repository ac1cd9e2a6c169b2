use std::time::Instant;

use serde::Serialize;

use super::{StreamState, HOP};
use crate::audio::{gen_synthetic, SynthKind};
use crate::error::{Error, Result};
use crate::model::{flops_per_frame, ModelWeights, FRAMES_PER_SECOND};

/// Compute figure quoted for the full-size model, in GFLOP/s.
pub const REFERENCE_GFLOPS: f64 = 7.45;
pub const MIN_BENCH_SECONDS: f64 = 10.0;
const HOP_MS: f64 = 12.5;

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub frames: usize,
    pub threads: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p99_ms: f64,
    /// Mean per-frame time over the 12.5 ms hop.
    pub rtf: f64,
    pub flops_per_frame: u64,
    /// Analytic FLOPs per frame at 80 frames per second.
    pub gflops_per_s: f64,
    pub reference_gflops_per_s: f64,
}

/// Times the streaming path frame by frame on `duration_s` seconds of
/// synthetic speech, with a rayon pool of `threads` workers (0 picks the
/// rayon default).
pub fn bench_rtf(w: &ModelWeights, duration_s: f64, threads: usize) -> Result<BenchReport> {
    if !(duration_s >= MIN_BENCH_SECONDS) || !duration_s.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "benchmark needs at least {MIN_BENCH_SECONDS} s of input, got {duration_s}"
        )));
    }
    let input = gen_synthetic(SynthKind::SpeechLike, duration_s, 0)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let flops = flops_per_frame(w.config())?;
    let mut times = pool.install(|| -> Result<Vec<f64>> {
        let mut st = StreamState::for_weights(w)?;
        let mut times = Vec::new();
        for hop in input.samples().chunks(HOP) {
            let before = st.frames_processed();
            let t0 = Instant::now();
            st.push(hop)?;
            let dt = t0.elapsed().as_secs_f64() * 1e3;
            if st.frames_processed() > before {
                times.push(dt);
            }
        }
        Ok(times)
    })?;
    if times.is_empty() {
        return Err(Error::InvalidArgument("no complete frame in the benchmark input".into()));
    }
    let frames = times.len();
    let mean_ms = times.iter().sum::<f64>() / frames as f64;
    times.sort_by(f64::total_cmp);
    let pick = |q: f64| times[((q * (frames - 1) as f64).round() as usize).min(frames - 1)];
    Ok(BenchReport {
        frames,
        threads: pool.current_num_threads(),
        mean_ms,
        median_ms: pick(0.5),
        p99_ms: pick(0.99),
        rtf: mean_ms / HOP_MS,
        flops_per_frame: flops.total,
        gflops_per_s: flops.total as f64 * FRAMES_PER_SECOND / 1e9,
        reference_gflops_per_s: REFERENCE_GFLOPS,
    })
}
