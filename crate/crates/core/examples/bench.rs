//! Streaming real-time factor and analytic compute of the default model.
//!
//!     cargo run --release --example bench -- [seconds] [threads]

use dpcrn::model::{ModelConfig, ModelWeights};
use dpcrn::stream::bench_rtf;

fn main() -> dpcrn::Result<()> {
    let mut args = std::env::args().skip(1);
    let seconds = args.next().and_then(|s| s.parse().ok()).unwrap_or(10.0);
    let threads = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    let w = ModelWeights::build(&ModelConfig::default(), 0)?;
    let r = bench_rtf(&w, seconds, threads)?;
    println!("{}", serde_json::to_string_pretty(&r).expect("report serializes"));
    println!(
        "analytic {:.2} GFLOP/s against {:.2} quoted; {:.2} ms per 12.5 ms hop",
        r.gflops_per_s, r.reference_gflops_per_s, r.mean_ms
    );
    Ok(())
}
