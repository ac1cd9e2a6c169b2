//! Trains the micro model on tone-in-noise mixtures and writes the curve.
//!
//!     cargo run --release --example train_toy -- [steps] [seed]

use dpcrn::train::{train_toy, write_curve_csv, ToyConfig};

fn main() -> dpcrn::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps = args.next().and_then(|s| s.parse().ok()).unwrap_or(200);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    let cfg = ToyConfig::default();
    let t0 = std::time::Instant::now();
    let report = train_toy(&cfg, steps, seed)?;
    for row in report.curve.iter().step_by(20) {
        println!("step {:4}  -snr {:8.3} dB  total {:8.3}  lr {:.1e}", row.step, row.neg_snr, row.total, row.lr);
    }
    for e in &report.evals {
        println!("eval @{:4}  val {:8.3}  {:?}", e.step, e.val_loss, e.event);
    }
    println!("improvement {:.2} dB in {:.1} s", report.improvement_db(10), t0.elapsed().as_secs_f64());
    let out = std::env::temp_dir().join("dpcrn_toy_curve.csv");
    write_curve_csv(&report.curve, &out)?;
    println!("curve written to {}", out.display());
    Ok(())
}
