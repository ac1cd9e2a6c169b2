//! Central-difference check of every trainable coordinate of a small model.
//!
//!     cargo run --release --example gradcheck -- [seed]

use dpcrn::model::ModelConfig;
use dpcrn::train::gradcheck;

fn main() -> dpcrn::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let report = gradcheck(&ModelConfig::gradcheck(), seed)?;
    println!("params         {}", report.params);
    println!("coordinates    {}", report.coords);
    println!("loss           {:.6}", report.loss);
    println!("within tol     {:.4}", report.pass_fraction);
    println!("max rel err    {:.3e} at {}", report.max_rel_err, report.worst);
    for (name, a, n) in &report.failures {
        println!("  {name}: analytic {a:.6e} numeric {n:.6e}");
    }
    println!("{}", if report.passed() { "ok" } else { "FAILED" });
    Ok(())
}
