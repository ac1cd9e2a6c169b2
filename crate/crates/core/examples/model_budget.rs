//! Layer plan, parameter count and per-frame compute of each preset.
//!
//!     cargo run --release --example model_budget

use dpcrn::model::{flops_per_frame, ModelConfig, ModelWeights, Variant};

fn main() -> dpcrn::Result<()> {
    let presets = [
        ("DPCRN-1", ModelConfig::preset(Variant::Dpcrn1)),
        ("DPCRN-1 intra 128", ModelConfig::wide_intra()),
        ("DPCRN-2", ModelConfig::preset(Variant::Dpcrn2)),
        ("DPCRN-3", ModelConfig::preset(Variant::Dpcrn3)),
        ("micro", ModelConfig::micro()),
        ("gradcheck", ModelConfig::gradcheck()),
    ];
    for (name, cfg) in presets {
        let w = ModelWeights::build(&cfg, 0)?;
        let fl = flops_per_frame(&cfg)?;
        println!(
            "{name:<18} params {:>8}  dprnn freq {:>3}  {:>6.2} MFLOP/frame  {:.2} GFLOP/s",
            w.param_count(),
            cfg.dprnn_freq()?,
            fl.total as f64 / 1e6,
            fl.gflops_per_second()
        );
    }
    println!();
    println!("DPCRN-1 encoder plan:");
    for (i, l) in ModelConfig::default().plan()?.iter().enumerate() {
        println!(
            "  {i}: {:>3} -> {:>3} ch  freq {:>3} -> {:>3}  kernel {:?}  stride {:?}  freq pad {:?}",
            l.c_in, l.c_out, l.f_in, l.f_out, l.kernel, l.stride, l.freq_pad
        );
    }
    Ok(())
}
