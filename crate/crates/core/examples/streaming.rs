//! Sample-accurate latency accounting of the streaming engine.
//!
//!     cargo run --release --example streaming

use dpcrn::audio::{gen_synthetic, SynthKind};
use dpcrn::model::{ModelConfig, ModelWeights};
use dpcrn::stream::{StreamState, LATENCY_SAMPLES};

fn main() -> dpcrn::Result<()> {
    let w = ModelWeights::build(&ModelConfig::default(), 0)?;
    let x = gen_synthetic(SynthKind::SpeechLike, 1.0, 1)?.into_samples();
    let mut st = StreamState::for_weights(&w)?;
    println!("state {} bytes, inter states per module {:?}", st.state_bytes(), st.inter_state_bins());

    // one sample at a time until something comes out
    let mut out = Vec::new();
    let mut fed = 0;
    while out.is_empty() {
        out.extend(st.push(&x[fed..fed + 1])?);
        fed += 1;
    }
    println!(
        "first {} samples out after {fed} in ({:.1} ms); contract {LATENCY_SAMPLES}",
        out.len(),
        fed as f64 / 16.0
    );
    // then irregular chunk sizes, as an audio callback might deliver them
    for (i, chunk) in x[fed..].chunks(97).enumerate() {
        out.extend(st.push(chunk)?);
        fed += chunk.len();
        if i % 40 == 0 {
            println!("fed {fed:6}  emitted {:6}  frames {}", st.samples_emitted(), st.frames_processed());
        }
    }
    out.extend(st.flush()?);
    println!("{} in, {} out, state still {} bytes", x.len(), out.len(), st.state_bytes());
    Ok(())
}
