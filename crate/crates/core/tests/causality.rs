mod common;

use common::causality_trial;

#[test]
fn future_input_never_reaches_past_output() {
    for i in 0..50 {
        let t = causality_trial(i);
        assert!(t.mask_identical, "trial {i}: mask changed before frame {} of {}", t.t0, t.frames);
        assert!(t.output_identical, "trial {i}: output changed before frame {} of {}", t.t0, t.frames);
    }
}
