//! The DPCRN network: configuration, parameters, forward pass, mask
//! application and weight files.

pub mod config;
pub mod flops;
pub mod io;
pub mod net;
pub mod weights;

pub use config::{parse_kv, LayerPlan, ModelConfig, Variant};
pub use flops::{flops_per_frame, FlopCount, FRAMES_PER_SECOND};
pub use io::{load_weights, save_weights};
pub use net::{apply_mask, apply_mask_backward, enhance_offline, forward, predict_mask, spec_to_tensor, CrmMask};
pub use weights::{manifest, param_count, ModelWeights};
