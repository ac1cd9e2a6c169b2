pub mod audio;
pub mod error;
pub mod model;
pub mod nn;
pub mod stft;
pub mod stream;
pub mod train;

pub use error::{Error, Result};
