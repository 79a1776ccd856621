pub mod cam;
pub mod cli;
pub mod eigen;
pub mod error;
pub mod forward;
pub mod io;
pub mod jacobian;
pub mod oracle;
pub mod pca;
pub mod pipeline;
pub mod svm;
pub mod synth;
pub mod types;
pub mod verify;

pub use error::{Error, Result};
