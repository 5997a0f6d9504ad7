pub mod elimination;
pub mod error;
pub mod par;
pub mod pipeline;
pub mod preproc;
pub mod rank;
pub mod recording;
pub mod seed;
pub mod selection;
pub mod spectral;
pub mod stats;
pub mod synth;
pub mod tree;

/// Lower-case hex SHA-256 of `bytes`.
pub fn hex_digest(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub use error::{Error, Result};
pub use par::Exec;
pub use recording::Recording;
