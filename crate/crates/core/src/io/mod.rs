//! File formats: the flowfield exchange format, model checkpoints, PGM
//! particle images, CSV logs and series, and run manifests.
//!
//! Every writer is canonical (fixed field order, fixed float formatting), so
//! write -> read -> write reproduces files byte for byte.

mod checkpoint;
mod flowfield;
mod manifest;
mod pgm;
mod tables;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use flowfield::{read_flowfield, write_flowfield};
pub use manifest::{sha256_bytes, sha256_file, Manifest, OutputEntry};
pub use pgm::{read_pgm, write_pgm};
pub use tables::{read_series, write_series, write_train_log};

/// 17 significant digits: enough to round-trip any f64 exactly.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}
