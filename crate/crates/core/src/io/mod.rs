//! On-disk formats: CRC-guarded tensor files, instance directories, dataset
//! manifests and the simulation artifacts stored alongside them.
//!
//! The byte layout is documented in `docs/FORMAT.md`.

mod artifacts;
mod instance;
mod manifest;
mod tensor;

use thiserror::Error;

pub use artifacts::{
    read_gain_table, read_patterns, read_spsf_stack, write_gain_table, write_patterns,
    write_spsf_stack, GainTableMeta, SpsfStackMeta,
};
pub use instance::{
    read_instance, write_instance, InstanceMeta, InstanceRecord, GROUND_TRUTH_FILE,
    MEASUREMENTS_FILE, META_FILE,
};
pub use manifest::{
    read_manifest, sha256_file, split_manifest, write_manifest, DatasetManifest, ManifestEntry,
    Split, MANIFEST_FILE, MANIFEST_VERSION,
};
pub use tensor::{
    decode_tensor, encode_tensor, read_tensor, write_tensor, DType, Tensor, TensorData, MAGIC,
    VERSION,
};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("not a tensor file (bad magic)")]
    BadMagic,

    #[error("unsupported tensor format version {found}")]
    UnsupportedVersion { found: u16 },

    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),

    #[error("truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },

    #[error("{extra} trailing bytes after the checksum")]
    TrailingBytes { extra: u64 },

    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    CrcMismatch { stored: u32, computed: u32 },

    #[error("tensor shape must have at least one dimension")]
    EmptyShape,

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("missing member {member}")]
    MissingMember { member: String },

    #[error("pattern set hash mismatch: metadata says {expected}, file hashes to {found}")]
    PatternHashMismatch { expected: String, found: String },

    #[error("file hash mismatch for {path}")]
    FileHashMismatch { path: String },

    #[error("schema: {0}")]
    Schema(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
