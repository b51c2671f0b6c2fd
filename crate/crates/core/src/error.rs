//! Crate-wide error type.
//!
//! Every fallible operation returns [`Result`]; malformed inputs (corrupt
//! files, degenerate labels, impossible geometry) surface as typed variants
//! rather than panics.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// All error conditions produced by this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// File does not carry the single-file NIfTI-1 magic `n+1\0`.
    #[error("not a single-file NIfTI-1 image: bad magic {0:02x?}")]
    BadMagic([u8; 4]),

    /// Header declares big-endian byte order (detected via `sizeof_hdr`).
    #[error("big-endian NIfTI files are not supported; convert to little-endian first")]
    BigEndian,

    /// Fewer bytes than the fixed 348-byte header.
    #[error("file too short for a NIfTI-1 header: {0} bytes")]
    HeaderTooShort(usize),

    /// A header field holds a value outside its legal range.
    #[error("invalid NIfTI header: {0}")]
    InvalidHeader(String),

    /// Datatype code outside the supported set {uint8, int16, float32, float64}.
    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),

    /// Payload shorter than `dim` and `datatype` demand.
    #[error("truncated NIfTI payload: need {expected} bytes at offset {offset}, found {actual}")]
    TruncatedPayload {
        expected: usize,
        actual: usize,
        offset: usize,
    },

    /// A voxel value cannot be represented in the requested output datatype.
    #[error("value {value} at voxel {index} is not representable as {datatype}")]
    ValueOutOfRange {
        value: f64,
        index: usize,
        datatype: &'static str,
    },

    /// The affine's upper-left 3x3 block has no inverse.
    #[error("affine matrix is singular")]
    SingularAffine,

    /// Two voxel axes map to the same anatomical axis.
    #[error("ambiguous orientation: voxel axes {0} and {1} both map to the same anatomical axis")]
    AmbiguousOrientation(usize, usize),

    /// Slice index beyond the extent of the requested view axis.
    #[error("slice index {index} out of range for {view} view with {len} slices")]
    SliceOutOfRange {
        view: &'static str,
        index: usize,
        len: usize,
    },

    /// Segmentation voxel label outside the known set {0, 1, 2, 4}.
    #[error("unknown segmentation label {0} (expected 0, 1, 2 or 4)")]
    UnknownLabel(u8),

    /// Mask contains no tumor voxels, so no slice can be selected.
    #[error("segmentation mask contains no tumor voxels")]
    NoTumor,

    /// Array dimensions do not line up.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A metric needs both classes but only one is present.
    #[error("degenerate labels: both a positive and a negative example are required")]
    DegenerateLabels,

    /// Bootstrap resampling kept drawing single-class resamples.
    #[error("bootstrap failed: could not draw a two-class resample within {0} retries")]
    BootstrapDegenerate(u32),

    /// A requested data split holds no cases.
    #[error("empty {0} split")]
    EmptySplit(&'static str),

    /// The tumor ellipsoid cannot fit inside the volume bounds.
    #[error("phantom geometry does not fit: {0}")]
    PhantomBounds(String),

    /// A configuration value is out of range or inconsistent.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// The case manifest is malformed.
    #[error("manifest error: {0}")]
    Manifest(String),

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// JSON (de)serialization failure.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// CSV (de)serialization failure.
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by user-supplied configuration or manifests,
    /// which map to process exit code 2.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig(_) | Error::Manifest(_) | Error::EmptySplit(_)
        )
    }
}
