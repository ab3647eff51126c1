//! Crate-wide error type. Every fallible public operation returns [`Result`].

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("image dimensions {width}x{height} below minimum {min_width}x{min_height}")]
    ImageTooSmall { width: u32, height: u32, min_width: u32, min_height: u32 },

    #[error("image data length {len} does not match {width}x{height}")]
    ImageDataMismatch { len: usize, width: u32, height: u32 },

    #[error("image contains a non-finite value at index {index}")]
    NonFiniteValue { index: usize },

    #[error("rectangle {x},{y} {w}x{h} outside image bounds {width}x{height}")]
    RectOutOfBounds { x: u32, y: u32, w: u32, h: u32, width: u32, height: u32 },

    #[error("empty rectangle (zero width or height)")]
    EmptyRect,

    #[error("region {w}x{h} too small for {op}")]
    RegionTooSmall { w: u32, h: u32, op: &'static str },

    #[error("{name} = {value} outside valid range [{min}, {max}]")]
    ParamOutOfRange { name: &'static str, value: f64, min: f64, max: f64 },

    #[error("exposure {dt_ms} ms outside camera bounds [{min_ms}, {max_ms}] ms")]
    ExposureOutOfBounds { dt_ms: f64, min_ms: f64, max_ms: f64 },

    #[error("unknown scenario '{0}' (expected normal, lowlight, or adversarial)")]
    UnknownScenario(String),

    #[error("unknown controller '{0}' (expected aaec, aec, gec, or default)")]
    UnknownController(String),

    #[error("marker grid invalid: {0}")]
    InvalidMarker(String),

    #[error("corner configuration degenerate (three corners nearly collinear)")]
    DegenerateCorners,

    #[error("pose estimation requires detection with found = true")]
    NotDetected,

    #[error("trajectory time {t} outside [0, {duration}]")]
    TimeOutOfRange { t: f64, duration: f64 },

    #[error("evaluation needs at least {need} samples, got {got}")]
    NotEnoughSamples { need: usize, got: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("csv parse error in {path}: {msg}")]
    CsvFormat { path: String, msg: String },

    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Wrap an io::Error with the path it occurred on.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
