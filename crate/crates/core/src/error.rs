use thiserror::Error;

/// Errors shared across the simulation, calibration, and training pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch in {what}: expected {expected}, got {actual}")]
    Shape {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("playback series for vehicle {vehicle} exhausted at step {step} (series has {available} samples)")]
    PlaybackExhausted {
        vehicle: usize,
        step: usize,
        available: usize,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("resampling to dt = {dt_out} s would leave fewer than two samples (series spans {span} s)")]
    DegenerateResample { dt_out: f64, span: f64 },

    #[error("non-finite loss at epoch {epoch}: training diverged")]
    Divergence { epoch: usize },

    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),

    #[error("percentage change undefined: baseline is zero")]
    UndefinedBaseline,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
