use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A function argument violated its domain (negative pressure, zero
    /// inertia, ...). The message names the offending quantity.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A NaN or infinity appeared during time stepping.
    #[error("integration fault at step {step}: {what}")]
    IntegrationFault { step: usize, what: String },

    /// The oscillator amplitude left the small-angle regime.
    #[error("runaway at step {step} (t = {t:.6e} s): |theta| = {theta:.3e} rad exceeds bound {bound:.3e} rad")]
    Runaway {
        step: usize,
        t: f64,
        theta: f64,
        bound: f64,
    },

    /// A declarative configuration failed validation.
    #[error("config error at `{key}`: {what}")]
    Config { key: String, what: String },

    /// An experiment protocol precondition failed (e.g. the feedback never
    /// reached a stationary baseline before reheating).
    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("config parse error: {0}")]
    TomlParse(#[from] toml::de::Error),

    #[error("config serialize error: {0}")]
    TomlSerialize(#[from] toml::ser::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn config(key: impl Into<String>, what: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            what: what.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
