use std::io;

use thiserror::Error;

/// Errors produced by the simulation and training engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("invalid format: {0}")]
    Format(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in layer {layer}, neuron {neuron}, bin {bin}")]
    Numeric {
        layer: usize,
        neuron: usize,
        bin: usize,
    },

    #[error("non-finite update: {0}")]
    NonFinite(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
