use std::fmt;

use thiserror::Error;

/// Error returned by every fallible public operation in the crate.
#[derive(Debug, Error)]
pub enum StoreError {
    #[error("key not found")]
    KeyNotFound,
    #[error("corrupt sstable: {0}")]
    CorruptSSTable(String),
    #[error("model deserialization failed: {0}")]
    ModelDeserializeFailure(String),
    #[error("i/o failure: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
}

/// Discriminant of [`StoreError`], stable across the FFI boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorKind {
    KeyNotFound,
    CorruptSSTable,
    ModelDeserializeFailure,
    IoFailure,
    ConfigInvalid,
}

impl StoreError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            StoreError::KeyNotFound => ErrorKind::KeyNotFound,
            StoreError::CorruptSSTable(_) => ErrorKind::CorruptSSTable,
            StoreError::ModelDeserializeFailure(_) => ErrorKind::ModelDeserializeFailure,
            StoreError::IoFailure(_) => ErrorKind::IoFailure,
            StoreError::ConfigInvalid(_) => ErrorKind::ConfigInvalid,
        }
    }

    pub(crate) fn corrupt(msg: impl fmt::Display) -> Self {
        StoreError::CorruptSSTable(msg.to_string())
    }

    pub(crate) fn config(msg: impl fmt::Display) -> Self {
        StoreError::ConfigInvalid(msg.to_string())
    }

    pub(crate) fn model(msg: impl fmt::Display) -> Self {
        StoreError::ModelDeserializeFailure(msg.to_string())
    }
}

impl From<serde_json::Error> for StoreError {
    fn from(err: serde_json::Error) -> Self {
        StoreError::IoFailure(std::io::Error::new(std::io::ErrorKind::InvalidData, err))
    }
}

pub type Result<T, E = StoreError> = std::result::Result<T, E>;
