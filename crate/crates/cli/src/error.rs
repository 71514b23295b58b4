use std::fmt;
use std::io;
use std::path::Path;

use relqa::container::ContainerError;
use relqa::data::DataError;
use relqa::text::EmbeddingError;

/// Process exit codes.
pub mod code {
    pub const FAILURE: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const DATA: u8 = 3;
    pub const MISSING_FILE: u8 = 4;
    pub const CHECK_FAILED: u8 = 5;
    pub const MISMATCH: u8 = 6;
}

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        CliError {
            code,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(code::USAGE, message)
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self::new(code::DATA, message)
    }

    pub fn io(path: &Path, e: io::Error) -> Self {
        Self::new(io_code(&e), format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn io_code(e: &io::Error) -> u8 {
    if e.kind() == io::ErrorKind::NotFound {
        code::MISSING_FILE
    } else {
        code::FAILURE
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        let code = match &e {
            DataError::Io { source, .. } => io_code(source),
            DataError::Container(c) => return c.into(),
            _ => code::DATA,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<&ContainerError> for CliError {
    fn from(e: &ContainerError) -> Self {
        let code = match e {
            ContainerError::Io { source, .. } => io_code(source),
            _ => code::DATA,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<ContainerError> for CliError {
    fn from(e: ContainerError) -> Self {
        (&e).into()
    }
}

impl From<EmbeddingError> for CliError {
    fn from(e: EmbeddingError) -> Self {
        let code = match &e {
            EmbeddingError::Io(source) => io_code(source),
            _ => code::DATA,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<relqa::Error> for CliError {
    fn from(e: relqa::Error) -> Self {
        match e {
            relqa::Error::Data(e) => e.into(),
            relqa::Error::Container(e) => e.into(),
            relqa::Error::Embedding(e) => e.into(),
            relqa::Error::Io(e) => CliError::new(io_code(&e), e.to_string()),
            other => CliError::new(code::FAILURE, other.to_string()),
        }
    }
}
