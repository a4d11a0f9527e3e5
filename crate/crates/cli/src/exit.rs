//! Process exit codes and the mapping from errors to them.

use std::fmt;

use topodesc_core::Error;

pub const CHECK_FAILED: u8 = 1;
pub const USAGE: u8 = 2;
pub const IO: u8 = 3;
pub const DIVERGED: u8 = 4;

/// Error carrying an explicit exit code.
#[derive(Debug)]
pub struct Exit {
    pub code: u8,
    message: String,
}

impl Exit {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl fmt::Display for Exit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Exit {}

pub fn code_for(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.downcast_ref::<Exit>() {
        return e.code;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::Io { .. } | Error::Format { .. }) => IO,
        Some(
            Error::Divergence { .. }
            | Error::SingularSystem { .. }
            | Error::DegenerateFit { .. }
            | Error::DegenerateDescriptor { .. }
            | Error::NonUnitRow { .. },
        ) => DIVERGED,
        _ => USAGE,
    }
}
