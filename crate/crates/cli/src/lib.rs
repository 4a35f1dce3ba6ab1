//! Command-line front end and local JSON service for laggard fits.

pub mod api;
pub mod cli;
pub mod commands;
pub mod config;

use laggard::{Error, ErrorCategory};

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e.category() {
        ErrorCategory::Usage => 2,
        ErrorCategory::Data => 3,
        ErrorCategory::UnsupportedModel => 4,
        ErrorCategory::Io => 5,
    }
}
