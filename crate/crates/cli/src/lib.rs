//! The `pfm` command-line tool and the HTTP service behind the dashboard.
//!
//! Both surfaces open a [`Store`](portfolio_core::store::Store) directory and
//! drive it through the same commands, so a change made over HTTP is
//! indistinguishable from one made on the command line.

pub mod cli;
pub mod http;

use portfolio_core::{Error, ErrorCategory};

pub use cli::run;

/// Process exit code for a failed command.
pub fn exit_code(e: &Error) -> i32 {
    match e.category() {
        ErrorCategory::Validation => 1,
        ErrorCategory::Forbidden => 3,
        ErrorCategory::Conflict => 4,
        ErrorCategory::NotFound => 5,
        ErrorCategory::Storage => 6,
    }
}

/// One-line error: `error[<kind>]: <message>`.
pub fn error_line(kind: &str, message: &str) -> String {
    format!("error[{kind}]: {}", message.replace('\n', " "))
}
