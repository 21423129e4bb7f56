//! Problem and solution files, built-in scenarios and the commands behind the
//! `momsynth` binary.

pub mod canonical;
pub mod commands;
pub mod examples;
pub mod schema;
pub mod solution;

pub use schema::{ProblemFile, SchemaError};
pub use solution::SolutionFile;

pub const EXIT_OK: i32 = 0;
/// Verification failure and any error without a dedicated code.
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_UNBOUNDED: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;
pub const EXIT_SCHEMA: i32 = 5;

/// Exit code for an error that aborted a command.
pub fn error_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<SchemaError>().is_some() {
        EXIT_SCHEMA
    } else {
        EXIT_FAIL
    }
}
