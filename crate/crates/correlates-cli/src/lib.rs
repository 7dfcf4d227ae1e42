//! Library surface of the `correlates` command-line tool, split out so the
//! integration and acceptance suites can drive commands in-process.

pub mod commands;
pub mod config;
pub mod output;

pub use commands::{cmd_analyze, cmd_evalue, cmd_simulate, GlobalOpts};
pub use config::{AnalysisConfig, FamilyConfig};

use correlates::Error;

/// Exit-code contract: 0 success, 2 data/config errors, 3 convergence
/// errors.
pub fn exit_code_for(err: &Error) -> i32 {
    if err.is_convergence_class() {
        3
    } else {
        2
    }
}

/// Machine-readable error envelope printed on standard error.
pub fn error_json(err: &Error) -> String {
    serde_json::json!({
        "error": {
            "kind": err.kind(),
            "message": err.to_string(),
            "exit_code": exit_code_for(err),
        }
    })
    .to_string()
}
