//! Command implementations behind the `gridpatch` binary.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod dispatch;
pub mod forecasting;

pub use commands::{run, Command};
pub use config::RunConfig;

use gridpatch_core::Error;

/// Process exit status for a failed command: 2 for filesystem problems,
/// 1 for everything else.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_io() {
        2
    } else {
        1
    }
}
