//! Configuration handling and subcommands of the `framepred` binary.

pub mod commands;
pub mod config;

use framepred::Error;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_DIVERGENCE: u8 = 4;

/// Process exit code for a failed command.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => EXIT_CONFIG,
        Error::Divergence(_) => EXIT_DIVERGENCE,
        _ => EXIT_DATA,
    }
}
