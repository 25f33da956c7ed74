//! Library side of the `occwarp` executable: run configuration and the
//! pipeline compositions behind the subcommands, kept out of `main` so they
//! can be tested directly.

pub mod config;
pub mod pipeline;
