//! Library surface of the CLI: config loading, synthetic workloads, and the
//! subcommand implementations, so integration tests can call them directly.

pub mod commands;
pub mod config;
pub mod workload;

pub use commands::{
    cmd_compare, cmd_dump_tables, cmd_randtest, cmd_sweep, cmd_synth, cmd_trace, default_variants,
    run_compare, run_sweep, CliError, CommandOutput, RandtestOpts, ReplayOpts, Variant,
};
pub use config::{manifest_echo, parse_config, parse_config_str, Overrides};
pub use workload::{generate, SynthPattern, SynthWorkload};
