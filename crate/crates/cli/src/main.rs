use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use coherence_forge::commands::{self, CliError, CommandOutput, RandtestOpts, ReplayOpts, Variant};
use coherence_forge::config::{parse_config, Overrides};
use coherence_forge::workload::{SynthPattern, SynthWorkload};

#[derive(Parser)]
#[command(
    name = "coherence-forge",
    about = "Cycle-level simulator and verification harness for a directory-based cache-coherent memory subsystem",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOpts {
    /// Config file (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// RNG seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Core count override.
    #[arg(long, global = true)]
    cores: Option<usize>,
    /// Cache levels override (1 or 2).
    #[arg(long, global = true)]
    levels: Option<u8>,
    /// Protocol override (msi or mi).
    #[arg(long, global = true)]
    protocol: Option<String>,
    /// Write results as CSV here (a `.manifest` echo lands beside it).
    #[arg(long, global = true)]
    csv: Option<PathBuf>,
    /// Disable the idle fast-forward skip.
    #[arg(long, global = true)]
    no_fast_forward: bool,
}

#[derive(Args)]
struct WorkloadOpts {
    /// Synthetic pattern: private_stream, shared_read, producer_consumer,
    /// false_sharing.
    #[arg(long, default_value = "shared_read")]
    pattern: String,
    /// Requests issued per core.
    #[arg(long, default_value_t = 1000)]
    ops: usize,
    /// Working-set size in bytes.
    #[arg(long, default_value_t = 16 * 1024)]
    working_set: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Randomized coherence soak: checks of four byte-writes plus a
    /// verifying read, issued through random cores.
    Randtest {
        #[command(flatten)]
        common: CommonOpts,
        /// Number of checks in the pool.
        #[arg(long, default_value_t = 16)]
        checks: usize,
        /// Check rounds to complete.
        #[arg(long, default_value_t = 10_000)]
        completions: u64,
    },
    /// Replay a trace file against the oracle-backed scoreboard.
    Trace {
        #[command(flatten)]
        common: CommonOpts,
        /// Trace file: `core op addr size [data]` per line.
        trace_file: PathBuf,
        /// Write the per-delivery bus trace here.
        #[arg(long)]
        bus_trace: Option<PathBuf>,
    },
    /// Run a synthetic workload and report stats.
    Synth {
        #[command(flatten)]
        common: CommonOpts,
        #[command(flatten)]
        workload: WorkloadOpts,
        /// Write the per-delivery bus trace here.
        #[arg(long)]
        bus_trace: Option<PathBuf>,
    },
    /// Run one workload under several protocol/level variants and normalize
    /// cycles to the first (MI baseline by convention).
    Compare {
        #[command(flatten)]
        common: CommonOpts,
        #[command(flatten)]
        workload: WorkloadOpts,
        /// Comma-separated protocol:levels list.
        #[arg(long, default_value = "mi:1,msi:1,msi:2")]
        variants: String,
    },
    /// Run the cores x levels cross product and emit long-format CSV.
    Sweep {
        #[command(flatten)]
        common: CommonOpts,
        #[command(flatten)]
        workload: WorkloadOpts,
        /// Comma-separated core counts.
        #[arg(long, default_value = "2,4,8,16")]
        core_counts: String,
        /// Comma-separated level list.
        #[arg(long, default_value = "1,2")]
        level_list: String,
    },
    /// Dump the protocol transition tables as CSV and exit.
    DumpTables {
        /// Protocol to dump (msi or mi).
        #[arg(long, default_value = "msi")]
        protocol: String,
    },
}

fn overrides_of(common: &CommonOpts) -> Overrides {
    Overrides {
        cores: common.cores,
        levels: common.levels,
        protocol: common.protocol.clone(),
        seed: common.seed,
    }
}

fn workload_of(opts: &WorkloadOpts) -> Result<SynthWorkload, CliError> {
    let pattern = SynthPattern::parse(&opts.pattern)
        .ok_or_else(|| CliError::Usage(format!("unknown pattern `{}`", opts.pattern)))?;
    Ok(SynthWorkload {
        pattern,
        ops_per_core: opts.ops,
        working_set_bytes: opts.working_set,
    })
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, CliError> {
    s.split(',')
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("bad {} `{}`", what, p)))
        })
        .collect()
}

fn run(cli: Cli) -> Result<(CommandOutput, Option<PathBuf>), CliError> {
    match cli.command {
        Command::Randtest {
            common,
            checks,
            completions,
        } => {
            let config = parse_config(common.config.as_deref(), &overrides_of(&common))
                .map_err(|e| CliError::Usage(e.to_string()))?;
            let output = commands::cmd_randtest(
                config,
                &RandtestOpts {
                    checks,
                    completions,
                    fast_forward: !common.no_fast_forward,
                },
            )?;
            Ok((output, common.csv))
        }
        Command::Trace {
            common,
            trace_file,
            bus_trace,
        } => {
            let config = parse_config(common.config.as_deref(), &overrides_of(&common))
                .map_err(|e| CliError::Usage(e.to_string()))?;
            let output = commands::cmd_trace(
                config,
                &trace_file,
                &ReplayOpts {
                    fast_forward: !common.no_fast_forward,
                    bus_trace,
                    ..ReplayOpts::default()
                },
            )?;
            Ok((output, common.csv))
        }
        Command::Synth {
            common,
            workload,
            bus_trace,
        } => {
            let config = parse_config(common.config.as_deref(), &overrides_of(&common))
                .map_err(|e| CliError::Usage(e.to_string()))?;
            let workload = workload_of(&workload)?;
            let output = commands::cmd_synth(
                config,
                &workload,
                &ReplayOpts {
                    fast_forward: !common.no_fast_forward,
                    bus_trace,
                    ..ReplayOpts::default()
                },
            )?;
            Ok((output, common.csv))
        }
        Command::Compare {
            common,
            workload,
            variants,
        } => {
            let config = parse_config(common.config.as_deref(), &overrides_of(&common))
                .map_err(|e| CliError::Usage(e.to_string()))?;
            let workload = workload_of(&workload)?;
            let variants = Variant::parse_list(&variants)?;
            let output = commands::cmd_compare(config, &variants, &workload)?;
            Ok((output, common.csv))
        }
        Command::Sweep {
            common,
            workload,
            core_counts,
            level_list,
        } => {
            let config = parse_config(common.config.as_deref(), &overrides_of(&common))
                .map_err(|e| CliError::Usage(e.to_string()))?;
            let workload = workload_of(&workload)?;
            let cores: Vec<usize> = parse_list(&core_counts, "core count")?;
            let levels: Vec<u8> = parse_list(&level_list, "level")?;
            let output = commands::cmd_sweep(config, &cores, &levels, &workload)?;
            Ok((output, common.csv))
        }
        Command::DumpTables { protocol } => {
            let protocol = coherence_core::ProtocolId::parse(&protocol)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            Ok((commands::cmd_dump_tables(protocol)?, None))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok((output, csv_path)) => {
            print!("{}", output.text);
            if let Err(e) = output.write_files(csv_path.as_deref()) {
                eprintln!("{}", e);
                return ExitCode::from(e.exit_code());
            }
            if csv_path.is_none() && !output.manifest.is_empty() {
                eprintln!("--- manifest ---\n{}", output.manifest);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(e.exit_code())
        }
    }
}
