//! Subcommand implementations, shared by the binary and the test suites.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use coherence_core::harness::{parse_trace, replay_records, Harness, ReplaySummary, TraceRecord};
use coherence_core::protocol::tables_to_csv;
use coherence_core::tester::{run_randtest, RandtestError, RandtestParams, RandtestReport};
use coherence_core::{build_system, ProtocolId, SystemConfig};

use crate::config::manifest_echo;
use crate::workload::{generate, SynthWorkload};

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, config, or input files (exit code 2).
    Usage(String),
    /// The simulated system failed verification (exit code 1).
    Run(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Run(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Run(_) => 1,
        }
    }
}

fn randtest_error(e: RandtestError) -> CliError {
    match e {
        RandtestError::Config(e) => CliError::Usage(e.to_string()),
        RandtestError::Tester(e) => CliError::Usage(e.to_string()),
        RandtestError::Sim(e) => CliError::Run(e.to_string()),
        RandtestError::Check { .. } => CliError::Run(e.to_string()),
    }
}

/// Everything a run produces; the binary decides where it goes.
#[derive(Debug, Default)]
pub struct CommandOutput {
    pub text: String,
    pub csv: Option<String>,
    pub manifest: String,
}

impl CommandOutput {
    /// Write the CSV and its manifest echo next to it.
    pub fn write_files(&self, csv_path: Option<&Path>) -> Result<(), CliError> {
        if let (Some(path), Some(csv)) = (csv_path, &self.csv) {
            std::fs::write(path, csv)
                .map_err(|e| CliError::Usage(format!("cannot write {}: {}", path.display(), e)))?;
            let manifest_path = manifest_path_for(path);
            std::fs::write(&manifest_path, &self.manifest).map_err(|e| {
                CliError::Usage(format!("cannot write {}: {}", manifest_path.display(), e))
            })?;
        }
        Ok(())
    }
}

pub fn manifest_path_for(csv_path: &Path) -> PathBuf {
    let mut os = csv_path.as_os_str().to_owned();
    os.push(".manifest");
    PathBuf::from(os)
}

fn manifest(subcommand: &str, config: &SystemConfig, extras: &[(&str, String)]) -> String {
    let mut out = String::new();
    out.push_str("[run]\n");
    out.push_str(&format!("subcommand = \"{}\"\n", subcommand));
    for (k, v) in extras {
        out.push_str(&format!("{} = {}\n", k, v));
    }
    out.push('\n');
    out.push_str(&manifest_echo(config));
    out
}

// --- randtest ----------------------------------------------------------

pub struct RandtestOpts {
    pub checks: usize,
    pub completions: u64,
    pub fast_forward: bool,
}

pub fn cmd_randtest(config: SystemConfig, opts: &RandtestOpts) -> Result<CommandOutput, CliError> {
    let params = RandtestParams {
        n_checks: opts.checks,
        target_completions: opts.completions,
        walker_interval: 1,
        fast_forward: opts.fast_forward,
        ..RandtestParams::default()
    };
    let manifest = manifest(
        "randtest",
        &config,
        &[
            ("checks", opts.checks.to_string()),
            ("completions", opts.completions.to_string()),
        ],
    );
    let report = run_randtest(config, &params).map_err(randtest_error)?;
    Ok(CommandOutput {
        text: randtest_text(&report),
        csv: Some(randtest_csv(&report)),
        manifest,
    })
}

fn randtest_text(report: &RandtestReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "randtest: {} check rounds, {} mismatches, {} requests, {} cycles ({} skipped)\n",
        report.completions,
        report.mismatches,
        report.requests,
        report.cycles,
        report.skipped_cycles
    ));
    out.push_str(&format!(
        "l1 transition coverage: {}/{} rows ({:.1}%)\n",
        report.l1_coverage.hit_rows,
        report.l1_coverage.total_rows,
        report.l1_coverage.fraction * 100.0
    ));
    if !report.l1_coverage.unhit.is_empty() {
        out.push_str(&format!(
            "unhit rows: {}\n",
            report.l1_coverage.unhit.join(" ")
        ));
    }
    out
}

fn randtest_csv(report: &RandtestReport) -> String {
    let mut out = String::from("metric,value\n");
    out.push_str(&format!("completions,{}\n", report.completions));
    out.push_str(&format!("mismatches,{}\n", report.mismatches));
    out.push_str(&format!("requests,{}\n", report.requests));
    out.push_str(&format!("cycles,{}\n", report.cycles));
    out.push_str(&format!("skipped_cycles,{}\n", report.skipped_cycles));
    out.push_str(&format!(
        "coverage_fraction,{:.6}\n",
        report.l1_coverage.fraction
    ));
    for (label, hits) in &report.l1_coverage.rows {
        out.push_str(&format!("row_hits:{},{}\n", label.replace(',', "/"), hits));
    }
    out
}

// --- trace / synth -----------------------------------------------------

pub struct ReplayOpts {
    pub fast_forward: bool,
    pub bus_trace: Option<PathBuf>,
    /// Invariant-walker period in cycles (0 disables it).
    pub walker_interval: u64,
}

impl Default for ReplayOpts {
    fn default() -> Self {
        Self {
            fast_forward: true,
            bus_trace: None,
            walker_interval: 64,
        }
    }
}

fn replay_on(
    config: SystemConfig,
    records: &[TraceRecord],
    opts: &ReplayOpts,
) -> Result<ReplaySummary, CliError> {
    let mut system = build_system(config).map_err(|e| CliError::Usage(e.to_string()))?;
    if opts.bus_trace.is_some() {
        system.set_bus_trace(true);
    }
    let mut harness = Harness::new(&system);
    harness.fast_forward = opts.fast_forward;
    harness.walker_interval = opts.walker_interval;
    let summary = replay_records(&mut system, &mut harness, records).map_err(|e| match e {
        coherence_core::harness::ReplayError::Malformed(m) => CliError::Usage(m.to_string()),
        coherence_core::harness::ReplayError::Sim(s) => CliError::Run(s.to_string()),
    })?;
    if let Some(path) = &opts.bus_trace {
        let lines = system.take_bus_trace();
        let mut body = String::from("cycle,channel,opcode,addr,src,beat\n");
        for line in lines {
            body.push_str(&line);
            body.push('\n');
        }
        std::fs::write(path, body)
            .map_err(|e| CliError::Usage(format!("cannot write {}: {}", path.display(), e)))?;
    }
    Ok(summary)
}

pub fn cmd_trace(
    config: SystemConfig,
    trace_path: &Path,
    opts: &ReplayOpts,
) -> Result<CommandOutput, CliError> {
    let text = std::fs::read_to_string(trace_path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {}", trace_path.display(), e)))?;
    let records = parse_trace(&text).map_err(|e| CliError::Usage(e.to_string()))?;
    let manifest = manifest(
        "trace",
        &config,
        &[("trace_file", format!("\"{}\"", trace_path.display()))],
    );
    let summary = replay_on(config, &records, opts)?;
    Ok(CommandOutput {
        text: replay_text("trace", &summary),
        csv: Some(summary.stats.to_csv()),
        manifest,
    })
}

pub fn cmd_synth(
    config: SystemConfig,
    workload: &SynthWorkload,
    opts: &ReplayOpts,
) -> Result<CommandOutput, CliError> {
    let records = generate(workload, config.n_cores, config.seed);
    let manifest = manifest(
        "synth",
        &config,
        &[
            ("pattern", format!("\"{}\"", workload.pattern.name())),
            ("ops_per_core", workload.ops_per_core.to_string()),
            ("working_set_bytes", workload.working_set_bytes.to_string()),
        ],
    );
    let summary = replay_on(config, &records, opts)?;
    Ok(CommandOutput {
        text: replay_text(workload.pattern.name(), &summary),
        csv: Some(summary.stats.to_csv()),
        manifest,
    })
}

fn replay_text(name: &str, summary: &ReplaySummary) -> String {
    format!(
        "{}: {} requests, 0 mismatches, {} cycles ({} skipped), avg load latency {:.2}\n{}",
        name,
        summary.completions,
        summary.cycles,
        summary.skipped_cycles,
        summary.avg_load_latency(),
        summary.stats.to_table()
    )
}

// --- compare -----------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Variant {
    pub protocol: ProtocolId,
    pub levels: u8,
}

impl Variant {
    pub fn label(&self) -> String {
        format!("{}-{}level", self.protocol, self.levels)
    }

    pub fn parse_list(s: &str) -> Result<Vec<Variant>, CliError> {
        s.split(',')
            .map(|item| {
                let (proto, levels) = item
                    .split_once(':')
                    .ok_or_else(|| CliError::Usage(format!("bad variant `{}`", item)))?;
                Ok(Variant {
                    protocol: ProtocolId::parse(proto)
                        .map_err(|e| CliError::Usage(e.to_string()))?,
                    levels: levels
                        .parse()
                        .map_err(|_| CliError::Usage(format!("bad level in `{}`", item)))?,
                })
            })
            .collect()
    }
}

pub fn default_variants() -> Vec<Variant> {
    vec![
        Variant {
            protocol: ProtocolId::Mi,
            levels: 1,
        },
        Variant {
            protocol: ProtocolId::Msi,
            levels: 1,
        },
        Variant {
            protocol: ProtocolId::Msi,
            levels: 2,
        },
    ]
}

#[derive(Debug, Clone)]
pub struct CompareRow {
    pub workload: String,
    pub config_label: String,
    pub cycles: u64,
    pub speedup: f64,
    pub avg_load_latency: f64,
}

/// Run the workload under every variant and normalize total cycles to the
/// first one (the MI baseline by convention).
pub fn run_compare(
    base: &SystemConfig,
    variants: &[Variant],
    workload: &SynthWorkload,
) -> Result<Vec<CompareRow>, CliError> {
    if variants.len() < 2 {
        return Err(CliError::Usage(
            "compare needs at least two variants".into(),
        ));
    }
    let mut rows = Vec::new();
    let mut baseline = None;
    for v in variants {
        let config = SystemConfig {
            protocol: v.protocol,
            cache_levels: v.levels,
            ..base.clone()
        };
        let records = generate(workload, config.n_cores, config.seed);
        let summary = replay_on(
            config,
            &records,
            &ReplayOpts {
                walker_interval: 1024,
                ..ReplayOpts::default()
            },
        )?;
        let baseline_cycles = *baseline.get_or_insert(summary.cycles);
        rows.push(CompareRow {
            workload: workload.pattern.name().to_string(),
            config_label: v.label(),
            cycles: summary.cycles,
            speedup: baseline_cycles as f64 / summary.cycles as f64,
            avg_load_latency: summary.avg_load_latency(),
        });
    }
    Ok(rows)
}

pub fn compare_csv(rows: &[CompareRow]) -> String {
    let mut out = String::from("workload,config,cycles,speedup\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.4}\n",
            r.workload, r.config_label, r.cycles, r.speedup
        ));
    }
    out
}

pub fn cmd_compare(
    base: SystemConfig,
    variants: &[Variant],
    workload: &SynthWorkload,
) -> Result<CommandOutput, CliError> {
    let manifest = manifest(
        "compare",
        &base,
        &[
            ("pattern", format!("\"{}\"", workload.pattern.name())),
            ("ops_per_core", workload.ops_per_core.to_string()),
            ("working_set_bytes", workload.working_set_bytes.to_string()),
            (
                "variants",
                format!(
                    "\"{}\"",
                    variants
                        .iter()
                        .map(|v| v.label())
                        .collect::<Vec<_>>()
                        .join(",")
                ),
            ),
        ],
    );
    let rows = run_compare(&base, variants, workload)?;
    let mut text = format!(
        "{:<12} {:>12} {:>10} {:>16}\n",
        "config", "cycles", "speedup", "avg load latency"
    );
    for r in &rows {
        text.push_str(&format!(
            "{:<12} {:>12} {:>10.3} {:>16.2}\n",
            r.config_label, r.cycles, r.speedup, r.avg_load_latency
        ));
    }
    Ok(CommandOutput {
        text,
        csv: Some(compare_csv(&rows)),
        manifest,
    })
}

// --- sweep -------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SweepCell {
    pub workload: String,
    pub protocol: ProtocolId,
    pub cores: usize,
    pub levels: u8,
    pub result: Result<(u64, u64, f64), String>, // cycles, requests, avg load latency
}

/// Run the cores x levels cross product on a bounded worker pool, one
/// independent system per cell. Per-cell failures are reported in the row;
/// the sweep continues.
pub fn run_sweep(
    base: &SystemConfig,
    core_counts: &[usize],
    levels_list: &[u8],
    workload: &SynthWorkload,
) -> Vec<SweepCell> {
    let cells: Vec<(usize, u8)> = core_counts
        .iter()
        .flat_map(|&c| levels_list.iter().map(move |&l| (c, l)))
        .collect();
    let results: Vec<Mutex<Option<SweepCell>>> = cells.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(4)
        .min(cells.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::Relaxed);
                if idx >= cells.len() {
                    break;
                }
                let (cores, levels) = cells[idx];
                let config = SystemConfig {
                    n_cores: cores,
                    cache_levels: levels,
                    ..base.clone()
                };
                let records = generate(workload, cores, config.seed);
                let result = replay_on(
                    config,
                    &records,
                    &ReplayOpts {
                        walker_interval: 1024,
                        ..ReplayOpts::default()
                    },
                )
                .map(|s| (s.cycles, s.completions, s.avg_load_latency()))
                .map_err(|e| e.to_string());
                *results[idx].lock().unwrap() = Some(SweepCell {
                    workload: workload.pattern.name().to_string(),
                    protocol: base.protocol,
                    cores,
                    levels,
                    result,
                });
            });
        }
    });

    results
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("all cells visited"))
        .collect()
}

pub fn sweep_csv(cells: &[SweepCell]) -> String {
    let mut out =
        String::from("workload,protocol,cores,levels,status,cycles,requests,avg_load_latency\n");
    for c in cells {
        match &c.result {
            Ok((cycles, requests, avg)) => out.push_str(&format!(
                "{},{},{},{},ok,{},{},{:.4}\n",
                c.workload, c.protocol, c.cores, c.levels, cycles, requests, avg
            )),
            Err(_) => out.push_str(&format!(
                "{},{},{},{},error,,,\n",
                c.workload, c.protocol, c.cores, c.levels
            )),
        }
    }
    out
}

pub fn cmd_sweep(
    base: SystemConfig,
    core_counts: &[usize],
    levels_list: &[u8],
    workload: &SynthWorkload,
) -> Result<CommandOutput, CliError> {
    let manifest = manifest(
        "sweep",
        &base,
        &[
            ("pattern", format!("\"{}\"", workload.pattern.name())),
            ("ops_per_core", workload.ops_per_core.to_string()),
            ("working_set_bytes", workload.working_set_bytes.to_string()),
            (
                "core_counts",
                format!(
                    "\"{}\"",
                    core_counts
                        .iter()
                        .map(|c| c.to_string())
                        .collect::<Vec<_>>()
                        .join(",")
                ),
            ),
            (
                "levels",
                format!(
                    "\"{}\"",
                    levels_list
                        .iter()
                        .map(|l| l.to_string())
                        .collect::<Vec<_>>()
                        .join(",")
                ),
            ),
        ],
    );
    let cells = run_sweep(&base, core_counts, levels_list, workload);
    let csv = sweep_csv(&cells);
    let mut text = String::new();
    for c in &cells {
        match &c.result {
            Ok((cycles, _, avg)) => text.push_str(&format!(
                "{} cores={} levels={}: {} cycles, avg load latency {:.2}\n",
                c.workload, c.cores, c.levels, cycles, avg
            )),
            Err(e) => text.push_str(&format!(
                "{} cores={} levels={}: FAILED: {}\n",
                c.workload, c.cores, c.levels, e
            )),
        }
    }
    let failed = cells.iter().any(|c| c.result.is_err());
    let output = CommandOutput {
        text,
        csv: Some(csv),
        manifest,
    };
    if failed {
        // Rows are still emitted; the process reports the failure.
        return Err(CliError::Run(format!(
            "sweep finished with failures:\n{}",
            output.text
        )));
    }
    Ok(output)
}

// --- table dump --------------------------------------------------------

pub fn cmd_dump_tables(protocol: ProtocolId) -> Result<CommandOutput, CliError> {
    let tables = coherence_core::protocol::protocol_table(protocol)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(CommandOutput {
        text: tables_to_csv(&tables),
        csv: None,
        manifest: String::new(),
    })
}
