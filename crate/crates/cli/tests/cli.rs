//! End-to-end CLI behavior: exit codes, CSV/manifest files, and the
//! comparison/sweep semantics exposed through the library surface.

use std::process::Command;

use coherence_core::{ProtocolId, SystemConfig};
use coherence_forge::commands::{compare_csv, sweep_csv, CliError};
use coherence_forge::workload::{SynthPattern, SynthWorkload};
use coherence_forge::{run_compare, run_sweep, Variant};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_coherence-forge"))
}

fn temp_dir(name: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!(
        "coherence-forge-test-{}-{}",
        name,
        std::process::id()
    ));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn clean_randtest_exits_zero_and_writes_manifest() {
    let dir = temp_dir("randtest");
    let csv = dir.join("report.csv");
    let output = bin()
        .args([
            "randtest",
            "--cores",
            "2",
            "--checks",
            "8",
            "--completions",
            "50",
            "--csv",
        ])
        .arg(&csv)
        .output()
        .unwrap();
    assert!(output.status.success(), "{:?}", output);
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.contains("50 check rounds"));
    assert!(stdout.contains("0 mismatches"));

    let csv_text = std::fs::read_to_string(&csv).unwrap();
    assert!(csv_text.starts_with("metric,value\n"));
    assert!(csv_text.contains("completions,50"));

    let manifest = std::fs::read_to_string(dir.join("report.csv.manifest")).unwrap();
    assert!(manifest.contains("subcommand = \"randtest\""));
    assert!(manifest.contains("cores = 2"));
    assert!(manifest.contains("protocol = \"msi\""));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn bad_config_exits_two() {
    let dir = temp_dir("badconfig");
    let config = dir.join("bad.toml");
    std::fs::write(&config, "[system]\nprotocol = \"moesi\"\n").unwrap();
    let output = bin()
        .args(["randtest", "--completions", "1", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8(output.stderr).unwrap();
    assert!(stderr.contains("moesi"), "{}", stderr);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn missing_trace_file_exits_two() {
    let output = bin()
        .args(["trace", "/nonexistent/trace.txt"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn run_error_maps_to_exit_one() {
    // The exit-code contract: verification failures are distinct from
    // usage/config errors.
    assert_eq!(CliError::Run("mismatch".into()).exit_code(), 1);
    assert_eq!(CliError::Usage("bad flag".into()).exit_code(), 2);
}

#[test]
fn trace_replay_end_to_end() {
    let dir = temp_dir("trace");
    let trace = dir.join("demo.trace");
    std::fs::write(
        &trace,
        "# write then read back across cores\n\
         0 S 0x1000 4 0a0b0c0d\n\
         1 L 0x1000 4\n\
         1 S 0x1040 2\n\
         2 L 0x1040 2\n",
    )
    .unwrap();
    let csv = dir.join("stats.csv");
    let output = bin()
        .args(["trace"])
        .arg(&trace)
        .args(["--cores", "4", "--csv"])
        .arg(&csv)
        .output()
        .unwrap();
    assert!(output.status.success(), "{:?}", output);
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.contains("4 requests, 0 mismatches"));
    let csv_text = std::fs::read_to_string(&csv).unwrap();
    assert!(csv_text.contains("requests,all,4"));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn malformed_trace_line_reported_with_number() {
    let dir = temp_dir("badtrace");
    let trace = dir.join("bad.trace");
    std::fs::write(&trace, "0 S 0x1000 4\n0 Q 0x2000 4\n").unwrap();
    let output = bin().arg("trace").arg(&trace).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8(output.stderr).unwrap();
    assert!(stderr.contains("line 2"), "{}", stderr);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn dump_tables_prints_rows() {
    let output = bin()
        .args(["dump-tables", "--protocol", "msi"])
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.starts_with("side,state,event,next_state,actions\n"));
    assert!(stdout.contains("l1,I,Load,IS_D,IssueReadClean"));
    assert!(stdout.contains("dir,Modified,WriteBack,structural,WriteMemory+ClearEntry"));

    let mi = bin()
        .args(["dump-tables", "--protocol", "mi"])
        .output()
        .unwrap();
    let mi_text = String::from_utf8(mi.stdout).unwrap();
    assert!(!mi_text.contains("l1,S,"), "MI table must have no S rows");
}

#[test]
fn synth_bus_trace_file() {
    let dir = temp_dir("bustrace");
    let trace_path = dir.join("bus.csv");
    let output = bin()
        .args([
            "synth",
            "--pattern",
            "private_stream",
            "--ops",
            "32",
            "--working-set",
            "4096",
            "--cores",
            "2",
            "--bus-trace",
        ])
        .arg(&trace_path)
        .output()
        .unwrap();
    assert!(output.status.success(), "{:?}", output);
    let text = std::fs::read_to_string(&trace_path).unwrap();
    assert!(text.starts_with("cycle,channel,opcode,addr,src,beat\n"));
    assert!(text.contains(",AR,ReadUnique,"));
    std::fs::remove_dir_all(&dir).ok();
}

// Single-core private_stream touches every line with a store first, so the
// MI and MSI transaction sequences coincide exactly: identical cycle counts
// and a speedup of 1.0 by measurement identity.
#[test]
fn single_core_private_stream_protocols_coincide() {
    let workload = SynthWorkload {
        pattern: SynthPattern::PrivateStream,
        ops_per_core: 500,
        working_set_bytes: 4 * 1024,
    };
    let base = SystemConfig {
        n_cores: 1,
        ..SystemConfig::default()
    };
    let rows = run_compare(
        &base,
        &[
            Variant {
                protocol: ProtocolId::Mi,
                levels: 1,
            },
            Variant {
                protocol: ProtocolId::Msi,
                levels: 1,
            },
        ],
        &workload,
    )
    .unwrap();
    assert_eq!(rows[0].cycles, rows[1].cycles);
    assert_eq!(rows[0].speedup, 1.0, "baseline normalizes to itself");
    assert_eq!(rows[1].speedup, 1.0);
}

#[test]
fn compare_csv_schema() {
    let workload = SynthWorkload {
        pattern: SynthPattern::SharedRead,
        ops_per_core: 100,
        working_set_bytes: 1024,
    };
    let base = SystemConfig {
        n_cores: 2,
        ..SystemConfig::default()
    };
    let rows = run_compare(&base, &coherence_forge::default_variants(), &workload).unwrap();
    let csv = compare_csv(&rows);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("workload,config,cycles,speedup"));
    let first = lines.next().unwrap();
    assert!(first.starts_with("shared_read,mi-1level,"));
    assert!(first.ends_with("1.0000"), "{}", first);
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn sweep_cross_product_and_empty_list() {
    let workload = SynthWorkload {
        pattern: SynthPattern::PrivateStream,
        ops_per_core: 50,
        working_set_bytes: 8 * 1024,
    };
    let base = SystemConfig::default();
    let cells = run_sweep(&base, &[2, 4, 8, 16], &[1, 2], &workload);
    assert_eq!(cells.len(), 8);
    let csv = sweep_csv(&cells);
    assert_eq!(csv.lines().count(), 9, "header plus 8 rows");
    assert!(cells.iter().all(|c| c.result.is_ok()));

    let empty = sweep_csv(&run_sweep(&base, &[], &[1, 2], &workload));
    assert_eq!(
        empty,
        "workload,protocol,cores,levels,status,cycles,requests,avg_load_latency\n"
    );
}

#[test]
fn sweep_rerun_is_byte_identical_via_binary() {
    let dir = temp_dir("sweepbytes");
    let mut outputs = Vec::new();
    for run in 0..2 {
        let csv = dir.join(format!("sweep{}.csv", run));
        let output = bin()
            .args([
                "sweep",
                "--pattern",
                "false_sharing",
                "--ops",
                "100",
                "--working-set",
                "1024",
                "--core-counts",
                "2,4",
                "--level-list",
                "1",
                "--seed",
                "9",
                "--csv",
            ])
            .arg(&csv)
            .output()
            .unwrap();
        assert!(output.status.success(), "{:?}", output);
        outputs.push(std::fs::read(&csv).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    std::fs::remove_dir_all(&dir).ok();
}
