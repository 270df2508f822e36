//! System assembly: N L1 controllers, the interconnect, the memory side,
//! and a deterministic two-phase cycle engine with a global invariant
//! walker.
//!
//! Phase order within one tick: L1 FSMs -> channel arbiters -> interconnect
//! FSMs -> commit. Messages staged during a tick become visible at the next
//! one, so identical state and inputs always produce identical results.

use std::fmt;

use crate::bus::{self, Opcode};
use crate::cache::CacheGeometry;
use crate::interconnect::Interconnect;
use crate::l1::{CpuRequest, L1Controller};
use crate::memside::{MainMemory, MemSide};
use crate::protocol::{
    protocol_table, protocol_table_mutated, CoverageCounters, DirState, LineState, Mutation,
    ProtocolId, ProtocolTables, ProtocolViolation,
};
use crate::stats::{LatencyHistogram, StatsBundle};
use crate::util::Fnv;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub field: String,
    pub reason: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error in `{}`: {}", self.field, self.reason)
    }
}

impl std::error::Error for ConfigError {}

fn cfg_err(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError {
        field: field.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub n_cores: usize,
    pub cache_levels: u8,
    pub l1: CacheGeometry,
    pub l2_count: usize,
    pub l2: CacheGeometry,
    pub bus_width_bits: u32,
    /// None resolves to 2 x n_cores: each core has at most one outstanding
    /// request, so that depth never back-pressures.
    pub fifo_depth: Option<usize>,
    pub mem_first_latency: u64,
    pub mem_per_beat_latency: u64,
    pub l2_hit_latency: u64,
    pub mem_size_bytes: u64,
    pub protocol: ProtocolId,
    pub seed: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            n_cores: 4,
            cache_levels: 1,
            l1: CacheGeometry::new(8 * 1024, 4, 64),
            l2_count: 2,
            l2: CacheGeometry::new(256 * 1024, 8, 64),
            bus_width_bits: 32,
            fifo_depth: None,
            mem_first_latency: 100,
            mem_per_beat_latency: 1,
            l2_hit_latency: 10,
            mem_size_bytes: 1 << 30,
            protocol: ProtocolId::Msi,
            seed: 0,
        }
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_cores == 0 || self.n_cores > 64 || !self.n_cores.is_power_of_two() {
            return Err(cfg_err(
                "n_cores",
                format!("{} is not a power of two in 1..=64", self.n_cores),
            ));
        }
        if !(1..=2).contains(&self.cache_levels) {
            return Err(cfg_err("cache_levels", "must be 1 or 2"));
        }
        self.l1.validate().map_err(|r| cfg_err("l1", r))?;
        if self.cache_levels == 2 {
            self.l2.validate().map_err(|r| cfg_err("l2", r))?;
            if self.l2_count == 0 || !self.l2_count.is_power_of_two() {
                return Err(cfg_err(
                    "l2_count",
                    format!("{} is not a power of two >= 1", self.l2_count),
                ));
            }
            if self.l2.line_bytes != self.l1.line_bytes {
                return Err(cfg_err("l2", "line_bytes must match l1"));
            }
        }
        if ![8, 16, 32, 64].contains(&self.bus_width_bits) {
            return Err(cfg_err("bus_width_bits", "must be 8, 16, 32 or 64"));
        }
        if !(self.l1.line_bytes * 8).is_multiple_of(self.bus_width_bits as u64) {
            return Err(cfg_err(
                "bus_width_bits",
                "must divide line_bytes * 8 evenly",
            ));
        }
        if let Some(depth) = self.fifo_depth {
            if depth < 2 {
                return Err(cfg_err("fifo_depth", "must be at least 2"));
            }
        }
        if self.mem_size_bytes == 0 || !self.mem_size_bytes.is_multiple_of(self.l1.line_bytes) {
            return Err(cfg_err(
                "mem_size_bytes",
                "must be a non-zero multiple of line_bytes",
            ));
        }
        Ok(())
    }

    pub fn resolved_fifo_depth(&self) -> usize {
        self.fifo_depth.unwrap_or(2 * self.n_cores)
    }

    pub fn beats_per_line(&self) -> u32 {
        bus::beats_per_line(self.l1.line_bytes, self.bus_width_bits)
    }

    pub fn mem_access_latency(&self) -> u64 {
        self.mem_first_latency + self.mem_per_beat_latency * self.beats_per_line() as u64
    }

    /// Worst-case request-to-ack bound used by the liveness watchdog:
    /// one transaction per contending core plus eviction and drain slack,
    /// with a 2x safety factor.
    pub fn watchdog_bound(&self) -> u64 {
        let per_txn = 2 * self.mem_access_latency()
            + 8 * self.beats_per_line() as u64
            + self.l2_hit_latency
            + 256;
        2 * (self.n_cores as u64 + 4) * per_txn + 8 * self.resolved_fifo_depth() as u64
    }
}

#[derive(Debug)]
pub enum SimError {
    Protocol {
        violation: ProtocolViolation,
        cycle: u64,
        core: Option<usize>,
    },
    Invariant {
        violations: Vec<String>,
        cycle: u64,
    },
    DataMismatch {
        cycle: u64,
        core: usize,
        op: &'static str,
        addr: u64,
        expected: Vec<u8>,
        got: Vec<u8>,
    },
    Watchdog {
        cycle: u64,
        core: usize,
        issued_at: u64,
        bound: u64,
    },
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::Protocol {
                violation,
                cycle,
                core,
            } => match core {
                Some(c) => write!(f, "cycle {} core {}: {}", cycle, c, violation),
                None => write!(f, "cycle {}: {}", cycle, violation),
            },
            SimError::Invariant { violations, cycle } => {
                write!(
                    f,
                    "cycle {}: {} invariant violation(s):",
                    cycle,
                    violations.len()
                )?;
                for v in violations {
                    write!(f, "\n  {}", v)?;
                }
                Ok(())
            }
            SimError::DataMismatch {
                cycle,
                core,
                op,
                addr,
                expected,
                got,
            } => {
                let hex = |bytes: &[u8]| -> String {
                    bytes.iter().map(|b| format!("{:02x}", b)).collect()
                };
                // Failure dump: cycle,core,op,addr,expected_hex,got_hex
                write!(
                    f,
                    "scoreboard mismatch: {},{},{},{:#x},{},{}",
                    cycle,
                    core,
                    op,
                    addr,
                    hex(expected),
                    hex(got)
                )
            }
            SimError::Watchdog {
                cycle,
                core,
                issued_at,
                bound,
            } => write!(
                f,
                "cycle {} core {}: request issued at {} exceeded liveness bound {}",
                cycle, core, issued_at, bound
            ),
        }
    }
}

impl std::error::Error for SimError {}

#[derive(Debug)]
pub struct System {
    pub config: SystemConfig,
    tables: ProtocolTables,
    pub cov: CoverageCounters,
    cores: Vec<L1Controller>,
    ic: Interconnect,
    pub memside: MemSide,
    cycle: u64,
    latency: Vec<LatencyHistogram>,
    bus_trace: Option<Vec<String>>,
}

/// Wire up a system from a validated config; deterministic initial state.
pub fn build_system(config: SystemConfig) -> Result<System, ConfigError> {
    build_system_with_tables(config, None)
}

/// Same, but with one seeded protocol-table bug for the mutation suite.
pub fn build_mutated_system(
    config: SystemConfig,
    mutation: Mutation,
) -> Result<System, ConfigError> {
    build_system_with_tables(config, Some(mutation))
}

fn build_system_with_tables(
    config: SystemConfig,
    mutation: Option<Mutation>,
) -> Result<System, ConfigError> {
    config.validate()?;
    let tables = match mutation {
        None => protocol_table(config.protocol),
        Some(m) => protocol_table_mutated(config.protocol, m),
    }
    .map_err(|e| cfg_err("protocol", e.to_string()))?;

    let beats = config.beats_per_line();
    let cores = (0..config.n_cores)
        .map(|id| L1Controller::new(id, config.l1, config.bus_width_bits))
        .collect();
    let memory = MainMemory::new(
        config.mem_size_bytes,
        config.l1.line_bytes,
        config.mem_first_latency,
        config.mem_per_beat_latency,
        beats as u64,
    );
    let memside = MemSide::new(
        memory,
        (config.cache_levels == 2).then_some((config.l2, config.l2_count)),
        config.l2_hit_latency,
    );
    let ic = Interconnect::new(
        config.n_cores,
        config.resolved_fifo_depth(),
        config.l1.line_bytes,
        beats,
    );
    let latency = vec![LatencyHistogram::default(); config.n_cores];

    Ok(System {
        config,
        tables,
        cov: CoverageCounters::new(),
        cores,
        ic,
        memside,
        cycle: 0,
        latency,
        bus_trace: None,
    })
}

impl System {
    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn n_cores(&self) -> usize {
        self.cores.len()
    }

    pub fn tables(&self) -> &ProtocolTables {
        &self.tables
    }

    pub fn core(&self, id: usize) -> &L1Controller {
        &self.cores[id]
    }

    pub fn interconnect(&self) -> &Interconnect {
        &self.ic
    }

    /// Drive a CPU request into an idle port (the harness's issue phase).
    pub fn drive(&mut self, core: usize, req: CpuRequest) {
        let port = &mut self.cores[core].port;
        assert!(port.request.is_none(), "core {} port already driven", core);
        port.request = Some(req);
        port.in_service = false;
    }

    pub fn ack(&self, core: usize) -> bool {
        self.cores[core].port.ack
    }

    pub fn response(&self, core: usize) -> Option<[u8; 8]> {
        self.cores[core].port.response
    }

    pub fn controller_busy(&self, core: usize) -> bool {
        self.cores[core].busy() || self.cores[core].port.request.is_some()
    }

    /// Reset the port after an acknowledged request has been consumed.
    pub fn clear_request(&mut self, core: usize) {
        let port = &mut self.cores[core].port;
        port.request = None;
        port.in_service = false;
        port.response = None;
        port.ack = false;
    }

    pub fn record_request_latency(&mut self, core: usize, cycles: u64) {
        self.latency[core].record(cycles);
    }

    /// Advance exactly one cycle.
    pub fn tick(&mut self) -> Result<(), SimError> {
        for core in &mut self.cores {
            core.clear_ack();
        }

        // Phase 1: L1 controllers, ascending id.
        for i in 0..self.cores.len() {
            self.cores[i]
                .step(&self.tables, &mut self.cov)
                .map_err(|violation| SimError::Protocol {
                    violation,
                    cycle: self.cycle,
                    core: Some(i),
                })?;
        }

        // Phase 2: channel arbiters.
        self.arbiter_phase()?;

        // Phase 3: interconnect FSMs.
        self.ic
            .step(
                self.cycle,
                &mut self.cores,
                &mut self.memside,
                &self.tables,
                &mut self.cov,
                &mut self.bus_trace,
            )
            .map_err(|violation| SimError::Protocol {
                violation,
                cycle: self.cycle,
                core: None,
            })?;

        // Phase 4: commit.
        self.ic.commit();
        for core in &mut self.cores {
            core.commit_inboxes();
        }
        self.cycle += 1;
        Ok(())
    }

    /// The fast-forward path: advance the clock without evaluating anything.
    /// Only legal when `quiescent()`; observationally identical to `tick`.
    pub fn skip_cycle(&mut self) {
        debug_assert!(self.quiescent());
        self.cycle += 1;
    }

    /// Nothing queued, pending, or in flight anywhere.
    pub fn quiescent(&self) -> bool {
        self.cores.iter().all(|c| c.quiescent()) && self.ic.quiescent()
    }

    fn arbiter_phase(&mut self) -> Result<(), SimError> {
        // AW: a new write-back may not open while another burst is still in
        // flight, and no retirement of the line under the active read
        // transaction may be granted.
        let w_busy = self.cores.iter().any(|c| c.w_stream_active())
            || !self.ic.w_fifo.is_drained()
            || self.ic.wb_collecting();
        let active = self.ic.active_read_line();
        if self.ic.aw_fifo.has_space() {
            let cores = &self.cores;
            let grant = self.ic.aw_arb.arbitrate(|c| match cores[c].aw_wish() {
                Some((opcode, line)) => {
                    (opcode != Opcode::WriteBack || !w_busy) && Some(line) != active
                }
                None => false,
            });
            if let Some(c) = grant {
                let msg = self.cores[c]
                    .on_aw_granted(&self.tables, &mut self.cov)
                    .map_err(|violation| SimError::Protocol {
                        violation,
                        cycle: self.cycle,
                        core: Some(c),
                    })?;
                self.ic.log_push(&mut self.bus_trace, self.cycle, &msg);
                let pushed = self.ic.aw_fifo.push(msg);
                debug_assert!(pushed);
            }
        }

        if self.ic.w_fifo.has_space() {
            let cores = &self.cores;
            let grant = self.ic.w_arb.arbitrate(|c| cores[c].w_stream_active());
            if let Some(c) = grant {
                let msg = self.cores[c].on_w_granted();
                self.ic.log_push(&mut self.bus_trace, self.cycle, &msg);
                let pushed = self.ic.w_fifo.push(msg);
                debug_assert!(pushed);
            }
        }

        if self.ic.ar_fifo.has_space() {
            let cores = &self.cores;
            let grant = self.ic.ar_arb.arbitrate(|c| cores[c].ar_wish().is_some());
            if let Some(c) = grant {
                let msg = self.cores[c].on_ar_granted();
                self.ic.log_push(&mut self.bus_trace, self.cycle, &msg);
                let pushed = self.ic.ar_fifo.push(msg);
                debug_assert!(pushed);
            }
        }

        if self.ic.cr_fifo.has_space() {
            let cores = &self.cores;
            let grant = self.ic.cr_arb.arbitrate(|c| cores[c].cr_wish().is_some());
            if let Some(c) = grant {
                let msg = self.cores[c].on_cr_granted();
                self.ic.log_push(&mut self.bus_trace, self.cycle, &msg);
                let pushed = self.ic.cr_fifo.push(msg);
                debug_assert!(pushed);
            }
        }

        if self.ic.cd_fifo.has_space() {
            let cores = &self.cores;
            let grant = self.ic.cd_arb.arbitrate(|c| cores[c].has_cd_beat());
            if let Some(c) = grant {
                let msg = self.cores[c].on_cd_granted();
                self.ic.log_push(&mut self.bus_trace, self.cycle, &msg);
                let pushed = self.ic.cd_fifo.push(msg);
                debug_assert!(pushed);
            }
        }
        Ok(())
    }

    /// Walk every line known to the directory or resident in any cache and
    /// report SWMR / directory-mirror / bookkeeping violations. Lines under
    /// the read FSM's active transaction are exempt from the mirror rules
    /// (their directory update is committed at the serialization point,
    /// before the snoops land).
    pub fn check_global_invariants(&self) -> Vec<String> {
        let mut violations = Vec::new();
        let active = self.ic.active_read_line();

        // One pass over every resident line gathers all holders, so the
        // walk costs O(resident + directory) rather than lines x cores.
        let mut holders: std::collections::BTreeMap<u64, Vec<(usize, LineState)>> =
            std::collections::BTreeMap::new();
        for (c, core) in self.cores.iter().enumerate() {
            for (addr, cache_line) in core.array.resident_lines() {
                if cache_line.dirty && cache_line.state != LineState::M {
                    violations.push(format!(
                        "dirty line {:#x} at core {} in state {}",
                        addr, c, cache_line.state
                    ));
                }
                holders.entry(addr).or_default().push((c, cache_line.state));
            }
        }
        let mut lines: std::collections::BTreeSet<u64> = holders.keys().copied().collect();
        for (addr, _) in self.ic.directory.iter() {
            lines.insert(*addr);
        }

        for &line in &lines {
            let empty = Vec::new();
            let line_holders = holders.get(&line).unwrap_or(&empty);
            let state_of = |c: usize| -> LineState {
                line_holders
                    .iter()
                    .find(|(h, _)| *h == c)
                    .map(|(_, s)| *s)
                    .unwrap_or(LineState::I)
            };
            let m_holders: Vec<usize> = line_holders
                .iter()
                .filter(|(_, s)| *s == LineState::M)
                .map(|(c, _)| *c)
                .collect();
            let s_holders: Vec<usize> = line_holders
                .iter()
                .filter(|(_, s)| *s == LineState::S)
                .map(|(c, _)| *c)
                .collect();
            // SWMR holds unconditionally, including mid-transaction.
            if m_holders.len() > 1 {
                violations.push(format!(
                    "SWMR: line {:#x} in M at cores {:?}",
                    line, m_holders
                ));
            }
            if m_holders.len() == 1 && !s_holders.is_empty() {
                violations.push(format!(
                    "SWMR: line {:#x} in M at core {} and S at cores {:?}",
                    line, m_holders[0], s_holders
                ));
            }

            if Some(line) == active {
                continue;
            }

            match self.ic.directory.state_of(line) {
                DirState::Uncached => {
                    if !m_holders.is_empty() || !s_holders.is_empty() {
                        violations.push(format!(
                            "mirror: line {:#x} has no directory entry but holders M{:?} S{:?}",
                            line, m_holders, s_holders
                        ));
                    }
                }
                DirState::Shared(sharers) => {
                    if sharers.is_empty() {
                        violations.push(format!("mirror: line {:#x} Shared with no sharers", line));
                    }
                    if !m_holders.is_empty() {
                        violations.push(format!(
                            "mirror: line {:#x} Shared but in M at cores {:?}",
                            line, m_holders
                        ));
                    }
                    for &c in &s_holders {
                        if !sharers.contains(c) {
                            violations.push(format!(
                                "mirror: line {:#x} in S at core {} missing from sharers {}",
                                line, c, sharers
                            ));
                        }
                    }
                    // Every sharer must still hold the line, modulo an
                    // in-flight retirement or fill.
                    for c in sharers.iter().filter(|&c| c < self.cores.len()) {
                        let holding = matches!(state_of(c), LineState::S | LineState::SiA)
                            || self.cores[c].mshr.entry().is_some_and(|e| {
                                e.line_addr == line && e.transient.is_fetch_transient()
                            });
                        if !holding {
                            violations.push(format!(
                                "mirror: line {:#x} sharer {} holds {} instead of the line",
                                line,
                                c,
                                state_of(c)
                            ));
                        }
                    }
                }
                DirState::Modified { owner } => {
                    for &c in s_holders.iter().chain(m_holders.iter()) {
                        if c != owner {
                            violations.push(format!(
                                "mirror: line {:#x} Modified(owner={}) but held at core {}",
                                line, owner, c
                            ));
                        }
                    }
                    let owner_state = state_of(owner);
                    let owner_ok = owner_state == LineState::M
                        || owner_state == LineState::MiA
                        || self.cores[owner].mshr.entry().is_some_and(|e| {
                            e.line_addr == line && e.transient.is_fetch_transient()
                        });
                    if !owner_ok {
                        violations.push(format!(
                            "mirror: line {:#x} Modified(owner={}) but owner holds {}",
                            line, owner, owner_state
                        ));
                    }
                }
            }
        }

        if !self.ic.conservation_holds() {
            violations.push("FIFO conservation: pushed != popped + resident".to_string());
        }
        if !self.memside.banks_disjoint() {
            violations.push("L2 banks share a line address".to_string());
        }
        violations
    }

    pub fn collect_stats(&self) -> StatsBundle {
        StatsBundle::collect(self)
    }

    pub(crate) fn stats_parts(
        &self,
    ) -> (
        &[L1Controller],
        &Interconnect,
        &MemSide,
        &[LatencyHistogram],
        u64,
    ) {
        (
            &self.cores,
            &self.ic,
            &self.memside,
            &self.latency,
            self.cycle,
        )
    }

    /// Deterministic digest of the full architectural state.
    pub fn state_hash(&self) -> u64 {
        let mut h = Fnv::new();
        h.write_u64(self.cycle);
        for core in &self.cores {
            core.hash_into(&mut h);
        }
        self.ic.hash_into(&mut h);
        self.memside.hash_into(&mut h);
        h.finish()
    }

    /// Retire every modified L1 line and flush the L2 banks so main memory
    /// reflects all completed stores (end-of-run verification only).
    pub fn flush_for_check(&mut self) {
        for core in &mut self.cores {
            let dirty: Vec<(u64, Vec<u8>)> = core
                .array
                .resident_lines()
                .filter(|(_, l)| l.state == LineState::M)
                .map(|(a, l)| (a, l.data.clone()))
                .collect();
            for (addr, data) in dirty {
                self.memside.write_line(addr, &data).unwrap();
            }
        }
        self.memside.flush_l2();
    }

    pub fn set_bus_trace(&mut self, enabled: bool) {
        self.bus_trace = if enabled { Some(Vec::new()) } else { None };
    }

    pub fn take_bus_trace(&mut self) -> Vec<String> {
        self.bus_trace.take().unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::SharerSet;

    fn fresh() -> System {
        build_system(SystemConfig::default()).unwrap()
    }

    #[test]
    fn defaults_build_with_expected_geometry() {
        let system = fresh();
        assert_eq!(system.n_cores(), 4);
        assert_eq!(system.config.l1.sets(), 32);
        assert_eq!(system.config.beats_per_line(), 16);
        assert!(system.quiescent());
        assert!(system.check_global_invariants().is_empty());
    }

    #[test]
    fn two_level_build() {
        let config = SystemConfig {
            n_cores: 16,
            cache_levels: 2,
            ..SystemConfig::default()
        };
        let system = build_system(config).unwrap();
        assert_eq!(system.memside.bank_stats().len(), 2);
        assert_eq!(system.config.l2.sets(), 512);
    }

    #[test]
    fn config_errors_name_the_field() {
        let config = SystemConfig {
            l1: crate::cache::CacheGeometry::new(8 * 1024 + 64, 4, 64),
            ..SystemConfig::default()
        };
        let err = build_system(config).unwrap_err();
        assert_eq!(err.field, "l1");

        let err = build_system(SystemConfig {
            n_cores: 3,
            ..SystemConfig::default()
        })
        .unwrap_err();
        assert_eq!(err.field, "n_cores");

        let err = build_system(SystemConfig {
            bus_width_bits: 48,
            ..SystemConfig::default()
        })
        .unwrap_err();
        assert_eq!(err.field, "bus_width_bits");
    }

    #[test]
    fn idle_tick_changes_only_the_cycle() {
        let mut system = fresh();
        let stats_before = system.collect_stats();
        system.tick().unwrap();
        assert_eq!(system.cycle(), 1);
        assert!(system.quiescent());
        let stats_after = system.collect_stats();
        assert_eq!(stats_after.total_requests(), stats_before.total_requests());
        assert!(!system.ack(0));
    }

    #[test]
    fn skip_cycle_matches_idle_tick() {
        let mut ticked = fresh();
        let mut skipped = fresh();
        for _ in 0..10 {
            ticked.tick().unwrap();
            skipped.skip_cycle();
        }
        assert_eq!(ticked.state_hash(), skipped.state_hash());
    }

    #[test]
    fn walker_flags_double_modified() {
        let mut system = fresh();
        let data = vec![0u8; 64];
        system.cores[0]
            .array
            .fill(0x1000, &data, LineState::M)
            .unwrap();
        system.cores[1]
            .array
            .fill(0x1000, &data, LineState::M)
            .unwrap();
        let violations = system.check_global_invariants();
        assert!(
            violations.iter().any(|v| v.contains("SWMR")),
            "{:?}",
            violations
        );
    }

    #[test]
    fn walker_flags_modified_beside_shared() {
        let mut system = fresh();
        let data = vec![0u8; 64];
        system.cores[0]
            .array
            .fill(0x1000, &data, LineState::M)
            .unwrap();
        system.cores[1]
            .array
            .fill(0x1000, &data, LineState::S)
            .unwrap();
        let violations = system.check_global_invariants();
        assert!(
            violations
                .iter()
                .any(|v| v.contains("SWMR") && v.contains("S at")),
            "{:?}",
            violations
        );
    }

    #[test]
    fn walker_flags_stale_sharer() {
        let mut system = fresh();
        system
            .ic
            .directory
            .set(0x1000, DirState::Shared(SharerSet::single(0)));
        let violations = system.check_global_invariants();
        assert!(
            violations.iter().any(|v| v.contains("sharer 0")),
            "{:?}",
            violations
        );
    }

    #[test]
    fn walker_flags_holder_without_directory_entry() {
        let mut system = fresh();
        let data = vec![0u8; 64];
        system.cores[2]
            .array
            .fill(0x1000, &data, LineState::S)
            .unwrap();
        let violations = system.check_global_invariants();
        assert!(
            violations.iter().any(|v| v.contains("no directory entry")),
            "{:?}",
            violations
        );
    }

    #[test]
    fn walker_flags_wrong_owner() {
        let mut system = fresh();
        let data = vec![0u8; 64];
        system.cores[1]
            .array
            .fill(0x1000, &data, LineState::M)
            .unwrap();
        system
            .ic
            .directory
            .set(0x1000, DirState::Modified { owner: 0 });
        let violations = system.check_global_invariants();
        assert!(
            violations.iter().any(|v| v.contains("Modified(owner=0)")),
            "{:?}",
            violations
        );
    }

    #[test]
    fn watchdog_bound_scales_with_cores() {
        let small = SystemConfig::default().watchdog_bound();
        let big = SystemConfig {
            n_cores: 16,
            ..SystemConfig::default()
        }
        .watchdog_bound();
        assert!(big > small);
        assert!(small > SystemConfig::default().mem_access_latency());
    }
}
