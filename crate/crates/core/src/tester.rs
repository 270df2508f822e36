//! Randomized coherence tester: a pool of checks, each being four byte
//! writes to consecutive addresses issued through randomly chosen cores,
//! followed by a verifying 4-byte read.
//!
//! The bytes of one check issue strictly in order (a new byte only after the
//! previous acked), so the expected read value is always
//! [e, e+1, e+2, e+3] mod 256 for the check's current counter e, while
//! different cores still contend for the same lines.

use std::collections::BTreeMap;
use std::fmt;

use crate::harness::{Completion, Harness};
use crate::l1::MemOp;
use crate::protocol::{coverage_report, CoverageReport, Mutation};
use crate::rng::SplitMix64;
use crate::system::{build_mutated_system, build_system, ConfigError, SimError, SystemConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckPhase {
    Idle,
    /// Writing byte `next` (0..=3); bytes before it are acked.
    Actions {
        next: u8,
    },
    CheckPending,
}

/// One tester unit: a 4-byte-aligned slot cycling through write rounds and
/// verifying reads.
#[derive(Debug, Clone)]
pub struct Check {
    pub base_addr: u64,
    pub expected: u8,
    pub phase: CheckPhase,
    pub outstanding: bool,
    /// Core that issued each byte of the current round.
    pub assigned: [Option<usize>; 4],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckMismatch {
    pub base_addr: u64,
    pub expected: [u8; 4],
    pub got: [u8; 4],
}

impl fmt::Display for CheckMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "check at {:#x}: expected {:02x?}, got {:02x?}",
            self.base_addr, self.expected, self.got
        )
    }
}

impl Check {
    fn new(base_addr: u64) -> Self {
        Self {
            base_addr,
            expected: 0,
            phase: CheckPhase::Idle,
            outstanding: false,
            assigned: [None; 4],
        }
    }

    pub fn expected_bytes(&self) -> [u8; 4] {
        let e = self.expected;
        [e, e.wrapping_add(1), e.wrapping_add(2), e.wrapping_add(3)]
    }

    /// Verify the read data; on pass the counter advances and the check
    /// returns to Idle for the next round.
    pub fn verify(&mut self, read_data: [u8; 4]) -> Result<(), CheckMismatch> {
        debug_assert_eq!(self.phase, CheckPhase::CheckPending);
        let expected = self.expected_bytes();
        if read_data != expected {
            return Err(CheckMismatch {
                base_addr: self.base_addr,
                expected,
                got: read_data,
            });
        }
        self.expected = self.expected.wrapping_add(1);
        self.phase = CheckPhase::Idle;
        self.assigned = [None; 4];
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TesterError {
    SpanTooSmall { needed: u64, got: u64 },
    NoChecks,
}

impl fmt::Display for TesterError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TesterError::SpanTooSmall { needed, got } => {
                write!(f, "span too small: need {} bytes, have {}", needed, got)
            }
            TesterError::NoChecks => write!(f, "need at least one check"),
        }
    }
}

impl std::error::Error for TesterError {}

/// What the tester wants issued next.
#[derive(Debug, Clone, Copy)]
pub struct TesterRequest {
    pub check_idx: usize,
    pub core: usize,
    pub op: MemOp,
    pub addr: u64,
    pub size: u8,
    pub data: [u8; 8],
}

#[derive(Debug, Clone, Copy)]
enum Step {
    WriteByte(u8),
    VerifyRead,
}

#[derive(Debug)]
pub struct Tester {
    checks: Vec<Check>,
    rng: SplitMix64,
    pending: BTreeMap<usize, (usize, Step)>, // entry id -> (check, step)
    pub completions: u64,
}

impl Tester {
    /// Place `n_checks` disjoint 4-byte-aligned slots in the span: half
    /// packed four per line (intra-line sharing), half spread one per line
    /// at a set-aliasing stride so replacements and write-backs happen.
    pub fn new(
        seed: u64,
        n_checks: usize,
        span_base: u64,
        span_len: u64,
        line_bytes: u64,
        alias_stride: u64,
    ) -> Result<Self, TesterError> {
        if n_checks == 0 {
            return Err(TesterError::NoChecks);
        }
        let packed = n_checks / 2;
        let spread = n_checks - packed;
        let packed_lines = packed.div_ceil(4) as u64;
        let stride = alias_stride.max(line_bytes);

        let needed = if packed == 0 {
            spread as u64 * stride
        } else {
            // Spread slots start one stride in, clear of the packed lines.
            packed_lines * line_bytes + spread as u64 * stride
        };
        if span_len < needed {
            return Err(TesterError::SpanTooSmall {
                needed,
                got: span_len,
            });
        }

        let mut checks = Vec::with_capacity(n_checks);
        for j in 0..packed {
            let line = j as u64 / 4;
            let slot = (j as u64 % 4) * 4;
            checks.push(Check::new(span_base + line * line_bytes + slot));
        }
        for k in 0..spread {
            let offset = if packed == 0 {
                k as u64 * stride
            } else {
                (k as u64 + 1) * stride
            };
            checks.push(Check::new(span_base + offset));
        }

        debug_assert!(checks.iter().all(|c| c.base_addr % 4 == 0));
        Ok(Self {
            checks,
            rng: SplitMix64::new(seed),
            pending: BTreeMap::new(),
            completions: 0,
        })
    }

    pub fn checks(&self) -> &[Check] {
        &self.checks
    }

    /// Pick a random ready check and a random idle core; None when nothing
    /// can issue this cycle.
    pub fn next_request(&mut self, idle_cores: &[usize]) -> Option<TesterRequest> {
        if idle_cores.is_empty() {
            return None;
        }
        let ready: Vec<usize> = self
            .checks
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.outstanding)
            .map(|(i, _)| i)
            .collect();
        if ready.is_empty() {
            return None;
        }
        let check_idx = *self.rng.pick(&ready);
        let core = *self.rng.pick(idle_cores);
        let check = &mut self.checks[check_idx];

        let req = match check.phase {
            CheckPhase::Idle | CheckPhase::Actions { .. } => {
                let k = match check.phase {
                    CheckPhase::Idle => 0,
                    CheckPhase::Actions { next } => next,
                    CheckPhase::CheckPending => unreachable!(),
                };
                check.phase = CheckPhase::Actions { next: k };
                check.assigned[k as usize] = Some(core);
                let mut data = [0u8; 8];
                data[0] = check.expected.wrapping_add(k);
                TesterRequest {
                    check_idx,
                    core,
                    op: MemOp::Store,
                    addr: check.base_addr + k as u64,
                    size: 1,
                    data,
                }
            }
            CheckPhase::CheckPending => TesterRequest {
                check_idx,
                core,
                op: MemOp::Load,
                addr: check.base_addr,
                size: 4,
                data: [0; 8],
            },
        };
        check.outstanding = true;
        Some(req)
    }

    pub fn note_submitted(&mut self, entry_id: usize, req: &TesterRequest) {
        let step = match req.op {
            MemOp::Store => {
                let k = (req.addr - self.checks[req.check_idx].base_addr) as u8;
                Step::WriteByte(k)
            }
            MemOp::Load => Step::VerifyRead,
        };
        self.pending.insert(entry_id, (req.check_idx, step));
    }

    /// Advance the owning check on an acknowledged request; verifying reads
    /// either pass (counting a completion) or report the mismatch.
    pub fn on_completion(&mut self, completion: &Completion) -> Result<(), CheckMismatch> {
        let Some((check_idx, step)) = self.pending.remove(&completion.entry_id) else {
            return Ok(());
        };
        let check = &mut self.checks[check_idx];
        check.outstanding = false;
        match step {
            Step::WriteByte(k) => {
                if k == 3 {
                    check.phase = CheckPhase::CheckPending;
                } else {
                    check.phase = CheckPhase::Actions { next: k + 1 };
                }
            }
            Step::VerifyRead => {
                let mut bytes = [0u8; 4];
                bytes.copy_from_slice(&completion.data[..4]);
                check.verify(bytes)?;
                self.completions += 1;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RandtestParams {
    pub n_checks: usize,
    pub target_completions: u64,
    pub span_base: u64,
    pub span_len: u64,
    /// Invariant-walker period; randtest defaults to every cycle.
    pub walker_interval: u64,
    pub fast_forward: bool,
}

impl Default for RandtestParams {
    fn default() -> Self {
        Self {
            n_checks: 16,
            target_completions: 10_000,
            span_base: 0x1_0000,
            span_len: 1 << 20,
            walker_interval: 1,
            fast_forward: true,
        }
    }
}

#[derive(Debug)]
pub struct RandtestReport {
    pub completions: u64,
    pub mismatches: u64,
    pub cycles: u64,
    pub skipped_cycles: u64,
    pub requests: u64,
    pub l1_coverage: CoverageReport,
    pub final_hash: u64,
}

#[derive(Debug)]
pub enum RandtestError {
    Config(ConfigError),
    Tester(TesterError),
    Sim(SimError),
    /// A verifying read returned the wrong bytes.
    Check {
        mismatch: CheckMismatch,
        cycle: u64,
    },
}

impl fmt::Display for RandtestError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RandtestError::Config(e) => e.fmt(f),
            RandtestError::Tester(e) => e.fmt(f),
            RandtestError::Sim(e) => e.fmt(f),
            RandtestError::Check { mismatch, cycle } => {
                write!(f, "cycle {}: {}", cycle, mismatch)
            }
        }
    }
}

impl std::error::Error for RandtestError {}

/// Drive a built system with the random tester until the target number of
/// completed check rounds. Any mismatch or invariant violation aborts.
pub fn run_randtest(
    config: SystemConfig,
    params: &RandtestParams,
) -> Result<RandtestReport, RandtestError> {
    let system = build_system(config).map_err(RandtestError::Config)?;
    run_randtest_on(system, params)
}

/// Same soak with one seeded protocol bug; used by the mutation suite,
/// which expects an error before the target is reached.
pub fn run_randtest_mutated(
    config: SystemConfig,
    mutation: Mutation,
    params: &RandtestParams,
) -> Result<RandtestReport, RandtestError> {
    let system = build_mutated_system(config, mutation).map_err(RandtestError::Config)?;
    run_randtest_on(system, params)
}

fn run_randtest_on(
    mut system: crate::system::System,
    params: &RandtestParams,
) -> Result<RandtestReport, RandtestError> {
    let alias_stride = system.config.l1.sets() * system.config.l1.line_bytes;
    let mut tester = Tester::new(
        system.config.seed,
        params.n_checks,
        params.span_base,
        params.span_len,
        system.config.l1.line_bytes,
        alias_stride,
    )
    .map_err(RandtestError::Tester)?;

    let mut harness = Harness::new(&system);
    harness.fast_forward = params.fast_forward;
    harness.walker_interval = params.walker_interval;

    while tester.completions < params.target_completions {
        loop {
            let idle: Vec<usize> = (0..system.n_cores())
                .filter(|&c| harness.core_idle(c))
                .collect();
            let Some(req) = tester.next_request(&idle) else {
                break;
            };
            let entry_id = harness
                .submit(
                    &system,
                    req.core,
                    req.op,
                    req.addr,
                    req.size,
                    Some(&req.data),
                )
                .expect("tester requests are well-formed");
            tester.note_submitted(entry_id, &req);
        }

        let completions = harness.cycle(&mut system).map_err(RandtestError::Sim)?;
        for completion in &completions {
            tester
                .on_completion(completion)
                .map_err(|mismatch| RandtestError::Check {
                    mismatch,
                    cycle: system.cycle(),
                })?;
        }
    }

    let report = RandtestReport {
        completions: tester.completions,
        mismatches: 0,
        cycles: system.cycle(),
        skipped_cycles: harness.skipped_cycles,
        requests: system.collect_stats().total_requests(),
        l1_coverage: coverage_report(&system.cov, &system.tables().l1),
        final_hash: system.state_hash(),
    };
    Ok(report)
}
