//! Synthetic workload generators: desk-scale request streams, each aimed at
//! one coherence behavior. Streams are pure functions of
//! (pattern, ops_per_core, working_set, core count, seed).

use coherence_core::harness::TraceRecord;
use coherence_core::rng::SplitMix64;
use coherence_core::MemOp;

pub const SYNTH_BASE: u64 = 0x10_0000;
const LINE: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthPattern {
    /// Disjoint per-core regions, store-first per line: no sharing at all.
    PrivateStream,
    /// Every core scans the same read-only region: pure read sharing.
    SharedRead,
    /// A line-granular ring handoff from each core to its neighbor:
    /// migratory ownership.
    ProducerConsumer,
    /// All cores write different bytes of the same lines: false sharing.
    FalseSharing,
}

impl SynthPattern {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "private_stream" => Some(SynthPattern::PrivateStream),
            "shared_read" => Some(SynthPattern::SharedRead),
            "producer_consumer" => Some(SynthPattern::ProducerConsumer),
            "false_sharing" => Some(SynthPattern::FalseSharing),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SynthPattern::PrivateStream => "private_stream",
            SynthPattern::SharedRead => "shared_read",
            SynthPattern::ProducerConsumer => "producer_consumer",
            SynthPattern::FalseSharing => "false_sharing",
        }
    }

    pub const ALL: [SynthPattern; 4] = [
        SynthPattern::PrivateStream,
        SynthPattern::SharedRead,
        SynthPattern::ProducerConsumer,
        SynthPattern::FalseSharing,
    ];
}

#[derive(Debug, Clone, Copy)]
pub struct SynthWorkload {
    pub pattern: SynthPattern,
    pub ops_per_core: usize,
    pub working_set_bytes: u64,
}

pub fn generate(w: &SynthWorkload, n_cores: usize, seed: u64) -> Vec<TraceRecord> {
    let mut rng = SplitMix64::new(seed);
    let total = w.ops_per_core * n_cores;
    let mut records = Vec::with_capacity(total);
    match w.pattern {
        SynthPattern::PrivateStream => {
            let span = (w.working_set_bytes / n_cores as u64) & !(LINE - 1);
            let span = span.max(LINE);
            for i in 0..w.ops_per_core {
                for core in 0..n_cores {
                    let base = SYNTH_BASE + core as u64 * span;
                    let offset = (i as u64 * 4) % span;
                    // Store on first touch of each line so both protocols
                    // walk identical transaction sequences.
                    let op = if offset.is_multiple_of(LINE) {
                        MemOp::Store
                    } else {
                        MemOp::Load
                    };
                    records.push(TraceRecord {
                        core,
                        op,
                        addr: base + offset,
                        size: 4,
                        data: None,
                    });
                }
            }
        }
        SynthPattern::SharedRead => {
            // One line per op: every access lands on a different shared
            // line, so protocols that cannot retain shared copies pay a
            // coherence transaction per op.
            let lines = (w.working_set_bytes / LINE).max(1);
            for i in 0..w.ops_per_core {
                for core in 0..n_cores {
                    // Phase-shift each core so no two cores walk the same
                    // line at the same op index.
                    let line = (i as u64 + core as u64 * 7) % lines;
                    records.push(TraceRecord {
                        core,
                        op: MemOp::Load,
                        addr: SYNTH_BASE + line * LINE,
                        size: 4,
                        data: None,
                    });
                }
            }
        }
        SynthPattern::ProducerConsumer => {
            let slots = (w.working_set_bytes / LINE).max(1);
            let rounds = (total / 2).max(1);
            for r in 0..rounds {
                let producer = r % n_cores;
                let consumer = (producer + 1) % n_cores;
                let addr = SYNTH_BASE + (r as u64 % slots) * LINE;
                let mut data = [0u8; 8];
                data[..4].copy_from_slice(&(r as u32).to_le_bytes());
                records.push(TraceRecord {
                    core: producer,
                    op: MemOp::Store,
                    addr,
                    size: 4,
                    data: Some(data),
                });
                records.push(TraceRecord {
                    core: consumer,
                    op: MemOp::Load,
                    addr,
                    size: 4,
                    data: None,
                });
            }
        }
        SynthPattern::FalseSharing => {
            let lines = (w.working_set_bytes / LINE).max(1);
            for i in 0..w.ops_per_core {
                for core in 0..n_cores {
                    let line = rng.below(lines);
                    let addr = SYNTH_BASE + line * LINE + (core as u64 % LINE);
                    let op = if i % 4 == 3 {
                        MemOp::Load
                    } else {
                        MemOp::Store
                    };
                    records.push(TraceRecord {
                        core,
                        op,
                        addr,
                        size: 1,
                        data: None,
                    });
                }
            }
        }
    }
    records
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_pure_functions_of_inputs() {
        let w = SynthWorkload {
            pattern: SynthPattern::FalseSharing,
            ops_per_core: 100,
            working_set_bytes: 1024,
        };
        assert_eq!(generate(&w, 4, 9), generate(&w, 4, 9));
        assert_ne!(generate(&w, 4, 9), generate(&w, 4, 10));
    }

    #[test]
    fn private_stream_regions_disjoint() {
        let w = SynthWorkload {
            pattern: SynthPattern::PrivateStream,
            ops_per_core: 256,
            working_set_bytes: 16 * 1024,
        };
        let records = generate(&w, 4, 0);
        let span = 4 * 1024u64;
        for r in &records {
            let base = SYNTH_BASE + r.core as u64 * span;
            assert!(r.addr >= base && r.addr < base + span);
        }
    }

    #[test]
    fn shared_read_is_loads_only_within_span() {
        let w = SynthWorkload {
            pattern: SynthPattern::SharedRead,
            ops_per_core: 64,
            working_set_bytes: 1024,
        };
        let records = generate(&w, 8, 0);
        assert_eq!(records.len(), 64 * 8);
        for r in &records {
            assert_eq!(r.op, MemOp::Load);
            assert!(r.addr >= SYNTH_BASE && r.addr < SYNTH_BASE + 1024);
        }
    }

    #[test]
    fn producer_consumer_alternates_neighbors() {
        let w = SynthWorkload {
            pattern: SynthPattern::ProducerConsumer,
            ops_per_core: 10,
            working_set_bytes: 4 * LINE,
        };
        let records = generate(&w, 4, 0);
        for pair in records.chunks(2) {
            assert_eq!(pair[0].op, MemOp::Store);
            assert_eq!(pair[1].op, MemOp::Load);
            assert_eq!(pair[0].addr, pair[1].addr);
            assert_eq!((pair[0].core + 1) % 4, pair[1].core);
        }
    }

    #[test]
    fn false_sharing_hits_distinct_bytes_of_shared_lines() {
        let w = SynthWorkload {
            pattern: SynthPattern::FalseSharing,
            ops_per_core: 50,
            working_set_bytes: 2 * LINE,
        };
        let records = generate(&w, 4, 1);
        for r in &records {
            assert_eq!(r.size, 1);
            assert_eq!((r.addr - SYNTH_BASE) % LINE, r.core as u64);
        }
    }
}
