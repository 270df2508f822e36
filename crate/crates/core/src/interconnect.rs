//! The coherent bus: per-channel arbiters feeding five request FIFOs, a
//! full-map directory, a write-back FSM (no snooping), a read FSM (with
//! snooping), and the memory/directory arbiters between them.
//!
//! Serialization discipline:
//!   * the read FSM holds at most one transaction and starts a new one only
//!     when the write-back path (AW/W FIFOs plus the write-back FSM) is
//!     fully drained;
//!   * the AW arbiter never grants a retirement of the line the read FSM is
//!     currently transacting on.
//!
//! Together these keep snoops away from lines with an in-flight retirement,
//! so a snoop can only reach stable S/M lines or a queued upgrade.

use std::collections::BTreeMap;

use crate::bus::{BusMessage, Channel, ChannelFifo, Opcode, RrArbiter};
use crate::l1::{L1Controller, RDelivery, SnoopReq};
use crate::memside::MemSide;
use crate::protocol::{
    dir_transition, CoverageCounters, DirAction, DirEvent, DirState, ProtocolTables,
    ProtocolViolation,
};

/// Full-map directory over cached lines; absent entry means Uncached.
#[derive(Debug, Clone, Default)]
pub struct Directory {
    entries: BTreeMap<u64, DirState>,
    pub high_water: usize,
}

impl Directory {
    pub fn state_of(&self, line_addr: u64) -> DirState {
        self.entries
            .get(&line_addr)
            .copied()
            .unwrap_or(DirState::Uncached)
    }

    pub fn set(&mut self, line_addr: u64, state: DirState) {
        match state {
            DirState::Uncached => {
                self.entries.remove(&line_addr);
            }
            other => {
                self.entries.insert(line_addr, other);
                self.high_water = self.high_water.max(self.entries.len());
            }
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&u64, &DirState)> {
        self.entries.iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FsmId {
    Wb,
    Read,
}

/// Write-back path: collects AW/W, updates the directory, retires data to
/// the memory side, acknowledges on B.
#[derive(Debug, Clone)]
enum WbFsm {
    Idle,
    Collect {
        src: usize,
        line: u64,
        beats: Vec<crate::bus::BeatData>,
    },
    DirUpdate {
        src: usize,
        line: u64,
        event: DirEvent,
        data: Option<Vec<u8>>,
    },
    MemWrite {
        src: usize,
        line: u64,
        done_at: Option<u64>,
        data: Vec<u8>,
    },
    Ack {
        src: usize,
        line: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReadTxn {
    pub requester: usize,
    pub line: u64,
    pub unique: bool,
    pub was_sharer: bool,
}

/// Read path: directory lookup, snoops, memory access, response streaming.
#[derive(Debug, Clone)]
enum ReadFsm {
    Idle,
    DirLookup {
        txn: ReadTxn,
    },
    Snooping {
        txn: ReadTxn,
        targets: Vec<usize>,
        sent: usize,
        acks: usize,
        owner_supplies: bool,
        beats: Vec<crate::bus::BeatData>,
    },
    /// Read-clean pulled dirty data out of the owner: retire a clean copy
    /// to the memory side before answering.
    WriteOwnerData {
        txn: ReadTxn,
        done_at: Option<u64>,
        data: Vec<u8>,
    },
    MemRead {
        txn: ReadTxn,
        done_at: Option<u64>,
        data: Option<Vec<u8>>,
    },
    SendData {
        txn: ReadTxn,
        data: Option<Vec<u8>>, // None: bare ownership grant (InvAck)
        beat: u32,
    },
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BusStats {
    pub snoops_sent: u64,
    pub read_txns: u64,
    pub wb_txns: u64,
    pub channel_busy: [u64; 8],
}

#[derive(Debug, Clone)]
pub struct Interconnect {
    pub aw_fifo: ChannelFifo,
    pub w_fifo: ChannelFifo,
    pub ar_fifo: ChannelFifo,
    pub cr_fifo: ChannelFifo,
    pub cd_fifo: ChannelFifo,

    pub aw_arb: RrArbiter,
    pub w_arb: RrArbiter,
    pub ar_arb: RrArbiter,
    pub cr_arb: RrArbiter,
    pub cd_arb: RrArbiter,

    pub directory: Directory,
    mem_arb: RrArbiter,
    dir_arb: RrArbiter,
    mem_holder: Option<FsmId>,

    wb: WbFsm,
    read: ReadFsm,

    beats_per_line: u32,
    line_bytes: u64,
    pub stats: BusStats,
}

impl Interconnect {
    pub fn new(n_cores: usize, fifo_depth: usize, line_bytes: u64, beats_per_line: u32) -> Self {
        Self {
            aw_fifo: ChannelFifo::new(Channel::Aw, fifo_depth),
            w_fifo: ChannelFifo::new(Channel::W, fifo_depth),
            ar_fifo: ChannelFifo::new(Channel::Ar, fifo_depth),
            cr_fifo: ChannelFifo::new(Channel::Cr, fifo_depth),
            cd_fifo: ChannelFifo::new(Channel::Cd, fifo_depth),
            aw_arb: RrArbiter::new(n_cores),
            w_arb: RrArbiter::new(n_cores),
            ar_arb: RrArbiter::new(n_cores),
            cr_arb: RrArbiter::new(n_cores),
            cd_arb: RrArbiter::new(n_cores),
            directory: Directory::default(),
            mem_arb: RrArbiter::new(2),
            dir_arb: RrArbiter::new(2),
            mem_holder: None,
            wb: WbFsm::Idle,
            read: ReadFsm::Idle,
            beats_per_line,
            line_bytes,
            stats: BusStats::default(),
        }
    }

    /// Line under the read FSM's active transaction, if any.
    pub fn active_read_line(&self) -> Option<u64> {
        match &self.read {
            ReadFsm::Idle => None,
            ReadFsm::DirLookup { txn }
            | ReadFsm::Snooping { txn, .. }
            | ReadFsm::WriteOwnerData { txn, .. }
            | ReadFsm::MemRead { txn, .. }
            | ReadFsm::SendData { txn, .. } => Some(txn.line),
        }
    }

    pub fn wb_idle(&self) -> bool {
        matches!(self.wb, WbFsm::Idle)
    }

    pub fn read_idle(&self) -> bool {
        matches!(self.read, ReadFsm::Idle)
    }

    pub fn wb_collecting(&self) -> bool {
        matches!(self.wb, WbFsm::Collect { .. })
    }

    /// True when nothing is queued or in flight anywhere on the bus.
    pub fn quiescent(&self) -> bool {
        self.wb_idle()
            && self.read_idle()
            && self.mem_holder.is_none()
            && self.aw_fifo.is_drained()
            && self.w_fifo.is_drained()
            && self.ar_fifo.is_drained()
            && self.cr_fifo.is_drained()
            && self.cd_fifo.is_drained()
    }

    fn wb_path_drained(&self) -> bool {
        self.wb_idle() && self.aw_fifo.is_drained() && self.w_fifo.is_drained()
    }

    /// One cycle of both interconnect FSMs, staging deliveries into the L1
    /// inboxes. The memory and directory arbiters rotate grants between the
    /// two FSMs whenever both contend in the same cycle.
    pub fn step(
        &mut self,
        now: u64,
        cores: &mut [L1Controller],
        memside: &mut MemSide,
        tables: &ProtocolTables,
        cov: &mut CoverageCounters,
        trace: &mut Option<Vec<String>>,
    ) -> Result<(), ProtocolViolation> {
        // Arbitrate this cycle's directory and memory access from the wants
        // the FSMs expressed at the end of the previous cycle.
        let wb_wants_dir = matches!(self.wb, WbFsm::DirUpdate { .. });
        let read_wants_dir = matches!(self.read, ReadFsm::DirLookup { .. });
        let dir_grant = match (wb_wants_dir, read_wants_dir) {
            (false, false) => None,
            _ => self
                .dir_arb
                .arbitrate(|i| (i == 0 && wb_wants_dir) || (i == 1 && read_wants_dir))
                .map(|i| if i == 0 { FsmId::Wb } else { FsmId::Read }),
        };

        let wb_wants_mem = matches!(self.wb, WbFsm::MemWrite { done_at: None, .. });
        let read_wants_mem = matches!(
            self.read,
            ReadFsm::MemRead { done_at: None, .. } | ReadFsm::WriteOwnerData { done_at: None, .. }
        );
        let mem_grant = if self.mem_holder.is_none() {
            match (wb_wants_mem, read_wants_mem) {
                (false, false) => None,
                _ => self
                    .mem_arb
                    .arbitrate(|i| (i == 0 && wb_wants_mem) || (i == 1 && read_wants_mem))
                    .map(|i| if i == 0 { FsmId::Wb } else { FsmId::Read }),
            }
        } else {
            None
        };

        self.step_wb(
            now,
            cores,
            memside,
            tables,
            cov,
            dir_grant == Some(FsmId::Wb),
            mem_grant == Some(FsmId::Wb),
            trace,
        )?;
        self.step_read(
            now,
            cores,
            memside,
            tables,
            cov,
            dir_grant == Some(FsmId::Read),
            mem_grant == Some(FsmId::Read),
            trace,
        )?;
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn step_wb(
        &mut self,
        now: u64,
        cores: &mut [L1Controller],
        memside: &mut MemSide,
        tables: &ProtocolTables,
        cov: &mut CoverageCounters,
        dir_granted: bool,
        mem_granted: bool,
        trace: &mut Option<Vec<String>>,
    ) -> Result<(), ProtocolViolation> {
        match std::mem::replace(&mut self.wb, WbFsm::Idle) {
            WbFsm::Idle => {
                if let Some(msg) = self.aw_fifo.pop() {
                    self.stats.wb_txns += 1;
                    self.wb = match msg.opcode {
                        Opcode::WriteBack => WbFsm::Collect {
                            src: msg.source_id,
                            line: msg.line_addr,
                            beats: Vec::with_capacity(self.beats_per_line as usize),
                        },
                        Opcode::Evict => WbFsm::DirUpdate {
                            src: msg.source_id,
                            line: msg.line_addr,
                            event: DirEvent::Evict,
                            data: None,
                        },
                        other => unreachable!("AW carries only retirements, got {}", other),
                    };
                }
            }
            WbFsm::Collect {
                src,
                line,
                mut beats,
            } => {
                if let Some(msg) = self.w_fifo.pop() {
                    debug_assert_eq!(msg.source_id, src, "interleaved W burst");
                    debug_assert_eq!(msg.line_addr, line);
                    beats.push(msg.payload);
                }
                self.wb = if beats.len() as u32 == self.beats_per_line {
                    let data = crate::bus::deserialize_beats(&beats, self.line_bytes)
                        .expect("full burst collected");
                    WbFsm::DirUpdate {
                        src,
                        line,
                        event: DirEvent::WriteBack,
                        data: Some(data),
                    }
                } else {
                    WbFsm::Collect { src, line, beats }
                };
            }
            WbFsm::DirUpdate {
                src,
                line,
                event,
                data,
            } => {
                if dir_granted {
                    let state = self.directory.state_of(line);
                    let (next, row) = dir_transition(&tables.dir, state, event, src)?;
                    let row = row.clone();
                    cov.record_dir(state.kind(), event, &row);
                    self.directory.set(line, next);
                    self.wb = match data {
                        Some(data) => WbFsm::MemWrite {
                            src,
                            line,
                            done_at: None,
                            data,
                        },
                        None => WbFsm::Ack { src, line },
                    };
                } else {
                    self.wb = WbFsm::DirUpdate {
                        src,
                        line,
                        event,
                        data,
                    };
                }
            }
            WbFsm::MemWrite {
                src,
                line,
                done_at,
                data,
            } => match done_at {
                None if mem_granted => {
                    self.mem_holder = Some(FsmId::Wb);
                    let latency = memside
                        .write_line(line, &data)
                        .expect("addresses validated at submit");
                    self.wb = WbFsm::MemWrite {
                        src,
                        line,
                        done_at: Some(now + latency),
                        data,
                    };
                }
                Some(t) if now >= t => {
                    self.mem_holder = None;
                    self.wb = WbFsm::Ack { src, line };
                }
                _ => {
                    self.wb = WbFsm::MemWrite {
                        src,
                        line,
                        done_at,
                        data,
                    };
                }
            },
            WbFsm::Ack { src, line } => {
                cores[src].inbox_b.stage(line);
                self.log(trace, now, Channel::B, Opcode::Ack, line, src, 0);
                self.wb = WbFsm::Idle;
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn step_read(
        &mut self,
        now: u64,
        cores: &mut [L1Controller],
        memside: &mut MemSide,
        tables: &ProtocolTables,
        cov: &mut CoverageCounters,
        dir_granted: bool,
        mem_granted: bool,
        trace: &mut Option<Vec<String>>,
    ) -> Result<(), ProtocolViolation> {
        match std::mem::replace(&mut self.read, ReadFsm::Idle) {
            ReadFsm::Idle => {
                // Reads wait for the write-back path so the directory never
                // points a snoop at a line with an in-flight retirement.
                if self.wb_path_drained() {
                    if let Some(msg) = self.ar_fifo.pop() {
                        self.stats.read_txns += 1;
                        self.read = ReadFsm::DirLookup {
                            txn: ReadTxn {
                                requester: msg.source_id,
                                line: msg.line_addr,
                                unique: msg.opcode == Opcode::ReadUnique,
                                was_sharer: false,
                            },
                        };
                    }
                }
            }
            ReadFsm::DirLookup { mut txn } => {
                if !dir_granted {
                    self.read = ReadFsm::DirLookup { txn };
                    return Ok(());
                }
                let state = self.directory.state_of(txn.line);
                let event = if txn.unique {
                    DirEvent::ReadUnique
                } else {
                    DirEvent::ReadClean
                };
                let (next, row) = dir_transition(&tables.dir, state, event, txn.requester)?;
                let row = row.clone();
                cov.record_dir(state.kind(), event, &row);

                let old_sharers = state.sharers();
                txn.was_sharer = txn.unique && old_sharers.contains(txn.requester);
                self.directory.set(txn.line, next);

                let mut targets: Vec<usize> = Vec::new();
                let mut owner_supplies = false;
                for action in &row.actions {
                    match action {
                        DirAction::SnoopOwner => {
                            targets = old_sharers.iter().collect();
                            owner_supplies = true;
                        }
                        DirAction::SnoopAllSharers => {
                            targets = old_sharers.iter().filter(|&c| c != txn.requester).collect();
                        }
                        DirAction::ReadMemory
                        | DirAction::ReplyData
                        | DirAction::WriteMemory
                        | DirAction::ClearEntry => {}
                    }
                }

                self.read = if targets.is_empty() {
                    self.after_snoops(txn, owner_supplies, false, Vec::new())
                } else {
                    ReadFsm::Snooping {
                        txn,
                        targets,
                        sent: 0,
                        acks: 0,
                        owner_supplies,
                        beats: Vec::new(),
                    }
                };
            }
            ReadFsm::Snooping {
                txn,
                targets,
                mut sent,
                mut acks,
                owner_supplies,
                mut beats,
            } => {
                if sent < targets.len() {
                    let target = targets[sent];
                    cores[target].inbox_ac.stage(SnoopReq {
                        line_addr: txn.line,
                        unique: txn.unique,
                    });
                    let opcode = if txn.unique {
                        Opcode::SnoopReadUnique
                    } else {
                        Opcode::SnoopReadClean
                    };
                    self.log(trace, now, Channel::Ac, opcode, txn.line, target, 0);
                    self.stats.snoops_sent += 1;
                    sent += 1;
                }
                let mut got_data = !beats.is_empty();
                if let Some(msg) = self.cr_fifo.pop() {
                    acks += 1;
                    if msg.opcode == Opcode::SnoopRespData {
                        got_data = true;
                    }
                }
                if let Some(msg) = self.cd_fifo.pop() {
                    debug_assert_eq!(msg.line_addr, txn.line);
                    beats.push(msg.payload);
                    got_data = true;
                }
                let data_outstanding = got_data && (beats.len() as u32) < self.beats_per_line;
                if sent == targets.len() && acks == targets.len() && !data_outstanding {
                    // Late CD beats cannot exist: the supplier streams its
                    // data before any later transaction can start.
                    let supplied = beats.len() as u32 == self.beats_per_line;
                    self.read = self.after_snoops(txn, owner_supplies, supplied, beats);
                } else {
                    self.read = ReadFsm::Snooping {
                        txn,
                        targets,
                        sent,
                        acks,
                        owner_supplies,
                        beats,
                    };
                }
            }
            ReadFsm::WriteOwnerData { txn, done_at, data } => match done_at {
                None if mem_granted => {
                    self.mem_holder = Some(FsmId::Read);
                    let latency = memside
                        .write_line(txn.line, &data)
                        .expect("addresses validated at submit");
                    self.read = ReadFsm::WriteOwnerData {
                        txn,
                        done_at: Some(now + latency),
                        data,
                    };
                }
                Some(t) if now >= t => {
                    self.mem_holder = None;
                    self.read = ReadFsm::SendData {
                        txn,
                        data: Some(data),
                        beat: 0,
                    };
                }
                _ => self.read = ReadFsm::WriteOwnerData { txn, done_at, data },
            },
            ReadFsm::MemRead { txn, done_at, data } => match done_at {
                None if mem_granted => {
                    self.mem_holder = Some(FsmId::Read);
                    let (line_data, latency) = memside
                        .read_line(txn.line)
                        .expect("addresses validated at submit");
                    self.read = ReadFsm::MemRead {
                        txn,
                        done_at: Some(now + latency),
                        data: Some(line_data),
                    };
                }
                Some(t) if now >= t => {
                    self.mem_holder = None;
                    self.read = ReadFsm::SendData { txn, data, beat: 0 };
                }
                _ => self.read = ReadFsm::MemRead { txn, done_at, data },
            },
            ReadFsm::SendData { txn, data, beat } => match &data {
                None => {
                    cores[txn.requester].inbox_r.stage(RDelivery::InvAck);
                    self.log(
                        trace,
                        now,
                        Channel::R,
                        Opcode::Ack,
                        txn.line,
                        txn.requester,
                        0,
                    );
                    self.read = ReadFsm::Idle;
                }
                Some(line_data) => {
                    let step = (self.line_bytes / self.beats_per_line as u64) as usize;
                    let slice = &line_data[beat as usize * step..(beat as usize + 1) * step];
                    cores[txn.requester]
                        .inbox_r
                        .stage(RDelivery::Beat(crate::bus::BeatData::from_slice(slice)));
                    self.log(
                        trace,
                        now,
                        Channel::R,
                        Opcode::DataBeat,
                        txn.line,
                        txn.requester,
                        beat,
                    );
                    if beat + 1 == self.beats_per_line {
                        self.read = ReadFsm::Idle;
                    } else {
                        self.read = ReadFsm::SendData {
                            txn,
                            data,
                            beat: beat + 1,
                        };
                    }
                }
            },
        }
        Ok(())
    }

    /// Decide where the response data comes from once snooping is settled.
    fn after_snoops(
        &mut self,
        txn: ReadTxn,
        owner_expected: bool,
        owner_supplied: bool,
        beats: Vec<crate::bus::BeatData>,
    ) -> ReadFsm {
        if owner_supplied {
            let data = crate::bus::deserialize_beats(&beats, self.line_bytes)
                .expect("full snoop burst collected");
            if txn.unique {
                // New owner takes the dirty line; memory stays stale.
                return ReadFsm::SendData {
                    txn,
                    data: Some(data),
                    beat: 0,
                };
            }
            // Read-clean: retire a clean copy so memory matches the
            // directory's Shared view.
            return ReadFsm::WriteOwnerData {
                txn,
                done_at: None,
                data,
            };
        }
        if owner_expected {
            // The owner demoted without supplying (possible only with a
            // seeded table bug); fall back to memory rather than hang.
            return ReadFsm::MemRead {
                txn,
                done_at: None,
                data: None,
            };
        }
        if txn.was_sharer {
            // Upgrade: the requester already holds the data.
            return ReadFsm::SendData {
                txn,
                data: None,
                beat: 0,
            };
        }
        ReadFsm::MemRead {
            txn,
            done_at: None,
            data: None,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn log(
        &mut self,
        trace: &mut Option<Vec<String>>,
        now: u64,
        channel: Channel,
        opcode: Opcode,
        addr: u64,
        src: usize,
        beat: u32,
    ) {
        self.stats.channel_busy[channel_index(channel)] += 1;
        if let Some(lines) = trace {
            lines.push(format!(
                "{},{},{},{:#x},{},{}",
                now, channel, opcode, addr, src, beat
            ));
        }
    }

    /// Record a message staged onto a request FIFO (called by the arbiter
    /// phase so channel-busy stats and the trace cover all eight channels).
    pub fn log_push(&mut self, trace: &mut Option<Vec<String>>, now: u64, msg: &BusMessage) {
        self.stats.channel_busy[channel_index(msg.channel)] += 1;
        if let Some(lines) = trace {
            lines.push(format!(
                "{},{},{},{:#x},{},{}",
                now, msg.channel, msg.opcode, msg.line_addr, msg.source_id, msg.beat_index
            ));
        }
    }

    pub fn commit(&mut self) {
        self.aw_fifo.commit();
        self.w_fifo.commit();
        self.ar_fifo.commit();
        self.cr_fifo.commit();
        self.cd_fifo.commit();
    }

    pub fn conservation_holds(&self) -> bool {
        self.aw_fifo.conservation_holds()
            && self.w_fifo.conservation_holds()
            && self.ar_fifo.conservation_holds()
            && self.cr_fifo.conservation_holds()
            && self.cd_fifo.conservation_holds()
    }

    pub fn hash_into(&self, h: &mut crate::util::Fnv) {
        for fifo in [
            &self.aw_fifo,
            &self.w_fifo,
            &self.ar_fifo,
            &self.cr_fifo,
            &self.cd_fifo,
        ] {
            h.write_u64(fifo.occupancy() as u64);
            for msg in fifo.iter() {
                h.write_u64(msg.line_addr);
                h.write_u64(msg.source_id as u64);
                h.write_u64(msg.beat_index as u64);
                h.write_bytes(msg.payload.as_slice());
            }
        }
        for (addr, state) in self.directory.iter() {
            h.write_u64(*addr);
            match state {
                DirState::Uncached => h.write_u64(0),
                DirState::Shared(s) => {
                    h.write_u64(1);
                    h.write_u64(s.0);
                }
                DirState::Modified { owner } => {
                    h.write_u64(2);
                    h.write_u64(*owner as u64);
                }
            }
        }
        h.write_u64(match self.wb {
            WbFsm::Idle => 0,
            WbFsm::Collect { .. } => 1,
            WbFsm::DirUpdate { .. } => 2,
            WbFsm::MemWrite { .. } => 3,
            WbFsm::Ack { .. } => 4,
        });
        h.write_u64(match self.read {
            ReadFsm::Idle => 0,
            ReadFsm::DirLookup { .. } => 1,
            ReadFsm::Snooping { .. } => 2,
            ReadFsm::WriteOwnerData { .. } => 3,
            ReadFsm::MemRead { .. } => 4,
            ReadFsm::SendData { .. } => 5,
        });
    }
}

pub fn channel_index(channel: Channel) -> usize {
    Channel::ALL.iter().position(|&c| c == channel).unwrap()
}
