//! One L1 cache controller: a CPU-facing FSM that services hits and opens
//! misses, an AXI FSM that walks a miss through victim retirement and line
//! fetch, and an ACE FSM that answers snoops.
//!
//! The controller never has more than one outstanding miss (single-entry
//! MSHR); a pending eviction is retired and acknowledged before the fetch
//! is issued.

use std::collections::VecDeque;

use crate::bus::{self, BeatData, BusMessage, Channel, Opcode};
use crate::cache::{CacheArray, CacheGeometry, Lookup, Mshr, MshrEntry, PendingOp};
use crate::protocol::{
    l1_transition, Action, CoverageCounters, LineState, ProtocolEvent, ProtocolTables,
    ProtocolViolation,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemOp {
    Load,
    Store,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CpuRequest {
    pub op: MemOp,
    pub addr: u64,
    pub size: u8,
    pub data: [u8; 8],
}

/// Per-core request/response slots. The request is held (and the controller
/// reported busy) until the driver clears it after seeing the ack.
#[derive(Debug, Clone, Default)]
pub struct CpuPort {
    pub request: Option<CpuRequest>,
    pub in_service: bool,
    pub response: Option<[u8; 8]>,
    pub ack: bool,
}

/// Progress of the one outstanding miss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum MissPhase {
    /// Set is full: the LRU victim must be retired first.
    NeedVictim,
    /// Victim write-back/evict issued; waiting for the B-channel ack.
    VictimWait { victim_line: u64 },
    /// Ready to issue the coherent read.
    NeedRead,
    /// Read accepted onto the bus; collecting the R-channel response.
    AwaitData,
}

/// R-channel deliveries toward this controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RDelivery {
    Beat(BeatData),
    /// Ownership granted without data (upgrade fast path).
    InvAck,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SnoopReq {
    pub line_addr: u64,
    pub unique: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CrResp {
    pub source: usize,
    pub line_addr: u64,
    pub has_data: bool,
}

/// Two-phase delivery slot: staged entries become visible at commit.
#[derive(Debug, Clone)]
pub struct Inbox<T> {
    live: VecDeque<T>,
    staged: Vec<T>,
}

impl<T> Default for Inbox<T> {
    fn default() -> Self {
        Self {
            live: VecDeque::new(),
            staged: Vec::new(),
        }
    }
}

impl<T> Inbox<T> {
    pub fn stage(&mut self, item: T) {
        self.staged.push(item);
    }

    pub fn pop(&mut self) -> Option<T> {
        self.live.pop_front()
    }

    pub fn commit(&mut self) {
        self.live.extend(self.staged.drain(..));
    }

    pub fn is_drained(&self) -> bool {
        self.live.is_empty() && self.staged.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CoreStats {
    pub requests: u64,
    pub hits: u64,
    pub misses: u64,
    pub snoops: u64,
}

#[derive(Debug, Clone)]
pub struct L1Controller {
    pub id: usize,
    pub array: CacheArray,
    pub mshr: Mshr,
    pub port: CpuPort,
    pub stats: CoreStats,
    miss_phase: Option<MissPhase>,
    beats_per_line: u32,
    bus_width_bits: u32,

    // Outbound streams and pending responses, held until granted.
    w_stream: VecDeque<BeatData>,
    w_line: u64,
    cr_pending: Option<CrResp>,
    cd_stream: VecDeque<BeatData>,
    cd_line: u64,

    // Inbound deliveries from the interconnect.
    pub inbox_r: Inbox<RDelivery>,
    pub inbox_b: Inbox<u64>, // acknowledged line address
    pub inbox_ac: Inbox<SnoopReq>,
    r_beats: Vec<BeatData>,
}

impl L1Controller {
    pub fn new(id: usize, geometry: CacheGeometry, bus_width_bits: u32) -> Self {
        Self {
            id,
            array: CacheArray::new(geometry),
            mshr: Mshr::new(),
            port: CpuPort::default(),
            stats: CoreStats::default(),
            miss_phase: None,
            beats_per_line: bus::beats_per_line(geometry.line_bytes, bus_width_bits),
            bus_width_bits,
            w_stream: VecDeque::new(),
            w_line: 0,
            cr_pending: None,
            cd_stream: VecDeque::new(),
            cd_line: 0,
            inbox_r: Inbox::default(),
            inbox_b: Inbox::default(),
            inbox_ac: Inbox::default(),
            r_beats: Vec::new(),
        }
    }

    pub fn busy(&self) -> bool {
        self.mshr.is_busy()
    }

    /// Effective protocol state of a line: the MSHR transient shadows the
    /// array while a fetch/upgrade for that line is in flight.
    pub fn effective_state(&self, line_addr: u64) -> LineState {
        if let Some(entry) = self.mshr.entry() {
            if entry.line_addr == line_addr && entry.transient.is_fetch_transient() {
                return entry.transient;
            }
        }
        self.array.state_of(line_addr)
    }

    /// Nothing in flight and nothing undelivered.
    pub fn quiescent(&self) -> bool {
        !self.mshr.is_busy()
            && self.miss_phase.is_none()
            && self.port.request.is_none()
            && self.w_stream.is_empty()
            && self.cr_pending.is_none()
            && self.cd_stream.is_empty()
            && self.inbox_r.is_drained()
            && self.inbox_b.is_drained()
            && self.inbox_ac.is_drained()
            && self.r_beats.is_empty()
    }

    pub fn clear_ack(&mut self) {
        self.port.ack = false;
        if self.port.request.is_none() {
            self.port.response = None;
        }
    }

    /// One simulated cycle of all three FSMs, in snoop -> bus -> CPU order.
    pub fn step(
        &mut self,
        tables: &ProtocolTables,
        cov: &mut CoverageCounters,
    ) -> Result<(), ProtocolViolation> {
        self.step_snoop(tables, cov)?;
        self.step_bus_responses(tables, cov)?;
        self.step_cpu(tables, cov)?;
        // A snoop may have freed a way this cycle; re-evaluate the victim.
        if let Some(MissPhase::NeedVictim) = self.miss_phase {
            let line = self.mshr.entry().unwrap().line_addr;
            if !self.array.set_full(line) {
                self.miss_phase = Some(MissPhase::NeedRead);
            }
        }
        Ok(())
    }

    fn step_snoop(
        &mut self,
        tables: &ProtocolTables,
        cov: &mut CoverageCounters,
    ) -> Result<(), ProtocolViolation> {
        // Hold the next snoop until the previous response is fully sent.
        if self.cr_pending.is_some() || !self.cd_stream.is_empty() {
            return Ok(());
        }
        let Some(snoop) = self.inbox_ac.pop() else {
            return Ok(());
        };
        self.stats.snoops += 1;

        let event = if snoop.unique {
            ProtocolEvent::SnoopReadUnique
        } else {
            ProtocolEvent::SnoopReadClean
        };
        let state = self.effective_state(snoop.line_addr);
        let row = l1_transition(&tables.l1, state, event)?.clone();
        cov.record_l1(state, event, &row);

        let mut has_data = false;
        for action in &row.actions {
            match action {
                Action::SupplyData => {
                    let data = self
                        .array
                        .line_data(snoop.line_addr)
                        .expect("snooped owner holds the line")
                        .to_vec();
                    self.cd_stream = bus::serialize_line(&data, self.bus_width_bits).into();
                    self.cd_line = snoop.line_addr;
                    has_data = true;
                }
                Action::InvalidateSelf => {
                    if self.array.state_of(snoop.line_addr) != LineState::I {
                        self.array.set_state(snoop.line_addr, LineState::I);
                    }
                }
                _ => unreachable!("snoop rows only supply or invalidate"),
            }
        }

        // Move whichever holder carried the state: MSHR transient for an
        // in-flight upgrade, the array line otherwise.
        if state.is_fetch_transient() {
            self.mshr.entry_mut().unwrap().transient = row.next;
        } else if self.array.state_of(snoop.line_addr) != LineState::I {
            if state == LineState::M && row.next == LineState::S {
                // Demotion: the interconnect writes our data back, so the
                // retained copy is clean.
                self.array.set_dirty(snoop.line_addr, false);
            }
            if row.next == LineState::I {
                self.array.set_state(snoop.line_addr, LineState::I);
            } else {
                self.array.set_state(snoop.line_addr, row.next);
            }
        }

        self.cr_pending = Some(CrResp {
            source: self.id,
            line_addr: snoop.line_addr,
            has_data,
        });
        Ok(())
    }

    fn step_bus_responses(
        &mut self,
        tables: &ProtocolTables,
        cov: &mut CoverageCounters,
    ) -> Result<(), ProtocolViolation> {
        if let Some(acked_line) = self.inbox_b.pop() {
            let state = self.array.state_of(acked_line);
            let row = l1_transition(&tables.l1, state, ProtocolEvent::WriteBackAck)?.clone();
            cov.record_l1(state, ProtocolEvent::WriteBackAck, &row);
            debug_assert_eq!(row.next, LineState::I);
            self.array.set_state(acked_line, LineState::I);
            debug_assert!(matches!(
                self.miss_phase,
                Some(MissPhase::VictimWait { victim_line }) if victim_line == acked_line
            ));
            self.miss_phase = Some(MissPhase::NeedRead);
        }

        while let Some(delivery) = self.inbox_r.pop() {
            match delivery {
                RDelivery::Beat(beat) => {
                    self.r_beats.push(beat);
                    if self.r_beats.len() as u32 == self.beats_per_line {
                        self.finish_fetch(tables, cov)?;
                    }
                }
                RDelivery::InvAck => {
                    self.finish_with_event(tables, cov, ProtocolEvent::InvAck, None)?
                }
            }
        }
        Ok(())
    }

    fn finish_fetch(
        &mut self,
        tables: &ProtocolTables,
        cov: &mut CoverageCounters,
    ) -> Result<(), ProtocolViolation> {
        let line_bytes = self.array.geometry().line_bytes;
        let data = bus::deserialize_beats(&self.r_beats, line_bytes)
            .expect("beat count checked by collection");
        self.r_beats.clear();
        self.finish_with_event(tables, cov, ProtocolEvent::DataResp, Some(data))
    }

    fn finish_with_event(
        &mut self,
        tables: &ProtocolTables,
        cov: &mut CoverageCounters,
        event: ProtocolEvent,
        data: Option<Vec<u8>>,
    ) -> Result<(), ProtocolViolation> {
        let entry = self
            .mshr
            .entry()
            .expect("R delivery without a miss")
            .clone();
        let row = l1_transition(&tables.l1, entry.transient, event)?.clone();
        cov.record_l1(entry.transient, event, &row);

        if let Some(data) = data {
            self.array
                .fill(entry.line_addr, &data, row.next)
                .expect("fill goes to the way freed for it");
        } else {
            // Upgrade in place: the S copy is still resident.
            self.array.set_state(entry.line_addr, row.next);
        }

        for action in &row.actions {
            match action {
                Action::WriteData => {
                    if entry.op == PendingOp::Store {
                        self.array
                            .write_bytes(
                                entry.line_addr,
                                entry.offset,
                                &entry.store_data[..entry.size as usize],
                            )
                            .expect("fill installed write permission");
                    }
                }
                Action::ReplyCpu => {
                    let mut resp = [0u8; 8];
                    if entry.op == PendingOp::Load {
                        let bytes = self
                            .array
                            .read_bytes(entry.line_addr, entry.offset, entry.size)
                            .expect("fill installed read permission");
                        resp[..bytes.len()].copy_from_slice(bytes);
                    }
                    self.port.response = Some(resp);
                    self.port.ack = true;
                }
                _ => unreachable!("completion rows only write data and reply"),
            }
        }

        self.array.touch(entry.line_addr);
        self.mshr.complete().expect("entry present");
        self.miss_phase = None;
        Ok(())
    }

    fn step_cpu(
        &mut self,
        tables: &ProtocolTables,
        cov: &mut CoverageCounters,
    ) -> Result<(), ProtocolViolation> {
        if self.port.in_service || self.mshr.is_busy() {
            return Ok(());
        }
        let Some(req) = self.port.request else {
            return Ok(());
        };
        self.port.in_service = true;
        self.stats.requests += 1;

        let geometry = *self.array.geometry();
        let line_addr = geometry.line_addr(req.addr);
        let offset = geometry.offset(req.addr);
        let event = match req.op {
            MemOp::Load => ProtocolEvent::Load,
            MemOp::Store => ProtocolEvent::Store,
        };
        let state = match self.array.lookup(req.addr) {
            Lookup::Hit { state, .. } => state,
            Lookup::Miss => LineState::I,
        };
        let row = l1_transition(&tables.l1, state, event)?.clone();
        cov.record_l1(state, event, &row);

        if row.actions.contains(&Action::ReplyCpu) {
            // Hit: served in place, ack raised this cycle.
            self.stats.hits += 1;
            for action in &row.actions {
                match action {
                    Action::WriteData => {
                        self.array
                            .write_bytes(req.addr, offset, &req.data[..req.size as usize])
                            .expect("store hit holds M");
                    }
                    Action::ReplyCpu => {
                        let mut resp = [0u8; 8];
                        if req.op == MemOp::Load {
                            let bytes = self
                                .array
                                .read_bytes(req.addr, offset, req.size as u64)
                                .expect("load hit holds at least S");
                            resp[..bytes.len()].copy_from_slice(bytes);
                        }
                        self.port.response = Some(resp);
                        self.port.ack = true;
                    }
                    _ => unreachable!("hit rows only write data and reply"),
                }
            }
            self.array.touch(req.addr);
            return Ok(());
        }

        // Miss or upgrade: park the request in the MSHR.
        self.stats.misses += 1;
        self.mshr
            .allocate(MshrEntry {
                line_addr,
                op: match req.op {
                    MemOp::Load => PendingOp::Load,
                    MemOp::Store => PendingOp::Store,
                },
                offset,
                size: req.size as u64,
                store_data: req.data,
                transient: row.next,
            })
            .expect("checked not busy");
        let upgrade = row.next == LineState::SmD;
        self.miss_phase = Some(if !upgrade && self.array.set_full(req.addr) {
            MissPhase::NeedVictim
        } else {
            MissPhase::NeedRead
        });
        Ok(())
    }

    // --- arbiter-phase interface -------------------------------------

    /// Wish on the AW channel: the victim retirement, if one is due.
    pub fn aw_wish(&self) -> Option<(Opcode, u64)> {
        match self.miss_phase {
            Some(MissPhase::NeedVictim) => {
                let fetch_line = self.mshr.entry().unwrap().line_addr;
                let (victim_line, state) = self.array.victim_line(fetch_line)?;
                let opcode = if state == LineState::M {
                    Opcode::WriteBack
                } else {
                    Opcode::Evict
                };
                Some((opcode, victim_line))
            }
            _ => None,
        }
    }

    pub fn on_aw_granted(
        &mut self,
        tables: &ProtocolTables,
        cov: &mut CoverageCounters,
    ) -> Result<BusMessage, ProtocolViolation> {
        let (opcode, victim_line) = self.aw_wish().expect("granted without a wish");
        let state = self.array.state_of(victim_line);
        let row = l1_transition(&tables.l1, state, ProtocolEvent::Evict)?.clone();
        cov.record_l1(state, ProtocolEvent::Evict, &row);

        if opcode == Opcode::WriteBack {
            let data = self.array.line_data(victim_line).unwrap().to_vec();
            self.w_stream = bus::serialize_line(&data, self.bus_width_bits).into();
            self.w_line = victim_line;
            // The write-back stream owns the data now.
            self.array.set_dirty(victim_line, false);
        }
        self.array.set_state(victim_line, row.next);
        self.miss_phase = Some(MissPhase::VictimWait { victim_line });
        Ok(BusMessage::control(
            Channel::Aw,
            opcode,
            victim_line,
            self.id,
        ))
    }

    /// A write-back burst is open until its last beat wins the W channel.
    pub fn w_stream_active(&self) -> bool {
        !self.w_stream.is_empty()
    }

    pub fn on_w_granted(&mut self) -> BusMessage {
        let beat = self.w_stream.pop_front().expect("granted without a beat");
        let index = self.beats_per_line - 1 - self.w_stream.len() as u32;
        BusMessage::beat(Channel::W, self.w_line, self.id, index, beat)
    }

    /// Wish on the AR channel: the coherent read for the parked miss.
    pub fn ar_wish(&self) -> Option<(Opcode, u64)> {
        match self.miss_phase {
            Some(MissPhase::NeedRead) => {
                let entry = self.mshr.entry().unwrap();
                let opcode = match entry.transient {
                    LineState::IsD => Opcode::ReadClean,
                    LineState::ImD | LineState::SmD => Opcode::ReadUnique,
                    other => unreachable!("no read for transient {}", other),
                };
                Some((opcode, entry.line_addr))
            }
            _ => None,
        }
    }

    pub fn on_ar_granted(&mut self) -> BusMessage {
        let (opcode, line) = self.ar_wish().expect("granted without a wish");
        self.miss_phase = Some(MissPhase::AwaitData);
        BusMessage::control(Channel::Ar, opcode, line, self.id)
    }

    pub fn cr_wish(&self) -> Option<&CrResp> {
        self.cr_pending.as_ref()
    }

    pub fn on_cr_granted(&mut self) -> BusMessage {
        let resp = self.cr_pending.take().expect("granted without a wish");
        let opcode = if resp.has_data {
            Opcode::SnoopRespData
        } else {
            Opcode::SnoopRespAck
        };
        BusMessage::control(Channel::Cr, opcode, resp.line_addr, self.id)
    }

    pub fn has_cd_beat(&self) -> bool {
        // Data beats follow the CR header; hold them until it is sent.
        self.cr_pending.is_none() && !self.cd_stream.is_empty()
    }

    pub fn on_cd_granted(&mut self) -> BusMessage {
        let beat = self.cd_stream.pop_front().expect("granted without a beat");
        let index = self.beats_per_line - 1 - self.cd_stream.len() as u32;
        BusMessage::beat(Channel::Cd, self.cd_line, self.id, index, beat)
    }

    pub fn commit_inboxes(&mut self) {
        self.inbox_r.commit();
        self.inbox_b.commit();
        self.inbox_ac.commit();
    }

    pub fn hash_into(&self, h: &mut crate::util::Fnv) {
        h.write_u64(self.id as u64);
        self.array.hash_into(h);
        if let Some(e) = self.mshr.entry() {
            h.write_u64(e.line_addr);
            h.write_u64(e.transient as u64);
            h.write_u64(e.offset);
            h.write_u64(e.size);
            h.write_bytes(&e.store_data);
        }
        match self.miss_phase {
            None => h.write_u64(0),
            Some(MissPhase::NeedVictim) => h.write_u64(1),
            Some(MissPhase::VictimWait { victim_line }) => {
                h.write_u64(2);
                h.write_u64(victim_line);
            }
            Some(MissPhase::NeedRead) => h.write_u64(3),
            Some(MissPhase::AwaitData) => h.write_u64(4),
        }
        h.write_u64(self.w_stream.len() as u64);
        h.write_u64(self.cd_stream.len() as u64);
        h.write_u64(self.r_beats.len() as u64);
        if let Some(req) = &self.port.request {
            h.write_u64(req.addr);
            h.write_u64(req.size as u64);
            h.write_bytes(&req.data);
        }
    }
}
