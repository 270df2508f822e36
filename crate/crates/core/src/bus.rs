//! Bus building blocks: named channels, messages, beat serialization,
//! two-phase FIFOs, and round-robin arbiters.
//!
//! Messages staged into a FIFO during one cycle become visible to consumers
//! at the next cycle boundary, mirroring synchronous RTL queues.

use std::collections::VecDeque;
use std::fmt;

/// The five request-path queues plus the three response paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    /// Write address (write-back / evict requests).
    Aw,
    /// Write data beats.
    W,
    /// Write response (acks).
    B,
    /// Read address (read-clean / read-unique requests).
    Ar,
    /// Read data beats / ownership grants.
    R,
    /// Snoop requests toward the caches.
    Ac,
    /// Snoop responses from the caches.
    Cr,
    /// Snoop data beats from the caches.
    Cd,
}

impl Channel {
    pub fn name(self) -> &'static str {
        match self {
            Channel::Aw => "AW",
            Channel::W => "W",
            Channel::B => "B",
            Channel::Ar => "AR",
            Channel::R => "R",
            Channel::Ac => "AC",
            Channel::Cr => "CR",
            Channel::Cd => "CD",
        }
    }

    pub const ALL: [Channel; 8] = [
        Channel::Aw,
        Channel::W,
        Channel::B,
        Channel::Ar,
        Channel::R,
        Channel::Ac,
        Channel::Cr,
        Channel::Cd,
    ];
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Opcode {
    ReadClean,
    ReadUnique,
    WriteBack,
    Evict,
    DataBeat,
    Ack,
    SnoopReadClean,
    SnoopReadUnique,
    SnoopRespData,
    SnoopRespAck,
}

impl Opcode {
    pub fn name(self) -> &'static str {
        match self {
            Opcode::ReadClean => "ReadClean",
            Opcode::ReadUnique => "ReadUnique",
            Opcode::WriteBack => "WriteBack",
            Opcode::Evict => "Evict",
            Opcode::DataBeat => "DataBeat",
            Opcode::Ack => "Ack",
            Opcode::SnoopReadClean => "SnoopReadClean",
            Opcode::SnoopReadUnique => "SnoopReadUnique",
            Opcode::SnoopRespData => "SnoopRespData",
            Opcode::SnoopRespAck => "SnoopRespAck",
        }
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One bus-width payload. Widths up to 64 bits are supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BeatData {
    pub bytes: [u8; 8],
    pub len: u8,
}

impl BeatData {
    pub fn from_slice(slice: &[u8]) -> Self {
        let mut bytes = [0u8; 8];
        bytes[..slice.len()].copy_from_slice(slice);
        Self {
            bytes,
            len: slice.len() as u8,
        }
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.bytes[..self.len as usize]
    }
}

/// One transfer on a named channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BusMessage {
    pub channel: Channel,
    pub opcode: Opcode,
    pub line_addr: u64,
    pub source_id: usize,
    pub beat_index: u32,
    pub payload: BeatData,
}

impl BusMessage {
    pub fn control(channel: Channel, opcode: Opcode, line_addr: u64, source_id: usize) -> Self {
        Self {
            channel,
            opcode,
            line_addr,
            source_id,
            beat_index: 0,
            payload: BeatData::default(),
        }
    }

    pub fn beat(
        channel: Channel,
        line_addr: u64,
        source_id: usize,
        beat_index: u32,
        payload: BeatData,
    ) -> Self {
        Self {
            channel,
            opcode: Opcode::DataBeat,
            line_addr,
            source_id,
            beat_index,
            payload,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BusError {
    BeatCountMismatch { expected: usize, got: usize },
}

impl fmt::Display for BusError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BusError::BeatCountMismatch { expected, got } => {
                write!(f, "expected {} beats, got {}", expected, got)
            }
        }
    }
}

impl std::error::Error for BusError {}

pub fn beats_per_line(line_bytes: u64, bus_width_bits: u32) -> u32 {
    (line_bytes * 8 / bus_width_bits as u64) as u32
}

/// Split a line into bus-width beats, lowest address first.
pub fn serialize_line(data: &[u8], bus_width_bits: u32) -> Vec<BeatData> {
    let step = (bus_width_bits / 8) as usize;
    data.chunks(step).map(BeatData::from_slice).collect()
}

/// Reassemble a line from its beats.
pub fn deserialize_beats(beats: &[BeatData], line_bytes: u64) -> Result<Vec<u8>, BusError> {
    let mut out = Vec::with_capacity(line_bytes as usize);
    for beat in beats {
        out.extend_from_slice(beat.as_slice());
    }
    if out.len() as u64 != line_bytes {
        return Err(BusError::BeatCountMismatch {
            expected: line_bytes as usize,
            got: out.len(),
        });
    }
    Ok(out)
}

/// Bounded queue with two-phase visibility: `push` stages, `commit` makes
/// staged entries poppable. Push/pop counters support the conservation check.
#[derive(Debug, Clone)]
pub struct ChannelFifo {
    pub channel: Channel,
    depth: usize,
    live: VecDeque<BusMessage>,
    staged: Vec<BusMessage>,
    pub pushed: u64,
    pub popped: u64,
}

impl ChannelFifo {
    pub fn new(channel: Channel, depth: usize) -> Self {
        Self {
            channel,
            depth,
            live: VecDeque::new(),
            staged: Vec::new(),
            pushed: 0,
            popped: 0,
        }
    }

    pub fn occupancy(&self) -> usize {
        self.live.len() + self.staged.len()
    }

    pub fn has_space(&self) -> bool {
        self.occupancy() < self.depth
    }

    /// Stage a message; refused (false) when the queue is full.
    pub fn push(&mut self, msg: BusMessage) -> bool {
        if !self.has_space() {
            return false;
        }
        self.staged.push(msg);
        self.pushed += 1;
        true
    }

    /// Pop a committed message; staged entries are not yet visible.
    pub fn pop(&mut self) -> Option<BusMessage> {
        let msg = self.live.pop_front();
        if msg.is_some() {
            self.popped += 1;
        }
        msg
    }

    pub fn peek(&self) -> Option<&BusMessage> {
        self.live.front()
    }

    pub fn committed_len(&self) -> usize {
        self.live.len()
    }

    pub fn is_drained(&self) -> bool {
        self.live.is_empty() && self.staged.is_empty()
    }

    /// End-of-cycle commit; returns the number of messages made visible.
    pub fn commit(&mut self) -> usize {
        let n = self.staged.len();
        self.live.extend(self.staged.drain(..));
        n
    }

    /// Messages in = messages out + messages resident.
    pub fn conservation_holds(&self) -> bool {
        self.pushed == self.popped + self.occupancy() as u64
    }

    pub fn iter(&self) -> impl Iterator<Item = &BusMessage> {
        self.live.iter().chain(self.staged.iter())
    }
}

/// Rotating-priority arbiter: grants start after the last granted id.
#[derive(Debug, Clone)]
pub struct RrArbiter {
    n_requesters: usize,
    last_grant: usize,
}

impl RrArbiter {
    pub fn new(n_requesters: usize) -> Self {
        Self {
            n_requesters,
            // First grant goes to requester 0.
            last_grant: n_requesters - 1,
        }
    }

    /// Grant one requester from the mask, rotating after the previous grant.
    pub fn arbitrate(&mut self, request_mask: impl Fn(usize) -> bool) -> Option<usize> {
        for i in 1..=self.n_requesters {
            let candidate = (self.last_grant + i) % self.n_requesters;
            if request_mask(candidate) {
                self.last_grant = candidate;
                return Some(candidate);
            }
        }
        None
    }

    pub fn last_grant(&self) -> usize {
        self.last_grant
    }
}
