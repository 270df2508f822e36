//! The backing store behind the interconnect: a flat sparse main memory and
//! the optional shared L2 banks that filter latency in front of it.
//!
//! L2 banks are memory-side caches: lines are clean or dirty copies of main
//! memory with no sharer tracking (the directory in the interconnect is the
//! single coherence point). Each line address maps to exactly one bank via
//! the lowest line-address bit above the offset.

use std::collections::BTreeMap;
use std::fmt;

use crate::cache::{CacheArray, CacheGeometry};
use crate::protocol::LineState;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MemError {
    OutOfRange { addr: u64, size: u64 },
}

impl fmt::Display for MemError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MemError::OutOfRange { addr, size } => {
                write!(f, "address {:#x} beyond memory size {:#x}", addr, size)
            }
        }
    }
}

impl std::error::Error for MemError {}

/// Sparse byte store; never-written lines read as zeroes.
#[derive(Debug, Clone)]
pub struct MainMemory {
    size_bytes: u64,
    line_bytes: u64,
    lines: BTreeMap<u64, Vec<u8>>,
    first_access_latency: u64,
    per_beat_latency: u64,
    beats_per_line: u64,
}

impl MainMemory {
    pub fn new(
        size_bytes: u64,
        line_bytes: u64,
        first_access_latency: u64,
        per_beat_latency: u64,
        beats_per_line: u64,
    ) -> Self {
        Self {
            size_bytes,
            line_bytes,
            lines: BTreeMap::new(),
            first_access_latency,
            per_beat_latency,
            beats_per_line,
        }
    }

    pub fn access_latency(&self) -> u64 {
        self.first_access_latency + self.per_beat_latency * self.beats_per_line
    }

    fn check(&self, line_addr: u64) -> Result<(), MemError> {
        if line_addr + self.line_bytes > self.size_bytes {
            return Err(MemError::OutOfRange {
                addr: line_addr,
                size: self.size_bytes,
            });
        }
        Ok(())
    }

    pub fn read_line(&self, line_addr: u64) -> Result<(Vec<u8>, u64), MemError> {
        self.check(line_addr)?;
        let data = self
            .lines
            .get(&line_addr)
            .cloned()
            .unwrap_or_else(|| vec![0; self.line_bytes as usize]);
        Ok((data, self.access_latency()))
    }

    pub fn write_line(&mut self, line_addr: u64, data: &[u8]) -> Result<u64, MemError> {
        self.check(line_addr)?;
        debug_assert_eq!(data.len() as u64, self.line_bytes);
        self.lines.insert(line_addr, data.to_vec());
        Ok(self.access_latency())
    }

    /// Latency-free byte view for checks and end-of-run comparison.
    pub fn peek(&self, addr: u64) -> u8 {
        let line_addr = addr & !(self.line_bytes - 1);
        let offset = (addr & (self.line_bytes - 1)) as usize;
        self.lines.get(&line_addr).map_or(0, |l| l[offset])
    }

    pub fn touched_lines(&self) -> impl Iterator<Item = (&u64, &Vec<u8>)> {
        self.lines.iter()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct L2BankStats {
    pub hits: u64,
    pub misses: u64,
    pub write_backs: u64,
}

/// One shared L2 bank. Lines are held in S (clean) or marked dirty via the
/// line's dirty flag; L1 coherence states are never used here.
#[derive(Debug, Clone)]
pub struct L2Bank {
    array: CacheArray,
    pub stats: L2BankStats,
}

impl L2Bank {
    fn new(geometry: CacheGeometry) -> Self {
        Self {
            array: CacheArray::new(geometry),
            stats: L2BankStats::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineOp {
    ReadLine,
    WriteLine,
}

/// Route between the interconnect's memory port and main memory.
#[derive(Debug, Clone)]
pub struct MemSide {
    pub memory: MainMemory,
    banks: Vec<L2Bank>,
    line_bytes: u64,
    l2_hit_latency: u64,
    offset_bits: u32,
}

impl MemSide {
    pub fn new(
        memory: MainMemory,
        l2_geometry: Option<(CacheGeometry, usize)>,
        l2_hit_latency: u64,
    ) -> Self {
        let line_bytes = memory.line_bytes;
        let banks = match l2_geometry {
            Some((geom, count)) => (0..count).map(|_| L2Bank::new(geom)).collect(),
            None => Vec::new(),
        };
        Self {
            memory,
            banks,
            line_bytes,
            l2_hit_latency,
            offset_bits: line_bytes.trailing_zeros(),
        }
    }

    pub fn two_level(&self) -> bool {
        !self.banks.is_empty()
    }

    pub fn bank_select(&self, line_addr: u64) -> usize {
        ((line_addr >> self.offset_bits) as usize) & (self.banks.len() - 1)
    }

    /// Line read as seen by the interconnect's memory port.
    pub fn read_line(&mut self, line_addr: u64) -> Result<(Vec<u8>, u64), MemError> {
        if !self.two_level() {
            return self.memory.read_line(line_addr);
        }
        let bank_idx = self.bank_select(line_addr);
        let hit = self.banks[bank_idx].array.line_data(line_addr).is_some();
        if hit {
            let bank = &mut self.banks[bank_idx];
            bank.stats.hits += 1;
            bank.array.touch(line_addr);
            let data = bank.array.line_data(line_addr).unwrap().to_vec();
            return Ok((data, self.l2_hit_latency));
        }
        self.banks[bank_idx].stats.misses += 1;
        let (data, mem_latency) = self.memory.read_line(line_addr)?;
        let victim_latency = self.install(bank_idx, line_addr, &data, false)?;
        Ok((data, self.l2_hit_latency + victim_latency + mem_latency))
    }

    /// Line write from the interconnect: installs dirty in the bank without
    /// an immediate memory write.
    pub fn write_line(&mut self, line_addr: u64, data: &[u8]) -> Result<u64, MemError> {
        if !self.two_level() {
            return self.memory.write_line(line_addr, data);
        }
        let bank_idx = self.bank_select(line_addr);
        let hit = self.banks[bank_idx].array.line_data(line_addr).is_some();
        if hit {
            let bank = &mut self.banks[bank_idx];
            bank.stats.hits += 1;
            bank.array.touch(line_addr);
            bank.array.set_dirty(line_addr, true);
            overwrite(&mut bank.array, line_addr, data);
            return Ok(self.l2_hit_latency);
        }
        self.banks[bank_idx].stats.misses += 1;
        // The whole line is replaced, so no fetch from memory is needed.
        let victim_latency = self.install(bank_idx, line_addr, data, true)?;
        Ok(self.l2_hit_latency + victim_latency)
    }

    fn install(
        &mut self,
        bank_idx: usize,
        line_addr: u64,
        data: &[u8],
        dirty: bool,
    ) -> Result<u64, MemError> {
        self.memory.check(line_addr)?;
        let bank = &mut self.banks[bank_idx];
        let victim = bank
            .array
            .fill(line_addr, data, LineState::S)
            .expect("fresh L2 fill cannot double-fill");
        if dirty {
            bank.array.set_dirty(line_addr, true);
        }
        match victim {
            Some(v) if v.dirty => {
                bank.stats.write_backs += 1;
                self.memory.write_line(v.line_addr, &v.data)
            }
            _ => Ok(0),
        }
    }

    pub fn l2_access(
        &mut self,
        line_addr: u64,
        op: LineOp,
        data: Option<&[u8]>,
    ) -> Result<(Option<Vec<u8>>, bool, u64), MemError> {
        let bank_idx = self.bank_select(line_addr);
        let hit = self.banks[bank_idx].array.line_data(line_addr).is_some();
        match op {
            LineOp::ReadLine => {
                let (d, lat) = self.read_line(line_addr)?;
                Ok((Some(d), hit, lat))
            }
            LineOp::WriteLine => {
                let lat = self.write_line(line_addr, data.expect("WriteLine needs data"))?;
                Ok((None, hit, lat))
            }
        }
    }

    /// Retire every dirty L2 line to main memory (functional, end of run).
    pub fn flush_l2(&mut self) {
        for bank_idx in 0..self.banks.len() {
            let dirty: Vec<(u64, Vec<u8>)> = self.banks[bank_idx]
                .array
                .resident_lines()
                .filter(|(_, l)| l.dirty)
                .map(|(a, l)| (a, l.data.clone()))
                .collect();
            for (addr, data) in dirty {
                self.memory.write_line(addr, &data).unwrap();
                self.banks[bank_idx].array.set_dirty(addr, false);
                self.banks[bank_idx].stats.write_backs += 1;
            }
        }
    }

    /// Byte view including the L2 overlay (what memory will hold once the
    /// banks flush), for equivalence checks.
    pub fn peek_effective(&self, addr: u64) -> u8 {
        if self.two_level() {
            let line_addr = addr & !(self.line_bytes - 1);
            let bank = &self.banks[self.bank_select(line_addr)];
            if let Some(data) = bank.array.line_data(line_addr) {
                return data[(addr & (self.line_bytes - 1)) as usize];
            }
        }
        self.memory.peek(addr)
    }

    pub fn bank_stats(&self) -> Vec<L2BankStats> {
        self.banks.iter().map(|b| b.stats).collect()
    }

    /// No line address may ever be resident in two banks.
    pub fn banks_disjoint(&self) -> bool {
        let mut seen = std::collections::BTreeSet::new();
        for bank in &self.banks {
            for (addr, _) in bank.array.resident_lines() {
                if !seen.insert(addr) {
                    return false;
                }
            }
        }
        true
    }

    pub fn hash_into(&self, h: &mut crate::util::Fnv) {
        for (addr, data) in self.memory.touched_lines() {
            h.write_u64(*addr);
            h.write_bytes(data);
        }
        for bank in &self.banks {
            bank.array.hash_into(h);
        }
    }
}

fn overwrite(array: &mut CacheArray, line_addr: u64, data: &[u8]) {
    // L2 lines are kept in S; byte writes demand M, so swap states around
    // the splice.
    array.set_state(line_addr, LineState::M);
    array.write_bytes(line_addr, 0, data).unwrap();
    array.set_state(line_addr, LineState::S);
    array.set_dirty(line_addr, true);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(size: u64) -> MainMemory {
        // 64-byte lines over a 32-bit bus: 100 + 16 cycles per access.
        MainMemory::new(size, 64, 100, 1, 16)
    }

    fn two_level() -> MemSide {
        MemSide::new(
            flat(1 << 30),
            Some((CacheGeometry::new(256 * 1024, 8, 64), 2)),
            10,
        )
    }

    #[test]
    fn untouched_line_reads_zero() {
        let mem = flat(1 << 30);
        let (data, latency) = mem.read_line(0x4000).unwrap();
        assert_eq!(data, vec![0u8; 64]);
        assert_eq!(latency, 116);
    }

    #[test]
    fn write_then_read_round_trip() {
        let mut mem = flat(1 << 30);
        let line: Vec<u8> = (0..64).collect();
        let latency = mem.write_line(0x4000, &line).unwrap();
        assert_eq!(latency, 116);
        assert_eq!(mem.read_line(0x4000).unwrap().0, line);
    }

    #[test]
    fn out_of_range_rejected() {
        let mem = flat(1 << 20);
        assert!(matches!(
            mem.read_line(1 << 20),
            Err(MemError::OutOfRange { .. })
        ));
    }

    #[test]
    fn l2_miss_then_hit_latencies() {
        let mut ms = two_level();
        let (_, hit, latency) = ms.l2_access(0x4000, LineOp::ReadLine, None).unwrap();
        assert!(!hit);
        assert_eq!(latency, 10 + 116);
        let (_, hit, latency) = ms.l2_access(0x4000, LineOp::ReadLine, None).unwrap();
        assert!(hit);
        assert_eq!(latency, 10);
    }

    #[test]
    fn bank_routing_uses_low_line_bit() {
        let ms = two_level();
        assert_eq!(ms.bank_select(0x0000), 0);
        assert_eq!(ms.bank_select(0x0040), 1);
        assert_eq!(ms.bank_select(0x0080), 0);
    }

    #[test]
    fn write_line_is_lazy_until_flush() {
        let mut ms = two_level();
        let line = vec![0xAB; 64];
        ms.write_line(0x4000, &line).unwrap();
        // Bypassing the L2, memory is stale until the bank flushes.
        assert_eq!(ms.memory.peek(0x4000), 0);
        assert_eq!(ms.peek_effective(0x4000), 0xAB);
        ms.flush_l2();
        assert_eq!(ms.memory.peek(0x4000), 0xAB);
    }

    #[test]
    fn dirty_victim_written_back_on_conflict() {
        // Tiny L2 to force conflicts: 1 KiB, 2-way, 64 B => 8 sets per bank.
        let mut ms = MemSide::new(
            flat(1 << 30),
            Some((CacheGeometry::new(1024, 2, 64), 1)),
            10,
        );
        ms.write_line(0x0000, &[0x11; 64]).unwrap();
        // Two more lines mapping to set 0 of bank 0 evict the dirty line.
        ms.read_line(0x200).unwrap();
        ms.read_line(0x400).unwrap();
        assert_eq!(ms.memory.peek(0x0000), 0x11);
        assert_eq!(ms.bank_stats()[0].write_backs, 1);
    }

    #[test]
    fn banks_never_share_a_line() {
        let mut ms = two_level();
        for i in 0..128u64 {
            ms.read_line(i * 64).unwrap();
        }
        assert!(ms.banks_disjoint());
    }

    #[test]
    fn single_level_passes_through() {
        let mut ms = MemSide::new(flat(1 << 30), None, 10);
        assert!(!ms.two_level());
        let (_, latency) = ms.read_line(0x1000).unwrap();
        assert_eq!(latency, 116);
    }
}
