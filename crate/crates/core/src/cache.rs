//! Set-associative cache arrays with strict LRU replacement, byte-granular
//! access, and the single-entry MSHR that makes a controller busy while one
//! miss is pending.

use std::collections::BTreeMap;
use std::fmt;

use crate::protocol::LineState;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CacheError {
    /// Fill of a line that is already resident.
    DoubleFill { line_addr: u64 },
    /// Access with insufficient permissions (write in S, any access in I).
    StateViolation {
        line_addr: u64,
        state: LineState,
        op: &'static str,
    },
    /// Fill into a set with no invalid way and no victim taken.
    NoFreeWay { line_addr: u64 },
    /// MSHR already holds a pending request.
    Busy,
    /// Completion with no pending request.
    EmptyComplete,
}

impl fmt::Display for CacheError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CacheError::DoubleFill { line_addr } => {
                write!(f, "double fill of line {:#x}", line_addr)
            }
            CacheError::StateViolation {
                line_addr,
                state,
                op,
            } => write!(f, "{} on line {:#x} in state {}", op, line_addr, state),
            CacheError::NoFreeWay { line_addr } => {
                write!(f, "no free way for fill of line {:#x}", line_addr)
            }
            CacheError::Busy => write!(f, "MSHR busy"),
            CacheError::EmptyComplete => write!(f, "MSHR completion with no pending request"),
        }
    }
}

impl std::error::Error for CacheError {}

/// Capacity/ways/line-size triple with the derived index arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheGeometry {
    pub capacity_bytes: u64,
    pub ways: usize,
    pub line_bytes: u64,
}

impl CacheGeometry {
    pub fn new(capacity_bytes: u64, ways: usize, line_bytes: u64) -> Self {
        Self {
            capacity_bytes,
            ways,
            line_bytes,
        }
    }

    pub fn sets(&self) -> u64 {
        self.capacity_bytes / (self.ways as u64 * self.line_bytes)
    }

    pub fn offset_bits(&self) -> u32 {
        self.line_bytes.trailing_zeros()
    }

    pub fn index_bits(&self) -> u32 {
        self.sets().trailing_zeros()
    }

    pub fn line_addr(&self, addr: u64) -> u64 {
        addr & !(self.line_bytes - 1)
    }

    pub fn offset(&self, addr: u64) -> u64 {
        addr & (self.line_bytes - 1)
    }

    pub fn set_index(&self, addr: u64) -> u64 {
        (addr >> self.offset_bits()) & (self.sets() - 1)
    }

    pub fn tag(&self, addr: u64) -> u64 {
        addr >> (self.offset_bits() + self.index_bits())
    }

    /// Validation used by config checks; returns the offending reason.
    pub fn validate(&self) -> Result<(), String> {
        if self.line_bytes == 0 || !self.line_bytes.is_power_of_two() {
            return Err(format!(
                "line_bytes {} is not a power of two",
                self.line_bytes
            ));
        }
        if self.ways == 0 || !self.ways.is_power_of_two() {
            return Err(format!("ways {} is not a power of two", self.ways));
        }
        let per_set = self.ways as u64 * self.line_bytes;
        if self.capacity_bytes == 0 || !self.capacity_bytes.is_multiple_of(per_set) {
            return Err(format!(
                "capacity {} is not divisible by ways*line_bytes = {}",
                self.capacity_bytes, per_set
            ));
        }
        if !self.sets().is_power_of_two() {
            return Err(format!("set count {} is not a power of two", self.sets()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CacheLine {
    pub tag: u64,
    pub state: LineState,
    pub dirty: bool,
    pub data: Vec<u8>,
    /// Recency ordinal within the set: 0 = least recent, ways-1 = most.
    pub lru_rank: u8,
}

/// A victim handed back by `fill` when the set was full.
#[derive(Debug, Clone)]
pub struct Victim {
    pub line_addr: u64,
    pub state: LineState,
    pub dirty: bool,
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lookup {
    Hit { way: usize, state: LineState },
    Miss,
}

/// One controller's data array. A side index of resident lines keeps the
/// invariant walker off the O(sets*ways) scan.
#[derive(Debug, Clone)]
pub struct CacheArray {
    geometry: CacheGeometry,
    sets: Vec<Vec<CacheLine>>,
    resident: BTreeMap<u64, (usize, usize)>, // line_addr -> (set, way)
}

impl CacheArray {
    pub fn new(geometry: CacheGeometry) -> Self {
        let sets = (0..geometry.sets())
            .map(|_| {
                (0..geometry.ways)
                    .map(|w| CacheLine {
                        tag: 0,
                        state: LineState::I,
                        dirty: false,
                        data: vec![0; geometry.line_bytes as usize],
                        lru_rank: w as u8,
                    })
                    .collect()
            })
            .collect();
        Self {
            geometry,
            sets,
            resident: BTreeMap::new(),
        }
    }

    pub fn geometry(&self) -> &CacheGeometry {
        &self.geometry
    }

    /// Pure lookup: hit iff some way holds the tag in a non-I state.
    pub fn lookup(&self, addr: u64) -> Lookup {
        let line_addr = self.geometry.line_addr(addr);
        match self.resident.get(&line_addr) {
            Some(&(set, way)) => Lookup::Hit {
                way,
                state: self.sets[set][way].state,
            },
            None => Lookup::Miss,
        }
    }

    pub fn state_of(&self, addr: u64) -> LineState {
        match self.lookup(addr) {
            Lookup::Hit { way, .. } => {
                let set = self.geometry.set_index(addr) as usize;
                self.sets[set][way].state
            }
            Lookup::Miss => LineState::I,
        }
    }

    /// True when every way of the addressed set holds a valid line.
    pub fn set_full(&self, addr: u64) -> bool {
        let set = self.geometry.set_index(addr) as usize;
        self.sets[set].iter().all(|l| l.state != LineState::I)
    }

    /// The line that strict LRU would retire from the addressed set.
    pub fn victim_line(&self, addr: u64) -> Option<(u64, LineState)> {
        if !self.set_full(addr) {
            return None;
        }
        let set = self.geometry.set_index(addr) as usize;
        let way = self.lru_way(set);
        let line = &self.sets[set][way];
        Some((self.line_addr_of(set, line.tag), line.state))
    }

    fn lru_way(&self, set: usize) -> usize {
        let mut oldest = 0;
        for (w, line) in self.sets[set].iter().enumerate() {
            if line.lru_rank < self.sets[set][oldest].lru_rank {
                oldest = w;
            }
        }
        oldest
    }

    fn line_addr_of(&self, set: usize, tag: u64) -> u64 {
        (tag << (self.geometry.offset_bits() + self.geometry.index_bits()))
            | ((set as u64) << self.geometry.offset_bits())
    }

    /// Install a line, evicting the LRU way if the set is full.
    pub fn fill(
        &mut self,
        addr: u64,
        data: &[u8],
        state: LineState,
    ) -> Result<Option<Victim>, CacheError> {
        let line_addr = self.geometry.line_addr(addr);
        if self.resident.contains_key(&line_addr) {
            return Err(CacheError::DoubleFill { line_addr });
        }
        debug_assert_eq!(data.len() as u64, self.geometry.line_bytes);

        let set = self.geometry.set_index(addr) as usize;
        let (way, victim) = match self.sets[set].iter().position(|l| l.state == LineState::I) {
            Some(w) => (w, None),
            None => {
                let w = self.lru_way(set);
                let line = &self.sets[set][w];
                let victim = Victim {
                    line_addr: self.line_addr_of(set, line.tag),
                    state: line.state,
                    dirty: line.dirty,
                    data: line.data.clone(),
                };
                self.resident.remove(&victim.line_addr);
                (w, Some(victim))
            }
        };

        let tag = self.geometry.tag(addr);
        {
            let line = &mut self.sets[set][way];
            line.tag = tag;
            line.state = state;
            line.dirty = false;
            line.data.copy_from_slice(data);
        }
        self.resident.insert(line_addr, (set, way));
        self.touch_way(set, way);
        Ok(victim)
    }

    /// Bump a resident line to most-recently-used.
    pub fn touch(&mut self, addr: u64) {
        let line_addr = self.geometry.line_addr(addr);
        if let Some(&(set, way)) = self.resident.get(&line_addr) {
            self.touch_way(set, way);
        }
    }

    fn touch_way(&mut self, set: usize, way: usize) {
        let old = self.sets[set][way].lru_rank;
        for line in self.sets[set].iter_mut() {
            if line.lru_rank > old {
                line.lru_rank -= 1;
            }
        }
        self.sets[set][way].lru_rank = self.geometry.ways as u8 - 1;
    }

    pub fn set_state(&mut self, addr: u64, state: LineState) {
        let line_addr = self.geometry.line_addr(addr);
        let &(set, way) = self
            .resident
            .get(&line_addr)
            .expect("set_state of a non-resident line");
        if state == LineState::I {
            self.resident.remove(&line_addr);
            self.sets[set][way].dirty = false;
        }
        self.sets[set][way].state = state;
    }

    pub fn set_dirty(&mut self, addr: u64, dirty: bool) {
        let line_addr = self.geometry.line_addr(addr);
        let &(set, way) = self
            .resident
            .get(&line_addr)
            .expect("set_dirty of a non-resident line");
        self.sets[set][way].dirty = dirty;
    }

    pub fn write_bytes(&mut self, addr: u64, offset: u64, bytes: &[u8]) -> Result<(), CacheError> {
        let line_addr = self.geometry.line_addr(addr);
        debug_assert!(offset + bytes.len() as u64 <= self.geometry.line_bytes);
        let &(set, way) = self
            .resident
            .get(&line_addr)
            .ok_or(CacheError::StateViolation {
                line_addr,
                state: LineState::I,
                op: "write",
            })?;
        let line = &mut self.sets[set][way];
        if line.state != LineState::M {
            return Err(CacheError::StateViolation {
                line_addr,
                state: line.state,
                op: "write",
            });
        }
        line.data[offset as usize..offset as usize + bytes.len()].copy_from_slice(bytes);
        line.dirty = true;
        Ok(())
    }

    pub fn read_bytes(&self, addr: u64, offset: u64, len: u64) -> Result<&[u8], CacheError> {
        let line_addr = self.geometry.line_addr(addr);
        debug_assert!(offset + len <= self.geometry.line_bytes);
        let &(set, way) = self
            .resident
            .get(&line_addr)
            .ok_or(CacheError::StateViolation {
                line_addr,
                state: LineState::I,
                op: "read",
            })?;
        let line = &self.sets[set][way];
        if !matches!(line.state, LineState::S | LineState::M) {
            return Err(CacheError::StateViolation {
                line_addr,
                state: line.state,
                op: "read",
            });
        }
        Ok(&line.data[offset as usize..(offset + len) as usize])
    }

    /// Full line data regardless of permission state (snoop supply,
    /// write-back streaming, and invariant checks need it).
    pub fn line_data(&self, addr: u64) -> Option<&[u8]> {
        let line_addr = self.geometry.line_addr(addr);
        self.resident
            .get(&line_addr)
            .map(|&(set, way)| self.sets[set][way].data.as_slice())
    }

    pub fn resident_lines(&self) -> impl Iterator<Item = (u64, &CacheLine)> {
        self.resident
            .iter()
            .map(move |(&addr, &(set, way))| (addr, &self.sets[set][way]))
    }

    pub fn resident_count(&self) -> usize {
        self.resident.len()
    }

    /// Debug dump of one set: `set=<i> way=<w> tag=<hex> state=<X> dirty=<0|1> lru=<r>`.
    pub fn dump_set(&self, set: usize) -> String {
        let mut out = String::new();
        for (w, line) in self.sets[set].iter().enumerate() {
            out.push_str(&format!(
                "set={} way={} tag={:#x} state={} dirty={} lru={}\n",
                set, w, line.tag, line.state, line.dirty as u8, line.lru_rank
            ));
        }
        out
    }

    /// Fold the array contents into a state hash.
    pub fn hash_into(&self, h: &mut crate::util::Fnv) {
        for (addr, line) in self.resident_lines() {
            h.write_u64(addr);
            h.write_u64(line.state as u64);
            h.write_u64(line.dirty as u64);
            h.write_bytes(&line.data);
            h.write_u64(line.lru_rank as u64);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PendingOp {
    Load,
    Store,
}

/// The single pending miss of one controller.
#[derive(Debug, Clone)]
pub struct MshrEntry {
    pub line_addr: u64,
    pub op: PendingOp,
    pub offset: u64,
    pub size: u64,
    pub store_data: [u8; 8],
    pub transient: LineState,
}

#[derive(Debug, Clone, Default)]
pub struct Mshr {
    entry: Option<MshrEntry>,
}

impl Mshr {
    pub fn new() -> Self {
        Self { entry: None }
    }

    pub fn is_busy(&self) -> bool {
        self.entry.is_some()
    }

    pub fn allocate(&mut self, entry: MshrEntry) -> Result<(), CacheError> {
        if self.entry.is_some() {
            return Err(CacheError::Busy);
        }
        self.entry = Some(entry);
        Ok(())
    }

    pub fn complete(&mut self) -> Result<MshrEntry, CacheError> {
        self.entry.take().ok_or(CacheError::EmptyComplete)
    }

    pub fn entry(&self) -> Option<&MshrEntry> {
        self.entry.as_ref()
    }

    pub fn entry_mut(&mut self) -> Option<&mut MshrEntry> {
        self.entry.as_mut()
    }
}
