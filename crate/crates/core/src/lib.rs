//! Cycle-level, deterministic simulator and verification harness for a
//! directory-based cache-coherent memory subsystem: configurable core count,
//! one or two cache levels, MSI/MI protocols, a five-channel coherent bus,
//! a randomized coherence tester, and a scoreboard-based co-simulation loop
//! with an oracle memory.

pub mod bus;
pub mod cache;
pub mod harness;
pub mod interconnect;
pub mod l1;
pub mod memside;
pub mod protocol;
pub mod rng;
pub mod stats;
pub mod system;
pub mod tester;
pub mod util;

pub use cache::CacheGeometry;
pub use l1::{CpuRequest, MemOp};
pub use protocol::{Mutation, ProtocolId};
pub use system::{build_mutated_system, build_system, ConfigError, SimError, System, SystemConfig};
