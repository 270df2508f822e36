//! Config file loading: a flat TOML file with one section per component,
//! unknown keys rejected, plus command-line overrides.

use std::path::Path;

use serde::Deserialize;

use coherence_core::{CacheGeometry, ProtocolId, SystemConfig};

#[derive(Debug)]
pub struct ConfigFileError {
    pub reason: String,
}

impl std::fmt::Display for ConfigFileError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.reason)
    }
}

impl std::error::Error for ConfigFileError {}

fn err(reason: impl Into<String>) -> ConfigFileError {
    ConfigFileError {
        reason: reason.into(),
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(default)]
    system: SystemSection,
    #[serde(default)]
    l1: CacheSection,
    #[serde(default)]
    l2: L2Section,
    #[serde(default)]
    mem: MemSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemSection {
    cores: Option<usize>,
    levels: Option<u8>,
    protocol: Option<String>,
    seed: Option<u64>,
    bus_width_bits: Option<u32>,
    fifo_depth: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CacheSection {
    capacity_bytes: Option<u64>,
    ways: Option<usize>,
    line_bytes: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct L2Section {
    count: Option<usize>,
    capacity_bytes: Option<u64>,
    ways: Option<usize>,
    hit_latency: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct MemSection {
    size_bytes: Option<u64>,
    first_latency: Option<u64>,
    per_beat_latency: Option<u64>,
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub cores: Option<usize>,
    pub levels: Option<u8>,
    pub protocol: Option<String>,
    pub seed: Option<u64>,
}

pub fn parse_config_str(
    text: &str,
    overrides: &Overrides,
) -> Result<SystemConfig, ConfigFileError> {
    let file: ConfigFile = toml::from_str(text).map_err(|e| err(e.to_string()))?;
    let mut config = SystemConfig::default();

    if let Some(v) = file.system.cores {
        config.n_cores = v;
    }
    if let Some(v) = file.system.levels {
        config.cache_levels = v;
    }
    if let Some(p) = &file.system.protocol {
        config.protocol = ProtocolId::parse(p).map_err(|e| err(e.to_string()))?;
    }
    if let Some(v) = file.system.seed {
        config.seed = v;
    }
    if let Some(v) = file.system.bus_width_bits {
        config.bus_width_bits = v;
    }
    if file.system.fifo_depth.is_some() {
        config.fifo_depth = file.system.fifo_depth;
    }

    config.l1 = CacheGeometry::new(
        file.l1.capacity_bytes.unwrap_or(config.l1.capacity_bytes),
        file.l1.ways.unwrap_or(config.l1.ways),
        file.l1.line_bytes.unwrap_or(config.l1.line_bytes),
    );
    config.l2 = CacheGeometry::new(
        file.l2.capacity_bytes.unwrap_or(config.l2.capacity_bytes),
        file.l2.ways.unwrap_or(config.l2.ways),
        config.l1.line_bytes,
    );
    if let Some(v) = file.l2.count {
        config.l2_count = v;
    }
    if let Some(v) = file.l2.hit_latency {
        config.l2_hit_latency = v;
    }
    if let Some(v) = file.mem.size_bytes {
        config.mem_size_bytes = v;
    }
    if let Some(v) = file.mem.first_latency {
        config.mem_first_latency = v;
    }
    if let Some(v) = file.mem.per_beat_latency {
        config.mem_per_beat_latency = v;
    }

    apply_overrides(&mut config, overrides)?;
    config.validate().map_err(|e| err(e.to_string()))?;
    Ok(config)
}

pub fn parse_config(
    path: Option<&Path>,
    overrides: &Overrides,
) -> Result<SystemConfig, ConfigFileError> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| err(format!("cannot read {}: {}", p.display(), e)))?;
            parse_config_str(&text, overrides)
        }
        None => {
            let mut config = SystemConfig::default();
            apply_overrides(&mut config, overrides)?;
            config.validate().map_err(|e| err(e.to_string()))?;
            Ok(config)
        }
    }
}

fn apply_overrides(
    config: &mut SystemConfig,
    overrides: &Overrides,
) -> Result<(), ConfigFileError> {
    if let Some(v) = overrides.cores {
        config.n_cores = v;
    }
    if let Some(v) = overrides.levels {
        config.cache_levels = v;
    }
    if let Some(p) = &overrides.protocol {
        config.protocol = ProtocolId::parse(p).map_err(|e| err(e.to_string()))?;
    }
    if let Some(v) = overrides.seed {
        config.seed = v;
    }
    Ok(())
}

/// Echo of the fully resolved configuration, written beside every output so
/// a run can be reproduced from its artifacts alone.
pub fn manifest_echo(config: &SystemConfig) -> String {
    let mut out = String::new();
    out.push_str("[system]\n");
    out.push_str(&format!("cores = {}\n", config.n_cores));
    out.push_str(&format!("levels = {}\n", config.cache_levels));
    out.push_str(&format!("protocol = \"{}\"\n", config.protocol));
    out.push_str(&format!("seed = {}\n", config.seed));
    out.push_str(&format!("bus_width_bits = {}\n", config.bus_width_bits));
    out.push_str(&format!("fifo_depth = {}\n", config.resolved_fifo_depth()));
    out.push_str("\n[l1]\n");
    out.push_str(&format!("capacity_bytes = {}\n", config.l1.capacity_bytes));
    out.push_str(&format!("ways = {}\n", config.l1.ways));
    out.push_str(&format!("line_bytes = {}\n", config.l1.line_bytes));
    out.push_str("\n[l2]\n");
    out.push_str(&format!("count = {}\n", config.l2_count));
    out.push_str(&format!("capacity_bytes = {}\n", config.l2.capacity_bytes));
    out.push_str(&format!("ways = {}\n", config.l2.ways));
    out.push_str(&format!("hit_latency = {}\n", config.l2_hit_latency));
    out.push_str("\n[mem]\n");
    out.push_str(&format!("size_bytes = {}\n", config.mem_size_bytes));
    out.push_str(&format!("first_latency = {}\n", config.mem_first_latency));
    out.push_str(&format!(
        "per_beat_latency = {}\n",
        config.mem_per_beat_latency
    ));
    out
}
