//! Run statistics: per-core counters, latency histograms, bus and L2
//! activity, emitted as CSV (`metric,core,value`) or an aligned table.

use crate::bus::Channel;
use crate::memside::L2BankStats;
use crate::system::System;

/// Power-of-two latency buckets: bucket i counts latencies in
/// [2^i, 2^(i+1)), with the last bucket absorbing the tail.
pub const LATENCY_BUCKETS: usize = 20;

#[derive(Debug, Clone, Default)]
pub struct LatencyHistogram {
    pub count: u64,
    pub sum: u64,
    pub buckets: [u64; LATENCY_BUCKETS],
}

impl LatencyHistogram {
    pub fn record(&mut self, latency: u64) {
        self.count += 1;
        self.sum += latency;
        let bucket = if latency == 0 {
            0
        } else {
            (63 - latency.leading_zeros() as usize).min(LATENCY_BUCKETS - 1)
        };
        self.buckets[bucket] += 1;
    }

    pub fn merge(&mut self, other: &LatencyHistogram) {
        self.count += other.count;
        self.sum += other.sum;
        for (a, b) in self.buckets.iter_mut().zip(other.buckets.iter()) {
            *a += b;
        }
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum as f64 / self.count as f64
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PerCoreStats {
    pub requests: u64,
    pub hits: u64,
    pub misses: u64,
    pub snoops: u64,
    pub latency_sum: u64,
    pub latency_count: u64,
}

#[derive(Debug, Clone)]
pub struct StatsBundle {
    pub total_cycles: u64,
    pub per_core: Vec<PerCoreStats>,
    pub latency: Vec<LatencyHistogram>,
    pub l2_banks: Vec<L2BankStats>,
    pub snoops_sent: u64,
    pub read_txns: u64,
    pub wb_txns: u64,
    pub channel_busy: [u64; 8],
    pub directory_high_water: usize,
}

impl StatsBundle {
    pub fn collect(system: &System) -> Self {
        let (cores, ic, memside, latency, cycle) = system.stats_parts();
        let per_core = cores
            .iter()
            .zip(latency.iter())
            .map(|(c, lat)| PerCoreStats {
                requests: c.stats.requests,
                hits: c.stats.hits,
                misses: c.stats.misses,
                snoops: c.stats.snoops,
                latency_sum: lat.sum,
                latency_count: lat.count,
            })
            .collect();
        Self {
            total_cycles: cycle,
            per_core,
            latency: latency.to_vec(),
            l2_banks: memside.bank_stats(),
            snoops_sent: ic.stats.snoops_sent,
            read_txns: ic.stats.read_txns,
            wb_txns: ic.stats.wb_txns,
            channel_busy: ic.stats.channel_busy,
            directory_high_water: ic.directory.high_water,
        }
    }

    pub fn total_requests(&self) -> u64 {
        self.per_core.iter().map(|c| c.requests).sum()
    }

    pub fn total_hits(&self) -> u64 {
        self.per_core.iter().map(|c| c.hits).sum()
    }

    pub fn total_misses(&self) -> u64 {
        self.per_core.iter().map(|c| c.misses).sum()
    }

    pub fn merged_latency(&self) -> LatencyHistogram {
        let mut merged = LatencyHistogram::default();
        for h in &self.latency {
            merged.merge(h);
        }
        merged
    }

    pub fn avg_latency(&self) -> f64 {
        self.merged_latency().mean()
    }

    /// CSV rows `metric,core,value`; aggregates use core `all`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,core,value\n");
        let mut row = |metric: &str, core: String, value: String| {
            out.push_str(&format!("{},{},{}\n", metric, core, value));
        };
        row("cycles", "all".into(), self.total_cycles.to_string());
        row("requests", "all".into(), self.total_requests().to_string());
        row("l1_hits", "all".into(), self.total_hits().to_string());
        row("l1_misses", "all".into(), self.total_misses().to_string());
        row("snoops_sent", "all".into(), self.snoops_sent.to_string());
        row("read_txns", "all".into(), self.read_txns.to_string());
        row("wb_txns", "all".into(), self.wb_txns.to_string());
        row(
            "directory_high_water",
            "all".into(),
            self.directory_high_water.to_string(),
        );
        row(
            "avg_latency",
            "all".into(),
            format!("{:.4}", self.avg_latency()),
        );
        for (i, c) in self.per_core.iter().enumerate() {
            row("requests", i.to_string(), c.requests.to_string());
            row("l1_hits", i.to_string(), c.hits.to_string());
            row("l1_misses", i.to_string(), c.misses.to_string());
            row("snoops", i.to_string(), c.snoops.to_string());
            row("latency_sum", i.to_string(), c.latency_sum.to_string());
        }
        for (i, b) in self.l2_banks.iter().enumerate() {
            let bank = format!("l2b{}", i);
            row("l2_hits", bank.clone(), b.hits.to_string());
            row("l2_misses", bank.clone(), b.misses.to_string());
            row("l2_write_backs", bank, b.write_backs.to_string());
        }
        for (i, &busy) in self.channel_busy.iter().enumerate() {
            row(
                &format!("channel_busy_{}", Channel::ALL[i].name().to_lowercase()),
                "all".into(),
                busy.to_string(),
            );
        }
        out
    }

    /// Human-readable aligned table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<24} {:>12}\n", "metric", "value"));
        out.push_str(&format!("{:<24} {:>12}\n", "cycles", self.total_cycles));
        out.push_str(&format!(
            "{:<24} {:>12}\n",
            "requests",
            self.total_requests()
        ));
        out.push_str(&format!("{:<24} {:>12}\n", "l1 hits", self.total_hits()));
        out.push_str(&format!(
            "{:<24} {:>12}\n",
            "l1 misses",
            self.total_misses()
        ));
        out.push_str(&format!("{:<24} {:>12}\n", "snoops sent", self.snoops_sent));
        out.push_str(&format!(
            "{:<24} {:>12.2}\n",
            "avg latency (cycles)",
            self.avg_latency()
        ));
        for (i, b) in self.l2_banks.iter().enumerate() {
            out.push_str(&format!(
                "{:<24} {:>12}\n",
                format!("l2 bank {} hits", i),
                b.hits
            ));
            out.push_str(&format!(
                "{:<24} {:>12}\n",
                format!("l2 bank {} misses", i),
                b.misses
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_sums_match_count() {
        let mut h = LatencyHistogram::default();
        for lat in [1u64, 2, 3, 130, 4096, 1] {
            h.record(lat);
        }
        assert_eq!(h.count, 6);
        assert_eq!(h.buckets.iter().sum::<u64>(), h.count);
        assert_eq!(h.sum, 1 + 2 + 3 + 130 + 4096 + 1);
    }

    #[test]
    fn bucket_boundaries() {
        let mut h = LatencyHistogram::default();
        h.record(1); // bucket 0
        h.record(2); // bucket 1
        h.record(3); // bucket 1
        h.record(4); // bucket 2
        assert_eq!(h.buckets[0], 1);
        assert_eq!(h.buckets[1], 2);
        assert_eq!(h.buckets[2], 1);
    }
}
