//! Deterministic TOML run report.
//!
//! Field order is fixed by the struct layout. Values that depend on the input
//! data rather than on shapes and configuration are limited to `seed`,
//! `summary.overflow_total` and the per-op `overflow_count` and
//! `output_sha256` fields.

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::dma::StallSchedule;
use crate::engine::EngineConfig;
use crate::perf::{self, OpsPerMac, PerfCounters};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub format_version: u32,
    pub seed: u64,
    pub oracle_check: bool,
    pub dma_stall: String,
    pub config: EngineConfig,
    pub summary: Summary,
    pub counters: Counters,
    pub throughput: Throughput,
    pub reference: Reference,
    pub op: Vec<OpReport>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Summary {
    pub ops: u64,
    pub faults: u64,
    pub oracle_pass: u64,
    pub oracle_fail: u64,
    pub overflow_total: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Counters {
    pub total_cycles: u64,
    pub engine_busy_cycles: u64,
    pub mac_ops_retired: u64,
    pub dma_bytes_moved: u64,
    pub cpu_stall_cycles: u64,
}

impl From<&PerfCounters> for Counters {
    fn from(p: &PerfCounters) -> Self {
        Counters {
            total_cycles: p.total_cycles,
            engine_busy_cycles: p.engine_busy_cycles,
            mac_ops_retired: p.mac_ops_retired,
            dma_bytes_moved: p.dma_bytes_moved,
            cpu_stall_cycles: p.cpu_stall_cycles,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Throughput {
    /// Two operations (multiply and add) per MAC.
    pub peak_ops_per_sec: u64,
    /// One operation per MAC.
    pub peak_macs_per_sec: u64,
    pub achieved_ops_per_sec: u64,
    pub achieved_macs_per_sec: u64,
    /// Retired MACs over `total_cycles * mac_units`.
    pub mac_utilization: f64,
}

impl Throughput {
    pub fn new(cfg: &EngineConfig, c: &Counters) -> Self {
        let achieved = |per_mac: u64| {
            if c.total_cycles == 0 {
                0
            } else {
                (c.mac_ops_retired as u128 * per_mac as u128 * cfg.clock_hz as u128 / c.total_cycles as u128) as u64
            }
        };
        let util = if c.total_cycles == 0 {
            0.0
        } else {
            c.mac_ops_retired as f64 / (c.total_cycles as f64 * cfg.mac_units as f64)
        };
        Throughput {
            peak_ops_per_sec: perf::peak_ops_per_sec(cfg.mac_units, cfg.clock_hz, OpsPerMac::Two),
            peak_macs_per_sec: perf::peak_ops_per_sec(cfg.mac_units, cfg.clock_hz, OpsPerMac::One),
            achieved_ops_per_sec: achieved(2),
            achieved_macs_per_sec: achieved(1),
            mac_utilization: round6(util),
        }
    }
}

/// The board's published 16x16x16 GEMM cycle figure against the modeled minimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Reference {
    pub measured_gemm16_cycles: u64,
    pub min_cycles_gemm16: u64,
    pub efficiency: f64,
    /// Set because the measured figure is below the theoretical minimum.
    pub anomaly: bool,
}

impl Reference {
    pub fn new(cfg: &EngineConfig) -> Self {
        let e = perf::efficiency(perf::REFERENCE_MEASURED_GEMM16_CYCLES, 16, 16, 16, cfg.mac_units);
        Reference {
            measured_gemm16_cycles: e.measured_cycles,
            min_cycles_gemm16: e.min_cycles,
            efficiency: round6(e.ratio),
            anomaly: e.anomaly,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpReport {
    pub index: u64,
    pub name: String,
    pub kind: String,
    /// `ok` or `fault`.
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub staged_bytes: u64,
    pub staging_cycles: u64,
    pub start_cycle: u64,
    pub end_cycle: u64,
    /// CYCLE_COUNT latched at completion.
    pub busy_cycles: u64,
    pub cycles_compute: u64,
    pub cycles_total: u64,
    pub min_cycles: u64,
    /// `min_cycles / busy_cycles`.
    pub efficiency: f64,
    pub efficiency_anomaly: bool,
    pub macs: u64,
    pub overflow_count: u64,
    pub output_bytes: u64,
    pub output_sha256: String,
    /// `pass`, `fail` or `skipped`.
    pub oracle: String,
    pub oracle_mismatches: u64,
}

pub fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn describe_stall(s: &StallSchedule) -> String {
    match *s {
        StallSchedule::None => "none".into(),
        StallSchedule::EveryNth(n) => format!("every_nth({n})"),
        StallSchedule::Random { seed, percent, max_run } => format!("random(seed={seed}, percent={percent}, max_run={max_run})"),
    }
}

impl Report {
    pub fn to_toml(&self) -> String {
        let body = toml::to_string(self).expect("report is representable as TOML");
        format!("# npusim run report\n{body}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha_of_empty() {
        assert_eq!(sha256_hex(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }

    #[test]
    fn reference_is_flagged() {
        let r = Reference::new(&EngineConfig::default());
        assert_eq!(r.min_cycles_gemm16, 256);
        assert_eq!(r.efficiency, 1.641026);
        assert!(r.anomaly);
    }

    #[test]
    fn throughput_of_idle_run() {
        let t = Throughput::new(&EngineConfig::default(), &Counters::default());
        assert_eq!(t.peak_ops_per_sec, 3_200_000_000);
        assert_eq!(t.peak_macs_per_sec, 1_600_000_000);
        assert_eq!(t.achieved_ops_per_sec, 0);
    }
}
