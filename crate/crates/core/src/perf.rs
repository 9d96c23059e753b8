//! Performance counters and the analytical throughput model.

/// Published end-to-end latency for a 16x16x16 GEMM on the board, in cycles.
///
/// It is below the 256-cycle compute minimum for the same shape, so it cannot
/// come out of any consistent cycle model; kept only as a reference constant.
pub const REFERENCE_MEASURED_GEMM16_CYCLES: u64 = 156;

/// Read-only counter window at `0x3000_0000`. Every counter is a saturating
/// 64-bit value exposed as a lo/hi word pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PerfCounters {
    pub total_cycles: u64,
    pub engine_busy_cycles: u64,
    pub mac_ops_retired: u64,
    pub dma_bytes_moved: u64,
    pub cpu_stall_cycles: u64,
}

pub const TOTAL_CYCLES: u32 = 0x00;
pub const ENGINE_BUSY_CYCLES: u32 = 0x08;
pub const MAC_OPS_RETIRED: u32 = 0x10;
pub const DMA_BYTES_MOVED: u32 = 0x18;
pub const CPU_STALL_CYCLES: u32 = 0x20;

impl PerfCounters {
    pub fn read_word(&self, offset: u32) -> u32 {
        let value = match offset & !0x7 {
            TOTAL_CYCLES => self.total_cycles,
            ENGINE_BUSY_CYCLES => self.engine_busy_cycles,
            MAC_OPS_RETIRED => self.mac_ops_retired,
            DMA_BYTES_MOVED => self.dma_bytes_moved,
            CPU_STALL_CYCLES => self.cpu_stall_cycles,
            _ => return 0,
        };
        if offset & 0x4 == 0 {
            value as u32
        } else {
            (value >> 32) as u32
        }
    }

    pub fn add_cycle(&mut self) {
        self.total_cycles = self.total_cycles.saturating_add(1);
    }

    pub fn add_busy_cycle(&mut self) {
        self.engine_busy_cycles = self.engine_busy_cycles.saturating_add(1);
    }

    pub fn add_macs(&mut self, n: u64) {
        self.mac_ops_retired = self.mac_ops_retired.saturating_add(n);
    }

    pub fn add_dma_bytes(&mut self, n: u64) {
        self.dma_bytes_moved = self.dma_bytes_moved.saturating_add(n);
    }

    pub fn add_stall(&mut self) {
        self.cpu_stall_cycles = self.cpu_stall_cycles.saturating_add(1);
    }

    /// `(name, value)` pairs in window order.
    pub fn entries(&self) -> [(&'static str, u64); 5] {
        [
            ("total_cycles", self.total_cycles),
            ("engine_busy_cycles", self.engine_busy_cycles),
            ("mac_ops_retired", self.mac_ops_retired),
            ("dma_bytes_moved", self.dma_bytes_moved),
            ("cpu_stall_cycles", self.cpu_stall_cycles),
        ]
    }
}

/// Counting convention for one multiply-accumulate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpsPerMac {
    One = 1,
    Two = 2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PerfModel {
    pub mac_units: u32,
    pub clock_hz: u64,
    pub ops_per_mac: OpsPerMac,
}

impl PerfModel {
    pub fn peak_ops_per_sec(&self) -> u64 {
        peak_ops_per_sec(self.mac_units, self.clock_hz, self.ops_per_mac)
    }
}

pub fn peak_ops_per_sec(mac_units: u32, clock_hz: u64, ops_per_mac: OpsPerMac) -> u64 {
    mac_units as u64 * clock_hz * ops_per_mac as u64
}

/// Lower bound on GEMM compute cycles: `ceil(m*n*k / mac_units)`.
pub fn min_cycles_gemm(m: u64, n: u64, k: u64, mac_units: u32) -> u64 {
    assert!(mac_units > 0, "mac_units must be positive");
    (m * n * k).div_ceil(mac_units as u64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Efficiency {
    /// `min_cycles / measured_cycles`.
    pub ratio: f64,
    pub min_cycles: u64,
    pub measured_cycles: u64,
    /// Set when the measurement beats the theoretical minimum.
    pub anomaly: bool,
}

pub fn efficiency(measured_cycles: u64, m: u64, n: u64, k: u64, mac_units: u32) -> Efficiency {
    assert!(measured_cycles > 0, "measured_cycles must be positive");
    let min_cycles = min_cycles_gemm(m, n, k, mac_units);
    Efficiency {
        ratio: min_cycles as f64 / measured_cycles as f64,
        min_cycles,
        measured_cycles,
        anomaly: measured_cycles < min_cycles,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn peak_throughput() {
        assert_eq!(peak_ops_per_sec(16, 100_000_000, OpsPerMac::Two), 3_200_000_000);
        assert_eq!(peak_ops_per_sec(16, 100_000_000, OpsPerMac::One), 1_600_000_000);
        assert_eq!(peak_ops_per_sec(4, 100_000_000, OpsPerMac::Two), 800_000_000);
    }

    #[test]
    fn min_cycles_examples() {
        assert_eq!(min_cycles_gemm(16, 16, 16, 16), 256);
        assert_eq!(min_cycles_gemm(1, 1, 1, 16), 1);
    }

    #[test]
    fn efficiency_examples() {
        assert_eq!(efficiency(256, 16, 16, 16, 16).ratio, 1.0);
        assert_eq!(efficiency(512, 16, 16, 16, 16).ratio, 0.5);
        let e = efficiency(REFERENCE_MEASURED_GEMM16_CYCLES, 16, 16, 16, 16);
        assert!((e.ratio - 1.641).abs() < 1e-3);
        assert!(e.anomaly);
        assert!(!efficiency(400, 16, 16, 16, 16).anomaly);
    }

    #[test]
    fn counter_window_layout() {
        let c = PerfCounters {
            total_cycles: 0x1_0000_0002,
            engine_busy_cycles: 3,
            mac_ops_retired: 4096,
            dma_bytes_moved: 64,
            cpu_stall_cycles: 7,
        };
        assert_eq!(c.read_word(0x00), 2);
        assert_eq!(c.read_word(0x04), 1);
        assert_eq!(c.read_word(0x08), 3);
        assert_eq!(c.read_word(0x10), 4096);
        assert_eq!(c.read_word(0x18), 64);
        assert_eq!(c.read_word(0x20), 7);
        assert_eq!(c.read_word(0x28), 0);
        // reads are pure
        assert_eq!(c.read_word(0x10), c.read_word(0x10));
    }

    #[test]
    fn counters_saturate() {
        let mut c = PerfCounters { mac_ops_retired: u64::MAX - 1, ..Default::default() };
        c.add_macs(10);
        assert_eq!(c.mac_ops_retired, u64::MAX);
    }

    proptest! {
        /// Beat-by-beat enumeration: issue up to `units` MACs per beat until the work runs out.
        #[test]
        fn min_cycles_matches_beat_enumeration(m in 1u64..20, n in 1u64..20, k in 1u64..20, units in 1u32..40) {
            let mut remaining = m * n * k;
            let mut beats = 0;
            while remaining > 0 {
                remaining -= remaining.min(units as u64);
                beats += 1;
            }
            prop_assert_eq!(min_cycles_gemm(m, n, k, units), beats);
        }
    }
}
