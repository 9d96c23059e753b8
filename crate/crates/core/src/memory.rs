//! System address space, plain memories and the CPU/DMA interconnect.
//!
//! Default layout:
//!
//! ```text
//! 0x0000_0000 - 0x0000_3FFF  main RAM (16 KB)
//! 0x1000_0000 - 0x1000_00FF  neural engine registers
//! 0x1000_1000 - 0x1000_2FFF  scratchpad (8 KB)
//! 0x2000_0000 - 0x2000_00FF  UART
//! 0x3000_0000 - 0x3000_00FF  performance counters
//! ```

use std::collections::VecDeque;
use std::fmt;

use thiserror::Error;

use crate::engine::EngineConfig;
use crate::perf::PerfCounters;
use crate::regs::RegisterFile;

pub const MAIN_RAM_BASE: u32 = 0x0000_0000;
pub const MAIN_RAM_SIZE: u32 = 16 * 1024;
pub const NEURAL_REGS_BASE: u32 = 0x1000_0000;
pub const NEURAL_REGS_SIZE: u32 = 0x100;
pub const SCRATCHPAD_BASE: u32 = 0x1000_1000;
pub const SCRATCHPAD_WINDOW: u32 = 0x2000;
pub const UART_BASE: u32 = 0x2000_0000;
pub const UART_SIZE: u32 = 0x100;
pub const PERF_BASE: u32 = 0x3000_0000;
pub const PERF_SIZE: u32 = 0x100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegionKind {
    MainRam,
    NeuralRegs,
    Scratchpad,
    Uart,
    PerfCounters,
}

impl RegionKind {
    /// Whether the region behaves as plain byte-addressable storage.
    pub fn is_memory(self) -> bool {
        matches!(self, RegionKind::MainRam | RegionKind::Scratchpad)
    }
}

impl fmt::Display for RegionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RegionKind::MainRam => "RAM",
            RegionKind::NeuralRegs => "Neural Regs",
            RegionKind::Scratchpad => "Scratchpad",
            RegionKind::Uart => "UART",
            RegionKind::PerfCounters => "Perf Counters",
        };
        f.write_str(s)
    }
}

/// Inclusive address range `[base, limit]` owned by one device.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub base: u32,
    pub limit: u32,
    pub kind: RegionKind,
}

impl Region {
    pub const fn new(base: u32, limit: u32, kind: RegionKind) -> Self {
        Region { base, limit, kind }
    }

    #[inline]
    pub fn contains(&self, addr: u32) -> bool {
        addr >= self.base && addr <= self.limit
    }

    /// True when `[addr, addr + len)` lies entirely inside the region.
    pub fn contains_range(&self, addr: u32, len: u32) -> bool {
        len > 0
            && self.contains(addr)
            && (addr as u64 + len as u64 - 1) <= self.limit as u64
    }

    pub fn size(&self) -> u32 {
        self.limit - self.base + 1
    }

    #[inline]
    pub fn offset(&self, addr: u32) -> u32 {
        addr - self.base
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum BusError {
    #[error("bus fault: no device decodes address 0x{0:08x}")]
    BusFault(u32),
    #[error("alignment fault: 0x{0:08x} is not 4-byte aligned")]
    AlignmentFault(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MapError {
    #[error("region 0x{:08x}-0x{:08x} ({}) has limit below base", .0.base, .0.limit, .0.kind)]
    Inverted(Region),
    #[error("regions {0:?} and {1:?} overlap")]
    Overlap(Region, Region),
}

/// Ordered, pairwise-disjoint set of address regions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryMap {
    regions: Vec<Region>,
}

impl Default for MemoryMap {
    fn default() -> Self {
        MemoryMap {
            regions: vec![
                Region::new(MAIN_RAM_BASE, MAIN_RAM_BASE + MAIN_RAM_SIZE - 1, RegionKind::MainRam),
                Region::new(NEURAL_REGS_BASE, NEURAL_REGS_BASE + NEURAL_REGS_SIZE - 1, RegionKind::NeuralRegs),
                Region::new(SCRATCHPAD_BASE, SCRATCHPAD_BASE + SCRATCHPAD_WINDOW - 1, RegionKind::Scratchpad),
                Region::new(UART_BASE, UART_BASE + UART_SIZE - 1, RegionKind::Uart),
                Region::new(PERF_BASE, PERF_BASE + PERF_SIZE - 1, RegionKind::PerfCounters),
            ],
        }
    }
}

impl MemoryMap {
    pub fn new(mut regions: Vec<Region>) -> Result<Self, MapError> {
        regions.sort_by_key(|r| r.base);
        for r in &regions {
            if r.limit < r.base {
                return Err(MapError::Inverted(*r));
            }
        }
        for pair in regions.windows(2) {
            if pair[1].base <= pair[0].limit {
                return Err(MapError::Overlap(pair[0], pair[1]));
            }
        }
        Ok(MemoryMap { regions })
    }

    /// Default map with the scratchpad window sized to `cfg.scratchpad_size`.
    pub fn for_config(cfg: &EngineConfig) -> Self {
        let mut map = MemoryMap::default();
        for r in &mut map.regions {
            if r.kind == RegionKind::Scratchpad {
                r.limit = SCRATCHPAD_BASE + cfg.scratchpad_size - 1;
            }
        }
        map
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn region(&self, kind: RegionKind) -> Option<Region> {
        self.regions.iter().copied().find(|r| r.kind == kind)
    }

    pub fn decode(&self, addr: u32) -> Result<Region, BusError> {
        // regions are sorted by base; find the last region starting at or below addr
        let idx = self.regions.partition_point(|r| r.base <= addr);
        match idx.checked_sub(1).map(|i| self.regions[i]) {
            Some(r) if r.contains(addr) => Ok(r),
            _ => Err(BusError::BusFault(addr)),
        }
    }

    /// Decodes a byte range that must fall inside a single region.
    pub fn decode_range(&self, addr: u32, len: u32) -> Result<Region, BusError> {
        let r = self.decode(addr)?;
        if r.contains_range(addr, len) {
            Ok(r)
        } else {
            // first byte past the region
            Err(BusError::BusFault(r.limit.wrapping_add(1)))
        }
    }
}

/// Byte-addressable little-endian memory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ram {
    bytes: Vec<u8>,
}

impl Ram {
    pub fn new(size: usize) -> Self {
        Ram { bytes: vec![0; size] }
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub fn read32(&self, offset: u32) -> u32 {
        let o = offset as usize;
        u32::from_le_bytes(self.bytes[o..o + 4].try_into().unwrap())
    }

    pub fn write32(&mut self, offset: u32, word: u32) {
        let o = offset as usize;
        self.bytes[o..o + 4].copy_from_slice(&word.to_le_bytes());
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn as_bytes_mut(&mut self) -> &mut [u8] {
        &mut self.bytes
    }
}

/// One port's access within a cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PortOp {
    Idle,
    Read(u32),
    Write(u32, u32),
}

/// Dual-port scratchpad SRAM: one engine port, one bus port.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scratchpad {
    ram: Ram,
}

impl Scratchpad {
    pub fn new(size: u32) -> Self {
        Scratchpad { ram: Ram::new(size as usize) }
    }

    pub fn len(&self) -> usize {
        self.ram.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ram.is_empty()
    }

    /// Engine-port element read at a byte offset.
    #[inline]
    pub fn read_elem(&self, offset: u32) -> crate::numerics::Fixed16 {
        let o = offset as usize;
        let b = self.ram.as_bytes();
        crate::numerics::Fixed16::from_le_bytes([b[o], b[o + 1]])
    }

    /// Engine-port element write at a byte offset.
    #[inline]
    pub fn write_elem(&mut self, offset: u32, value: crate::numerics::Fixed16) {
        let o = offset as usize;
        self.ram.as_bytes_mut()[o..o + 2].copy_from_slice(&value.to_le_bytes());
    }

    pub fn read32(&self, offset: u32) -> u32 {
        self.ram.read32(offset)
    }

    pub fn write32(&mut self, offset: u32, word: u32) {
        self.ram.write32(offset, word)
    }

    /// Services both ports in one cycle. Writes land before reads (write-first);
    /// when both ports write the same word the bus port lands last.
    /// Returns `(engine_read, bus_read)`.
    pub fn dual_port_cycle(&mut self, engine: PortOp, bus: PortOp) -> (Option<u32>, Option<u32>) {
        for op in [engine, bus] {
            if let PortOp::Write(off, w) = op {
                self.write32(off, w);
            }
        }
        let read = |op: PortOp| match op {
            PortOp::Read(off) => Some(self.read32(off)),
            _ => None,
        };
        (read(engine), read(bus))
    }

    pub fn as_bytes(&self) -> &[u8] {
        self.ram.as_bytes()
    }

    pub fn as_bytes_mut(&mut self) -> &mut [u8] {
        self.ram.as_bytes_mut()
    }
}

/// Byte-at-a-time serial port with no line timing.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UartModel {
    pub tx_sink: Vec<u8>,
    pub rx_source: VecDeque<u8>,
}

impl UartModel {
    pub fn write32(&mut self, word: u32) {
        self.tx_sink.push(word as u8);
    }

    pub fn read32(&mut self) -> u32 {
        self.rx_source.pop_front().map_or(0, u32::from)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Master {
    /// Neural DMA; highest priority.
    Dma,
    Cpu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransactionKind {
    Read32,
    Write32,
    /// DMA burst of `len` bytes from `src` to the transaction address.
    Burst { src: u32, len: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BusTransaction {
    pub addr: u32,
    pub kind: TransactionKind,
    pub data: u32,
    pub master: Master,
}

impl BusTransaction {
    pub fn read(master: Master, addr: u32) -> Self {
        BusTransaction { addr, kind: TransactionKind::Read32, data: 0, master }
    }

    pub fn write(master: Master, addr: u32, data: u32) -> Self {
        BusTransaction { addr, kind: TransactionKind::Write32, data, master }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ArbitrationError {
    #[error("more than one pending transaction from {0:?} in a single cycle")]
    DuplicateMaster(Master),
}

/// Orders same-cycle requests into grant order: DMA before CPU.
/// The first entry is granted this cycle; each later entry waits one more cycle.
pub fn arbitrate(pending: &[BusTransaction]) -> Result<Vec<BusTransaction>, ArbitrationError> {
    let mut grants = pending.to_vec();
    grants.sort_by_key(|t| t.master);
    for pair in grants.windows(2) {
        if pair[0].master == pair[1].master {
            return Err(ArbitrationError::DuplicateMaster(pair[0].master));
        }
    }
    Ok(grants)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FaultRecord {
    pub master: Master,
    pub error: BusError,
}

/// The interconnect together with every device it routes to.
#[derive(Debug, Clone)]
pub struct Bus {
    map: MemoryMap,
    pub main_ram: Ram,
    pub scratchpad: Scratchpad,
    pub uart: UartModel,
    pub regs: RegisterFile,
    pub perf: PerfCounters,
    faults: Vec<FaultRecord>,
}

impl Bus {
    pub fn new(cfg: &EngineConfig) -> Self {
        Bus {
            map: MemoryMap::for_config(cfg),
            main_ram: Ram::new(MAIN_RAM_SIZE as usize),
            scratchpad: Scratchpad::new(cfg.scratchpad_size),
            uart: UartModel::default(),
            regs: RegisterFile::new(),
            perf: PerfCounters::default(),
            faults: Vec::new(),
        }
    }

    pub fn map(&self) -> &MemoryMap {
        &self.map
    }

    pub fn faults(&self) -> &[FaultRecord] {
        &self.faults
    }

    fn fault(&mut self, master: Master, error: BusError) -> BusError {
        self.faults.push(FaultRecord { master, error });
        error
    }

    fn decode_word(&mut self, master: Master, addr: u32) -> Result<Region, BusError> {
        if !addr.is_multiple_of(4) {
            return Err(self.fault(master, BusError::AlignmentFault(addr)));
        }
        self.map.decode(addr).map_err(|e| self.fault(master, e))
    }

    pub fn read32(&mut self, addr: u32) -> Result<u32, BusError> {
        self.read32_as(Master::Cpu, addr)
    }

    pub fn write32(&mut self, addr: u32, word: u32) -> Result<(), BusError> {
        self.write32_as(Master::Cpu, addr, word)
    }

    pub fn read32_as(&mut self, master: Master, addr: u32) -> Result<u32, BusError> {
        let region = self.decode_word(master, addr)?;
        let off = region.offset(addr);
        let word = match region.kind {
            RegionKind::MainRam => self.main_ram.read32(off),
            RegionKind::Scratchpad => self.scratchpad.read32(off),
            RegionKind::NeuralRegs => self.regs.reg_read(off).map_err(|_| self.fault(master, BusError::BusFault(addr)))?,
            RegionKind::PerfCounters => self.perf.read_word(off),
            RegionKind::Uart => self.uart.read32(),
        };
        Ok(word)
    }

    pub fn write32_as(&mut self, master: Master, addr: u32, word: u32) -> Result<(), BusError> {
        let region = self.decode_word(master, addr)?;
        let off = region.offset(addr);
        match region.kind {
            RegionKind::MainRam => self.main_ram.write32(off, word),
            RegionKind::Scratchpad => self.scratchpad.write32(off, word),
            RegionKind::NeuralRegs => {
                // protocol violations surface through the STATUS error bit
                if let Err(crate::regs::RegError::OutOfWindow(_)) = self.regs.reg_write(off, word) {
                    return Err(self.fault(master, BusError::BusFault(addr)));
                }
            }
            // read-only window
            RegionKind::PerfCounters => {}
            RegionKind::Uart => self.uart.write32(word),
        }
        Ok(())
    }

    fn memory_slice(&self, region: Region) -> &[u8] {
        match region.kind {
            RegionKind::MainRam => self.main_ram.as_bytes(),
            RegionKind::Scratchpad => self.scratchpad.as_bytes(),
            _ => unreachable!("not a memory region"),
        }
    }

    fn memory_slice_mut(&mut self, region: Region) -> &mut [u8] {
        match region.kind {
            RegionKind::MainRam => self.main_ram.as_bytes_mut(),
            RegionKind::Scratchpad => self.scratchpad.as_bytes_mut(),
            _ => unreachable!("not a memory region"),
        }
    }

    fn memory_range(&self, addr: u32, len: u32) -> Result<Region, BusError> {
        let r = self.map.decode_range(addr, len)?;
        if !r.kind.is_memory() {
            return Err(BusError::BusFault(addr));
        }
        Ok(r)
    }

    /// Moves one DMA burst between memory regions (RAM or scratchpad bus port).
    pub fn burst_copy(&mut self, src: u32, dst: u32, len: u32) -> Result<(), BusError> {
        let copy = || -> Result<(Region, Region), BusError> {
            Ok((self.memory_range(src, len)?, self.memory_range(dst, len)?))
        };
        let (sr, dr) = copy().map_err(|e| self.fault(Master::Dma, e))?;
        let so = sr.offset(src) as usize;
        let doff = dr.offset(dst) as usize;
        let data = self.memory_slice(sr)[so..so + len as usize].to_vec();
        self.memory_slice_mut(dr)[doff..doff + len as usize].copy_from_slice(&data);
        Ok(())
    }

    /// Host backdoor: copies `bytes` into memory at `base` without bus cycles.
    pub fn load_image(&mut self, base: u32, bytes: &[u8]) -> Result<(), BusError> {
        if bytes.is_empty() {
            return Ok(());
        }
        let r = self.memory_range(base, bytes.len() as u32)?;
        let o = r.offset(base) as usize;
        self.memory_slice_mut(r)[o..o + bytes.len()].copy_from_slice(bytes);
        Ok(())
    }

    /// Host backdoor: reads `len` bytes of memory at `base`.
    pub fn dump_image(&self, base: u32, len: u32) -> Result<Vec<u8>, BusError> {
        if len == 0 {
            return Ok(Vec::new());
        }
        let r = self.memory_range(base, len)?;
        let o = r.offset(base) as usize;
        Ok(self.memory_slice(r)[o..o + len as usize].to_vec())
    }
}
