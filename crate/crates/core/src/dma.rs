//! Scatter-gather DMA between main memory and the scratchpad.
//!
//! A transfer is a chain of descriptors. Each descriptor is cut into bursts of
//! at most `burst_size` bytes; the source address advances by `stride` after
//! every burst (or by the burst length when `stride == 0`) while the
//! destination is always packed contiguously. The engine moves at most one
//! burst per cycle, rotating between in-flight transfers, and a burst refused
//! by backpressure is retried on a later cycle.

use std::collections::{BTreeMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memory::{Bus, BusError, BusTransaction, Master, MemoryMap, TransactionKind};

/// Maximum number of in-flight transfers.
pub const QUEUE_CAPACITY: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DmaDescriptor {
    pub src_addr: u32,
    pub dst_addr: u32,
    pub length: u32,
    /// Source advance per burst in bytes; 0 means contiguous.
    pub stride: u32,
    /// Index of the next descriptor in the same table.
    pub next: Option<usize>,
}

impl DmaDescriptor {
    pub fn new(src_addr: u32, dst_addr: u32, length: u32) -> Self {
        DmaDescriptor { src_addr, dst_addr, length, stride: 0, next: None }
    }

    pub fn with_stride(mut self, stride: u32) -> Self {
        self.stride = stride;
        self
    }

    pub fn linked(mut self, next: usize) -> Self {
        self.next = Some(next);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Burst {
    pub src: u32,
    pub dst: u32,
    pub len: u32,
}

/// Splits a descriptor into bursts of at most `burst_size` bytes.
pub fn segment(d: &DmaDescriptor, burst_size: u32) -> Vec<Burst> {
    assert!(burst_size > 0, "burst size must be positive");
    let advance = if d.stride == 0 { burst_size } else { d.stride };
    let count = d.length.div_ceil(burst_size);
    (0..count)
        .map(|i| Burst {
            src: d.src_addr.wrapping_add(i.wrapping_mul(advance)),
            dst: d.dst_addr.wrapping_add(i * burst_size),
            len: burst_size.min(d.length - i * burst_size),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum DmaError {
    #[error("DMA queue full ({QUEUE_CAPACITY} transfers outstanding)")]
    QueueFull,
    #[error("descriptor chain loops back to descriptor {0}")]
    CyclicChain(usize),
    #[error("descriptor index {0} is out of range")]
    BadLink(usize),
    #[error("descriptor {0} has zero length")]
    ZeroLength(usize),
    #[error("descriptor {index}: {error}")]
    InvalidRange { index: usize, error: BusError },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Ticket(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransferStatus {
    InFlight,
    Complete,
    Failed(BusError),
}

/// Deterministic backpressure pattern applied to DMA bursts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StallSchedule {
    #[default]
    None,
    /// Refuse the burst on every cycle divisible by `n` (n >= 2).
    EveryNth(u64),
    /// Refuse with probability `percent`/100, never more than `max_run` cycles in a row.
    Random { seed: u64, percent: u8, max_run: u32 },
}

impl StallSchedule {
    /// Longest possible run of consecutive refusals.
    pub fn max_stall_run(&self) -> u64 {
        match *self {
            StallSchedule::None => 0,
            StallSchedule::EveryNth(n) if n >= 2 => 1,
            StallSchedule::EveryNth(_) => u64::MAX,
            StallSchedule::Random { percent: 0, .. } => 0,
            StallSchedule::Random { max_run, .. } => max_run as u64,
        }
    }
}

#[derive(Debug, Clone)]
struct Backpressure {
    schedule: StallSchedule,
    rng: ChaCha8Rng,
    run: u32,
}

impl Backpressure {
    fn new(schedule: StallSchedule) -> Self {
        let seed = match schedule {
            StallSchedule::Random { seed, .. } => seed,
            _ => 0,
        };
        Backpressure { schedule, rng: ChaCha8Rng::seed_from_u64(seed), run: 0 }
    }

    fn stalled(&mut self, cycle: u64) -> bool {
        let stall = match self.schedule {
            StallSchedule::None => false,
            StallSchedule::EveryNth(n) => n > 0 && cycle.is_multiple_of(n),
            StallSchedule::Random { percent, max_run, .. } => {
                let roll = self.rng.gen_range(0..100u8) < percent;
                roll && self.run < max_run
            }
        };
        self.run = if stall { self.run + 1 } else { 0 };
        stall
    }
}

#[derive(Debug, Clone)]
struct Transfer {
    ticket: Ticket,
    bursts: VecDeque<Burst>,
}

/// Result of one DMA cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DmaProgress {
    Idle,
    /// Backpressure refused this cycle's burst.
    Stalled,
    Moved { ticket: Ticket, bytes: u32, completed: bool },
    Faulted { ticket: Ticket, error: BusError },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DmaStats {
    pub bursts: u64,
    pub bytes: u64,
    pub stalls: u64,
}

#[derive(Debug, Clone)]
pub struct DmaEngine {
    burst_size: u32,
    queue: VecDeque<Transfer>,
    statuses: BTreeMap<Ticket, TransferStatus>,
    next_ticket: u32,
    backpressure: Backpressure,
    selected: Option<usize>,
    cursor: usize,
    stats: DmaStats,
}

impl DmaEngine {
    pub fn new(burst_size: u32) -> Self {
        assert!(burst_size > 0, "burst size must be positive");
        DmaEngine {
            burst_size,
            queue: VecDeque::new(),
            statuses: BTreeMap::new(),
            next_ticket: 0,
            backpressure: Backpressure::new(StallSchedule::None),
            selected: None,
            cursor: 0,
            stats: DmaStats::default(),
        }
    }

    pub fn set_stall_schedule(&mut self, schedule: StallSchedule) {
        self.backpressure = Backpressure::new(schedule);
    }

    pub fn burst_size(&self) -> u32 {
        self.burst_size
    }

    pub fn in_flight(&self) -> usize {
        self.queue.len()
    }

    pub fn is_idle(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn stats(&self) -> DmaStats {
        self.stats
    }

    pub fn status(&self, ticket: Ticket) -> Option<TransferStatus> {
        self.statuses.get(&ticket).copied()
    }

    /// Walks the chain starting at `head`, rejecting loops and invalid ranges,
    /// and returns the descriptors in chain order.
    pub fn validate_chain(
        &self,
        map: &MemoryMap,
        table: &[DmaDescriptor],
        head: usize,
    ) -> Result<Vec<DmaDescriptor>, DmaError> {
        let mut visited = vec![false; table.len()];
        let mut chain = Vec::new();
        let mut cur = Some(head);
        while let Some(i) = cur {
            let d = *table.get(i).ok_or(DmaError::BadLink(i))?;
            if visited[i] {
                return Err(DmaError::CyclicChain(i));
            }
            visited[i] = true;
            if d.length == 0 {
                return Err(DmaError::ZeroLength(i));
            }
            for b in segment(&d, self.burst_size) {
                for addr in [b.src, b.dst] {
                    let r = map.decode_range(addr, b.len).map_err(|error| DmaError::InvalidRange { index: i, error })?;
                    if !r.kind.is_memory() {
                        return Err(DmaError::InvalidRange { index: i, error: BusError::BusFault(addr) });
                    }
                }
            }
            chain.push(d);
            cur = d.next;
        }
        Ok(chain)
    }

    /// Enqueues the chain starting at `table[head]`.
    pub fn submit(&mut self, map: &MemoryMap, table: &[DmaDescriptor], head: usize) -> Result<Ticket, DmaError> {
        if self.queue.len() >= QUEUE_CAPACITY {
            return Err(DmaError::QueueFull);
        }
        let chain = self.validate_chain(map, table, head)?;
        let ticket = Ticket(self.next_ticket);
        self.next_ticket += 1;
        let bursts = chain.iter().flat_map(|d| segment(d, self.burst_size)).collect();
        self.queue.push_back(Transfer { ticket, bursts });
        self.statuses.insert(ticket, TransferStatus::InFlight);
        Ok(ticket)
    }

    /// Picks this cycle's burst. `None` when idle or refused by backpressure;
    /// the returned transaction is what the DMA presents to the arbiter.
    pub fn request(&mut self, cycle: u64) -> Option<BusTransaction> {
        self.selected = None;
        if self.queue.is_empty() {
            return None;
        }
        if self.backpressure.stalled(cycle) {
            self.stats.stalls += 1;
            return None;
        }
        let idx = self.cursor % self.queue.len();
        let b = self.queue[idx].bursts[0];
        self.selected = Some(idx);
        Some(BusTransaction { addr: b.dst, kind: TransactionKind::Burst { src: b.src, len: b.len }, data: 0, master: Master::Dma })
    }

    /// Executes the burst chosen by the last [`DmaEngine::request`].
    pub fn grant(&mut self, bus: &mut Bus) -> DmaProgress {
        let Some(idx) = self.selected.take() else {
            return DmaProgress::Idle;
        };
        let b = self.queue[idx].bursts[0];
        let ticket = self.queue[idx].ticket;
        if let Err(error) = bus.burst_copy(b.src, b.dst, b.len) {
            self.queue.remove(idx);
            self.statuses.insert(ticket, TransferStatus::Failed(error));
            return DmaProgress::Faulted { ticket, error };
        }
        self.stats.bursts += 1;
        self.stats.bytes += b.len as u64;
        let t = &mut self.queue[idx];
        t.bursts.pop_front();
        let completed = t.bursts.is_empty();
        if completed {
            self.queue.remove(idx);
            self.statuses.insert(ticket, TransferStatus::Complete);
            // the transfer after the removed one now sits at idx
            self.cursor = idx;
        } else {
            self.cursor = idx + 1;
        }
        DmaProgress::Moved { ticket, bytes: b.len, completed }
    }

    /// One cycle with the DMA as sole bus master.
    pub fn step(&mut self, bus: &mut Bus, cycle: u64) -> DmaProgress {
        let stalled_before = self.stats.stalls;
        match self.request(cycle) {
            Some(_) => self.grant(bus),
            None if self.stats.stalls > stalled_before => DmaProgress::Stalled,
            None => DmaProgress::Idle,
        }
    }

    /// Steps until the queue drains; returns cycles used. Panics after `limit` cycles.
    pub fn run_to_completion(&mut self, bus: &mut Bus, start_cycle: u64, limit: u64) -> u64 {
        let mut cycle = start_cycle;
        while !self.is_idle() {
            assert!(cycle - start_cycle < limit, "DMA did not drain within {limit} cycles");
            self.step(bus, cycle);
            cycle += 1;
        }
        cycle - start_cycle
    }
}
