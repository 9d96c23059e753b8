//! Single-clock system stepper.
//!
//! Each call to [`Simulator::step_cycle`] advances one clock:
//!
//! 1. the DMA engine presents its next burst (unless backpressured);
//! 2. the arbiter grants one bus transaction, DMA before CPU; a CPU request
//!    that loses arbitration is counted as a stall and retried next cycle;
//! 3. the active engine operation ticks and STATUS may move BUSY -> DONE;
//! 4. a START accepted this cycle launches the next operation.
//!
//! Compute results land in the scratchpad when the op launches; STATUS then
//! stays BUSY for exactly `cycles_total` cycles. LOAD/STORE stay BUSY until
//! their DMA transfer drains.

use crate::dma::{DmaDescriptor, DmaEngine, DmaProgress, StallSchedule, Ticket, TransferStatus};
use crate::engine::{ConfigError, EngineConfig, EngineOp, OpResult};
use crate::memory::{arbitrate, Bus, BusError, BusTransaction, Master, TransactionKind, NEURAL_REGS_BASE, SCRATCHPAD_BASE};
use crate::pcpi::{PcpiBridge, PcpiError, PcpiRequest, PcpiResponse};
use crate::regs::{self, ControlWord, EngineState, Opcode};

/// Completed (or faulted) engine operation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpRecord {
    pub opcode: Opcode,
    pub start_cycle: u64,
    pub end_cycle: u64,
    /// CYCLE_COUNT latched at completion.
    pub busy_cycles: u32,
    /// Present for compute ops that executed.
    pub result: Option<OpResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
enum Active {
    Idle,
    Compute { remaining: u64, result: OpResult },
    Transfer { ticket: Ticket },
    Fault { error: String },
}

/// Outcome of a CPU read poll loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PollOutcome {
    pub matched: bool,
    pub last: u32,
    pub reads: u64,
}

#[derive(Debug, Clone)]
pub struct Simulator {
    cfg: EngineConfig,
    pub bus: Bus,
    pub dma: DmaEngine,
    pcpi: PcpiBridge,
    active: Active,
    current: Option<(Opcode, u64)>,
    cycle: u64,
    history: Vec<OpRecord>,
    trace: bool,
    events: Vec<String>,
}

impl Simulator {
    pub fn new(cfg: EngineConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        Ok(Simulator {
            cfg,
            bus: Bus::new(&cfg),
            dma: DmaEngine::new(cfg.dma_burst_size),
            pcpi: PcpiBridge::new(),
            active: Active::Idle,
            current: None,
            cycle: 0,
            history: Vec::new(),
            trace: false,
            events: Vec::new(),
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn history(&self) -> &[OpRecord] {
        &self.history
    }

    pub fn last_op(&self) -> Option<&OpRecord> {
        self.history.last()
    }

    pub fn set_stall_schedule(&mut self, schedule: StallSchedule) {
        self.dma.set_stall_schedule(schedule);
    }

    /// Enables collection of per-event debug lines (see [`Simulator::take_events`]).
    pub fn set_trace(&mut self, on: bool) {
        self.trace = on;
    }

    pub fn take_events(&mut self) -> Vec<String> {
        std::mem::take(&mut self.events)
    }

    fn event(&mut self, f: impl FnOnce() -> String) {
        if self.trace {
            let line = f();
            self.events.push(format!("cycle {}: {}", self.cycle, line));
        }
    }

    /// Advances one clock, optionally presenting a CPU bus transaction.
    /// Returns the CPU result when its transaction was granted this cycle.
    pub fn step_cycle(&mut self, cpu: Option<BusTransaction>) -> Option<Result<u32, BusError>> {
        let dma_req = self.dma.request(self.cycle);
        let pending: Vec<BusTransaction> = dma_req.into_iter().chain(cpu).collect();
        let grants = arbitrate(&pending).expect("one request per master");
        let mut cpu_result = None;
        match grants.first() {
            Some(t) if t.master == Master::Dma => {
                let progress = self.dma.grant(&mut self.bus);
                self.on_dma(progress);
                if grants.len() > 1 {
                    self.bus.perf.add_stall();
                }
            }
            Some(t) => cpu_result = Some(self.cpu_access(*t)),
            None => {}
        }
        self.tick_engine();
        self.launch_pending();
        self.bus.perf.add_cycle();
        self.cycle += 1;
        cpu_result
    }

    pub fn step(&mut self) {
        self.step_cycle(None);
    }

    pub fn run(&mut self, cycles: u64) {
        for _ in 0..cycles {
            self.step();
        }
    }

    fn cpu_access(&mut self, t: BusTransaction) -> Result<u32, BusError> {
        match t.kind {
            TransactionKind::Read32 => self.bus.read32_as(Master::Cpu, t.addr),
            TransactionKind::Write32 => self.bus.write32_as(Master::Cpu, t.addr, t.data).map(|_| t.data),
            TransactionKind::Burst { .. } => unreachable!("CPU does not issue bursts"),
        }
    }

    fn on_dma(&mut self, progress: DmaProgress) {
        match progress {
            DmaProgress::Moved { ticket, bytes, completed } => {
                self.bus.perf.add_dma_bytes(bytes as u64);
                self.event(|| format!("dma ticket {} moved {bytes} bytes{}", ticket.0, if completed { " (complete)" } else { "" }));
            }
            DmaProgress::Faulted { ticket, error } => {
                self.event(|| format!("dma ticket {} failed: {error}", ticket.0));
            }
            DmaProgress::Idle | DmaProgress::Stalled => {}
        }
    }

    fn tick_engine(&mut self) {
        if self.bus.regs.state() != EngineState::Busy || matches!(self.active, Active::Idle) {
            return;
        }
        self.bus.perf.add_busy_cycle();
        let (done, error) = match &mut self.active {
            Active::Compute { remaining, .. } => {
                *remaining -= 1;
                (*remaining == 0, None)
            }
            Active::Transfer { ticket } => match self.dma.status(*ticket) {
                Some(TransferStatus::InFlight) => (false, None),
                Some(TransferStatus::Failed(e)) => (true, Some(e.to_string())),
                _ => (true, None),
            },
            Active::Fault { error } => (true, Some(error.clone())),
            Active::Idle => unreachable!(),
        };
        if error.is_some() {
            self.bus.regs.flag_error();
        }
        self.bus.regs.step_state(done);
        if done {
            let result = match std::mem::replace(&mut self.active, Active::Idle) {
                Active::Compute { result, .. } => {
                    self.bus.perf.add_macs(result.macs);
                    Some(result)
                }
                _ => None,
            };
            let (opcode, start_cycle) = self.current.take().expect("active op has a start record");
            let record = OpRecord {
                opcode,
                start_cycle,
                end_cycle: self.cycle,
                busy_cycles: self.bus.regs.cycle_count(),
                result,
                error,
            };
            self.event(|| format!("{} done after {} cycles", record.opcode, record.busy_cycles));
            self.history.push(record);
        }
    }

    fn launch_pending(&mut self) {
        let Some(op) = self.bus.regs.take_pending_start() else {
            return;
        };
        self.current = Some((op, self.cycle));
        let params = *self.bus.regs.params();
        self.active = match op {
            Opcode::Load | Opcode::Store => {
                let r = |o: u32| params[((o - regs::FIRST_PARAM) / 4) as usize];
                let (src, dst) = if op == Opcode::Load {
                    (r(regs::PARAM_SRC_A), SCRATCHPAD_BASE.wrapping_add(r(regs::PARAM_DST)))
                } else {
                    (SCRATCHPAD_BASE.wrapping_add(r(regs::PARAM_SRC_A)), r(regs::PARAM_DST))
                };
                let desc = DmaDescriptor::new(src, dst, r(regs::PARAM_M)).with_stride(r(regs::PARAM_OP0));
                match self.dma.submit(self.bus.map(), &[desc], 0) {
                    Ok(ticket) => Active::Transfer { ticket },
                    Err(e) => Active::Fault { error: e.to_string() },
                }
            }
            _ => match EngineOp::from_params(op, &params).and_then(|eop| eop.execute(&self.cfg, &mut self.bus.scratchpad)) {
                Ok(result) => Active::Compute { remaining: result.cycles_total.max(1), result },
                Err(e) => Active::Fault { error: e.to_string() },
            },
        };
        self.event(|| format!("{op} started"));
    }

    /// CPU read; retries across cycles until the arbiter grants it.
    pub fn cpu_read(&mut self, addr: u32) -> Result<u32, BusError> {
        let t = BusTransaction::read(Master::Cpu, addr);
        loop {
            if let Some(r) = self.step_cycle(Some(t)) {
                return r;
            }
        }
    }

    /// CPU write; retries across cycles until the arbiter grants it.
    pub fn cpu_write(&mut self, addr: u32, word: u32) -> Result<(), BusError> {
        let t = BusTransaction::write(Master::Cpu, addr, word);
        loop {
            if let Some(r) = self.step_cycle(Some(t)) {
                return r.map(|_| ());
            }
        }
    }

    /// Reads `addr` until `(value & mask) == expected` or `max_reads` reads have been issued.
    pub fn poll(&mut self, addr: u32, mask: u32, expected: u32, max_reads: u64) -> Result<PollOutcome, BusError> {
        let mut last = 0;
        for reads in 1..=max_reads {
            last = self.cpu_read(addr)?;
            if last & mask == expected {
                return Ok(PollOutcome { matched: true, last, reads });
            }
        }
        Ok(PollOutcome { matched: false, last, reads: max_reads })
    }

    /// Presents a PCPI instruction; consumes one cycle.
    pub fn pcpi_issue(&mut self, req: PcpiRequest) -> Result<PcpiResponse, PcpiError> {
        let r = self.pcpi.issue(req, &mut self.bus);
        self.step();
        r
    }

    /// Samples the PCPI response; consumes one cycle.
    pub fn pcpi_poll(&mut self) -> PcpiResponse {
        let r = self.pcpi.poll(&self.bus);
        self.step();
        r
    }

    /// Programs `op` over MMIO, starts it and polls STATUS until it leaves BUSY.
    pub fn run_op_mmio(&mut self, op: &EngineOp, max_polls: u64) -> Result<Option<OpRecord>, BusError> {
        self.run_opcode_mmio(op.opcode(), &op.to_params(), max_polls)
    }

    pub fn run_opcode_mmio(
        &mut self,
        op: Opcode,
        params: &[u32; regs::PARAM_WORDS],
        max_polls: u64,
    ) -> Result<Option<OpRecord>, BusError> {
        let before = self.history.len();
        for (i, w) in params.iter().enumerate() {
            self.cpu_write(NEURAL_REGS_BASE + regs::FIRST_PARAM + 4 * i as u32, *w)?;
        }
        self.cpu_write(NEURAL_REGS_BASE + regs::CONTROL, ControlWord::new(op, true).0)?;
        let out = self.poll(NEURAL_REGS_BASE + regs::STATUS, regs::status::DONE, regs::status::DONE, max_polls)?;
        Ok(if out.matched && self.history.len() > before { self.history.last().cloned() } else { None })
    }

    pub fn load_image(&mut self, base: u32, bytes: &[u8]) -> Result<(), BusError> {
        self.bus.load_image(base, bytes)
    }

    pub fn dump_image(&self, base: u32, len: u32) -> Result<Vec<u8>, BusError> {
        self.bus.dump_image(base, len)
    }
}
