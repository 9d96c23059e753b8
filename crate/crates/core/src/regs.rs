//! Memory-mapped control/status registers of the neural engine.
//!
//! The block sits at `0x1000_0000` and implements a poll-driven
//! IDLE -> BUSY -> DONE handshake: software programs the parameter registers,
//! writes an opcode with START into CONTROL, then polls STATUS until DONE.

use std::fmt;

use thiserror::Error;

pub const STATUS: u32 = 0x00;
pub const CONTROL: u32 = 0x04;
pub const PARAM_M: u32 = 0x08;
pub const PARAM_N: u32 = 0x0C;
pub const PARAM_K: u32 = 0x10;
pub const PARAM_SRC_A: u32 = 0x14;
pub const PARAM_SRC_B: u32 = 0x18;
pub const PARAM_DST: u32 = 0x1C;
pub const PARAM_SCALE: u32 = 0x20;
pub const PARAM_OP0: u32 = 0x24;
pub const PARAM_OP1: u32 = 0x28;
pub const PARAM_OP2: u32 = 0x2C;
pub const PARAM_OP3: u32 = 0x30;
pub const PARAM_OP4: u32 = 0x34;
pub const PARAM_OP5: u32 = 0x38;
pub const PARAM_OP6: u32 = 0x3C;
pub const CYCLE_COUNT: u32 = 0x40;
pub const WINDOW_SIZE: u32 = 0x100;

pub const FIRST_PARAM: u32 = PARAM_M;
pub const LAST_PARAM: u32 = PARAM_OP6;
/// Number of 32-bit parameter registers (0x08..=0x3C).
pub const PARAM_WORDS: usize = ((LAST_PARAM - FIRST_PARAM) / 4 + 1) as usize;

pub mod status {
    pub const IDLE: u32 = 0x0000_0001;
    pub const DONE: u32 = 0x0000_0002;
    pub const BUSY: u32 = 0x0000_0004;
    pub const ERROR: u32 = 0x8000_0000;
    pub const STATE_MASK: u32 = IDLE | DONE | BUSY;
}

pub mod control {
    pub const OPCODE_MASK: u32 = 0x0000_000F;
    pub const START: u32 = 0x0000_0010;
    pub const VALID_MASK: u32 = OPCODE_MASK | START;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Opcode {
    Gemm = 0x1,
    Conv = 0x2,
    Pool = 0x3,
    Relu = 0x4,
    Load = 0x5,
    Store = 0x6,
}

impl Opcode {
    pub const ALL: [Opcode; 6] = [Opcode::Gemm, Opcode::Conv, Opcode::Pool, Opcode::Relu, Opcode::Load, Opcode::Store];

    pub fn from_bits(v: u32) -> Option<Opcode> {
        Opcode::ALL.into_iter().find(|op| *op as u32 == v)
    }

    pub fn name(self) -> &'static str {
        match self {
            Opcode::Gemm => "GEMM",
            Opcode::Conv => "CONV",
            Opcode::Pool => "POOL",
            Opcode::Relu => "RELU",
            Opcode::Load => "LOAD",
            Opcode::Store => "STORE",
        }
    }

    pub fn from_name(s: &str) -> Option<Opcode> {
        Opcode::ALL.into_iter().find(|op| op.name().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EngineState {
    Idle,
    Busy,
    Done,
}

/// Value of the STATUS register.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StatusWord(pub u32);

impl StatusWord {
    pub fn state(self) -> Option<EngineState> {
        match self.0 & status::STATE_MASK {
            status::IDLE => Some(EngineState::Idle),
            status::BUSY => Some(EngineState::Busy),
            status::DONE => Some(EngineState::Done),
            _ => None,
        }
    }

    pub fn is_one_hot(self) -> bool {
        (self.0 & status::STATE_MASK).count_ones() == 1
    }

    pub fn has_error(self) -> bool {
        self.0 & status::ERROR != 0
    }
}

impl fmt::Display for StatusWord {
    /// Human decoding used in transaction logs, e.g. `IDLE` or `DONE | ERROR`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        for (bit, name) in [(status::IDLE, "IDLE"), (status::DONE, "DONE"), (status::BUSY, "BUSY"), (status::ERROR, "ERROR")] {
            if self.0 & bit != 0 {
                parts.push(name);
            }
        }
        if parts.is_empty() {
            f.write_str("NONE")
        } else {
            f.write_str(&parts.join(" | "))
        }
    }
}

/// Value written to the CONTROL register.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ControlWord(pub u32);

impl ControlWord {
    pub fn new(op: Opcode, start: bool) -> Self {
        ControlWord(op as u32 | if start { control::START } else { 0 })
    }

    pub fn opcode_bits(self) -> u32 {
        self.0 & control::OPCODE_MASK
    }

    pub fn opcode(self) -> Option<Opcode> {
        Opcode::from_bits(self.opcode_bits())
    }

    pub fn start(self) -> bool {
        self.0 & control::START != 0
    }
}

impl fmt::Display for ControlWord {
    /// e.g. `GEMM | START`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = match self.opcode() {
            Some(op) => op.name().to_string(),
            None if self.opcode_bits() == 0 => "NOP".to_string(),
            None => format!("OP{:#x}", self.opcode_bits()),
        };
        if self.start() {
            write!(f, "{op} | START")
        } else {
            f.write_str(&op)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum RegError {
    #[error("register offset {0:#x} is outside the register window")]
    OutOfWindow(u32),
    #[error("register offset {0:#x} is not word aligned")]
    Misaligned(u32),
    #[error("START written while the engine is busy")]
    StartWhileBusy,
    #[error("parameter register {0:#x} written while the engine is busy")]
    ParamWhileBusy(u32),
    #[error("START written with undefined opcode {0:#x}")]
    InvalidOpcode(u32),
}

/// Static description of one register, used for the generated reference.
pub struct RegisterInfo {
    pub offset: u32,
    pub name: &'static str,
    pub access: &'static str,
    pub reset: u32,
    pub description: &'static str,
}

pub const REGISTER_MAP: &[RegisterInfo] = &[
    RegisterInfo { offset: STATUS, name: "STATUS", access: "RO", reset: status::IDLE, description: "one-hot state IDLE=0x1 DONE=0x2 BUSY=0x4; bit 31 ERROR" },
    RegisterInfo { offset: CONTROL, name: "CONTROL", access: "RW", reset: 0, description: "bits[3:0] opcode, bit 4 START" },
    RegisterInfo { offset: PARAM_M, name: "M", access: "RW", reset: 0, description: "GEMM m | CONV/POOL in_h | RELU count | LOAD/STORE length" },
    RegisterInfo { offset: PARAM_N, name: "N", access: "RW", reset: 0, description: "GEMM n | CONV/POOL in_w" },
    RegisterInfo { offset: PARAM_K, name: "K", access: "RW", reset: 0, description: "GEMM k | CONV in_c | POOL channels" },
    RegisterInfo { offset: PARAM_SRC_A, name: "SRC_A", access: "RW", reset: 0, description: "GEMM A | CONV/POOL input | RELU src | LOAD src bus addr | STORE src scratchpad offset" },
    RegisterInfo { offset: PARAM_SRC_B, name: "SRC_B", access: "RW", reset: 0, description: "GEMM B | CONV weights" },
    RegisterInfo { offset: PARAM_DST, name: "DST", access: "RW", reset: 0, description: "output offset | LOAD dst scratchpad offset | STORE dst bus addr" },
    RegisterInfo { offset: PARAM_SCALE, name: "SCALE", access: "RW", reset: 0, description: "bits[5:0] right shift, bit 8 round-half-up, bit 9 wrap instead of saturate" },
    RegisterInfo { offset: PARAM_OP0, name: "OP0", access: "RW", reset: 0, description: "CONV out_c | POOL mode (0 max, 1 avg) | LOAD/STORE source stride" },
    RegisterInfo { offset: PARAM_OP1, name: "OP1", access: "RW", reset: 0, description: "CONV kernel_h | POOL window_h" },
    RegisterInfo { offset: PARAM_OP2, name: "OP2", access: "RW", reset: 0, description: "CONV kernel_w | POOL window_w" },
    RegisterInfo { offset: PARAM_OP3, name: "OP3", access: "RW", reset: 0, description: "CONV/POOL stride" },
    RegisterInfo { offset: PARAM_OP4, name: "OP4", access: "RW", reset: 0, description: "CONV padding" },
    RegisterInfo { offset: PARAM_OP5, name: "OP5", access: "RW", reset: 0, description: "reserved for op use" },
    RegisterInfo { offset: PARAM_OP6, name: "OP6", access: "RW", reset: 0, description: "reserved for op use" },
    RegisterInfo { offset: CYCLE_COUNT, name: "CYCLE_COUNT", access: "RO", reset: 0, description: "busy cycles of the last completed operation" },
];

pub fn register_name(offset: u32) -> Option<&'static str> {
    REGISTER_MAP.iter().find(|r| r.offset == offset).map(|r| r.name)
}

/// Plain-text register reference (offset, name, access, reset value, description).
pub fn register_reference() -> String {
    let mut out = String::from("# Neural engine register map (base 0x10000000)\n");
    out.push_str("offset  name         access  reset       description\n");
    for r in REGISTER_MAP {
        out.push_str(&format!(
            "0x{:02x}    {:<12} {:<7} 0x{:08x}  {}\n",
            r.offset, r.name, r.access, r.reset, r.description
        ));
    }
    out.push_str("0x44-0xfc reserved: read as 0, writes ignored\n");
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegisterFile {
    state: EngineState,
    error: bool,
    control: u32,
    params: [u32; PARAM_WORDS],
    cycle_count: u32,
    busy_cycles: u32,
    latched: Option<Opcode>,
    pending_start: Option<Opcode>,
}

impl Default for RegisterFile {
    fn default() -> Self {
        RegisterFile::new()
    }
}

impl RegisterFile {
    pub fn new() -> Self {
        RegisterFile {
            state: EngineState::Idle,
            error: false,
            control: 0,
            params: [0; PARAM_WORDS],
            cycle_count: 0,
            busy_cycles: 0,
            latched: None,
            pending_start: None,
        }
    }

    pub fn state(&self) -> EngineState {
        self.state
    }

    pub fn status(&self) -> StatusWord {
        let state = match self.state {
            EngineState::Idle => status::IDLE,
            EngineState::Busy => status::BUSY,
            EngineState::Done => status::DONE,
        };
        StatusWord(state | if self.error { status::ERROR } else { 0 })
    }

    pub fn latched_opcode(&self) -> Option<Opcode> {
        self.latched
    }

    pub fn cycle_count(&self) -> u32 {
        self.cycle_count
    }

    pub fn params(&self) -> &[u32; PARAM_WORDS] {
        &self.params
    }

    /// Parameter register value by byte offset (0x08..=0x3C).
    pub fn param(&self, offset: u32) -> u32 {
        debug_assert!((FIRST_PARAM..=LAST_PARAM).contains(&offset));
        self.params[((offset - FIRST_PARAM) / 4) as usize]
    }

    fn check_offset(offset: u32) -> Result<(), RegError> {
        if offset >= WINDOW_SIZE {
            Err(RegError::OutOfWindow(offset))
        } else if !offset.is_multiple_of(4) {
            Err(RegError::Misaligned(offset))
        } else {
            Ok(())
        }
    }

    pub fn reg_read(&self, offset: u32) -> Result<u32, RegError> {
        Self::check_offset(offset)?;
        Ok(match offset {
            STATUS => self.status().0,
            CONTROL => self.control,
            FIRST_PARAM..=LAST_PARAM => self.param(offset),
            CYCLE_COUNT => self.cycle_count,
            _ => 0,
        })
    }

    pub fn reg_write(&mut self, offset: u32, word: u32) -> Result<(), RegError> {
        Self::check_offset(offset)?;
        match offset {
            CONTROL => self.write_control(ControlWord(word & control::VALID_MASK)),
            FIRST_PARAM..=LAST_PARAM => {
                if self.state == EngineState::Busy {
                    self.error = true;
                    return Err(RegError::ParamWhileBusy(offset));
                }
                self.params[((offset - FIRST_PARAM) / 4) as usize] = word;
                Ok(())
            }
            // STATUS, CYCLE_COUNT and reserved offsets ignore writes
            _ => Ok(()),
        }
    }

    fn write_control(&mut self, cw: ControlWord) -> Result<(), RegError> {
        if !cw.start() {
            if self.state != EngineState::Busy {
                self.control = cw.0;
            }
            return Ok(());
        }
        if self.state == EngineState::Busy {
            self.error = true;
            return Err(RegError::StartWhileBusy);
        }
        let Some(op) = cw.opcode() else {
            self.error = true;
            return Err(RegError::InvalidOpcode(cw.opcode_bits()));
        };
        self.control = cw.0;
        self.error = false;
        self.state = EngineState::Busy;
        self.busy_cycles = 0;
        self.latched = Some(op);
        self.pending_start = Some(op);
        Ok(())
    }

    /// Writes the whole parameter block at once, with the same BUSY rule as
    /// individual register writes.
    pub fn write_params(&mut self, block: &[u32; PARAM_WORDS]) -> Result<(), RegError> {
        for (i, w) in block.iter().enumerate() {
            self.reg_write(FIRST_PARAM + 4 * i as u32, *w)?;
        }
        Ok(())
    }

    /// Opcode of a START accepted since the last call, if any.
    pub fn take_pending_start(&mut self) -> Option<Opcode> {
        self.pending_start.take()
    }

    /// Advances one clock. While BUSY the cycle is counted; on `engine_done`
    /// the engine moves to DONE and CYCLE_COUNT latches the busy-cycle total.
    pub fn step_state(&mut self, engine_done: bool) {
        if self.state != EngineState::Busy {
            return;
        }
        self.busy_cycles = self.busy_cycles.saturating_add(1);
        if engine_done {
            self.state = EngineState::Done;
            self.cycle_count = self.busy_cycles;
        }
    }

    /// Raises the STATUS error bit (engine-side fault on the current op).
    pub fn flag_error(&mut self) {
        self.error = true;
    }
}
