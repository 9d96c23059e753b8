//! PicoRV32 co-processor interface (PCPI) bridge.
//!
//! Custom instruction encoding (R-type layout):
//!
//! ```text
//!  31      25 24  20 19  15 14  12 11   7 6      0
//! [ engine op][ rs2 ][ rs1 ][funct3][ rd  ][0001011]
//! ```
//!
//! * opcode `0x0B` (custom-0)
//! * funct3 `0` starts an engine operation, `1` queries STATUS
//! * funct7 carries the 4-bit engine opcode for starts (zero for queries)
//! * the rs1 *value* is the scratchpad byte offset of a 14-word parameter
//!   block laid out exactly like registers 0x08..=0x3C
//!
//! A start is translated into the same parameter and CONTROL writes that a
//! CPU would perform over MMIO, so both paths drive identical engine state.

use thiserror::Error;

use crate::memory::{Bus, Scratchpad};
use crate::regs::{ControlWord, EngineState, Opcode, StatusWord, CONTROL, PARAM_WORDS};

pub const CUSTOM0: u32 = 0x0B;
pub const FUNCT3_START: u32 = 0;
pub const FUNCT3_QUERY: u32 = 1;
pub const PARAM_BLOCK_BYTES: u32 = PARAM_WORDS as u32 * 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PcpiRequest {
    pub insn: u32,
    pub rs1: u32,
    pub rs2: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PcpiResponse {
    pub ready: bool,
    pub wr: bool,
    pub rd: u32,
}

impl PcpiResponse {
    fn result(rd: u32) -> Self {
        PcpiResponse { ready: true, wr: true, rd }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcpiCommand {
    Start(Opcode),
    QueryStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum PcpiError {
    #[error("illegal instruction 0x{0:08x}")]
    IllegalInstruction(u32),
    #[error("engine busy; start rejected")]
    EngineBusy,
    #[error("parameter block at scratchpad offset 0x{0:x} does not fit")]
    ParamBlockOutOfRange(u32),
}

pub fn encode(cmd: PcpiCommand) -> u32 {
    match cmd {
        PcpiCommand::Start(op) => (op as u32) << 25 | FUNCT3_START << 12 | CUSTOM0,
        PcpiCommand::QueryStatus => FUNCT3_QUERY << 12 | CUSTOM0,
    }
}

pub fn decode(insn: u32) -> Result<PcpiCommand, PcpiError> {
    if insn & 0x7F != CUSTOM0 {
        return Err(PcpiError::IllegalInstruction(insn));
    }
    let funct3 = (insn >> 12) & 0x7;
    let funct7 = insn >> 25;
    match funct3 {
        FUNCT3_START => Opcode::from_bits(funct7).map(PcpiCommand::Start).ok_or(PcpiError::IllegalInstruction(insn)),
        FUNCT3_QUERY if funct7 == 0 => Ok(PcpiCommand::QueryStatus),
        _ => Err(PcpiError::IllegalInstruction(insn)),
    }
}

/// Writes a parameter block into the scratchpad at `offset`.
pub fn write_param_block(spm: &mut Scratchpad, offset: u32, block: &[u32; PARAM_WORDS]) {
    for (i, w) in block.iter().enumerate() {
        spm.write32(offset + 4 * i as u32, *w);
    }
}

pub fn read_param_block(spm: &Scratchpad, offset: u32) -> Result<[u32; PARAM_WORDS], PcpiError> {
    if !offset.is_multiple_of(4) || offset as u64 + PARAM_BLOCK_BYTES as u64 > spm.len() as u64 {
        return Err(PcpiError::ParamBlockOutOfRange(offset));
    }
    Ok(std::array::from_fn(|i| spm.read32(offset + 4 * i as u32)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pending {
    None,
    Start,
    Done(PcpiResponse),
}

/// Single-issue PCPI handshake state.
#[derive(Debug, Clone)]
pub struct PcpiBridge {
    pending: Pending,
}

impl Default for PcpiBridge {
    fn default() -> Self {
        PcpiBridge { pending: Pending::None }
    }
}

impl PcpiBridge {
    pub fn new() -> Self {
        Self::default()
    }

    /// Presents `req` on the interface. Queries complete immediately; starts
    /// program the engine and complete when it reaches DONE.
    pub fn issue(&mut self, req: PcpiRequest, bus: &mut Bus) -> Result<PcpiResponse, PcpiError> {
        let cmd = decode(req.insn)?;
        match cmd {
            PcpiCommand::QueryStatus => {
                let resp = PcpiResponse::result(bus.regs.status().0);
                self.pending = Pending::Done(resp);
                Ok(resp)
            }
            PcpiCommand::Start(op) => {
                if bus.regs.state() == EngineState::Busy {
                    bus.regs.flag_error();
                    return Err(PcpiError::EngineBusy);
                }
                let block = read_param_block(&bus.scratchpad, req.rs1)?;
                bus.regs.write_params(&block).expect("engine is not busy");
                bus.regs.reg_write(CONTROL, ControlWord::new(op, true).0).expect("valid start");
                self.pending = Pending::Start;
                Ok(PcpiResponse::default())
            }
        }
    }

    /// Samples `pcpi_ready`. Once asserted it stays asserted, with the same
    /// result, until the next [`PcpiBridge::issue`].
    pub fn poll(&mut self, bus: &Bus) -> PcpiResponse {
        match self.pending {
            Pending::None => PcpiResponse::default(),
            Pending::Done(resp) => resp,
            Pending::Start => {
                let status: StatusWord = bus.regs.status();
                if bus.regs.state() == EngineState::Busy {
                    PcpiResponse::default()
                } else {
                    let resp = PcpiResponse::result(status.0);
                    self.pending = Pending::Done(resp);
                    resp
                }
            }
        }
    }
}
