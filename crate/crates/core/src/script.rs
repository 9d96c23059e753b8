//! Register-transaction scripts.
//!
//! One command per line, `#` starts a comment. Addresses, data words, masks
//! and `rs1` values are hexadecimal with an optional `0x` prefix; counts,
//! lengths, timeouts and descriptor indices are decimal unless prefixed
//! with `0x`.
//!
//! ```text
//! write <addr> <word>
//! read <addr> [expect <word>]
//! poll <addr> <mask> <value> <timeout-cycles>
//! step <cycles>
//! load-image <path> <base>
//! dump-image <path> <base> <len>
//! pcpi-issue <GEMM|CONV|POOL|RELU|LOAD|STORE|status> <rs1>
//! pcpi-poll <timeout-cycles>
//! dma-desc <index> <src> <dst> <len> [stride <bytes>] [next <index>]
//! dma-submit <head-index>
//! dma-wait <timeout-cycles>
//! ```
//!
//! Image paths are resolved relative to the script's directory.

use std::fmt;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::dma::DmaDescriptor;
use crate::engine::{ConfigError, EngineConfig};
use crate::memory::{BusError, RegionKind, NEURAL_REGS_BASE};
use crate::pcpi::{self, PcpiCommand, PcpiRequest};
use crate::regs::{self, ControlWord, Opcode, StatusWord};
use crate::sim::Simulator;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScriptCommand {
    Write { addr: u32, word: u32 },
    Read { addr: u32, expect: Option<u32> },
    Poll { addr: u32, mask: u32, value: u32, timeout: u64 },
    Step(u64),
    LoadImage { path: PathBuf, base: u32 },
    DumpImage { path: PathBuf, base: u32, len: u32 },
    PcpiIssue { cmd: PcpiCommand, rs1: u32 },
    PcpiPoll { timeout: u64 },
    DmaDesc { index: usize, desc: DmaDescriptor },
    DmaSubmit { head: usize },
    DmaWait { timeout: u64 },
}

/// A command with the 1-based line it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Line {
    pub number: usize,
    pub command: ScriptCommand,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("line {line}: {path}: {source}")]
    Io { line: usize, path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default)]
pub enum LogLevel {
    #[default]
    Info,
    Debug,
}

struct Cursor<'a> {
    line: usize,
    tokens: Vec<(usize, &'a str)>,
    pos: usize,
    end_col: usize,
}

impl<'a> Cursor<'a> {
    fn new(line: usize, text: &'a str) -> Self {
        let mut tokens = Vec::new();
        let mut start = None;
        for (i, ch) in text.char_indices() {
            match (ch.is_whitespace(), start) {
                (true, Some(s)) => {
                    tokens.push((s + 1, &text[s..i]));
                    start = None;
                }
                (false, None) => start = Some(i),
                _ => {}
            }
        }
        if let Some(s) = start {
            tokens.push((s + 1, &text[s..]));
        }
        Cursor { line, tokens, pos: 0, end_col: text.len() + 1 }
    }

    fn err_at(&self, column: usize, message: impl Into<String>) -> ParseError {
        ParseError { line: self.line, column, message: message.into() }
    }

    fn next(&mut self, what: &str) -> Result<(usize, &'a str), ParseError> {
        let t = self.tokens.get(self.pos).copied().ok_or_else(|| self.err_at(self.end_col, format!("expected {what}")))?;
        self.pos += 1;
        Ok(t)
    }

    fn peek(&self) -> Option<&'a str> {
        self.tokens.get(self.pos).map(|t| t.1)
    }

    fn hex(&mut self, what: &str) -> Result<u32, ParseError> {
        let (col, tok) = self.next(what)?;
        let digits = tok.strip_prefix("0x").or_else(|| tok.strip_prefix("0X")).unwrap_or(tok);
        u32::from_str_radix(digits, 16).map_err(|_| self.err_at(col, format!("invalid hexadecimal {what} `{tok}`")))
    }

    fn count(&mut self, what: &str) -> Result<u64, ParseError> {
        let (col, tok) = self.next(what)?;
        let parsed = match tok.strip_prefix("0x").or_else(|| tok.strip_prefix("0X")) {
            Some(h) => u64::from_str_radix(h, 16),
            None => tok.parse(),
        };
        parsed.map_err(|_| self.err_at(col, format!("invalid {what} `{tok}`")))
    }

    fn count32(&mut self, what: &str) -> Result<u32, ParseError> {
        let col = self.tokens.get(self.pos).map_or(self.end_col, |t| t.0);
        let v = self.count(what)?;
        u32::try_from(v).map_err(|_| self.err_at(col, format!("{what} {v} does not fit in 32 bits")))
    }

    fn finish(&self) -> Result<(), ParseError> {
        match self.tokens.get(self.pos) {
            Some(&(col, tok)) => Err(self.err_at(col, format!("unexpected `{tok}`"))),
            None => Ok(()),
        }
    }
}

fn parse_line(number: usize, text: &str) -> Result<Option<ScriptCommand>, ParseError> {
    let text = text.split('#').next().unwrap_or("");
    let mut c = Cursor::new(number, text);
    let Some(&(col, verb)) = c.tokens.first() else {
        return Ok(None);
    };
    c.pos = 1;
    let cmd = match verb {
        "write" => ScriptCommand::Write { addr: c.hex("address")?, word: c.hex("word")? },
        "read" => {
            let addr = c.hex("address")?;
            let expect = match c.peek() {
                Some("expect") => {
                    c.pos += 1;
                    Some(c.hex("expected word")?)
                }
                _ => None,
            };
            ScriptCommand::Read { addr, expect }
        }
        "poll" => ScriptCommand::Poll {
            addr: c.hex("address")?,
            mask: c.hex("mask")?,
            value: c.hex("value")?,
            timeout: c.count("timeout")?,
        },
        "step" => ScriptCommand::Step(c.count("cycle count")?),
        "load-image" => ScriptCommand::LoadImage { path: c.next("path")?.1.into(), base: c.hex("base address")? },
        "dump-image" => ScriptCommand::DumpImage {
            path: c.next("path")?.1.into(),
            base: c.hex("base address")?,
            len: c.count32("length")?,
        },
        "pcpi-issue" => {
            let (ocol, name) = c.next("operation")?;
            let cmd = if name.eq_ignore_ascii_case("status") {
                PcpiCommand::QueryStatus
            } else {
                let op = Opcode::from_name(&name.to_ascii_uppercase())
                    .ok_or_else(|| c.err_at(ocol, format!("unknown operation `{name}`")))?;
                PcpiCommand::Start(op)
            };
            ScriptCommand::PcpiIssue { cmd, rs1: c.hex("rs1")? }
        }
        "pcpi-poll" => ScriptCommand::PcpiPoll { timeout: c.count("timeout")? },
        "dma-desc" => {
            let index = c.count("descriptor index")? as usize;
            let mut desc = DmaDescriptor::new(c.hex("source address")?, c.hex("destination address")?, c.count32("length")?);
            while let Some(kw) = c.peek() {
                match kw {
                    "stride" => {
                        c.pos += 1;
                        desc = desc.with_stride(c.count32("stride")?);
                    }
                    "next" => {
                        c.pos += 1;
                        desc = desc.linked(c.count("descriptor index")? as usize);
                    }
                    _ => break,
                }
            }
            ScriptCommand::DmaDesc { index, desc }
        }
        "dma-submit" => ScriptCommand::DmaSubmit { head: c.count("descriptor index")? as usize },
        "dma-wait" => ScriptCommand::DmaWait { timeout: c.count("timeout")? },
        other => return Err(c.err_at(col, format!("unknown command `{other}`"))),
    };
    c.finish()?;
    Ok(Some(cmd))
}

pub fn parse_script(text: &str) -> Result<Vec<Line>, ParseError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if let Some(command) = parse_line(i + 1, raw)? {
            out.push(Line { number: i + 1, command });
        }
    }
    Ok(out)
}

/// Log and failure tallies from one script run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScriptOutcome {
    pub log: Vec<String>,
    pub expect_mismatches: usize,
    pub poll_timeouts: usize,
    pub bus_faults: usize,
    pub final_cycle: u64,
}

impl ScriptOutcome {
    /// Bus faults are logged but do not fail the run.
    pub fn success(&self) -> bool {
        self.expect_mismatches == 0 && self.poll_timeouts == 0
    }

    pub fn log_text(&self) -> String {
        let mut s = self.log.join("\n");
        s.push('\n');
        s
    }
}

/// How a bus address is named in log lines: `Reading <target> @ ...` and `<Value> = ...`.
fn describe(sim: &Simulator, addr: u32) -> (String, String) {
    let region = sim.bus.map().decode(addr).ok();
    match region.map(|r| (r.kind, r.offset(addr))) {
        Some((RegionKind::NeuralRegs, off)) => match regs::register_name(off) {
            Some(name) => {
                let lower = name.to_ascii_lowercase();
                let mut title = lower.clone();
                title[..1].make_ascii_uppercase();
                (format!("{lower} register"), title)
            }
            None => (format!("reserved register {off:#04x}"), "Reserved".into()),
        },
        Some((RegionKind::PerfCounters, _)) => ("perf counter".into(), "Counter".into()),
        Some((RegionKind::MainRam, _)) => ("memory".into(), "Memory".into()),
        Some((RegionKind::Scratchpad, _)) => ("scratchpad".into(), "Scratchpad".into()),
        Some((RegionKind::Uart, _)) => ("uart".into(), "Uart".into()),
        None => ("unmapped address".into(), "Value".into()),
    }
}

fn decode_value(addr: u32, word: u32) -> String {
    match addr.wrapping_sub(NEURAL_REGS_BASE) {
        regs::STATUS => StatusWord(word).to_string(),
        regs::CONTROL => ControlWord(word).to_string(),
        _ => word.to_string(),
    }
}

struct Runner<'a> {
    sim: Simulator,
    level: LogLevel,
    base_dir: &'a Path,
    out: ScriptOutcome,
    table: Vec<Option<DmaDescriptor>>,
}

impl Runner<'_> {
    fn info(&mut self, msg: String) {
        self.out.log.push(format!("[INFO] {msg}"));
    }

    fn error(&mut self, msg: String) {
        self.out.log.push(format!("[ERROR] {msg}"));
    }

    fn debug(&mut self, msg: impl FnOnce() -> String) {
        if self.level >= LogLevel::Debug {
            self.out.log.push(format!("[DEBUG] {}", msg()));
        }
    }

    fn flush_events(&mut self) {
        for e in self.sim.take_events() {
            self.out.log.push(format!("[DEBUG] {e}"));
        }
    }

    fn fault(&mut self, e: BusError) {
        self.out.bus_faults += 1;
        self.error(e.to_string());
    }

    fn value_line(&self, addr: u32, word: u32) -> String {
        let (_, name) = describe(&self.sim, addr);
        format!("{name} = 0x{word:08x} ({})", decode_value(addr, word))
    }

    fn exec(&mut self, line: usize, cmd: &ScriptCommand) -> Result<(), ScriptError> {
        match cmd {
            ScriptCommand::Write { addr, word } => {
                let (target, _) = describe(&self.sim, *addr);
                self.info(format!("Writing {target} @ 0x{addr:08x}"));
                match self.sim.cpu_write(*addr, *word) {
                    Ok(()) => self.info(self.value_line(*addr, *word)),
                    Err(e) => self.fault(e),
                }
            }
            ScriptCommand::Read { addr, expect } => {
                let (target, _) = describe(&self.sim, *addr);
                self.info(format!("Reading {target} @ 0x{addr:08x}"));
                match self.sim.cpu_read(*addr) {
                    Ok(word) => {
                        self.info(self.value_line(*addr, word));
                        if let Some(want) = expect {
                            if word != *want {
                                self.out.expect_mismatches += 1;
                                self.error(format!("Expected 0x{want:08x} @ 0x{addr:08x}, read 0x{word:08x}"));
                            }
                        }
                    }
                    Err(e) => {
                        self.fault(e);
                        if let Some(want) = expect {
                            self.out.expect_mismatches += 1;
                            self.error(format!("Expected 0x{want:08x} @ 0x{addr:08x}, read faulted"));
                        }
                    }
                }
            }
            ScriptCommand::Poll { addr, mask, value, timeout } => self.poll(*addr, *mask, *value, *timeout),
            ScriptCommand::Step(n) => {
                self.debug(|| format!("Stepping {n} cycles"));
                self.sim.run(*n);
            }
            ScriptCommand::LoadImage { path, base } => {
                let full = self.base_dir.join(path);
                let bytes = std::fs::read(&full).map_err(|source| ScriptError::Io { line, path: full.clone(), source })?;
                self.info(format!("Loading image {} ({} bytes) @ 0x{base:08x}", path.display(), bytes.len()));
                if let Err(e) = self.sim.load_image(*base, &bytes) {
                    self.fault(e);
                }
            }
            ScriptCommand::DumpImage { path, base, len } => {
                self.info(format!("Dumping {len} bytes @ 0x{base:08x} to {}", path.display()));
                match self.sim.dump_image(*base, *len) {
                    Ok(bytes) => {
                        let full = self.base_dir.join(path);
                        std::fs::write(&full, bytes).map_err(|source| ScriptError::Io { line, path: full.clone(), source })?;
                    }
                    Err(e) => self.fault(e),
                }
            }
            ScriptCommand::PcpiIssue { cmd, rs1 } => {
                let insn = pcpi::encode(*cmd);
                let what = match cmd {
                    PcpiCommand::Start(op) => op.name(),
                    PcpiCommand::QueryStatus => "status query",
                };
                self.info(format!("Issuing PCPI {what} (insn 0x{insn:08x}, rs1 0x{rs1:08x})"));
                match self.sim.pcpi_issue(PcpiRequest { insn, rs1: *rs1, rs2: 0 }) {
                    Ok(r) if r.ready => self.info(format!("PCPI rd = 0x{:08x} ({})", r.rd, StatusWord(r.rd))),
                    Ok(_) => {}
                    Err(e) => self.error(format!("PCPI {e}")),
                }
            }
            ScriptCommand::PcpiPoll { timeout } => {
                self.info("Waiting for PCPI ready...".into());
                let start = self.sim.cycle();
                loop {
                    let r = self.sim.pcpi_poll();
                    if r.ready {
                        let cycles = self.sim.bus.regs.cycle_count();
                        self.info(format!("PCPI rd = 0x{:08x} ({}) after {cycles} cycles", r.rd, StatusWord(r.rd)));
                        break;
                    }
                    if self.sim.cycle() - start >= *timeout {
                        self.out.poll_timeouts += 1;
                        self.error(format!("PCPI ready timeout after {timeout} cycles"));
                        break;
                    }
                }
            }
            ScriptCommand::DmaDesc { index, desc } => {
                if self.table.len() <= *index {
                    self.table.resize(index + 1, None);
                }
                self.table[*index] = Some(*desc);
                self.debug(|| format!("Descriptor {index}: {desc:?}"));
            }
            ScriptCommand::DmaSubmit { head } => {
                let table: Option<Vec<DmaDescriptor>> = self.table.iter().copied().collect();
                let Some(table) = table else {
                    self.error("DMA descriptor table has gaps".into());
                    return Ok(());
                };
                match self.sim.dma.submit(self.sim.bus.map(), &table, *head) {
                    Ok(t) => self.info(format!("Submitted DMA chain at descriptor {head} (ticket {})", t.0)),
                    Err(e) => self.error(format!("DMA submit: {e}")),
                }
            }
            ScriptCommand::DmaWait { timeout } => {
                self.info("Waiting for DMA...".into());
                let start = self.sim.cycle();
                while !self.sim.dma.is_idle() {
                    if self.sim.cycle() - start >= *timeout {
                        self.out.poll_timeouts += 1;
                        self.error(format!("DMA timeout after {timeout} cycles"));
                        return Ok(());
                    }
                    self.sim.step();
                }
                let stats = self.sim.dma.stats();
                self.info(format!("DMA idle after {} cycles ({} bursts)", self.sim.cycle() - start, stats.bursts));
            }
        }
        Ok(())
    }

    fn poll(&mut self, addr: u32, mask: u32, value: u32, timeout: u64) {
        let is_status = addr == NEURAL_REGS_BASE + regs::STATUS;
        if is_status {
            self.info("Polling for completion...".into());
        } else {
            let (target, _) = describe(&self.sim, addr);
            self.info(format!("Polling {target} @ 0x{addr:08x}..."));
        }
        let start = self.sim.cycle();
        loop {
            let last = match self.sim.cpu_read(addr) {
                Ok(w) => w,
                Err(e) => {
                    self.fault(e);
                    self.out.poll_timeouts += 1;
                    return;
                }
            };
            if last & mask == value {
                let line = self.value_line(addr, last);
                if is_status {
                    let cycles = self.sim.bus.regs.cycle_count();
                    self.info(format!("{line} after {cycles} cycles"));
                } else {
                    self.info(line);
                }
                return;
            }
            if self.sim.cycle() - start >= timeout {
                self.out.poll_timeouts += 1;
                let line = self.value_line(addr, last);
                self.error(format!("Poll timeout @ 0x{addr:08x} after {timeout} cycles: {line}"));
                return;
            }
        }
    }
}

/// Runs `text` against a fresh simulator. Only I/O and configuration problems
/// are returned as errors; transaction failures are tallied in the outcome.
pub fn run_script(text: &str, base_dir: &Path, cfg: EngineConfig, level: LogLevel) -> Result<ScriptOutcome, ScriptError> {
    let lines = parse_script(text)?;
    let mut sim = Simulator::new(cfg)?;
    sim.set_trace(level >= LogLevel::Debug);
    let mut r = Runner { sim, level, base_dir, out: ScriptOutcome::default(), table: Vec::new() };
    for l in &lines {
        r.exec(l.number, &l.command)?;
        r.flush_events();
    }
    r.out.final_cycle = r.sim.cycle();
    Ok(r.out)
}

pub fn run_script_file(path: &Path, cfg: EngineConfig, level: LogLevel) -> Result<ScriptOutcome, ScriptError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScriptError::Io { line: 0, path: path.to_path_buf(), source })?;
    let dir = path.parent().unwrap_or(Path::new("."));
    run_script(&text, dir, cfg, level)
}

impl fmt::Display for LogLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LogLevel::Info => "info",
            LogLevel::Debug => "debug",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(text: &str) -> ScriptOutcome {
        run_script(text, Path::new("."), EngineConfig::default(), LogLevel::Info).unwrap()
    }

    #[test]
    fn parses_all_forms() {
        let s = parse_script(
            "# header\nwrite 0x10000004 11\nread 10000000 expect 0x1\npoll 0x10000000 2 2 100\nstep 5 # trailing\n\
             pcpi-issue gemm 0x100\npcpi-poll 0x10\ndma-desc 0 0 10001000 64 stride 128 next 1\ndma-submit 0\n",
        )
        .unwrap();
        assert_eq!(s.len(), 8);
        assert_eq!(s[0].number, 2);
        assert_eq!(s[0].command, ScriptCommand::Write { addr: 0x1000_0004, word: 0x11 });
        assert_eq!(s[1].command, ScriptCommand::Read { addr: 0x1000_0000, expect: Some(1) });
        assert_eq!(s[3].command, ScriptCommand::Step(5));
        assert_eq!(s[4].command, ScriptCommand::PcpiIssue { cmd: PcpiCommand::Start(Opcode::Gemm), rs1: 0x100 });
        assert_eq!(s[5].command, ScriptCommand::PcpiPoll { timeout: 16 });
        assert_eq!(
            s[6].command,
            ScriptCommand::DmaDesc { index: 0, desc: DmaDescriptor::new(0, 0x1000_1000, 64).with_stride(128).linked(1) }
        );
    }

    #[test]
    fn parse_errors_carry_position() {
        let e = parse_script("step 1\n  frob 3\n").unwrap_err();
        assert_eq!((e.line, e.column), (2, 3));
        let e = parse_script("write 0x10 zz").unwrap_err();
        assert_eq!((e.line, e.column), (1, 12));
        let e = parse_script("read 0x10 expect").unwrap_err();
        assert_eq!((e.line, e.column), (1, 17));
        let e = parse_script("step 1 2").unwrap_err();
        assert_eq!(e.column, 8);
        assert!(parse_script("write 0x100000000 1").is_err());
    }

    #[test]
    fn reset_read_passes_expect() {
        let out = run("read 0x10000000 expect 0x1\n");
        assert!(out.success());
        assert_eq!(out.log, ["[INFO] Reading status register @ 0x10000000", "[INFO] Status = 0x00000001 (IDLE)"]);
    }

    #[test]
    fn poll_without_start_times_out() {
        let out = run("poll 0x10000000 0x2 0x2 10\n");
        assert_eq!(out.poll_timeouts, 1);
        assert!(!out.success());
        assert!(out.log.last().unwrap().starts_with("[ERROR] Poll timeout @ 0x10000000"));
    }

    #[test]
    fn mismatch_sets_failure() {
        let out = run("read 0x10000000 expect 0x2\n");
        assert_eq!(out.expect_mismatches, 1);
        assert!(!out.success());
    }

    #[test]
    fn bus_fault_is_logged_but_not_fatal() {
        let out = run("read 0x40000000\nwrite 0x00000002 1\n");
        assert_eq!(out.bus_faults, 2);
        assert!(out.success());
        assert!(out.log.iter().filter(|l| l.starts_with("[ERROR]")).count() == 2);
    }
}
