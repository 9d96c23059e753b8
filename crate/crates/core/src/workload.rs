//! Workload manifests.
//!
//! A manifest is one TOML document:
//!
//! ```toml
//! oracle_check = true              # default true
//! dma_stall = { every_nth = 3 }    # default "none"
//!
//! [config]                         # any EngineConfig field
//! mac_units = 16
//!
//! [[op]]
//! kind = "gemm"                    # gemm | conv | pool | relu
//! name = "layer0"                  # optional
//! m = 16
//! n = 16
//! k = 16
//! a = 0x0000                       # scratchpad byte offsets
//! b = 0x0200
//! c = 0x0400
//! scale = { shift = 0, rounding = "truncate", saturate = true }
//! a_data = { gen = "random", min = -128, max = 127 }
//! b_data = { gen = "identity" }
//! ```
//!
//! Conv ops take `in_h in_w in_c out_c kernel_h kernel_w stride padding
//! input weight output` with `input_data` and `weight_data`; pool ops take
//! `mode channels in_h in_w window_h window_w stride input output` with
//! `input_data`; relu ops take `count src dst` with `src_data`.
//!
//! Data generators: `random` (uniform in `[min, max]`, default `[-128, 127]`),
//! `identity` (`value` on the diagonal of the operand viewed as a
//! rows-by-columns matrix, default 1), `constant`, `file` (raw little-endian
//! i16, exact size, path relative to the manifest) and `keep` (use whatever
//! the scratchpad already holds). Every input is written to main RAM and
//! moved into the scratchpad by a LOAD operation before the op starts.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::dma::StallSchedule;
use crate::engine::{
    ConfigError, ConvParams, EngineConfig, EngineError, EngineOp, Footprint, GemmParams, PoolMode, PoolParams,
    ReluParams,
};
use crate::memory::{BusError, MAIN_RAM_BASE};
use crate::numerics::{Rounding, ScaleError, ScaleSpec};
use crate::oracle;
use crate::perf;
use crate::regs::{self, Opcode, PARAM_WORDS};
use crate::report::{self, Counters, OpReport, Reference, Report, Summary, Throughput};
use crate::sim::Simulator;

/// Upper bound on STATUS reads while waiting for one operation.
pub const MAX_POLLS: u64 = 1 << 22;

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("manifest: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("op {index} ({name}): {source}")]
    InvalidOp { index: usize, name: String, source: EngineError },
    #[error("op {index} ({name}): {message}")]
    Data { index: usize, name: String, message: String },
    #[error("bus fault while staging: {0}")]
    Bus(#[from] BusError),
}

/// Partial [`EngineConfig`]; used for the manifest `[config]` table and for
/// `--config` files.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    pub mac_units: Option<u32>,
    pub scratchpad_size: Option<u32>,
    pub dma_burst_size: Option<u32>,
    pub data_width: Option<u32>,
    pub addr_width: Option<u32>,
    pub clock_hz: Option<u64>,
    pub setup_cycles: Option<u64>,
    pub writeback_beat_bytes: Option<u32>,
    pub frac_bits: Option<u8>,
}

impl ConfigOverrides {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn apply(&self, cfg: &mut EngineConfig) {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { cfg.$f = v; } )* };
        }
        set!(mac_units, scratchpad_size, dma_burst_size, data_width, addr_width, clock_hz, setup_cycles, writeback_beat_bytes, frac_bits);
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundingSpec {
    #[default]
    Truncate,
    HalfUp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScaleCfg {
    pub shift: u32,
    pub rounding: RoundingSpec,
    pub saturate: bool,
}

impl Default for ScaleCfg {
    fn default() -> Self {
        ScaleCfg { shift: 0, rounding: RoundingSpec::Truncate, saturate: true }
    }
}

impl ScaleCfg {
    pub fn to_spec(self) -> Result<ScaleSpec, ScaleError> {
        let rounding = match self.rounding {
            RoundingSpec::Truncate => Rounding::Truncate,
            RoundingSpec::HalfUp => Rounding::RoundHalfUp,
        };
        let mut s = ScaleSpec::new(self.shift, rounding)?;
        s.saturate = self.saturate;
        Ok(s)
    }
}

fn default_min() -> i16 {
    -128
}

fn default_max() -> i16 {
    127
}

fn one() -> i16 {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(tag = "gen", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSpec {
    Random {
        #[serde(default = "default_min")]
        min: i16,
        #[serde(default = "default_max")]
        max: i16,
    },
    Identity {
        #[serde(default = "one")]
        value: i16,
    },
    Constant {
        value: i16,
    },
    File {
        path: PathBuf,
    },
    Keep,
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec::Random { min: default_min(), max: default_max() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum OpSpec {
    Gemm {
        name: Option<String>,
        m: u32,
        n: u32,
        k: u32,
        a: u32,
        b: u32,
        c: u32,
        #[serde(default)]
        scale: ScaleCfg,
        #[serde(default)]
        a_data: DataSpec,
        #[serde(default)]
        b_data: DataSpec,
    },
    Conv {
        name: Option<String>,
        in_h: u32,
        in_w: u32,
        in_c: u32,
        out_c: u32,
        kernel_h: u32,
        kernel_w: u32,
        #[serde(default = "one_u32")]
        stride: u32,
        #[serde(default)]
        padding: u32,
        input: u32,
        weight: u32,
        output: u32,
        #[serde(default)]
        scale: ScaleCfg,
        #[serde(default)]
        input_data: DataSpec,
        #[serde(default)]
        weight_data: DataSpec,
    },
    Pool {
        name: Option<String>,
        mode: PoolMode,
        #[serde(default = "one_u32")]
        channels: u32,
        in_h: u32,
        in_w: u32,
        window_h: u32,
        window_w: u32,
        stride: u32,
        input: u32,
        output: u32,
        #[serde(default)]
        input_data: DataSpec,
    },
    Relu {
        name: Option<String>,
        count: u32,
        src: u32,
        dst: u32,
        #[serde(default)]
        src_data: DataSpec,
    },
}

fn one_u32() -> u32 {
    1
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(default = "yes")]
    pub oracle_check: bool,
    #[serde(default)]
    pub dma_stall: StallSchedule,
    #[serde(default)]
    pub config: ConfigOverrides,
    #[serde(default, rename = "op")]
    pub ops: Vec<OpSpec>,
}

impl Manifest {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }
}

/// One input tensor: where it goes, how to fill it, and its matrix view for `identity`.
#[derive(Debug, Clone)]
struct Operand<'a> {
    footprint: Footprint,
    data: &'a DataSpec,
    rows: u64,
    cols: u64,
}

impl OpSpec {
    pub fn name(&self, index: usize) -> String {
        let n = match self {
            OpSpec::Gemm { name, .. } | OpSpec::Conv { name, .. } | OpSpec::Pool { name, .. } | OpSpec::Relu { name, .. } => name,
        };
        n.clone().unwrap_or_else(|| format!("op{index}"))
    }

    pub fn to_engine_op(&self) -> Result<EngineOp, EngineError> {
        Ok(match *self {
            OpSpec::Gemm { m, n, k, a, b, c, scale, .. } => {
                EngineOp::Gemm(GemmParams { m, n, k, a_addr: a, b_addr: b, c_addr: c, scale: scale.to_spec()? })
            }
            OpSpec::Conv { in_h, in_w, in_c, out_c, kernel_h, kernel_w, stride, padding, input, weight, output, scale, .. } => {
                EngineOp::Conv(ConvParams {
                    in_h,
                    in_w,
                    in_c,
                    out_c,
                    kernel_h,
                    kernel_w,
                    stride,
                    padding,
                    input_addr: input,
                    weight_addr: weight,
                    output_addr: output,
                    scale: scale.to_spec()?,
                })
            }
            OpSpec::Pool { mode, channels, in_h, in_w, window_h, window_w, stride, input, output, .. } => {
                EngineOp::Pool(PoolParams {
                    mode,
                    channels,
                    in_h,
                    in_w,
                    window_h,
                    window_w,
                    stride,
                    input_addr: input,
                    output_addr: output,
                })
            }
            OpSpec::Relu { count, src, dst, .. } => EngineOp::Relu(ReluParams { count, src_addr: src, dst_addr: dst }),
        })
    }

    fn operands(&self, op: &EngineOp) -> Vec<Operand<'_>> {
        let mk = |footprint: Footprint, data, rows: u32, cols: u64| Operand { footprint, data, rows: rows as u64, cols };
        match (self, op) {
            (OpSpec::Gemm { a_data, b_data, .. }, EngineOp::Gemm(p)) => {
                let ([fa, fb], _) = p.footprints();
                vec![mk(fa, a_data, p.m, p.k as u64), mk(fb, b_data, p.k, p.n as u64)]
            }
            (OpSpec::Conv { input_data, weight_data, .. }, EngineOp::Conv(p)) => {
                let ([fi, fw], _) = p.footprints();
                vec![
                    mk(fi, input_data, p.in_c, p.in_h as u64 * p.in_w as u64),
                    mk(fw, weight_data, p.out_c, p.in_c as u64 * p.kernel_h as u64 * p.kernel_w as u64),
                ]
            }
            (OpSpec::Pool { input_data, .. }, EngineOp::Pool(p)) => {
                let ([fi], _) = p.footprints();
                vec![mk(fi, input_data, p.channels, p.in_h as u64 * p.in_w as u64)]
            }
            (OpSpec::Relu { src_data, .. }, EngineOp::Relu(p)) => {
                vec![mk(p.footprints().0, src_data, 1, p.count as u64)]
            }
            _ => unreachable!("engine op built from this spec"),
        }
    }
}

/// Result of [`run_workload`]: the report plus progress log lines.
#[derive(Debug, Clone)]
pub struct WorkloadOutcome {
    pub report: Report,
    pub log: Vec<String>,
}

impl WorkloadOutcome {
    /// False when any op faulted or failed its oracle check.
    pub fn success(&self) -> bool {
        self.report.summary.faults == 0 && self.report.summary.oracle_fail == 0
    }
}

fn generate(
    spec: &DataSpec,
    operand: &Operand<'_>,
    rng: &mut ChaCha8Rng,
    base_dir: &Path,
) -> Result<Option<Vec<u8>>, String> {
    let n = (operand.footprint.len / 2) as usize;
    let vals: Vec<i16> = match spec {
        DataSpec::Keep => return Ok(None),
        DataSpec::Random { min, max } => {
            if min > max {
                return Err(format!("random range [{min}, {max}] is empty"));
            }
            (0..n).map(|_| rng.gen_range(*min..=*max)).collect()
        }
        DataSpec::Identity { value } => (0..n as u64)
            .map(|i| if i / operand.cols == i % operand.cols && i / operand.cols < operand.rows { *value } else { 0 })
            .collect(),
        DataSpec::Constant { value } => vec![*value; n],
        DataSpec::File { path } => {
            let full = base_dir.join(path);
            let bytes = std::fs::read(&full).map_err(|e| format!("{}: {e}", full.display()))?;
            if bytes.len() as u64 != operand.footprint.len {
                return Err(format!(
                    "{} holds {} bytes, operand {} needs {}",
                    full.display(),
                    bytes.len(),
                    operand.footprint.what,
                    operand.footprint.len
                ));
            }
            return Ok(Some(bytes));
        }
    };
    Ok(Some(vals.iter().flat_map(|v| v.to_le_bytes()).collect()))
}

fn elems(bytes: &[u8]) -> Vec<i16> {
    bytes.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]])).collect()
}

fn spm_bytes(sim: &Simulator, f: &Footprint) -> Vec<u8> {
    let start = f.offset as usize;
    sim.bus.scratchpad.as_bytes()[start..start + f.len as usize].to_vec()
}

fn reference_output(op: &EngineOp, inputs: &[Vec<i16>]) -> Vec<i16> {
    match op {
        EngineOp::Gemm(p) => oracle::gemm(&inputs[0], &inputs[1], p.m as usize, p.n as usize, p.k as usize, p.scale),
        EngineOp::Conv(p) => oracle::conv(&inputs[0], &inputs[1], p),
        EngineOp::Pool(p) => oracle::pool(&inputs[0], p),
        EngineOp::Relu(_) => oracle::relu(&inputs[0]),
    }
}

fn min_cycles(op: &EngineOp, cfg: &EngineConfig, cycles_compute: u64) -> u64 {
    match op {
        EngineOp::Gemm(p) => perf::min_cycles_gemm(p.m as u64, p.n as u64, p.k as u64, cfg.mac_units),
        EngineOp::Conv(p) => p.macs().div_ceil(cfg.mac_units as u64),
        _ => cycles_compute,
    }
}

/// Validates every op and returns the engine configuration the run will use.
pub fn resolve_config(manifest: &Manifest, cli: Option<&ConfigOverrides>) -> Result<EngineConfig, WorkloadError> {
    let mut cfg = EngineConfig::default();
    manifest.config.apply(&mut cfg);
    if let Some(o) = cli {
        o.apply(&mut cfg);
    }
    cfg.validate()?;
    for (index, spec) in manifest.ops.iter().enumerate() {
        let err = |source| WorkloadError::InvalidOp { index, name: spec.name(index), source };
        spec.to_engine_op().and_then(|op| op.validate(cfg.scratchpad_size as usize)).map_err(err)?;
    }
    Ok(cfg)
}

/// Runs every op in order against one fresh simulator.
///
/// `cli` overrides take precedence over the manifest's `[config]` table.
pub fn run_workload(
    manifest: &Manifest,
    base_dir: &Path,
    cli: Option<&ConfigOverrides>,
    seed: u64,
) -> Result<WorkloadOutcome, WorkloadError> {
    let cfg = resolve_config(manifest, cli)?;
    let mut sim = Simulator::new(cfg)?;
    sim.set_stall_schedule(manifest.dma_stall);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log = Vec::new();
    let mut summary = Summary::default();
    let mut ops = Vec::new();

    for (index, spec) in manifest.ops.iter().enumerate() {
        let name = spec.name(index);
        let op = spec.to_engine_op().expect("validated");
        let mut rep = OpReport {
            index: index as u64,
            name: name.clone(),
            kind: op.opcode().name().to_ascii_lowercase(),
            status: "ok".into(),
            error: None,
            staged_bytes: 0,
            staging_cycles: 0,
            start_cycle: 0,
            end_cycle: 0,
            busy_cycles: 0,
            cycles_compute: 0,
            cycles_total: 0,
            min_cycles: 0,
            efficiency: 0.0,
            efficiency_anomaly: false,
            macs: 0,
            overflow_count: 0,
            output_bytes: 0,
            output_sha256: String::new(),
            oracle: "skipped".into(),
            oracle_mismatches: 0,
        };
        summary.ops += 1;

        let operands = spec.operands(&op);
        let mut fault = None;
        for operand in &operands {
            let bytes = generate(operand.data, operand, &mut rng, base_dir)
                .map_err(|message| WorkloadError::Data { index, name: name.clone(), message })?;
            let Some(bytes) = bytes else { continue };
            sim.load_image(MAIN_RAM_BASE, &bytes)?;
            let mut params = [0u32; PARAM_WORDS];
            let mut set = |o: u32, v: u32| params[((o - regs::FIRST_PARAM) / 4) as usize] = v;
            set(regs::PARAM_M, bytes.len() as u32);
            set(regs::PARAM_SRC_A, MAIN_RAM_BASE);
            set(regs::PARAM_DST, operand.footprint.offset);
            match sim.run_opcode_mmio(Opcode::Load, &params, MAX_POLLS)? {
                Some(rec) if rec.error.is_none() => {
                    rep.staged_bytes += bytes.len() as u64;
                    rep.staging_cycles += rec.busy_cycles as u64;
                }
                Some(rec) => {
                    fault = rec.error;
                    break;
                }
                None => {
                    fault = Some("LOAD did not complete".into());
                    break;
                }
            }
        }

        let inputs: Vec<Vec<i16>> = operands.iter().map(|o| elems(&spm_bytes(&sim, &o.footprint))).collect();
        let record = match fault {
            Some(e) => Err(e),
            None => match sim.run_op_mmio(&op, MAX_POLLS)? {
                Some(rec) => match (rec.error.clone(), rec.result) {
                    (None, Some(res)) => Ok((rec, res)),
                    (Some(e), _) => Err(e),
                    (None, None) => Err("operation produced no result".into()),
                },
                None => Err("operation did not complete".into()),
            },
        };

        match record {
            Ok((rec, res)) => {
                let out_fp = op.output_footprint();
                let out_bytes = spm_bytes(&sim, &out_fp);
                rep.start_cycle = rec.start_cycle;
                rep.end_cycle = rec.end_cycle;
                rep.busy_cycles = rec.busy_cycles as u64;
                rep.cycles_compute = res.cycles_compute;
                rep.cycles_total = res.cycles_total;
                rep.min_cycles = min_cycles(&op, &cfg, res.cycles_compute);
                if rep.busy_cycles > 0 {
                    rep.efficiency = report::round6(rep.min_cycles as f64 / rep.busy_cycles as f64);
                    rep.efficiency_anomaly = rep.min_cycles > rep.busy_cycles;
                }
                rep.macs = res.macs;
                rep.overflow_count = res.overflow_count;
                rep.output_bytes = res.output_bytes;
                rep.output_sha256 = report::sha256_hex(&out_bytes);
                summary.overflow_total += res.overflow_count;
                if manifest.oracle_check {
                    let expected = reference_output(&op, &inputs);
                    let got = elems(&out_bytes);
                    rep.oracle_mismatches = expected.iter().zip(&got).filter(|(a, b)| a != b).count() as u64
                        + expected.len().abs_diff(got.len()) as u64;
                    if rep.oracle_mismatches == 0 {
                        rep.oracle = "pass".into();
                        summary.oracle_pass += 1;
                    } else {
                        rep.oracle = "fail".into();
                        summary.oracle_fail += 1;
                    }
                }
                log.push(format!(
                    "[INFO] {name} ({}): {} cycles, {} MACs, oracle {}",
                    op.opcode(),
                    rep.busy_cycles,
                    rep.macs,
                    rep.oracle
                ));
            }
            Err(e) => {
                rep.status = "fault".into();
                log.push(format!("[ERROR] {name} ({}): {e}", op.opcode()));
                rep.error = Some(e);
                summary.faults += 1;
            }
        }
        ops.push(rep);
    }

    let counters = Counters::from(&sim.bus.perf);
    let report = Report {
        format_version: report::FORMAT_VERSION,
        seed,
        oracle_check: manifest.oracle_check,
        dma_stall: report::describe_stall(&manifest.dma_stall),
        config: cfg,
        summary,
        counters,
        throughput: Throughput::new(&cfg, &counters),
        reference: Reference::new(&cfg),
        op: ops,
    };
    Ok(WorkloadOutcome { report, log })
}

pub fn load_manifest(path: &Path) -> Result<Manifest, WorkloadError> {
    let text = std::fs::read_to_string(path).map_err(|source| WorkloadError::Io { path: path.to_path_buf(), source })?;
    Ok(Manifest::from_toml(&text)?)
}
