//! The neural engine tile: GEMM, convolution, pooling and ReLU over the
//! scratchpad, issued through a MAC array of `mac_units` lanes.
//!
//! All tensors are row-major 16-bit elements addressed by scratchpad byte
//! offset with no inter-row padding. Convolution and pooling tensors are laid
//! out channel-major (`[c][h][w]`); convolution weights are
//! `[out_c][in_c][kernel_h][kernel_w]`.
//!
//! Cycle accounting per op:
//!
//! ```text
//! cycles_compute = ceil(work / mac_units)
//! cycles_total   = cycles_compute + setup_cycles + ceil(output_bytes / writeback_beat_bytes)
//! ```
//!
//! where `work` is the MAC count (GEMM, CONV) or element-read count (POOL, RELU).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memory::Scratchpad;
use crate::numerics::{mac, relu_scalar, requantize_flagged, Acc48, Fixed16, QFormat, ScaleError, ScaleSpec};
use crate::regs::{self, Opcode, PARAM_WORDS};

pub const ELEM_BYTES: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub mac_units: u32,
    pub scratchpad_size: u32,
    pub dma_burst_size: u32,
    pub data_width: u32,
    pub addr_width: u32,
    pub clock_hz: u64,
    /// Fixed control overhead charged to every compute op.
    pub setup_cycles: u64,
    /// Bytes retired per writeback beat.
    pub writeback_beat_bytes: u32,
    /// Host-side Q-format fractional bits; never affects datapath arithmetic.
    pub frac_bits: u8,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            mac_units: 16,
            scratchpad_size: 8192,
            dma_burst_size: 64,
            data_width: 16,
            addr_width: 32,
            clock_hz: 100_000_000,
            setup_cycles: 16,
            writeback_beat_bytes: 4,
            frac_bits: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("mac_units must be within 4..=32, got {0}")]
    MacUnits(u32),
    #[error("data_width is fixed at 16 bits, got {0}")]
    DataWidth(u32),
    #[error("addr_width is fixed at 32 bits, got {0}")]
    AddrWidth(u32),
    #[error("scratchpad_size must be a non-zero multiple of 4 no larger than 0x0fffe000, got {0}")]
    ScratchpadSize(u32),
    #[error("{0} must be positive")]
    Zero(&'static str),
    #[error("frac_bits must be at most 15, got {0}")]
    FracBits(u8),
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(4..=32).contains(&self.mac_units) {
            return Err(ConfigError::MacUnits(self.mac_units));
        }
        if self.data_width != 16 {
            return Err(ConfigError::DataWidth(self.data_width));
        }
        if self.addr_width != 32 {
            return Err(ConfigError::AddrWidth(self.addr_width));
        }
        // keep the scratchpad window clear of the UART region
        if self.scratchpad_size == 0 || !self.scratchpad_size.is_multiple_of(4) || self.scratchpad_size > 0x0FFF_E000 {
            return Err(ConfigError::ScratchpadSize(self.scratchpad_size));
        }
        if self.dma_burst_size == 0 {
            return Err(ConfigError::Zero("dma_burst_size"));
        }
        if self.clock_hz == 0 {
            return Err(ConfigError::Zero("clock_hz"));
        }
        if self.writeback_beat_bytes == 0 {
            return Err(ConfigError::Zero("writeback_beat_bytes"));
        }
        if self.frac_bits > 15 {
            return Err(ConfigError::FracBits(self.frac_bits));
        }
        Ok(())
    }

    pub fn qformat(&self) -> QFormat {
        QFormat { frac_bits: self.frac_bits }
    }

    fn overhead(&self, output_bytes: u64) -> u64 {
        self.setup_cycles + output_bytes.div_ceil(self.writeback_beat_bytes as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("{what} footprint 0x{offset:x}+{len} exceeds the {size}-byte scratchpad")]
    Footprint { what: &'static str, offset: u32, len: u64, size: usize },
    #[error("{what} offset 0x{offset:x} is not element aligned")]
    Misaligned { what: &'static str, offset: u32 },
    #[error("{0} overlaps {1}")]
    Overlap(&'static str, &'static str),
    #[error("invalid shape: {0}")]
    Shape(String),
    #[error(transparent)]
    Scale(#[from] ScaleError),
    #[error("opcode {0} is not a compute operation")]
    NotCompute(Opcode),
}

/// Byte range of one tensor in the scratchpad.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Footprint {
    pub what: &'static str,
    pub offset: u32,
    pub len: u64,
}

impl Footprint {
    fn elems(what: &'static str, offset: u32, count: u64) -> Self {
        Footprint { what, offset, len: count * ELEM_BYTES as u64 }
    }

    pub fn end(&self) -> u64 {
        self.offset as u64 + self.len
    }

    pub fn overlaps(&self, other: &Footprint) -> bool {
        (self.offset as u64) < other.end() && (other.offset as u64) < self.end()
    }

    fn check(&self, size: usize) -> Result<(), EngineError> {
        if !self.offset.is_multiple_of(ELEM_BYTES) {
            return Err(EngineError::Misaligned { what: self.what, offset: self.offset });
        }
        if self.end() > size as u64 {
            return Err(EngineError::Footprint { what: self.what, offset: self.offset, len: self.len, size });
        }
        Ok(())
    }
}

/// Checks that every footprint fits and that no input overlaps the output.
fn check_footprints(inputs: &[Footprint], output: &Footprint, size: usize) -> Result<(), EngineError> {
    for f in inputs.iter().chain(std::iter::once(output)) {
        f.check(size)?;
    }
    for f in inputs {
        if f.overlaps(output) {
            return Err(EngineError::Overlap(f.what, output.what));
        }
    }
    Ok(())
}

fn positive(name: &str, v: u32) -> Result<(), EngineError> {
    if v == 0 {
        Err(EngineError::Shape(format!("{name} must be positive")))
    } else {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GemmParams {
    pub m: u32,
    pub n: u32,
    pub k: u32,
    pub a_addr: u32,
    pub b_addr: u32,
    pub c_addr: u32,
    pub scale: ScaleSpec,
}

impl GemmParams {
    pub fn footprints(&self) -> ([Footprint; 2], Footprint) {
        let (m, n, k) = (self.m as u64, self.n as u64, self.k as u64);
        (
            [Footprint::elems("A", self.a_addr, m * k), Footprint::elems("B", self.b_addr, k * n)],
            Footprint::elems("C", self.c_addr, m * n),
        )
    }

    pub fn validate(&self, scratchpad_size: usize) -> Result<(), EngineError> {
        positive("m", self.m)?;
        positive("n", self.n)?;
        positive("k", self.k)?;
        let (ins, out) = self.footprints();
        check_footprints(&ins, &out, scratchpad_size)
    }

    pub fn macs(&self) -> u64 {
        self.m as u64 * self.n as u64 * self.k as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvParams {
    pub in_h: u32,
    pub in_w: u32,
    pub in_c: u32,
    pub out_c: u32,
    pub kernel_h: u32,
    pub kernel_w: u32,
    pub stride: u32,
    pub padding: u32,
    pub input_addr: u32,
    pub weight_addr: u32,
    pub output_addr: u32,
    pub scale: ScaleSpec,
}

/// `floor((in + 2*pad - k) / stride) + 1`, or `None` when not strictly positive.
pub fn conv_out_dim(input: u32, kernel: u32, stride: u32, padding: u32) -> Option<u32> {
    let padded = input as u64 + 2 * padding as u64;
    if stride == 0 || kernel == 0 || padded < kernel as u64 {
        return None;
    }
    u32::try_from((padded - kernel as u64) / stride as u64 + 1).ok()
}

impl ConvParams {
    pub fn out_h(&self) -> u32 {
        conv_out_dim(self.in_h, self.kernel_h, self.stride, self.padding).unwrap_or(0)
    }

    pub fn out_w(&self) -> u32 {
        conv_out_dim(self.in_w, self.kernel_w, self.stride, self.padding).unwrap_or(0)
    }

    pub fn footprints(&self) -> ([Footprint; 2], Footprint) {
        let c = |v: u32| v as u64;
        (
            [
                Footprint::elems("input", self.input_addr, c(self.in_c) * c(self.in_h) * c(self.in_w)),
                Footprint::elems("weights", self.weight_addr, c(self.out_c) * c(self.in_c) * c(self.kernel_h) * c(self.kernel_w)),
            ],
            Footprint::elems("output", self.output_addr, c(self.out_c) * c(self.out_h()) * c(self.out_w())),
        )
    }

    pub fn validate(&self, scratchpad_size: usize) -> Result<(), EngineError> {
        for (name, v) in [
            ("in_h", self.in_h),
            ("in_w", self.in_w),
            ("in_c", self.in_c),
            ("out_c", self.out_c),
            ("kernel_h", self.kernel_h),
            ("kernel_w", self.kernel_w),
            ("stride", self.stride),
        ] {
            positive(name, v)?;
        }
        if conv_out_dim(self.in_h, self.kernel_h, self.stride, self.padding).is_none()
            || conv_out_dim(self.in_w, self.kernel_w, self.stride, self.padding).is_none()
        {
            return Err(EngineError::Shape("kernel larger than padded input".into()));
        }
        let (ins, out) = self.footprints();
        check_footprints(&ins, &out, scratchpad_size)
    }

    pub fn macs(&self) -> u64 {
        let c = |v: u32| v as u64;
        c(self.out_c) * c(self.out_h()) * c(self.out_w()) * c(self.in_c) * c(self.kernel_h) * c(self.kernel_w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    Max,
    Avg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolParams {
    pub mode: PoolMode,
    pub channels: u32,
    pub in_h: u32,
    pub in_w: u32,
    pub window_h: u32,
    pub window_w: u32,
    pub stride: u32,
    pub input_addr: u32,
    pub output_addr: u32,
}

impl PoolParams {
    pub fn out_h(&self) -> u32 {
        conv_out_dim(self.in_h, self.window_h, self.stride, 0).unwrap_or(0)
    }

    pub fn out_w(&self) -> u32 {
        conv_out_dim(self.in_w, self.window_w, self.stride, 0).unwrap_or(0)
    }

    pub fn footprints(&self) -> ([Footprint; 1], Footprint) {
        let c = |v: u32| v as u64;
        (
            [Footprint::elems("input", self.input_addr, c(self.channels) * c(self.in_h) * c(self.in_w))],
            Footprint::elems("output", self.output_addr, c(self.channels) * c(self.out_h()) * c(self.out_w())),
        )
    }

    pub fn validate(&self, scratchpad_size: usize) -> Result<(), EngineError> {
        for (name, v) in [
            ("channels", self.channels),
            ("in_h", self.in_h),
            ("in_w", self.in_w),
            ("window_h", self.window_h),
            ("window_w", self.window_w),
            ("stride", self.stride),
        ] {
            positive(name, v)?;
        }
        if self.window_h > self.in_h || self.window_w > self.in_w {
            return Err(EngineError::Shape("pooling window larger than input".into()));
        }
        let (ins, out) = self.footprints();
        check_footprints(&ins, &out, scratchpad_size)
    }

    /// Total window-element reads.
    pub fn reads(&self) -> u64 {
        let c = |v: u32| v as u64;
        c(self.channels) * c(self.out_h()) * c(self.out_w()) * c(self.window_h) * c(self.window_w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReluParams {
    pub count: u32,
    pub src_addr: u32,
    pub dst_addr: u32,
}

impl ReluParams {
    pub fn footprints(&self) -> (Footprint, Footprint) {
        (
            Footprint::elems("src", self.src_addr, self.count as u64),
            Footprint::elems("dst", self.dst_addr, self.count as u64),
        )
    }

    pub fn validate(&self, scratchpad_size: usize) -> Result<(), EngineError> {
        positive("count", self.count)?;
        let (src, dst) = self.footprints();
        src.check(scratchpad_size)?;
        dst.check(scratchpad_size)?;
        // in place is fine, partial overlap is not
        if src.offset != dst.offset && src.overlaps(&dst) {
            return Err(EngineError::Overlap("src", "dst"));
        }
        Ok(())
    }
}

/// Outcome of one engine operation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct OpResult {
    pub cycles_compute: u64,
    pub cycles_total: u64,
    /// Saturated writebacks.
    pub overflow_count: u64,
    /// Multiply-accumulates retired (zero for POOL and RELU).
    pub macs: u64,
    pub output_bytes: u64,
}

/// Parallel MAC lanes. Work items are issued `lanes` at a time; each issue
/// slot is one beat.
struct MacArray {
    lanes: u64,
    issued: u64,
}

impl MacArray {
    fn new(cfg: &EngineConfig) -> Self {
        MacArray { lanes: cfg.mac_units as u64, issued: 0 }
    }

    #[inline]
    fn issue(&mut self, acc: &mut Acc48, a: Fixed16, b: Fixed16) {
        *acc = mac(*acc, a, b);
        self.issued += 1;
    }

    /// Issue slot count for work that is not a MAC (pool compares, relu lanes).
    fn issue_passive(&mut self, n: u64) {
        self.issued += n;
    }

    fn beats(&self) -> u64 {
        self.issued.div_ceil(self.lanes)
    }
}

fn elem(spm: &Scratchpad, base: u32, index: u64) -> Fixed16 {
    spm.read_elem(base + (index * ELEM_BYTES as u64) as u32)
}

/// Requantizes and writes accumulators out; returns the saturation count.
fn writeback(spm: &mut Scratchpad, base: u32, accs: &[Acc48], scale: ScaleSpec) -> u64 {
    let mut overflows = 0;
    for (i, acc) in accs.iter().enumerate() {
        let (v, clamped) = requantize_flagged(*acc, scale);
        if clamped || acc.overflowed() {
            overflows += 1;
        }
        spm.write_elem(base + i as u32 * ELEM_BYTES, v);
    }
    overflows
}

fn finish(cfg: &EngineConfig, array: &MacArray, macs: u64, output_bytes: u64, overflow_count: u64) -> OpResult {
    let cycles_compute = array.beats();
    OpResult {
        cycles_compute,
        cycles_total: cycles_compute + cfg.overhead(output_bytes),
        overflow_count,
        macs,
        output_bytes,
    }
}

pub fn execute_gemm(cfg: &EngineConfig, p: &GemmParams, spm: &mut Scratchpad) -> Result<OpResult, EngineError> {
    p.validate(spm.len())?;
    let (m, n, k) = (p.m as u64, p.n as u64, p.k as u64);
    let mut array = MacArray::new(cfg);
    let mut accs = vec![Acc48::ZERO; (m * n) as usize];
    for i in 0..m {
        for j in 0..n {
            let acc = &mut accs[(i * n + j) as usize];
            for kk in 0..k {
                array.issue(acc, elem(spm, p.a_addr, i * k + kk), elem(spm, p.b_addr, kk * n + j));
            }
        }
    }
    let overflows = writeback(spm, p.c_addr, &accs, p.scale);
    Ok(finish(cfg, &array, p.macs(), m * n * ELEM_BYTES as u64, overflows))
}

pub fn execute_conv(cfg: &EngineConfig, p: &ConvParams, spm: &mut Scratchpad) -> Result<OpResult, EngineError> {
    p.validate(spm.len())?;
    let (oh, ow) = (p.out_h() as i64, p.out_w() as i64);
    let (ih, iw) = (p.in_h as i64, p.in_w as i64);
    let (kh, kw) = (p.kernel_h as i64, p.kernel_w as i64);
    let (stride, pad) = (p.stride as i64, p.padding as i64);
    let mut array = MacArray::new(cfg);
    let mut accs = vec![Acc48::ZERO; (p.out_c as i64 * oh * ow) as usize];
    for oc in 0..p.out_c as i64 {
        for oy in 0..oh {
            for ox in 0..ow {
                let acc = &mut accs[((oc * oh + oy) * ow + ox) as usize];
                for ic in 0..p.in_c as i64 {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let y = oy * stride + ky - pad;
                            let x = ox * stride + kx - pad;
                            // padded taps still occupy a lane
                            let v = if (0..ih).contains(&y) && (0..iw).contains(&x) {
                                elem(spm, p.input_addr, ((ic * ih + y) * iw + x) as u64)
                            } else {
                                Fixed16::ZERO
                            };
                            let w = elem(spm, p.weight_addr, (((oc * p.in_c as i64 + ic) * kh + ky) * kw + kx) as u64);
                            array.issue(acc, v, w);
                        }
                    }
                }
            }
        }
    }
    let overflows = writeback(spm, p.output_addr, &accs, p.scale);
    Ok(finish(cfg, &array, p.macs(), accs.len() as u64 * ELEM_BYTES as u64, overflows))
}

pub fn execute_pool(cfg: &EngineConfig, p: &PoolParams, spm: &mut Scratchpad) -> Result<OpResult, EngineError> {
    p.validate(spm.len())?;
    let (oh, ow) = (p.out_h() as u64, p.out_w() as u64);
    let (ih, iw) = (p.in_h as u64, p.in_w as u64);
    let window = (p.window_h * p.window_w) as i64;
    let mut array = MacArray::new(cfg);
    let mut out = Vec::with_capacity((p.channels as u64 * oh * ow) as usize);
    for c in 0..p.channels as u64 {
        for oy in 0..oh {
            for ox in 0..ow {
                let taps = (0..p.window_h as u64).flat_map(|ky| {
                    (0..p.window_w as u64).map(move |kx| (oy * p.stride as u64 + ky, ox * p.stride as u64 + kx))
                });
                let values = taps.map(|(y, x)| elem(spm, p.input_addr, (c * ih + y) * iw + x).raw() as i64);
                let v = match p.mode {
                    PoolMode::Max => values.max().unwrap(),
                    // integer division truncates toward zero
                    PoolMode::Avg => values.sum::<i64>() / window,
                };
                array.issue_passive(window as u64);
                out.push(Fixed16(v as i16));
            }
        }
    }
    for (i, v) in out.iter().enumerate() {
        spm.write_elem(p.output_addr + i as u32 * ELEM_BYTES, *v);
    }
    Ok(finish(cfg, &array, 0, out.len() as u64 * ELEM_BYTES as u64, 0))
}

pub fn execute_relu(cfg: &EngineConfig, p: &ReluParams, spm: &mut Scratchpad) -> Result<OpResult, EngineError> {
    p.validate(spm.len())?;
    let mut array = MacArray::new(cfg);
    for i in 0..p.count as u64 {
        let v = relu_scalar(elem(spm, p.src_addr, i));
        spm.write_elem(p.dst_addr + (i * ELEM_BYTES as u64) as u32, v);
    }
    array.issue_passive(p.count as u64);
    Ok(finish(cfg, &array, 0, p.count as u64 * ELEM_BYTES as u64, 0))
}

/// A compute operation decoded from (or encodable into) the parameter registers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EngineOp {
    Gemm(GemmParams),
    Conv(ConvParams),
    Pool(PoolParams),
    Relu(ReluParams),
}

fn idx(offset: u32) -> usize {
    ((offset - regs::FIRST_PARAM) / 4) as usize
}

impl EngineOp {
    pub fn opcode(&self) -> Opcode {
        match self {
            EngineOp::Gemm(_) => Opcode::Gemm,
            EngineOp::Conv(_) => Opcode::Conv,
            EngineOp::Pool(_) => Opcode::Pool,
            EngineOp::Relu(_) => Opcode::Relu,
        }
    }

    /// Decodes the parameter block for a latched opcode.
    pub fn from_params(op: Opcode, block: &[u32; PARAM_WORDS]) -> Result<EngineOp, EngineError> {
        let r = |offset: u32| block[idx(offset)];
        Ok(match op {
            Opcode::Gemm => EngineOp::Gemm(GemmParams {
                m: r(regs::PARAM_M),
                n: r(regs::PARAM_N),
                k: r(regs::PARAM_K),
                a_addr: r(regs::PARAM_SRC_A),
                b_addr: r(regs::PARAM_SRC_B),
                c_addr: r(regs::PARAM_DST),
                scale: ScaleSpec::from_word(r(regs::PARAM_SCALE))?,
            }),
            Opcode::Conv => EngineOp::Conv(ConvParams {
                in_h: r(regs::PARAM_M),
                in_w: r(regs::PARAM_N),
                in_c: r(regs::PARAM_K),
                input_addr: r(regs::PARAM_SRC_A),
                weight_addr: r(regs::PARAM_SRC_B),
                output_addr: r(regs::PARAM_DST),
                scale: ScaleSpec::from_word(r(regs::PARAM_SCALE))?,
                out_c: r(regs::PARAM_OP0),
                kernel_h: r(regs::PARAM_OP1),
                kernel_w: r(regs::PARAM_OP2),
                stride: r(regs::PARAM_OP3),
                padding: r(regs::PARAM_OP4),
            }),
            Opcode::Pool => EngineOp::Pool(PoolParams {
                in_h: r(regs::PARAM_M),
                in_w: r(regs::PARAM_N),
                channels: r(regs::PARAM_K),
                input_addr: r(regs::PARAM_SRC_A),
                output_addr: r(regs::PARAM_DST),
                mode: match r(regs::PARAM_OP0) {
                    0 => PoolMode::Max,
                    1 => PoolMode::Avg,
                    other => return Err(EngineError::Shape(format!("unknown pool mode {other}"))),
                },
                window_h: r(regs::PARAM_OP1),
                window_w: r(regs::PARAM_OP2),
                stride: r(regs::PARAM_OP3),
            }),
            Opcode::Relu => EngineOp::Relu(ReluParams {
                count: r(regs::PARAM_M),
                src_addr: r(regs::PARAM_SRC_A),
                dst_addr: r(regs::PARAM_DST),
            }),
            Opcode::Load | Opcode::Store => return Err(EngineError::NotCompute(op)),
        })
    }

    /// Inverse of [`EngineOp::from_params`]; unused slots are zero.
    pub fn to_params(&self) -> [u32; PARAM_WORDS] {
        let mut b = [0u32; PARAM_WORDS];
        let mut set = |offset: u32, v: u32| b[idx(offset)] = v;
        match *self {
            EngineOp::Gemm(p) => {
                set(regs::PARAM_M, p.m);
                set(regs::PARAM_N, p.n);
                set(regs::PARAM_K, p.k);
                set(regs::PARAM_SRC_A, p.a_addr);
                set(regs::PARAM_SRC_B, p.b_addr);
                set(regs::PARAM_DST, p.c_addr);
                set(regs::PARAM_SCALE, p.scale.to_word());
            }
            EngineOp::Conv(p) => {
                set(regs::PARAM_M, p.in_h);
                set(regs::PARAM_N, p.in_w);
                set(regs::PARAM_K, p.in_c);
                set(regs::PARAM_SRC_A, p.input_addr);
                set(regs::PARAM_SRC_B, p.weight_addr);
                set(regs::PARAM_DST, p.output_addr);
                set(regs::PARAM_SCALE, p.scale.to_word());
                set(regs::PARAM_OP0, p.out_c);
                set(regs::PARAM_OP1, p.kernel_h);
                set(regs::PARAM_OP2, p.kernel_w);
                set(regs::PARAM_OP3, p.stride);
                set(regs::PARAM_OP4, p.padding);
            }
            EngineOp::Pool(p) => {
                set(regs::PARAM_M, p.in_h);
                set(regs::PARAM_N, p.in_w);
                set(regs::PARAM_K, p.channels);
                set(regs::PARAM_SRC_A, p.input_addr);
                set(regs::PARAM_DST, p.output_addr);
                set(regs::PARAM_OP0, (p.mode == PoolMode::Avg) as u32);
                set(regs::PARAM_OP1, p.window_h);
                set(regs::PARAM_OP2, p.window_w);
                set(regs::PARAM_OP3, p.stride);
            }
            EngineOp::Relu(p) => {
                set(regs::PARAM_M, p.count);
                set(regs::PARAM_SRC_A, p.src_addr);
                set(regs::PARAM_DST, p.dst_addr);
            }
        }
        b
    }

    pub fn validate(&self, scratchpad_size: usize) -> Result<(), EngineError> {
        match self {
            EngineOp::Gemm(p) => p.validate(scratchpad_size),
            EngineOp::Conv(p) => p.validate(scratchpad_size),
            EngineOp::Pool(p) => p.validate(scratchpad_size),
            EngineOp::Relu(p) => p.validate(scratchpad_size),
        }
    }

    /// Byte range the op writes.
    pub fn output_footprint(&self) -> Footprint {
        match self {
            EngineOp::Gemm(p) => p.footprints().1,
            EngineOp::Conv(p) => p.footprints().1,
            EngineOp::Pool(p) => p.footprints().1,
            EngineOp::Relu(p) => p.footprints().1,
        }
    }

    pub fn execute(&self, cfg: &EngineConfig, spm: &mut Scratchpad) -> Result<OpResult, EngineError> {
        match self {
            EngineOp::Gemm(p) => execute_gemm(cfg, p, spm),
            EngineOp::Conv(p) => execute_conv(cfg, p, spm),
            EngineOp::Pool(p) => execute_pool(cfg, p, spm),
            EngineOp::Relu(p) => execute_relu(cfg, p, spm),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spm() -> Scratchpad {
        Scratchpad::new(8192)
    }

    fn put(spm: &mut Scratchpad, base: u32, vals: &[i16]) {
        for (i, v) in vals.iter().enumerate() {
            spm.write_elem(base + 2 * i as u32, Fixed16(*v));
        }
    }

    fn get(spm: &Scratchpad, base: u32, n: usize) -> Vec<i16> {
        (0..n).map(|i| spm.read_elem(base + 2 * i as u32).raw()).collect()
    }

    #[test]
    fn defaults_match_tile_parameters() {
        let c = EngineConfig::default();
        assert_eq!((c.mac_units, c.scratchpad_size, c.dma_burst_size, c.data_width, c.addr_width), (16, 8192, 64, 16, 32));
        assert_eq!(c.clock_hz, 100_000_000);
        c.validate().unwrap();
        assert_eq!(EngineConfig { mac_units: 3, ..c }.validate(), Err(ConfigError::MacUnits(3)));
        assert_eq!(EngineConfig { mac_units: 33, ..c }.validate(), Err(ConfigError::MacUnits(33)));
        assert!(EngineConfig { data_width: 8, ..c }.validate().is_err());
    }

    #[test]
    fn gemm_identity_and_cycles() {
        let cfg = EngineConfig::default();
        let mut s = spm();
        let ident: Vec<i16> = (0..256).map(|i| if i / 16 == i % 16 { 1 } else { 0 }).collect();
        let b: Vec<i16> = (0..256).map(|i| (i * 37 % 511 - 255) as i16).collect();
        put(&mut s, 0, &ident);
        put(&mut s, 512, &b);
        let p = GemmParams { m: 16, n: 16, k: 16, a_addr: 0, b_addr: 512, c_addr: 1024, scale: ScaleSpec::default() };
        let r = execute_gemm(&cfg, &p, &mut s).unwrap();
        assert_eq!(get(&s, 1024, 256), b);
        assert_eq!(r.cycles_compute, 256);
        assert_eq!(r.cycles_total, 256 + 16 + 128);
        assert_eq!(r.macs, 4096);
        assert_eq!(r.overflow_count, 0);
    }

    #[test]
    fn gemm_saturating_writeback_counted() {
        let cfg = EngineConfig::default();
        let mut s = spm();
        put(&mut s, 0, &[i16::MAX, i16::MAX]);
        put(&mut s, 16, &[2, 2]);
        let p = GemmParams { m: 1, n: 1, k: 2, a_addr: 0, b_addr: 16, c_addr: 32, scale: ScaleSpec::default() };
        let r = execute_gemm(&cfg, &p, &mut s).unwrap();
        assert_eq!(get(&s, 32, 1), [i16::MAX]);
        assert_eq!(r.overflow_count, 1);
    }

    #[test]
    fn gemm_footprint_faults() {
        let cfg = EngineConfig::default();
        let mut s = spm();
        let p = GemmParams { m: 100, n: 100, k: 100, a_addr: 0, b_addr: 0, c_addr: 0, scale: ScaleSpec::default() };
        assert!(matches!(execute_gemm(&cfg, &p, &mut s), Err(EngineError::Footprint { .. })));
        let p = GemmParams { m: 2, n: 2, k: 2, a_addr: 0, b_addr: 8, c_addr: 4, scale: ScaleSpec::default() };
        assert!(matches!(execute_gemm(&cfg, &p, &mut s), Err(EngineError::Overlap(..))));
        let p = GemmParams { m: 2, n: 2, k: 2, a_addr: 1, b_addr: 8, c_addr: 64, scale: ScaleSpec::default() };
        assert!(matches!(execute_gemm(&cfg, &p, &mut s), Err(EngineError::Misaligned { .. })));
        let p = GemmParams { m: 0, n: 2, k: 2, a_addr: 0, b_addr: 8, c_addr: 64, scale: ScaleSpec::default() };
        assert!(matches!(execute_gemm(&cfg, &p, &mut s), Err(EngineError::Shape(_))));
    }

    #[test]
    fn conv_identity_1x1() {
        let cfg = EngineConfig::default();
        let mut s = spm();
        let input: Vec<i16> = (0..20).map(|i| i * 3 - 30).collect();
        put(&mut s, 0, &input);
        put(&mut s, 100, &[1]);
        let p = ConvParams {
            in_h: 4, in_w: 5, in_c: 1, out_c: 1, kernel_h: 1, kernel_w: 1, stride: 1, padding: 0,
            input_addr: 0, weight_addr: 100, output_addr: 200, scale: ScaleSpec::default(),
        };
        let r = execute_conv(&cfg, &p, &mut s).unwrap();
        assert_eq!(get(&s, 200, 20), input);
        assert_eq!(r.cycles_compute, 2);
    }

    #[test]
    fn conv_constant_field() {
        let cfg = EngineConfig::default();
        let mut s = spm();
        put(&mut s, 0, &[1; 16]);
        put(&mut s, 64, &[1; 9]);
        let p = ConvParams {
            in_h: 4, in_w: 4, in_c: 1, out_c: 1, kernel_h: 3, kernel_w: 3, stride: 1, padding: 0,
            input_addr: 0, weight_addr: 64, output_addr: 128, scale: ScaleSpec::default(),
        };
        let r = execute_conv(&cfg, &p, &mut s).unwrap();
        assert_eq!(get(&s, 128, 4), [9; 4]);
        assert_eq!(r.macs, 36);
        assert_eq!(r.cycles_compute, 3);
    }

    #[test]
    fn conv_padding_and_stride() {
        let cfg = EngineConfig::default();
        let mut s = spm();
        put(&mut s, 0, &[1; 9]);
        put(&mut s, 64, &[1; 9]);
        let p = ConvParams {
            in_h: 3, in_w: 3, in_c: 1, out_c: 1, kernel_h: 3, kernel_w: 3, stride: 2, padding: 1,
            input_addr: 0, weight_addr: 64, output_addr: 128, scale: ScaleSpec::default(),
        };
        execute_conv(&cfg, &p, &mut s).unwrap();
        // corners of a zero-padded 3x3 field see 4 ones each
        assert_eq!(get(&s, 128, 4), [4; 4]);
        assert!(conv_out_dim(2, 3, 1, 0).is_none());
        assert_eq!(conv_out_dim(5, 3, 2, 1), Some(3));
    }

    #[test]
    fn pool_examples() {
        let cfg = EngineConfig::default();
        let mut s = spm();
        put(&mut s, 0, &[1, 2, 3, 4]);
        let mut p = PoolParams {
            mode: PoolMode::Max, channels: 1, in_h: 2, in_w: 2, window_h: 2, window_w: 2, stride: 2,
            input_addr: 0, output_addr: 64,
        };
        execute_pool(&cfg, &p, &mut s).unwrap();
        assert_eq!(get(&s, 64, 1), [4]);
        p.mode = PoolMode::Avg;
        let r = execute_pool(&cfg, &p, &mut s).unwrap();
        assert_eq!(get(&s, 64, 1), [2]);
        assert_eq!(r.cycles_compute, 1);
        // truncation toward zero for negatives: -10/4 -> -2
        put(&mut s, 0, &[-1, -2, -3, -4]);
        execute_pool(&cfg, &p, &mut s).unwrap();
        assert_eq!(get(&s, 64, 1), [-2]);
    }

    #[test]
    fn relu_examples() {
        let cfg = EngineConfig::default();
        let mut s = spm();
        put(&mut s, 0, &[-3, 0, 7]);
        execute_relu(&cfg, &ReluParams { count: 3, src_addr: 0, dst_addr: 32 }, &mut s).unwrap();
        assert_eq!(get(&s, 32, 3), [0, 0, 7]);
        let r = execute_relu(&cfg, &ReluParams { count: 16, src_addr: 0, dst_addr: 0 }, &mut s).unwrap();
        assert_eq!(r.cycles_compute, 1);
        assert_eq!(get(&s, 0, 3), [0, 0, 7]);
        let bad = ReluParams { count: 8, src_addr: 0, dst_addr: 2 };
        assert!(matches!(execute_relu(&cfg, &bad, &mut s), Err(EngineError::Overlap(..))));
    }

    #[test]
    fn param_block_roundtrip() {
        let ops = [
            EngineOp::Gemm(GemmParams { m: 3, n: 4, k: 5, a_addr: 0, b_addr: 64, c_addr: 128, scale: ScaleSpec::new(3, crate::numerics::Rounding::RoundHalfUp).unwrap() }),
            EngineOp::Conv(ConvParams {
                in_h: 5, in_w: 6, in_c: 2, out_c: 3, kernel_h: 3, kernel_w: 2, stride: 2, padding: 1,
                input_addr: 0, weight_addr: 200, output_addr: 400, scale: ScaleSpec::default(),
            }),
            EngineOp::Pool(PoolParams { mode: PoolMode::Avg, channels: 2, in_h: 4, in_w: 4, window_h: 2, window_w: 2, stride: 2, input_addr: 0, output_addr: 100 }),
            EngineOp::Relu(ReluParams { count: 9, src_addr: 10, dst_addr: 100 }),
        ];
        for op in ops {
            assert_eq!(EngineOp::from_params(op.opcode(), &op.to_params()).unwrap(), op);
        }
        assert!(matches!(EngineOp::from_params(Opcode::Load, &[0; PARAM_WORDS]), Err(EngineError::NotCompute(_))));
    }
}
