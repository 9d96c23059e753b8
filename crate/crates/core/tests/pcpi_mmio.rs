use proptest::prelude::*;

use npusim::engine::{EngineConfig, EngineOp, GemmParams, PoolMode, PoolParams, ReluParams};
use npusim::memory::{NEURAL_REGS_BASE, SCRATCHPAD_BASE};
use npusim::numerics::ScaleSpec;
use npusim::pcpi::{self, PcpiCommand, PcpiError, PcpiRequest};
use npusim::regs::{self, status};
use npusim::Simulator;

const BLOCK: u32 = 0x1F00;

fn prepared(op: &EngineOp, image: &[u8]) -> Simulator {
    let mut s = Simulator::new(EngineConfig::default()).unwrap();
    s.load_image(SCRATCHPAD_BASE, image).unwrap();
    let block: Vec<u8> = op.to_params().iter().flat_map(|w| w.to_le_bytes()).collect();
    s.load_image(SCRATCHPAD_BASE + BLOCK, &block).unwrap();
    s
}

fn run_pcpi(s: &mut Simulator, op: &EngineOp) -> u32 {
    let insn = pcpi::encode(PcpiCommand::Start(op.opcode()));
    let first = s.pcpi_issue(PcpiRequest { insn, rs1: BLOCK, rs2: 0 }).unwrap();
    assert!(!first.ready);
    loop {
        let r = s.pcpi_poll();
        if r.ready {
            return r.rd;
        }
    }
}

fn compute_op() -> impl Strategy<Value = EngineOp> {
    prop_oneof![
        (1u32..=16, 1u32..=16, 1u32..=16, 0u32..8).prop_map(|(m, n, k, s)| EngineOp::Gemm(GemmParams {
            m, n, k, a_addr: 0, b_addr: 0x600, c_addr: 0xC00,
            scale: ScaleSpec::new(s, Default::default()).unwrap(),
        })),
        (1u32..=4, 2u32..=12, 2u32..=12, any::<bool>()).prop_map(|(c, h, w, avg)| EngineOp::Pool(PoolParams {
            mode: if avg { PoolMode::Avg } else { PoolMode::Max },
            channels: c, in_h: h, in_w: w, window_h: 2, window_w: 2, stride: 2,
            input_addr: 0, output_addr: 0x1000,
        })),
        (1u32..=1024).prop_map(|count| EngineOp::Relu(ReluParams { count, src_addr: 0, dst_addr: 0x1000 })),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pcpi_and_mmio_agree(op in compute_op(), image in prop::collection::vec(any::<u8>(), 0x1E00)) {
        let mut a = prepared(&op, &image);
        let mut b = prepared(&op, &image);
        let rec = a.run_op_mmio(&op, 100_000).unwrap().unwrap();
        let rd = run_pcpi(&mut b, &op);
        prop_assert_eq!(rd, status::DONE);
        let rec_b = b.last_op().unwrap();
        prop_assert_eq!(a.bus.scratchpad.as_bytes(), b.bus.scratchpad.as_bytes());
        prop_assert_eq!(rec.result, rec_b.result);
        prop_assert_eq!(rec.busy_cycles, rec_b.busy_cycles);
        prop_assert_eq!(a.bus.regs.reg_read(regs::CYCLE_COUNT).unwrap(), b.bus.regs.reg_read(regs::CYCLE_COUNT).unwrap());
    }
}

#[test]
fn start_while_busy_is_rejected_and_flags_error() {
    let op = EngineOp::Gemm(GemmParams { m: 16, n: 16, k: 16, a_addr: 0, b_addr: 512, c_addr: 1024, scale: ScaleSpec::default() });
    let mut s = prepared(&op, &[]);
    let req = PcpiRequest { insn: pcpi::encode(PcpiCommand::Start(op.opcode())), rs1: BLOCK, rs2: 0 };
    s.pcpi_issue(req).unwrap();
    assert_eq!(s.pcpi_issue(req), Err(PcpiError::EngineBusy));
    let st = s.cpu_read(NEURAL_REGS_BASE + regs::STATUS).unwrap();
    assert_eq!(st, status::BUSY | status::ERROR);
    // the first op still runs to completion
    let out = s.poll(NEURAL_REGS_BASE, status::DONE, status::DONE, 1000).unwrap();
    assert!(out.matched);
    assert_eq!(s.history().len(), 1);
}

#[test]
fn status_query_returns_current_status() {
    let mut s = Simulator::new(EngineConfig::default()).unwrap();
    let r = s.pcpi_issue(PcpiRequest { insn: pcpi::encode(PcpiCommand::QueryStatus), rs1: 0, rs2: 0 }).unwrap();
    assert!(r.ready && r.wr);
    assert_eq!(r.rd, status::IDLE);
}

#[test]
fn illegal_instructions_do_not_touch_the_engine() {
    let mut s = Simulator::new(EngineConfig::default()).unwrap();
    for insn in [0x0000_0013, 0x0000_300B, 0x1E00_000B] {
        assert_eq!(s.pcpi_issue(PcpiRequest { insn, rs1: 0, rs2: 0 }), Err(PcpiError::IllegalInstruction(insn)));
    }
    assert_eq!(s.bus.regs.status().0, status::IDLE);
}

#[test]
fn load_via_pcpi_matches_mmio() {
    let data: Vec<u8> = (0..=255u8).collect();
    let mut params = [0u32; regs::PARAM_WORDS];
    params[((regs::PARAM_M - regs::FIRST_PARAM) / 4) as usize] = 256;
    params[((regs::PARAM_SRC_A - regs::FIRST_PARAM) / 4) as usize] = 0x100;
    params[((regs::PARAM_DST - regs::FIRST_PARAM) / 4) as usize] = 0x40;
    let block: Vec<u8> = params.iter().flat_map(|w| w.to_le_bytes()).collect();
    let fresh = || {
        let mut s = Simulator::new(EngineConfig::default()).unwrap();
        s.load_image(0x100, &data).unwrap();
        s.load_image(SCRATCHPAD_BASE + BLOCK, &block).unwrap();
        s
    };
    let mut a = fresh();
    let mut b = fresh();
    a.run_opcode_mmio(regs::Opcode::Load, &params, 1000).unwrap().unwrap();
    let req = PcpiRequest { insn: pcpi::encode(PcpiCommand::Start(regs::Opcode::Load)), rs1: BLOCK, rs2: 0 };
    b.pcpi_issue(req).unwrap();
    while !b.pcpi_poll().ready {}
    assert_eq!(a.dump_image(SCRATCHPAD_BASE + 0x40, 256).unwrap(), data);
    assert_eq!(a.bus.scratchpad.as_bytes(), b.bus.scratchpad.as_bytes());
    assert_eq!(a.last_op().unwrap().busy_cycles, b.last_op().unwrap().busy_cycles);
}
