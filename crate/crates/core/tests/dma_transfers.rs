use proptest::prelude::*;

use npusim::dma::{DmaDescriptor, DmaEngine, DmaError, StallSchedule, TransferStatus, QUEUE_CAPACITY};
use npusim::engine::EngineConfig;
use npusim::memory::{Bus, SCRATCHPAD_BASE};

fn schedule() -> impl Strategy<Value = StallSchedule> {
    prop_oneof![
        Just(StallSchedule::None),
        (2u64..6).prop_map(StallSchedule::EveryNth),
        (any::<u64>(), 0u8..=90, 1u32..8).prop_map(|(seed, percent, max_run)| StallSchedule::Random { seed, percent, max_run }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn chain_is_byte_exact(
        segs in prop::collection::vec((0u32..0x1000, 1u32..300, prop_oneof![Just(0u32), 1u32..200]), 1..5),
        sched in schedule(),
        fill in any::<u8>(),
    ) {
        let cfg = EngineConfig::default();
        let mut bus = Bus::new(&cfg);
        let ram: Vec<u8> = (0..0x3000u32).map(|i| (i as u8).wrapping_mul(31).wrapping_add(fill)).collect();
        bus.load_image(0, &ram).unwrap();
        let mut table = Vec::new();
        let mut dst = SCRATCHPAD_BASE;
        for (i, &(src, len, stride)) in segs.iter().enumerate() {
            let mut d = DmaDescriptor::new(src, dst, len).with_stride(stride);
            if i + 1 < segs.len() {
                d = d.linked(i + 1);
            }
            table.push(d);
            dst += len;
        }
        let mut dma = DmaEngine::new(64);
        dma.set_stall_schedule(sched);
        let t = dma.submit(bus.map(), &table, 0).unwrap();
        let cycles = dma.run_to_completion(&mut bus, 0, 1_000_000);
        prop_assert_eq!(dma.status(t), Some(TransferStatus::Complete));
        let bursts: u64 = segs.iter().map(|s| s.1.div_ceil(64) as u64).sum();
        prop_assert_eq!(dma.stats().bursts, bursts);
        prop_assert_eq!(cycles, bursts + dma.stats().stalls);
        let mut cursor = SCRATCHPAD_BASE;
        for &(src, len, stride) in &segs {
            let step = if stride == 0 { 64 } else { stride };
            for off in 0..len {
                let s = src + (off / 64) * step + off % 64;
                prop_assert_eq!(bus.dump_image(cursor + off, 1).unwrap()[0], ram[s as usize]);
            }
            cursor += len;
        }
    }

    #[test]
    fn stall_runs_are_bounded(sched in schedule(), len in 64u32..1024) {
        let cfg = EngineConfig::default();
        let mut bus = Bus::new(&cfg);
        let mut dma = DmaEngine::new(64);
        dma.set_stall_schedule(sched);
        dma.submit(bus.map(), &[DmaDescriptor::new(0, SCRATCHPAD_BASE, len)], 0).unwrap();
        let (mut run, mut cycle) = (0u64, 0u64);
        while !dma.is_idle() {
            let before = dma.stats().stalls;
            dma.step(&mut bus, cycle);
            run = if dma.stats().stalls > before { run + 1 } else { 0 };
            prop_assert!(run <= sched.max_stall_run());
            cycle += 1;
        }
    }
}

#[test]
fn queue_capacity_is_eight() {
    let cfg = EngineConfig::default();
    let bus = Bus::new(&cfg);
    let mut dma = DmaEngine::new(64);
    let d = [DmaDescriptor::new(0, SCRATCHPAD_BASE, 64)];
    for _ in 0..QUEUE_CAPACITY {
        dma.submit(bus.map(), &d, 0).unwrap();
    }
    assert_eq!(dma.submit(bus.map(), &d, 0), Err(DmaError::QueueFull));
    assert_eq!(dma.in_flight(), 8);
}

#[test]
fn cyclic_and_dangling_chains_are_rejected() {
    let cfg = EngineConfig::default();
    let bus = Bus::new(&cfg);
    let mut dma = DmaEngine::new(64);
    let self_loop = [DmaDescriptor::new(0, SCRATCHPAD_BASE, 8).linked(0)];
    assert!(matches!(dma.submit(bus.map(), &self_loop, 0), Err(DmaError::CyclicChain { .. })));
    let ring = [
        DmaDescriptor::new(0, SCRATCHPAD_BASE, 8).linked(1),
        DmaDescriptor::new(8, SCRATCHPAD_BASE + 8, 8).linked(2),
        DmaDescriptor::new(16, SCRATCHPAD_BASE + 16, 8).linked(1),
    ];
    assert!(matches!(dma.submit(bus.map(), &ring, 0), Err(DmaError::CyclicChain { .. })));
    let dangling = [DmaDescriptor::new(0, SCRATCHPAD_BASE, 8).linked(5)];
    assert!(matches!(dma.submit(bus.map(), &dangling, 0), Err(DmaError::BadLink { .. })));
    assert_eq!(dma.in_flight(), 0);
}

#[test]
fn out_of_map_ranges_are_rejected_at_submit() {
    let cfg = EngineConfig::default();
    let bus = Bus::new(&cfg);
    let mut dma = DmaEngine::new(64);
    // runs off the end of the scratchpad
    let d = [DmaDescriptor::new(0, SCRATCHPAD_BASE + 8190, 4)];
    assert!(matches!(dma.submit(bus.map(), &d, 0), Err(DmaError::InvalidRange { .. })));
    // register window is not a DMA target
    let d = [DmaDescriptor::new(0, 0x1000_0000, 4)];
    assert!(dma.submit(bus.map(), &d, 0).is_err());
}
