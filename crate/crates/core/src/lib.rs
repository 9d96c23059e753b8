//! Cycle-accounting emulator of a small FPGA neural processing unit: a
//! 16-lane fixed-point MAC array with scratchpad, scatter-gather DMA,
//! memory-mapped control registers and a PicoRV32 co-processor bridge.

pub mod dma;
pub mod engine;
pub mod memory;
pub mod numerics;
pub mod oracle;
pub mod pcpi;
pub mod perf;
pub mod regs;
pub mod report;
pub mod script;
pub mod sim;
pub mod workload;

pub use engine::{EngineConfig, EngineOp, OpResult};
pub use sim::Simulator;
