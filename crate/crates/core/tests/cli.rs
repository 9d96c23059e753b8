mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use npusim::engine::EngineConfig;
use npusim::script::{run_script, LogLevel};
use npusim::workload::{run_workload, Manifest};

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn npusim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_npusim")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn dump_after_load_reproduces_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let input: Vec<u8> = (0..3000u32).map(|i| (i * 7 + i / 13) as u8).collect();
    std::fs::write(dir.path().join("in.bin"), &input).unwrap();
    let script = "load-image in.bin 0x100\ndump-image out.bin 0x100 3000\n\
                  load-image in.bin 0x10001000\ndump-image spm.bin 0x10001000 3000\n";
    let out = run_script(script, dir.path(), EngineConfig::default(), LogLevel::Info).unwrap();
    assert!(out.success());
    assert_eq!(std::fs::read(dir.path().join("out.bin")).unwrap(), input);
    assert_eq!(std::fs::read(dir.path().join("spm.bin")).unwrap(), input);
}

#[test]
fn image_outside_memory_is_a_logged_fault() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("big.bin"), vec![1u8; 64]).unwrap();
    let out = run_script("load-image big.bin 0x3FF0\n", dir.path(), EngineConfig::default(), LogLevel::Info).unwrap();
    assert_eq!(out.bus_faults, 1);
    assert!(out.log.iter().any(|l| l.starts_with("[ERROR]")));
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ok = dir.path().join("ok.npus");
    std::fs::write(&ok, "read 0x10000000 expect 0x1\n").unwrap();
    let o = npusim(&["run-script", ok.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "[INFO] Reading status register @ 0x10000000\n[INFO] Status = 0x00000001 (IDLE)\n");

    let timeout = dir.path().join("timeout.npus");
    std::fs::write(&timeout, "poll 0x10000000 0x2 0x2 10\n").unwrap();
    let o = npusim(&["run-script", timeout.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("[ERROR] Poll timeout"));

    let bad = dir.path().join("bad.npus");
    std::fs::write(&bad, "step 1\nwrite 0x10 0xzz\n").unwrap();
    let o = npusim(&["run-script", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2, column 12"));
}

#[test]
fn shipped_scripts_and_workloads_succeed() {
    let root = repo_root();
    // run from a copy so dump-image output stays out of the source tree
    let dir = tempfile::tempdir().unwrap();
    for entry in std::fs::read_dir(root.join("scripts")).unwrap() {
        let p = entry.unwrap().path();
        std::fs::copy(&p, dir.path().join(p.file_name().unwrap())).unwrap();
    }
    for entry in std::fs::read_dir(dir.path()).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "npus") {
            let o = npusim(&["run-script", p.to_str().unwrap()]);
            assert!(o.status.success(), "{}: {}", p.display(), stdout(&o));
        }
    }
    for entry in std::fs::read_dir(root.join("workloads")).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "toml") {
            let o = npusim(&["run-workload", p.to_str().unwrap()]);
            assert!(o.status.success(), "{}: {}", p.display(), stdout(&o));
            assert!(!stdout(&o).contains("oracle = \"fail\""));
        }
    }
}

#[test]
fn empty_workload_reports_config_and_zero_counters() {
    let out = run_workload(&Manifest::from_toml("").unwrap(), Path::new("."), None, 0).unwrap();
    let text = out.report.to_toml();
    assert!(text.contains("[config]\nmac_units = 16\nscratchpad_size = 8192\n"));
    for key in ["total_cycles", "engine_busy_cycles", "mac_ops_retired", "dma_bytes_moved", "cpu_stall_cycles"] {
        assert!(text.contains(&format!("\n{key} = 0\n")), "{key} not zero in\n{text}");
    }
    assert!(out.report.op.is_empty());
}

#[test]
fn gemm_only_run_retires_mnk_macs() {
    let m = Manifest::from_toml("[[op]]\nkind = \"gemm\"\nm = 7\nn = 9\nk = 13\na = 0\nb = 512\nc = 1024\n").unwrap();
    let out = run_workload(&m, Path::new("."), None, 5).unwrap();
    assert_eq!(out.report.counters.mac_ops_retired, 7 * 9 * 13);
    assert_eq!(out.report.op[0].min_cycles, (7u64 * 9 * 13).div_ceil(16));
}

#[test]
fn seeds_change_only_data_dependent_fields() {
    let m = Manifest::from_toml(&common::random_manifest(99, 12)).unwrap();
    let a = run_workload(&m, Path::new("."), None, 1).unwrap().report.to_toml();
    let b = run_workload(&m, Path::new("."), None, 2).unwrap().report.to_toml();
    assert_ne!(a, b);
    let (la, lb): (Vec<_>, Vec<_>) = (a.lines().collect(), b.lines().collect());
    assert_eq!(la.len(), lb.len());
    let allowed = ["seed", "overflow_total", "overflow_count", "output_sha256"];
    for (x, y) in la.iter().zip(&lb) {
        if x != y {
            let key = x.split(" = ").next().unwrap();
            assert!(allowed.contains(&key), "`{x}` vs `{y}`");
        }
    }
}

#[test]
fn config_file_overrides_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "mac_units = 32\n").unwrap();
    let manifest = dir.path().join("w.toml");
    std::fs::write(&manifest, "[config]\nmac_units = 8\n\n[[op]]\nkind = \"gemm\"\nm = 16\nn = 16\nk = 16\na = 0\nb = 512\nc = 1024\n").unwrap();
    let report = dir.path().join("r.toml");
    let o = npusim(&["run-workload", "--config", cfg.to_str().unwrap(), "--report", report.to_str().unwrap(), manifest.to_str().unwrap()]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(&report).unwrap();
    assert!(text.contains("mac_units = 32"));
    assert!(text.contains("cycles_compute = 128"));
    assert!(stdout(&o).starts_with("[INFO] op0 (GEMM)"));
}

#[test]
fn regmap_and_perf_subcommands() {
    let o = npusim(&["regmap"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("STATUS") && text.contains("CYCLE_COUNT"));
    let o = npusim(&["perf"]);
    let text = stdout(&o);
    assert!(text.contains("peak_ops_per_sec = 3200000000"));
    assert!(text.contains("peak_macs_per_sec = 1600000000"));
    assert!(text.contains("min_cycles_gemm(16,16,16) = 256"));
}

#[test]
fn debug_level_adds_trace_lines() {
    let script = "write 0x10000008 4\nwrite 0x1000001c 0x40\nwrite 0x10000004 0x14\nstep 30\n";
    let info = run_script(script, Path::new("."), EngineConfig::default(), LogLevel::Info).unwrap();
    let debug = run_script(script, Path::new("."), EngineConfig::default(), LogLevel::Debug).unwrap();
    assert!(info.log.iter().all(|l| l.starts_with("[INFO]")));
    assert!(debug.log.iter().any(|l| l.starts_with("[DEBUG]") && l.contains("RELU started")));
}
