use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use npusim::perf::{self, OpsPerMac};
use npusim::regs;
use npusim::script::{self, LogLevel};
use npusim::workload::{self, ConfigOverrides};
use npusim::EngineConfig;

#[derive(Parser)]
#[command(name = "npusim", version, about = "Cycle-accounting neural engine emulator")]
struct Cli {
    /// Engine configuration overrides (TOML, same keys as a manifest's [config] table)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for all generated data
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Write the run report here instead of stdout
    #[arg(long, global = true)]
    report: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Level::Info)]
    log_level: Level,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Level {
    Info,
    Debug,
}

#[derive(Subcommand)]
enum Command {
    /// Replay a register-transaction script
    RunScript { path: PathBuf },
    /// Execute a workload manifest and emit a report
    RunWorkload { path: PathBuf },
    /// Print the register map
    Regmap,
    /// Print peak throughput and the GEMM cycle lower bound
    Perf {
        #[arg(long, default_value_t = 16)]
        m: u64,
        #[arg(long, default_value_t = 16)]
        n: u64,
        #[arg(long, default_value_t = 16)]
        k: u64,
    },
}

fn read_overrides(path: Option<&Path>) -> Result<Option<ConfigOverrides>, String> {
    let Some(path) = path else { return Ok(None) };
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    ConfigOverrides::from_toml(&text).map(Some).map_err(|e| format!("{}: {e}", path.display()))
}

fn base_config(overrides: Option<&ConfigOverrides>) -> EngineConfig {
    let mut cfg = EngineConfig::default();
    if let Some(o) = overrides {
        o.apply(&mut cfg);
    }
    cfg
}

fn run(cli: Cli) -> Result<bool, String> {
    let overrides = read_overrides(cli.config.as_deref())?;
    let level = match cli.log_level {
        Level::Info => LogLevel::Info,
        Level::Debug => LogLevel::Debug,
    };
    match cli.command {
        Command::RunScript { path } => {
            let out = script::run_script_file(&path, base_config(overrides.as_ref()), level).map_err(|e| e.to_string())?;
            print!("{}", out.log_text());
            Ok(out.success())
        }
        Command::RunWorkload { path } => {
            let manifest = workload::load_manifest(&path).map_err(|e| e.to_string())?;
            let dir = path.parent().unwrap_or(Path::new("."));
            let out = workload::run_workload(&manifest, dir, overrides.as_ref(), cli.seed).map_err(|e| e.to_string())?;
            let text = out.report.to_toml();
            match &cli.report {
                Some(p) => {
                    for line in &out.log {
                        println!("{line}");
                    }
                    std::fs::write(p, text).map_err(|e| format!("{}: {e}", p.display()))?;
                }
                None => print!("{text}"),
            }
            Ok(out.success())
        }
        Command::Regmap => {
            print!("{}", regs::register_reference());
            Ok(true)
        }
        Command::Perf { m, n, k } => {
            let cfg = base_config(overrides.as_ref());
            cfg.validate().map_err(|e| e.to_string())?;
            let u = cfg.mac_units;
            println!("mac_units = {u}");
            println!("clock_hz = {}", cfg.clock_hz);
            println!("peak_ops_per_sec = {}", perf::peak_ops_per_sec(u, cfg.clock_hz, OpsPerMac::Two));
            println!("peak_macs_per_sec = {}", perf::peak_ops_per_sec(u, cfg.clock_hz, OpsPerMac::One));
            println!("min_cycles_gemm({m},{n},{k}) = {}", perf::min_cycles_gemm(m, n, k, u));
            let e = perf::efficiency(perf::REFERENCE_MEASURED_GEMM16_CYCLES, 16, 16, 16, u);
            println!(
                "reference gemm16: measured {} cycles, minimum {}, efficiency {:.3}{}",
                e.measured_cycles,
                e.min_cycles,
                e.ratio,
                if e.anomaly { " (anomaly: below the minimum)" } else { "" }
            );
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
