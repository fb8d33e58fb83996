use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use rtgpu::analysis::{analyze, analyze_at, analyze_rtgpu};
use rtgpu::model::{read_json, validate_taskset, write_json, ModelError};
use rtgpu::simulator::{check_against_analysis, simulate, LengthPolicy, SimConfig};
use rtgpu::time::format_rational;
use rtgpu::workbench::{acceptance_sweep, generate_taskset, throughput_improvement, write_csv};
use rtgpu::workbench::{GeneratorParams, SweepConfig, ThroughputScope};
use rtgpu::{Duration, Method, SmAllocation, TaskSet};

#[derive(Parser)]
#[command(name = "rtgpu", version, about = "Schedulability analysis and simulation of CPU/bus/GPU task sets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random taskset.
    Generate {
        #[arg(long)]
        params: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Analyze a taskset and write the report as JSON.
    Analyze {
        #[arg(long)]
        taskset: PathBuf,
        #[arg(long, value_enum)]
        method: MethodArg,
        /// Analyze this allocation instead of searching the grid.
        #[arg(long)]
        allocation: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate a taskset and write the event trace as JSON lines.
    Simulate {
        #[arg(long)]
        taskset: PathBuf,
        /// Defaults to the allocation found by the RTGPU analysis.
        #[arg(long)]
        allocation: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "worst")]
        policy: PolicyArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Release jobs before this many microseconds; defaults to 20 periods
        /// of the longest-period task.
        #[arg(long)]
        horizon: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an acceptance-ratio sweep and write CSV.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Throughput gained from interleaved execution under an allocation.
    Throughput {
        #[arg(long)]
        taskset: PathBuf,
        #[arg(long)]
        allocation: PathBuf,
        #[arg(long, value_enum, default_value = "used")]
        scope: ScopeArg,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Rtgpu,
    Selfsusp,
    Busywait,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Method {
        match m {
            MethodArg::Rtgpu => Method::Rtgpu,
            MethodArg::Selfsusp => Method::SelfSuspension,
            MethodArg::Busywait => Method::BusyWaiting,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Worst,
    Uniform,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    Whole,
    Used,
}

enum Failure {
    /// Bad arguments or input files.
    Input(String),
    /// Could not write results.
    Output(String),
}

type Outcome = Result<(), Failure>;

fn input(e: impl std::fmt::Display) -> Failure {
    Failure::Input(e.to_string())
}

fn output(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Output(format!("{}: {e}", path.display()))
}

fn load_taskset(path: &Path) -> Result<TaskSet, Failure> {
    let ts: TaskSet = read_json(path).map_err(input)?;
    let problems = validate_taskset(&ts);
    if problems.is_empty() {
        Ok(ts)
    } else {
        let lines: Vec<String> = problems.iter().map(|v| format!("  {v}")).collect();
        Err(Failure::Input(format!("{}: invalid taskset\n{}", path.display(), lines.join("\n"))))
    }
}

fn load_allocation(path: &Path, ts: &TaskSet) -> Result<SmAllocation, Failure> {
    let alloc: SmAllocation = read_json(path).map_err(input)?;
    let problems = alloc.check(ts);
    if problems.is_empty() {
        Ok(alloc)
    } else {
        let lines: Vec<String> = problems.iter().map(|v| format!("  {v}")).collect();
        Err(Failure::Input(format!("{}: invalid allocation\n{}", path.display(), lines.join("\n"))))
    }
}

fn save<T: serde::Serialize>(value: &T, path: &Path) -> Outcome {
    write_json(value, path).map_err(|e| match e {
        ModelError::Io { source, .. } => output(path, source),
        other => Failure::Output(other.to_string()),
    })
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path).map(BufWriter::new).map_err(|e| output(path, e))
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Generate { params, seed, out } => {
            let p: GeneratorParams = read_json(&params).map_err(input)?;
            let g = generate_taskset(&p, seed).map_err(|e| Failure::Input(format!("{}: {e}", params.display())))?;
            save(&g.taskset, &out)?;
            println!("{} tasks written to {}", g.taskset.len(), out.display());
        }
        Command::Analyze { taskset, method, allocation, out } => {
            let ts = load_taskset(&taskset)?;
            let report = match allocation {
                Some(a) => analyze_at(&ts, &load_allocation(&a, &ts)?, method.into()).map_err(input)?,
                None => analyze(&ts, method.into()),
            };
            save(&report, &out)?;
            println!("{}: schedulable = {}", report.method.name(), report.schedulable);
        }
        Command::Simulate { taskset, allocation, policy, seed, horizon, out } => {
            let ts = load_taskset(&taskset)?;
            let report = match &allocation {
                Some(a) => analyze_at(&ts, &load_allocation(a, &ts)?, Method::Rtgpu).map_err(input)?,
                None => analyze_rtgpu(&ts),
            };
            let alloc = report.allocation.clone().ok_or_else(|| {
                Failure::Input(format!(
                    "{}: no allocation given and the RTGPU analysis found none",
                    taskset.display()
                ))
            })?;
            let policy = match policy {
                PolicyArg::Worst => LengthPolicy::WorstCase,
                PolicyArg::Uniform => LengthPolicy::UniformRandom,
            };
            let mut cfg = SimConfig::new(&ts, seed, policy);
            if let Some(h) = horizon {
                cfg.horizon = Duration::from_micros(h as i128);
            }
            let trace = simulate(&ts, &alloc, &cfg).map_err(input)?;
            let mut w = create(&out)?;
            trace.write_jsonl(&mut w).map_err(|e| output(&out, e))?;
            println!(
                "{} jobs, {} deadline misses, {} unfinished at the end of the run",
                trace.jobs.len(),
                trace.deadline_misses(),
                trace.truncated.len()
            );
            if report.schedulable {
                let violations = check_against_analysis(&trace, &report);
                println!("{} bound violations against the RTGPU analysis", violations.len());
                for v in violations.iter().take(10) {
                    println!("  {v}");
                }
            }
        }
        Command::Sweep { config, seed, out } => {
            let cfg: SweepConfig = read_json(&config).map_err(input)?;
            let rows = acceptance_sweep(&cfg, seed).map_err(|e| Failure::Input(format!("{}: {e}", config.display())))?;
            let w = create(&out)?;
            write_csv(&rows, w).map_err(|e| output(&out, e))?;
            println!("{} rows written to {}", rows.len(), out.display());
        }
        Command::Throughput { taskset, allocation, scope } => {
            let ts = load_taskset(&taskset)?;
            let alloc = load_allocation(&allocation, &ts)?;
            let scope = match scope {
                ScopeArg::Whole => ThroughputScope::WholeGpu,
                ScopeArg::Used => ThroughputScope::UsedSms,
            };
            let eta = throughput_improvement(&ts, &alloc, scope).map_err(input)?;
            let value = serde_json::json!({
                "scope": scope,
                "improvement": format_rational(&eta),
                "improvement_f64": rtgpu::Duration::from_ratio(eta).as_micros_f64(),
            });
            let mut stdout = io::stdout().lock();
            writeln!(stdout, "{value}").map_err(|e| Failure::Output(e.to_string()))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Output(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
