//! End-to-end acceptance criteria. Each check prints one PASS/FAIL line; the
//! target exits non-zero if any of them fails.

use std::collections::HashMap;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use rtgpu::analysis::analyze_rtgpu;
use rtgpu::gpu::{gpu_response_bounds, kernel_time};
use rtgpu::model::{ExecBounds, GpuKernelModel, Interval, PlatformConfig};
use rtgpu::simulator::{check_against_analysis, simulate, LengthPolicy, SimConfig};
use rtgpu::suspension::SuspTask;
use rtgpu::workbench::{
    acceptance_sweep, generate_taskset, throughput_improvement, Dimension, GeneratorParams, SweepConfig, SweepRow,
    ThroughputScope,
};
use rtgpu::{Duration, MemModel, Method, Micros, Rational, SmAllocation, TaskSet, TaskSpec};

const SEED: u64 = 20_240_601;
const PER_POINT: usize = 100;
const DEFAULT_GRID: [&str; 10] = ["0.1", "0.2", "0.3", "0.4", "0.5", "0.6", "0.8", "1", "1.2", "1.5"];
const RATIO_GRID: [&str; 10] = ["0.05", "0.1", "0.15", "0.2", "0.25", "0.3", "0.4", "0.5", "0.6", "0.8"];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn us(v: i64) -> Duration {
    Duration::from_micros(v as i128)
}

// ---------------------------------------------------------------------------
// Workload oracle: exhaustive search over integer release patterns.

struct Instance {
    exec: Vec<(i64, i64)>,
    susp: Vec<(i64, i64)>,
    deadline: i64,
    period: i64,
}

impl Instance {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let m = rng.gen_range(1..=3);
        let exec: Vec<(i64, i64)> = (0..m)
            .map(|_| {
                let hi = rng.gen_range(1..=5);
                (rng.gen_range(0..=hi), hi)
            })
            .collect();
        let susp: Vec<(i64, i64)> = (0..m - 1)
            .map(|_| {
                let lo = rng.gen_range(0..=5);
                (lo, rng.gen_range(lo..=5))
            })
            .collect();
        let span: i64 = exec.iter().map(|e| e.1).sum::<i64>() + susp.iter().map(|s| s.0).sum::<i64>();
        let deadline = span + rng.gen_range(0..=5);
        let period = deadline + rng.gen_range(0..=5);
        Instance { exec, susp, deadline, period }
    }

    fn task(&self) -> SuspTask {
        let iv = |&(lo, hi): &(i64, i64)| Interval::new(us(lo), us(hi));
        SuspTask::new(
            self.exec.iter().map(iv).collect(),
            self.susp.iter().map(iv).collect(),
            us(self.deadline),
            us(self.period),
        )
        .expect("valid instance")
    }

    /// Shortest time segments `from..` of one job can occupy.
    fn rest_span(&self, from: usize) -> i64 {
        let m = self.exec.len();
        (from..m).map(|i| self.exec[i].0).sum::<i64>() + (from..m.saturating_sub(1)).map(|i| self.susp[i].0).sum::<i64>()
    }
}

/// Largest execution any legal schedule of the task can place in `[0, horizon)`
/// when segment `h` of some job starts at time 0 and runs without preemption.
///
/// Jobs are released at least a period apart; each job's segments run in
/// order, separated by at least their minimum suspension, and finish by the
/// job's deadline. Every segment length, start time and release time is
/// enumerated over the integers.
fn brute_workload(inst: &Instance, h: usize, horizon: i64) -> i64 {
    let prefix = inst.rest_span(0) - inst.rest_span(h);
    let mut memo = HashMap::new();
    // Release of the job holding segment h: early enough for its earlier
    // segments to fit before 0.
    let best = (-inst.deadline..=-prefix).map(|r| place(inst, h, 0, r, horizon, &mut memo, true)).max().unwrap();
    assert!(best > INFEASIBLE, "no legal schedule");
    best
}

const INFEASIBLE: i64 = i64::MIN / 4;

/// Best execution from segment `seg` of the job released at `release`,
/// given that the segment may start no earlier than `earliest` (exactly at
/// `earliest` when `pinned`).
fn place(
    inst: &Instance,
    seg: usize,
    earliest: i64,
    release: i64,
    horizon: i64,
    memo: &mut HashMap<(usize, i64, i64), i64>,
    pinned: bool,
) -> i64 {
    let key = (seg, earliest, release);
    if !pinned {
        if let Some(&v) = memo.get(&key) {
            return v;
        }
    }
    let m = inst.exec.len();
    let due = release + inst.deadline;
    let latest_start = due - inst.rest_span(seg);
    let last = if pinned { earliest } else { latest_start };
    let mut best = INFEASIBLE;
    for s in earliest..=last.min(latest_start) {
        if s >= horizon {
            // Nothing more lands in the window and the rest of the job fits.
            best = best.max(0);
            break;
        }
        for e in inst.exec[seg].0..=inst.exec[seg].1 {
            let end = s + e;
            let rest = if seg + 1 < m {
                let next = end + inst.susp[seg].0;
                if next + inst.rest_span(seg + 1) > due {
                    INFEASIBLE
                } else {
                    place(inst, seg + 1, next, release, horizon, memo, false)
                }
            } else if end > due {
                INFEASIBLE
            } else {
                // No further job inside the window, or the next one released
                // at some legal instant.
                (release + inst.period..horizon)
                    .map(|next| place(inst, 0, next, next, horizon, memo, false))
                    .fold(0, i64::max)
            };
            if rest > INFEASIBLE {
                best = best.max(e.min(horizon - s) + rest);
            }
        }
    }
    if !pinned {
        memo.insert(key, best);
    }
    best
}

fn criterion_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut checked = 0;
    let mut mismatches = Vec::new();
    for i in 0..500 {
        let inst = Instance::random(&mut rng);
        let task = inst.task();
        let horizon = rng.gen_range(1..=30);
        for h in 0..inst.exec.len() {
            let want = brute_workload(&inst, h, horizon);
            let got = task.workload(h, us(horizon));
            checked += 1;
            if got != us(want) {
                mismatches.push(format!("instance {i} h={h} H={horizon}: oracle {want}, bound {got:?}"));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    for m in mismatches.iter().take(5) {
        println!("    {m}");
    }
    outcome(
        mismatches.is_empty() && secs < 60.0,
        format!("500 instances, {checked} (instance, start) cases, {} mismatches, {secs:.1}s", mismatches.len()),
    )
}

// ---------------------------------------------------------------------------
// Sweeps.

struct Sweeps {
    default: Vec<SweepRow>,
    ratio: Vec<SweepRow>,
    sms: Vec<SweepRow>,
}

fn sweep(dimension: Dimension, values: &[&str], grid: &[&str], models: &[MemModel]) -> Vec<SweepRow> {
    let cfg = SweepConfig {
        base: GeneratorParams::default(),
        dimension,
        values: values.iter().map(|s| s.to_string()).collect(),
        utilizations: grid.iter().map(|s| s.to_string()).collect(),
        tasksets_per_point: PER_POINT,
        methods: Method::ALL.to_vec(),
        mem_models: models.to_vec(),
    };
    acceptance_sweep(&cfg, SEED).expect("sweep config")
}

fn acceptance(rows: &[SweepRow], value: &str, model: MemModel, method: Method, u: Rational) -> f64 {
    rows.iter()
        .find(|r| r.value == value && r.mem_model == model && r.method == method && r.utilization == u)
        .expect("row present")
        .acceptance()
}

fn utilizations(rows: &[SweepRow]) -> Vec<Rational> {
    let mut us: Vec<Rational> = rows.iter().map(|r| r.utilization).collect();
    us.sort();
    us.dedup();
    us
}

fn print_table(rows: &[SweepRow], value: &str, model: MemModel) {
    for u in utilizations(rows) {
        let a: Vec<String> =
            Method::ALL.iter().map(|&m| format!("{}={:.2}", m.name(), acceptance(rows, value, model, m, u))).collect();
        println!("    U={:<5} {}", rtgpu::time::format_rational(&u), a.join(" "));
    }
}

fn criterion_dominance(s: &Sweeps) -> Outcome {
    println!("    default parameters, two copies:");
    print_table(&s.default, "", MemModel::TwoCopy);
    let mut bad = Vec::new();
    for u in utilizations(&s.default) {
        let [r, ss, bw] = Method::ALL.map(|m| acceptance(&s.default, "", MemModel::TwoCopy, m, u));
        if !(r >= ss && ss >= bw) {
            bad.push(format!("U={}", rtgpu::time::format_rational(&u)));
        }
    }
    outcome(
        bad.is_empty(),
        format!("{} points x {PER_POINT} tasksets, order violated at [{}]", DEFAULT_GRID.len(), bad.join(", ")),
    )
}

fn criterion_length_ratio(s: &Sweeps) -> Outcome {
    println!("    1:8, two copies:");
    print_table(&s.ratio, "1:8", MemModel::TwoCopy);
    let at = |m, u| acceptance(&s.ratio, "1:8", MemModel::TwoCopy, m, u);
    let high: Vec<Rational> = utilizations(&s.ratio).into_iter().filter(|&u| at(Method::Rtgpu, u) >= 0.9).collect();
    let (Some(&first), Some(&edge)) = (high.first(), high.last()) else {
        return outcome(false, "RTGPU never reaches 0.9");
    };
    let (r, bw) = (at(Method::Rtgpu, edge), at(Method::BusyWaiting, edge));
    outcome(
        bw <= 0.1 && r - bw >= 0.5,
        format!(
            "edge of RTGPU >= 0.9 at U={}: rtgpu {r:.2}, busywait {bw:.2}, gap {:.2} (lowest grid point U={}: busywait {:.2})",
            rtgpu::time::format_rational(&edge),
            r - bw,
            rtgpu::time::format_rational(&first),
            at(Method::BusyWaiting, first)
        ),
    )
}

fn criterion_copies(s: &Sweeps) -> Outcome {
    let mut worse = Vec::new();
    let mut best_gain: f64 = 0.0;
    for (rows, value) in [(&s.default, ""), (&s.ratio, "1:8")] {
        for u in utilizations(rows) {
            for m in Method::ALL {
                let one = acceptance(rows, value, MemModel::OneCopy, m, u);
                let two = acceptance(rows, value, MemModel::TwoCopy, m, u);
                if one < two {
                    worse.push(format!("{value}/{}/U={}", m.name(), rtgpu::time::format_rational(&u)));
                }
                if value == "1:8" {
                    best_gain = best_gain.max(one - two);
                }
            }
        }
    }
    println!("    1:8, one copy:");
    print_table(&s.ratio, "1:8", MemModel::OneCopy);
    outcome(
        worse.is_empty() && best_gain > 0.05,
        format!("one copy below two copies at [{}]; largest 1:8 gain {best_gain:.2}", worse.join(", ")),
    )
}

fn criterion_sms(s: &Sweeps) -> Outcome {
    let mut bad = Vec::new();
    for u in utilizations(&s.default) {
        for m in Method::ALL {
            let a5 = acceptance(&s.sms, "5", MemModel::TwoCopy, m, u);
            let a8 = acceptance(&s.sms, "8", MemModel::TwoCopy, m, u);
            let a10 = acceptance(&s.default, "", MemModel::TwoCopy, m, u);
            if !(a5 <= a8 && a8 <= a10) {
                bad.push(format!("{}/U={}", m.name(), rtgpu::time::format_rational(&u)));
            }
        }
    }
    println!("    5 SMs, two copies:");
    print_table(&s.sms, "5", MemModel::TwoCopy);
    outcome(bad.is_empty(), format!("GN 5/8/10 over {} points, decreasing at [{}]", DEFAULT_GRID.len(), bad.join(", ")))
}

// ---------------------------------------------------------------------------

fn criterion_simulation() -> Outcome {
    let start = Instant::now();
    let mut accepted: Vec<(u64, TaskSet, SmAllocation, rtgpu::AnalysisReport)> = Vec::new();
    let mut seed = 0u64;
    while accepted.len() < 200 {
        let batch: Vec<_> = (seed..seed + 64)
            .into_par_iter()
            .filter_map(|s| {
                let u = Rational::new(1 + (s % 12) as i128, 10);
                let p = GeneratorParams {
                    utilization: u,
                    n_tasks: 2 + (s % 4) as usize,
                    n_subtasks: 1 + (s % 5) as usize,
                    mem_model: if s % 3 == 0 { MemModel::OneCopy } else { MemModel::TwoCopy },
                    lo_frac: Rational::new((s % 3) as i128, 2),
                    ..GeneratorParams::default()
                };
                let ts = generate_taskset(&p, s).ok()?.taskset;
                let report = analyze_rtgpu(&ts);
                report.schedulable.then(|| (s, ts, report.allocation.clone().unwrap(), report))
            })
            .collect();
        accepted.extend(batch);
        seed += 64;
    }
    accepted.truncate(200);
    let results: Vec<(usize, usize, usize)> = accepted
        .par_iter()
        .map(|(s, ts, alloc, report)| {
            let cfg = SimConfig::new(ts, *s, LengthPolicy::WorstCase);
            let trace = simulate(ts, alloc, &cfg).expect("simulation runs");
            (trace.jobs.len(), trace.deadline_misses(), check_against_analysis(&trace, report).len())
        })
        .collect();
    let jobs: usize = results.iter().map(|r| r.0).sum();
    let misses: usize = results.iter().map(|r| r.1).sum();
    let violations: usize = results.iter().map(|r| r.2).sum();
    outcome(
        misses == 0 && violations == 0,
        format!(
            "200 accepted tasksets, {jobs} jobs, {misses} deadline misses, {violations} bound violations, {:.1}s",
            start.elapsed().as_secs_f64()
        ),
    )
}

fn criterion_kernel_model() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 7);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let hi = rng.gen_range(1..=1_000_000u64);
        let lo = rng.gen_range(0..=hi);
        let overhead = rng.gen_range(0..=lo);
        let gn = rng.gen_range(1..=40u32);
        let g = GpuKernelModel {
            work: ExecBounds::new(lo, hi),
            critical_path_overhead: Micros(overhead),
            interleave_ratio: Rational::from_integer(1),
        };
        let b = gpu_response_bounds(&g, 2 * gn).expect("valid kernel");
        let want_hi = kernel_time(us(hi as i64), us(overhead as i64), 2 * gn).unwrap();
        let want_lo = kernel_time(us(lo as i64), Duration::zero(), 2 * gn).unwrap();
        if b.hi != want_hi || b.lo != want_lo {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("1000 kernels, {mismatches} mismatches"))
}

fn gpu_set(alphas: &[Rational], sms: u32) -> TaskSet {
    TaskSet {
        mem_model: MemModel::TwoCopy,
        platform: PlatformConfig { physical_sms: sms, launch_overhead_frac: Rational::new(12, 100) },
        tasks: alphas
            .iter()
            .enumerate()
            .map(|(i, &a)| TaskSpec {
                id: format!("t{i}"),
                priority: i as u32 + 1,
                deadline: Micros(1000),
                period: Micros(1000),
                cpu_segments: vec![ExecBounds::exact(1); 2],
                mem_segments: vec![ExecBounds::exact(1); 2],
                gpu_segments: vec![GpuKernelModel {
                    work: ExecBounds::exact(100),
                    critical_path_overhead: Micros(0),
                    interleave_ratio: a,
                }],
            })
            .collect(),
    }
}

fn criterion_throughput() -> Outcome {
    let alphas: Vec<Rational> =
        [(145, 100), (17, 10), (17, 10), (18, 10), (15, 10)].iter().map(|&(n, d)| Rational::new(n, d)).collect();
    let ts = gpu_set(&alphas, 10);
    let alloc = SmAllocation::from_physical(&ts, &[2; 5]);
    let eta = throughput_improvement(&ts, &alloc, ThroughputScope::UsedSms).unwrap();
    let example = eta == Rational::new(5221, 22185);

    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 8);
    let mut out_of_range = 0;
    let cases = 2000;
    for _ in 0..cases {
        let n = rng.gen_range(1..=8);
        let alphas: Vec<Rational> = (0..n).map(|_| Rational::new(rng.gen_range(1000..=2000), 1000)).collect();
        let counts: Vec<u32> = (0..n).map(|_| rng.gen_range(1..=4)).collect();
        let sms = counts.iter().sum::<u32>() + rng.gen_range(0..=6);
        let ts = gpu_set(&alphas, sms);
        let alloc = SmAllocation::from_physical(&ts, &counts);
        for scope in [ThroughputScope::WholeGpu, ThroughputScope::UsedSms] {
            let eta = throughput_improvement(&ts, &alloc, scope).unwrap();
            if eta < Rational::from_integer(0) || eta > Rational::from_integer(1) {
                out_of_range += 1;
            }
        }
    }
    outcome(
        example && out_of_range == 0,
        format!(
            "worked example {} (expected 5221/22185), {out_of_range} of {} values outside [0, 1]",
            rtgpu::time::format_rational(&eta),
            2 * cases
        ),
    )
}

fn criterion_determinism() -> Outcome {
    let dir = tempfile::TempDir::new().unwrap();
    let cfg = r#"{
        "dimension": "length_ratio",
        "values": ["2:1", "1:8"],
        "utilizations": ["0.2", "0.6", "1.2"],
        "tasksets_per_point": 10,
        "mem_models": ["two_copy", "one_copy"]
    }"#;
    std::fs::write(dir.path().join("cfg.json"), cfg).unwrap();
    let run = |out: &str| {
        let status = Command::new(env!("CARGO_BIN_EXE_rtgpu"))
            .current_dir(dir.path())
            .args(["sweep", "--config", "cfg.json", "--seed", "77", "--out", out])
            .output()
            .expect("spawn rtgpu");
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        std::fs::read(dir.path().join(out)).unwrap()
    };
    let a = run("a.csv");
    let b = run("b.csv");
    let rows = a.iter().filter(|&&c| c == b'\n').count();
    outcome(a == b && rows == 1 + 2 * 2 * 3 * 3, format!("two runs, {} bytes, {} lines, identical: {}", a.len(), rows, a == b))
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    results.push(("1 workload oracle equivalence", criterion_oracle()));

    let start = Instant::now();
    let sweeps = Sweeps {
        default: sweep(Dimension::None, &[], &DEFAULT_GRID, &[MemModel::TwoCopy, MemModel::OneCopy]),
        ratio: sweep(Dimension::LengthRatio, &["1:8"], &RATIO_GRID, &[MemModel::TwoCopy, MemModel::OneCopy]),
        sms: sweep(Dimension::Sms, &["5", "8"], &DEFAULT_GRID, &[MemModel::TwoCopy]),
    };
    println!("    sweeps finished in {:.1}s", start.elapsed().as_secs_f64());
    results.push(("2 method dominance", criterion_dominance(&sweeps)));
    results.push(("3 suspension-length sensitivity", criterion_length_ratio(&sweeps)));
    results.push(("4 memory-copy bottleneck", criterion_copies(&sweeps)));
    results.push(("5 SM monotonicity", criterion_sms(&sweeps)));
    results.push(("6 simulator soundness", criterion_simulation()));
    results.push(("7 kernel model consistency", criterion_kernel_model()));
    results.push(("8 throughput formulas", criterion_throughput()));
    results.push(("9 sweep determinism", criterion_determinism()));

    for (name, o) in &results {
        println!("{} criterion {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    let failed = results.iter().filter(|(_, o)| !o.pass).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
