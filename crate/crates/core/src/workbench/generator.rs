//! Random tasksets for acceptance-ratio experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{max_interleave_ratio, ExecBounds, GpuKernelModel, MemModel, PlatformConfig, TaskSet, TaskSpec};
use crate::time::{rational_str, Micros, Rational};

/// Inclusive range of segment upper bounds, in microseconds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Range {
    pub lo_us: u64,
    pub hi_us: u64,
}

impl Range {
    pub const fn new(lo_us: u64, hi_us: u64) -> Self {
        Range { lo_us, hi_us }
    }

    /// Both ends multiplied by `factor`, rounded down, at least 1us.
    pub fn scaled(self, factor: Rational) -> Self {
        let f = |v: u64| (Rational::from_integer(v as i128) * factor).floor().to_integer().max(1) as u64;
        Range { lo_us: f(self.lo_us), hi_us: f(self.hi_us) }
    }
}

fn default_ratios() -> Vec<Rational> {
    ["1.45", "1.7", "1.7", "1.8"].iter().map(|s| crate::time::parse_rational(s).unwrap()).collect()
}

fn one() -> Rational {
    Rational::from_integer(1)
}

mod rational_list {
    use super::Rational;
    use crate::time::{format_rational, parse_rational};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[Rational], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(format_rational))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Rational>, D::Error> {
        Vec::<String>::deserialize(d)?
            .iter()
            .map(|s| parse_rational(s).map_err(serde::de::Error::custom))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorParams {
    pub n_tasks: usize,
    /// CPU segments per task; 1 gives pure-CPU tasks.
    pub n_subtasks: usize,
    pub cpu_range: Range,
    pub mem_range: Range,
    /// Single-SM kernel work.
    pub gpu_range: Range,
    #[serde(with = "rational_str")]
    pub utilization: Rational,
    pub mem_model: MemModel,
    pub physical_sms: u32,
    #[serde(with = "rational_str")]
    pub launch_overhead_frac: Rational,
    /// Lower bound of every segment as a fraction of its upper bound.
    #[serde(with = "rational_str")]
    pub lo_frac: Rational,
    /// Kernel interleave ratios are drawn uniformly from this list.
    #[serde(with = "rational_list")]
    pub interleave_ratios: Vec<Rational>,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        GeneratorParams {
            n_tasks: 5,
            n_subtasks: 5,
            cpu_range: Range::new(1_000, 20_000),
            mem_range: Range::new(1_000, 5_000),
            gpu_range: Range::new(1_000, 20_000),
            utilization: one(),
            mem_model: MemModel::TwoCopy,
            physical_sms: 10,
            launch_overhead_frac: Rational::new(12, 100),
            lo_frac: one(),
            interleave_ratios: default_ratios(),
        }
    }
}

impl GeneratorParams {
    /// Scale the copy and kernel ranges so the computation:suspension
    /// range ratio becomes `computation:suspension` relative to the CPU range.
    pub fn with_length_ratio(mut self, computation: u32, suspension: u32) -> Self {
        let f = Rational::new(suspension as i128, computation as i128);
        self.mem_range = self.mem_range.scaled(f);
        self.gpu_range = self.gpu_range.scaled(f);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GenerateError {
    #[error("target utilization must be positive")]
    NonPositiveUtilization,
    #[error("{0} range has lo > hi or a zero upper end")]
    BadRange(&'static str),
    #[error("a taskset needs at least one task with at least one subtask")]
    Empty,
    #[error("lower-bound fraction must lie in [0, 1]")]
    BadLoFrac,
    #[error("interleave ratios must be non-empty and lie in [1, 1.8]")]
    BadInterleave,
    #[error("launch overhead fraction must lie in [0, 1)")]
    BadOverhead,
    #[error("at least one physical SM is needed")]
    NoSms,
}

/// A generated taskset and the exact per-task utilizations it was built from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Generated {
    pub taskset: TaskSet,
    /// In the order of `taskset.tasks`.
    pub utilizations: Vec<Rational>,
}

fn check(p: &GeneratorParams) -> Result<(), GenerateError> {
    if p.utilization <= Rational::from_integer(0) {
        return Err(GenerateError::NonPositiveUtilization);
    }
    for (name, r) in [("cpu", p.cpu_range), ("mem", p.mem_range), ("gpu", p.gpu_range)] {
        if r.lo_us > r.hi_us || r.hi_us == 0 {
            return Err(GenerateError::BadRange(name));
        }
    }
    if p.n_tasks == 0 || p.n_subtasks == 0 {
        return Err(GenerateError::Empty);
    }
    if p.lo_frac < Rational::from_integer(0) || p.lo_frac > one() {
        return Err(GenerateError::BadLoFrac);
    }
    if p.interleave_ratios.is_empty() || p.interleave_ratios.iter().any(|a| *a < one() || *a > max_interleave_ratio()) {
        return Err(GenerateError::BadInterleave);
    }
    if p.launch_overhead_frac < Rational::from_integer(0) || p.launch_overhead_frac >= one() {
        return Err(GenerateError::BadOverhead);
    }
    if p.physical_sms == 0 {
        return Err(GenerateError::NoSms);
    }
    Ok(())
}

fn floor_frac(v: u64, f: Rational) -> u64 {
    (Rational::from_integer(v as i128) * f).floor().to_integer() as u64
}

/// Draw one taskset. Deterministic in `(params, seed)`.
///
/// The random stream does not depend on the memory model: copies are always
/// drawn in host-to-device/device-to-host pairs, and the one-copy variant
/// merges each pair, so both variants share every other parameter and the
/// same total copy length.
pub fn generate_taskset(params: &GeneratorParams, seed: u64) -> Result<Generated, GenerateError> {
    check(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    generate_with(params, &mut rng)
}

pub(crate) fn generate_with(params: &GeneratorParams, rng: &mut ChaCha8Rng) -> Result<Generated, GenerateError> {
    check(params)?;
    let n = params.n_tasks;
    let m = params.n_subtasks;
    let weights: Vec<i128> = (0..n).map(|_| rng.gen_range(1..=1_000_000)).collect();
    let total: i128 = weights.iter().sum();
    let utils: Vec<Rational> = weights.iter().map(|&w| params.utilization * Rational::new(w, total)).collect();

    let draw = |rng: &mut ChaCha8Rng, r: Range| {
        let hi = rng.gen_range(r.lo_us..=r.hi_us);
        ExecBounds::new(floor_frac(hi, params.lo_frac), hi)
    };
    let mut tasks: Vec<(TaskSpec, Rational)> = Vec::with_capacity(n);
    for (i, &u) in utils.iter().enumerate() {
        let cpu: Vec<ExecBounds> = (0..m).map(|_| draw(rng, params.cpu_range)).collect();
        let pairs: Vec<ExecBounds> = (0..2 * (m - 1)).map(|_| draw(rng, params.mem_range)).collect();
        let gpu: Vec<GpuKernelModel> = (0..m - 1)
            .map(|_| {
                let work = draw(rng, params.gpu_range);
                let alpha = params.interleave_ratios[rng.gen_range(0..params.interleave_ratios.len())];
                let overhead = floor_frac(work.hi.0, params.launch_overhead_frac).min(work.lo.0);
                GpuKernelModel { work, critical_path_overhead: Micros(overhead), interleave_ratio: alpha }
            })
            .collect();
        let mem = match params.mem_model {
            MemModel::TwoCopy => pairs,
            MemModel::OneCopy => pairs
                .chunks(2)
                .map(|p| ExecBounds::new(p[0].lo.0 + p[1].lo.0, p[0].hi.0 + p[1].hi.0))
                .collect(),
        };
        let c: u64 = cpu.iter().chain(&mem).map(|b| b.hi.0).sum::<u64>() + gpu.iter().map(|g| g.work.hi.0).sum::<u64>();
        let d = (Rational::from_integer(c as i128) / u).floor().to_integer().max(1) as u64;
        let spec = TaskSpec {
            id: format!("t{i}"),
            priority: 0,
            deadline: Micros(d),
            period: Micros(d),
            cpu_segments: cpu,
            mem_segments: mem,
            gpu_segments: gpu,
        };
        tasks.push((spec, u));
    }
    tasks.sort_by_key(|(t, _)| t.deadline);
    let (mut specs, utilizations): (Vec<TaskSpec>, Vec<Rational>) = tasks.into_iter().unzip();
    for (p, t) in specs.iter_mut().enumerate() {
        t.priority = p as u32 + 1;
    }
    Ok(Generated {
        taskset: TaskSet {
            mem_model: params.mem_model,
            platform: PlatformConfig {
                physical_sms: params.physical_sms,
                launch_overhead_frac: params.launch_overhead_frac,
            },
            tasks: specs,
        },
        utilizations,
    })
}
