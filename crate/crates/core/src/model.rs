//! Task model shared by the analyses, the generator and the simulator.
//!
//! A task is a chain `CL^0, ML^0, G^0, ML^1, CL^1, ..., CL^{m-1}` of CPU
//! segments, bus copies and GPU kernels (two copies around each kernel), or
//! `CL^0, ML^0, G^0, CL^1, ...` when the two copies are merged into a single
//! copy placed before the kernel.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::time::{rational_str, Duration, Micros, Rational};

/// Largest interleave ratio observed for any kernel class.
pub fn max_interleave_ratio() -> Rational {
    Rational::new(9, 5)
}

/// Lower and upper bound on a segment length, in whole microseconds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecBounds {
    #[serde(rename = "lo_us")]
    pub lo: Micros,
    #[serde(rename = "hi_us")]
    pub hi: Micros,
}

impl ExecBounds {
    pub fn new(lo: u64, hi: u64) -> Self {
        ExecBounds { lo: Micros(lo), hi: Micros(hi) }
    }

    pub fn exact(v: u64) -> Self {
        ExecBounds::new(v, v)
    }

    pub fn lo(&self) -> Duration {
        self.lo.to_duration()
    }

    pub fn hi(&self) -> Duration {
        self.hi.to_duration()
    }
}

/// Exact lower/upper bounds on a derived (possibly fractional) duration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: Duration,
    pub hi: Duration,
}

impl Interval {
    pub fn new(lo: Duration, hi: Duration) -> Self {
        Interval { lo, hi }
    }
}

impl From<ExecBounds> for Interval {
    fn from(b: ExecBounds) -> Self {
        Interval { lo: b.lo(), hi: b.hi() }
    }
}

/// One GPU segment: single-SM work bounds, critical-path (launch) overhead
/// and the worst-case slowdown when two blocks interleave on one SM.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpuKernelModel {
    pub work: ExecBounds,
    #[serde(rename = "critical_path_overhead_us")]
    pub critical_path_overhead: Micros,
    #[serde(with = "rational_str")]
    pub interleave_ratio: Rational,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemModel {
    TwoCopy,
    OneCopy,
}

impl MemModel {
    /// Number of bus copies of a task with `m` CPU segments.
    pub fn copies(self, m: usize) -> usize {
        match (self, m) {
            (_, 0) => 0,
            (MemModel::TwoCopy, m) => 2 * m - 2,
            (MemModel::OneCopy, m) => m - 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MemModel::TwoCopy => "two_copy",
            MemModel::OneCopy => "one_copy",
        }
    }
}

impl fmt::Display for MemModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlatformConfig {
    /// Physical SMs; the platform exposes twice as many virtual SMs.
    pub physical_sms: u32,
    /// Kernel launch overhead as a fraction of single-SM work.
    #[serde(with = "rational_str")]
    pub launch_overhead_frac: Rational,
}

impl PlatformConfig {
    pub fn virtual_sms(&self) -> u32 {
        2 * self.physical_sms
    }
}

impl Default for PlatformConfig {
    fn default() -> Self {
        PlatformConfig { physical_sms: 10, launch_overhead_frac: Rational::new(12, 100) }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub id: String,
    /// Unique per taskset; smaller is higher priority.
    pub priority: u32,
    #[serde(rename = "deadline_us")]
    pub deadline: Micros,
    #[serde(rename = "period_us")]
    pub period: Micros,
    pub cpu_segments: Vec<ExecBounds>,
    #[serde(default)]
    pub mem_segments: Vec<ExecBounds>,
    #[serde(default)]
    pub gpu_segments: Vec<GpuKernelModel>,
}

impl TaskSpec {
    /// Number of CPU segments (`m_i`).
    pub fn m(&self) -> usize {
        self.cpu_segments.len()
    }

    pub fn uses_gpu(&self) -> bool {
        !self.gpu_segments.is_empty()
    }

    pub fn deadline(&self) -> Duration {
        self.deadline.to_duration()
    }

    pub fn period(&self) -> Duration {
        self.period.to_duration()
    }

    /// Sum of CPU, copy and single-SM GPU upper bounds.
    pub fn total_upper_work(&self) -> Micros {
        let cpu: Micros = self.cpu_segments.iter().map(|b| b.hi).sum();
        let mem: Micros = self.mem_segments.iter().map(|b| b.hi).sum();
        let gpu: Micros = self.gpu_segments.iter().map(|g| g.work.hi).sum();
        cpu + mem + gpu
    }

    /// Largest interleave ratio over the task's kernels (1 if none).
    pub fn task_interleave_ratio(&self) -> Rational {
        self.gpu_segments
            .iter()
            .map(|g| g.interleave_ratio)
            .max()
            .unwrap_or_else(Rational::one)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSet {
    pub mem_model: MemModel,
    pub platform: PlatformConfig,
    pub tasks: Vec<TaskSpec>,
}

impl TaskSet {
    pub fn empty(mem_model: MemModel, platform: PlatformConfig) -> Self {
        TaskSet { mem_model, platform, tasks: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn task(&self, id: &str) -> Option<&TaskSpec> {
        self.tasks.iter().find(|t| t.id == id)
    }

    /// Positions of the tasks that have GPU segments, in list order.
    pub fn gpu_task_positions(&self) -> Vec<usize> {
        self.tasks
            .iter()
            .enumerate()
            .filter(|(_, t)| t.uses_gpu())
            .map(|(i, _)| i)
            .collect()
    }
}

/// Dedicated virtual SMs (always `2 * GN_i`) per task.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SmAllocation {
    pub per_task_virtual_sms: IndexMap<String, u32>,
}

impl SmAllocation {
    /// Build from physical SM counts given for GPU tasks in list order;
    /// pure-CPU tasks get zero.
    pub fn from_physical(ts: &TaskSet, physical: &[u32]) -> Self {
        let mut counts = physical.iter();
        let per_task_virtual_sms = ts
            .tasks
            .iter()
            .map(|t| {
                let v = if t.uses_gpu() { 2 * *counts.next().expect("one count per GPU task") } else { 0 };
                (t.id.clone(), v)
            })
            .collect();
        SmAllocation { per_task_virtual_sms }
    }

    pub fn virtual_sms(&self, id: &str) -> u32 {
        self.per_task_virtual_sms.get(id).copied().unwrap_or(0)
    }

    pub fn physical_sms(&self, id: &str) -> u32 {
        self.virtual_sms(id) / 2
    }

    pub fn total_physical(&self) -> u32 {
        self.per_task_virtual_sms.values().map(|v| v / 2).sum()
    }

    /// Physical counts of the GPU tasks, in taskset order.
    pub fn physical_counts(&self, ts: &TaskSet) -> Vec<u32> {
        ts.tasks.iter().filter(|t| t.uses_gpu()).map(|t| self.physical_sms(&t.id)).collect()
    }

    /// Problems that make this allocation unusable for `ts`.
    pub fn check(&self, ts: &TaskSet) -> Vec<Violation> {
        let mut out = Vec::new();
        for t in &ts.tasks {
            let v = self.per_task_virtual_sms.get(&t.id).copied();
            match (t.uses_gpu(), v) {
                (true, None) => out.push(Violation::task(&t.id, "allocation", "GPU task has no SM allocation")),
                (true, Some(v)) if v < 2 || v % 2 != 0 => out.push(Violation::task(
                    &t.id,
                    "allocation",
                    format!("virtual SM count must be even and >= 2, found {v}"),
                )),
                (false, Some(v)) if v != 0 => out.push(Violation::task(
                    &t.id,
                    "allocation",
                    format!("pure-CPU task must have 0 virtual SMs, found {v}"),
                )),
                _ => {}
            }
        }
        for id in self.per_task_virtual_sms.keys() {
            if ts.task(id).is_none() {
                out.push(Violation::task(id, "allocation", "allocation names an unknown task"));
            }
        }
        if self.total_physical() > ts.platform.physical_sms {
            out.push(Violation::set(
                "allocation",
                format!(
                    "allocates {} physical SMs but the platform has {}",
                    self.total_physical(),
                    ts.platform.physical_sms
                ),
            ));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "rtgpu")]
    Rtgpu,
    #[serde(rename = "selfsusp")]
    SelfSuspension,
    #[serde(rename = "busywait")]
    BusyWaiting,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Rtgpu, Method::SelfSuspension, Method::BusyWaiting];

    pub fn name(self) -> &'static str {
        match self {
            Method::Rtgpu => "rtgpu",
            Method::SelfSuspension => "selfsusp",
            Method::BusyWaiting => "busywait",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rtgpu" => Ok(Method::Rtgpu),
            "selfsusp" => Ok(Method::SelfSuspension),
            "busywait" => Ok(Method::BusyWaiting),
            other => Err(format!("unknown method `{other}` (expected rtgpu, selfsusp or busywait)")),
        }
    }
}

/// Per-task bounds. `None` marks a bound that exceeded the task's deadline.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskBounds {
    pub gpu_r: Vec<Interval>,
    pub mem_r_up: Vec<Option<Duration>>,
    pub cpu_r_up: Vec<Option<Duration>>,
    pub end_to_end_up: Option<Duration>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub method: Method,
    pub schedulable: bool,
    pub allocation: Option<SmAllocation>,
    pub per_task: IndexMap<String, TaskBounds>,
}

impl AnalysisReport {
    pub fn unschedulable(method: Method) -> Self {
        AnalysisReport { method, schedulable: false, allocation: None, per_task: IndexMap::new() }
    }
}

/// One broken invariant.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub task: Option<String>,
    pub field: String,
    pub rule: String,
}

impl Violation {
    pub fn task(id: &str, field: impl Into<String>, rule: impl Into<String>) -> Self {
        Violation { task: Some(id.to_string()), field: field.into(), rule: rule.into() }
    }

    pub fn set(field: impl Into<String>, rule: impl Into<String>) -> Self {
        Violation { task: None, field: field.into(), rule: rule.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.task {
            Some(t) => write!(f, "task {t}: {}: {}", self.field, self.rule),
            None => write!(f, "taskset: {}: {}", self.field, self.rule),
        }
    }
}

fn check_bounds(out: &mut Vec<Violation>, id: &str, field: String, b: &ExecBounds) {
    if b.lo > b.hi {
        out.push(Violation::task(id, field, format!("lower bound {} exceeds upper bound {}", b.lo, b.hi)));
    }
}

/// Check every taskset invariant. An empty result means the set is well formed.
pub fn validate_taskset(ts: &TaskSet) -> Vec<Violation> {
    let mut out = Vec::new();
    let p = &ts.platform;
    if p.physical_sms < 1 {
        out.push(Violation::set("platform.physical_sms", "must be at least 1"));
    }
    if p.launch_overhead_frac < Rational::zero() || p.launch_overhead_frac >= Rational::one() {
        out.push(Violation::set("platform.launch_overhead_frac", "must lie in [0, 1)"));
    }

    let mut ids = HashSet::new();
    for t in &ts.tasks {
        let id = t.id.as_str();
        if !ids.insert(id) {
            out.push(Violation::task(id, "id", "duplicate task id"));
        }
        let m = t.m();
        if m == 0 {
            out.push(Violation::task(id, "cpu_segments", "a task needs at least one CPU segment"));
        }
        if t.period.0 == 0 {
            out.push(Violation::task(id, "period_us", "period must be positive"));
        }
        if t.deadline > t.period {
            out.push(Violation::task(id, "deadline_us", "deadline exceeds period (constrained deadlines only)"));
        }
        let want_mem = ts.mem_model.copies(m);
        if m > 0 && t.mem_segments.len() != want_mem {
            let rule = match ts.mem_model {
                MemModel::TwoCopy => "mem segment count != 2m-2",
                MemModel::OneCopy => "mem segment count != m-1",
            };
            out.push(Violation::task(
                id,
                "mem_segments",
                format!("{rule} (m={m}, found {})", t.mem_segments.len()),
            ));
        }
        if m > 0 && t.gpu_segments.len() != m - 1 {
            out.push(Violation::task(
                id,
                "gpu_segments",
                format!("gpu segment count != m-1 (m={m}, found {})", t.gpu_segments.len()),
            ));
        }
        for (j, b) in t.cpu_segments.iter().enumerate() {
            check_bounds(&mut out, id, format!("cpu_segments[{j}]"), b);
        }
        for (j, b) in t.mem_segments.iter().enumerate() {
            check_bounds(&mut out, id, format!("mem_segments[{j}]"), b);
        }
        for (j, g) in t.gpu_segments.iter().enumerate() {
            check_bounds(&mut out, id, format!("gpu_segments[{j}].work"), &g.work);
            if g.interleave_ratio < Rational::one() || g.interleave_ratio > max_interleave_ratio() {
                out.push(Violation::task(
                    id,
                    format!("gpu_segments[{j}].interleave_ratio"),
                    "interleave ratio must lie in [1.0, 1.8]",
                ));
            }
            if g.critical_path_overhead > g.work.lo {
                out.push(Violation::task(
                    id,
                    format!("gpu_segments[{j}].critical_path_overhead_us"),
                    "critical-path overhead exceeds minimum work",
                ));
            }
        }
    }

    let n = ts.tasks.len();
    let mut prios: Vec<u32> = ts.tasks.iter().map(|t| t.priority).collect();
    let ordered = prios.windows(2).all(|w| w[0] < w[1]);
    prios.sort_unstable();
    if prios.iter().enumerate().any(|(i, &p)| p as usize != i + 1) {
        out.push(Violation::set("priority", format!("priorities not a permutation of 1..{n}")));
    } else if !ordered {
        out.push(Violation::set("tasks", "tasks are not listed in priority order"));
    }
    out
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: field `{field}`: {message}")]
    Parse { path: PathBuf, line: usize, column: usize, field: String, message: String },
}

/// Parse a JSON document, reporting the failing field path and position.
pub fn parse_json<T: serde::de::DeserializeOwned>(text: &str, path: &Path) -> Result<T, ModelError> {
    let mut de = serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        ModelError::Parse {
            path: path.to_path_buf(),
            line: inner.line(),
            column: inner.column(),
            field,
            message: inner.to_string(),
        }
    })
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ModelError> {
    let text = fs::read_to_string(path).map_err(|source| ModelError::Io { path: path.to_path_buf(), source })?;
    parse_json(&text, path)
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), ModelError> {
    let mut text = serde_json::to_string_pretty(value).expect("model types always serialize");
    text.push('\n');
    fs::write(path, text).map_err(|source| ModelError::Io { path: path.to_path_buf(), source })
}

/// Read a taskset file. Structural invariants are checked separately by
/// [`validate_taskset`].
pub fn load_taskset(path: impl AsRef<Path>) -> Result<TaskSet, ModelError> {
    read_json(path.as_ref())
}

pub fn save_taskset(ts: &TaskSet, path: impl AsRef<Path>) -> Result<(), ModelError> {
    write_json(ts, path.as_ref())
}
