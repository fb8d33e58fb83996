//! Discrete-event simulation of one preemptive fixed-priority CPU, one
//! non-preemptive fixed-priority copy bus, and dedicated virtual SMs per task.
//!
//! Each job walks its stages in order: CPU segment, host-to-device copy,
//! kernel, (device-to-host copy,) next CPU segment. Only the oldest
//! unfinished job of a task is active; later jobs wait in a FIFO queue.

mod check;

use std::collections::VecDeque;
use std::fmt;
use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::gpu::{gpu_response_bounds, interleaved_upper, GpuError};
use crate::model::{validate_taskset, ExecBounds, MemModel, SmAllocation, TaskSet, Violation};
use crate::time::Duration;

pub use check::{check_against_analysis, check_trace_invariants, BoundViolation, ViolationKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthPolicy {
    /// Every segment takes its upper bound; kernels their interleaved upper bound.
    WorstCase,
    /// Integer-microsecond lengths drawn uniformly from each segment's bounds.
    UniformRandom,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReleasePolicy {
    /// Jobs at 0, T, 2T, ...
    #[default]
    Periodic,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimConfig {
    /// Jobs are released strictly before this instant.
    pub horizon: Duration,
    pub seed: u64,
    pub length_policy: LengthPolicy,
    pub release_policy: ReleasePolicy,
}

impl SimConfig {
    /// Horizon of 20 times the longest period.
    pub fn default_horizon(ts: &TaskSet) -> Duration {
        ts.tasks.iter().map(|t| t.period()).max().unwrap_or_default().times(20)
    }

    pub fn new(ts: &TaskSet, seed: u64, length_policy: LengthPolicy) -> Self {
        SimConfig {
            horizon: SimConfig::default_horizon(ts),
            seed,
            length_policy,
            release_policy: ReleasePolicy::Periodic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("invalid taskset: {}", join(.0))]
    InvalidTaskset(Vec<Violation>),
    #[error("invalid allocation: {}", join(.0))]
    InvalidAllocation(Vec<Violation>),
    #[error("simulation horizon must be positive")]
    NonPositiveHorizon,
    #[error(transparent)]
    Gpu(#[from] GpuError),
}

fn join(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Cpu,
    Mem,
    Gpu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SegmentRef {
    pub kind: SegmentKind,
    pub index: usize,
}

impl fmt::Display for SegmentRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let k = match self.kind {
            SegmentKind::Cpu => "cpu",
            SegmentKind::Mem => "mem",
            SegmentKind::Gpu => "gpu",
        };
        write!(f, "{k}[{}]", self.index)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Release,
    Start,
    Preempt,
    Resume,
    Finish,
    DeadlineMiss,
}

/// One line of the exported trace.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimEvent {
    pub time: Duration,
    pub task: String,
    pub job: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub segment: Option<SegmentRef>,
    pub action: Action,
}

/// Ready, first start, and finish of one segment instance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub task: String,
    pub job: u64,
    pub segment: SegmentRef,
    pub ready: Duration,
    pub start: Duration,
    pub finish: Duration,
}

impl SegmentRecord {
    pub fn response(&self) -> Duration {
        self.finish - self.ready
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resource {
    Cpu,
    Bus,
    /// The dedicated SMs of the named task.
    Gpu,
}

/// A maximal interval during which a segment held its resource.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BusySlice {
    pub resource: Resource,
    pub task: String,
    pub priority: u32,
    pub job: u64,
    pub segment: SegmentRef,
    pub start: Duration,
    pub end: Duration,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobRecord {
    pub task: String,
    pub job: u64,
    pub release: Duration,
    pub deadline: Duration,
    pub finish: Option<Duration>,
}

impl JobRecord {
    pub fn response(&self) -> Option<Duration> {
        self.finish.map(|f| f - self.release)
    }

    pub fn missed_deadline(&self) -> bool {
        self.finish.is_none_or(|f| f > self.deadline)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimTrace {
    pub horizon: Duration,
    pub events: Vec<SimEvent>,
    pub segments: Vec<SegmentRecord>,
    pub slices: Vec<BusySlice>,
    pub jobs: Vec<JobRecord>,
    /// Work still pending when the simulation stopped.
    pub truncated: Vec<String>,
}

impl SimTrace {
    pub fn deadline_misses(&self) -> usize {
        self.jobs.iter().filter(|j| j.missed_deadline()).count()
    }

    /// Largest observed end-to-end response of `task`.
    pub fn max_response(&self, task: &str) -> Option<Duration> {
        self.jobs.iter().filter(|j| j.task == task).filter_map(|j| j.response()).max()
    }

    /// Write the events as JSON lines.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }
}

#[derive(Debug, Clone)]
struct Stage {
    seg: SegmentRef,
    length: Duration,
}

#[derive(Debug, Clone)]
struct Job {
    index: u64,
    release: Duration,
    stages: Vec<Stage>,
    stage: usize,
    ready_at: Duration,
    started_at: Option<Duration>,
    /// CPU time left in the current stage.
    remaining: Duration,
    miss_reported: bool,
    record: usize,
}

impl Job {
    fn current(&self) -> &Stage {
        &self.stages[self.stage]
    }

    fn kind(&self) -> SegmentKind {
        self.current().seg.kind
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Busy {
    Idle,
    Running { task: usize, since: Duration },
}

struct Sampler {
    policy: LengthPolicy,
    rng: ChaCha8Rng,
}

impl Sampler {
    fn draw(&mut self, b: &ExecBounds) -> u64 {
        match self.policy {
            LengthPolicy::WorstCase => b.hi.0,
            LengthPolicy::UniformRandom => self.rng.gen_range(b.lo.0..=b.hi.0),
        }
    }
}

struct Sim<'a> {
    ts: &'a TaskSet,
    virtual_sms: Vec<u32>,
    gpu_upper: Vec<Vec<Duration>>,
    horizon: Duration,
    sampler: Sampler,
    queues: Vec<VecDeque<Job>>,
    next_release: Vec<i128>,
    cpu: Busy,
    bus: Busy,
    trace: SimTrace,
}

fn stage_order(model: MemModel, m: usize) -> Vec<SegmentRef> {
    let seg = |kind, index| SegmentRef { kind, index };
    let mut out = vec![seg(SegmentKind::Cpu, 0)];
    for j in 0..m - 1 {
        match model {
            MemModel::TwoCopy => {
                out.push(seg(SegmentKind::Mem, 2 * j));
                out.push(seg(SegmentKind::Gpu, j));
                out.push(seg(SegmentKind::Mem, 2 * j + 1));
            }
            MemModel::OneCopy => {
                out.push(seg(SegmentKind::Mem, j));
                out.push(seg(SegmentKind::Gpu, j));
            }
        }
        out.push(seg(SegmentKind::Cpu, j + 1));
    }
    out
}

impl<'a> Sim<'a> {
    fn event(&mut self, time: Duration, task: usize, job: u64, segment: Option<SegmentRef>, action: Action) {
        self.trace.events.push(SimEvent { time, task: self.ts.tasks[task].id.clone(), job, segment, action });
    }

    fn slice(&mut self, resource: Resource, task: usize, start: Duration, end: Duration) {
        let job = &self.queues[task][0];
        let t = &self.ts.tasks[task];
        self.trace.slices.push(BusySlice {
            resource,
            task: t.id.clone(),
            priority: t.priority,
            job: job.index,
            segment: job.current().seg,
            start,
            end,
        });
    }

    fn make_job(&mut self, i: usize, index: u64, release: Duration) -> Job {
        let t = &self.ts.tasks[i];
        let stages = stage_order(self.ts.mem_model, t.m())
            .into_iter()
            .map(|seg| {
                let length = match seg.kind {
                    SegmentKind::Cpu => Duration::from_micros(self.sampler.draw(&t.cpu_segments[seg.index]) as i128),
                    SegmentKind::Mem => Duration::from_micros(self.sampler.draw(&t.mem_segments[seg.index]) as i128),
                    SegmentKind::Gpu => match self.sampler.policy {
                        LengthPolicy::WorstCase => self.gpu_upper[i][seg.index],
                        LengthPolicy::UniformRandom => {
                            let g = &t.gpu_segments[seg.index];
                            let work = Duration::from_micros(self.sampler.draw(&g.work) as i128);
                            interleaved_upper(
                                work,
                                g.critical_path_overhead.to_duration(),
                                g.interleave_ratio,
                                self.virtual_sms[i],
                            )
                            .expect("validated kernel")
                        }
                    },
                };
                Stage { seg, length }
            })
            .collect::<Vec<_>>();
        let remaining = stages[0].length;
        Job {
            index,
            release,
            stages,
            stage: 0,
            ready_at: release,
            started_at: None,
            remaining,
            miss_reported: false,
            record: self.trace.jobs.len(),
        }
    }

    fn release(&mut self, now: Duration) -> bool {
        let mut changed = false;
        for i in 0..self.ts.len() {
            let period = self.ts.tasks[i].period();
            let at = period.times(self.next_release[i]);
            if at == now && at < self.horizon {
                let index = self.next_release[i] as u64;
                let job = self.make_job(i, index, now);
                self.next_release[i] += 1;
                self.event(now, i, index, None, Action::Release);
                debug_assert_eq!(job.record, self.trace.jobs.len());
                self.trace.jobs.push(JobRecord {
                    task: self.ts.tasks[i].id.clone(),
                    job: index,
                    release: now,
                    deadline: now + self.ts.tasks[i].deadline(),
                    finish: None,
                });
                self.queues[i].push_back(job);
                changed = true;
            }
        }
        changed
    }

    fn finish_stage(&mut self, i: usize, now: Duration) {
        let (index, seg, ready, start) = {
            let j = &self.queues[i][0];
            (j.index, j.current().seg, j.ready_at, j.started_at.expect("finished stage was started"))
        };
        self.event(now, i, index, Some(seg), Action::Finish);
        self.trace.segments.push(SegmentRecord {
            task: self.ts.tasks[i].id.clone(),
            job: index,
            segment: seg,
            ready,
            start,
            finish: now,
        });
        let job = &mut self.queues[i][0];
        job.stage += 1;
        if job.stage < job.stages.len() {
            job.ready_at = now;
            job.started_at = None;
            job.remaining = job.stages[job.stage].length;
            return;
        }
        let done = self.queues[i].pop_front().expect("active job");
        self.trace.jobs[done.record].finish = Some(now);
        if let Some(next) = self.queues[i].front_mut() {
            next.ready_at = now;
        }
    }

    fn complete(&mut self, now: Duration) -> bool {
        let mut changed = false;
        if let Busy::Running { task, since } = self.cpu {
            let job = &self.queues[task][0];
            if since + job.remaining == now {
                self.slice(Resource::Cpu, task, since, now);
                self.cpu = Busy::Idle;
                self.finish_stage(task, now);
                changed = true;
            }
        }
        if let Busy::Running { task, since } = self.bus {
            if since + self.queues[task][0].current().length == now {
                self.slice(Resource::Bus, task, since, now);
                self.bus = Busy::Idle;
                self.finish_stage(task, now);
                changed = true;
            }
        }
        for i in 0..self.ts.len() {
            let Some(job) = self.queues[i].front() else { continue };
            if job.kind() == SegmentKind::Gpu {
                if let Some(s) = job.started_at {
                    if s + job.current().length == now {
                        self.slice(Resource::Gpu, i, s, now);
                        self.finish_stage(i, now);
                        changed = true;
                    }
                }
            }
        }
        changed
    }

    fn waiting_for(&self, kind: SegmentKind) -> Option<usize> {
        (0..self.ts.len())
            .filter(|&i| {
                self.queues[i].front().is_some_and(|j| j.kind() == kind && (kind == SegmentKind::Cpu || j.started_at.is_none()))
            })
            .min_by_key(|&i| self.ts.tasks[i].priority)
    }

    fn dispatch(&mut self, now: Duration) -> bool {
        let mut changed = false;
        let pick = self.waiting_for(SegmentKind::Cpu);
        let running = match self.cpu {
            Busy::Running { task, .. } => Some(task),
            Busy::Idle => None,
        };
        if pick != running {
            if let Busy::Running { task, since } = self.cpu {
                self.slice(Resource::Cpu, task, since, now);
                let job = &mut self.queues[task][0];
                job.remaining -= now - since;
                let (index, seg) = (job.index, job.current().seg);
                self.event(now, task, index, Some(seg), Action::Preempt);
            }
            if let Some(p) = pick {
                let job = &mut self.queues[p][0];
                let action = if job.started_at.is_some() { Action::Resume } else { Action::Start };
                job.started_at.get_or_insert(now);
                let (index, seg) = (job.index, job.current().seg);
                self.event(now, p, index, Some(seg), action);
                self.cpu = Busy::Running { task: p, since: now };
            } else {
                self.cpu = Busy::Idle;
            }
            changed = true;
        }
        if self.bus == Busy::Idle {
            if let Some(p) = self.waiting_for(SegmentKind::Mem) {
                let job = &mut self.queues[p][0];
                job.started_at = Some(now);
                let (index, seg) = (job.index, job.current().seg);
                self.event(now, p, index, Some(seg), Action::Start);
                self.bus = Busy::Running { task: p, since: now };
                changed = true;
            }
        }
        for i in 0..self.ts.len() {
            let Some(job) = self.queues[i].front_mut() else { continue };
            if job.kind() == SegmentKind::Gpu && job.started_at.is_none() {
                job.started_at = Some(now);
                let (index, seg) = (job.index, job.current().seg);
                self.event(now, i, index, Some(seg), Action::Start);
                changed = true;
            }
        }
        changed
    }

    fn check_deadlines(&mut self, now: Duration) {
        for i in 0..self.ts.len() {
            let d = self.ts.tasks[i].deadline();
            let mut missed = vec![];
            for job in self.queues[i].iter_mut() {
                if !job.miss_reported && job.release + d <= now {
                    job.miss_reported = true;
                    missed.push(job.index);
                }
            }
            for index in missed {
                self.event(now, i, index, None, Action::DeadlineMiss);
            }
        }
    }

    fn next_time(&self, now: Duration) -> Option<Duration> {
        let mut cands = vec![];
        for (i, t) in self.ts.tasks.iter().enumerate() {
            let r = t.period().times(self.next_release[i]);
            if r < self.horizon {
                cands.push(r);
            }
            for job in &self.queues[i] {
                if !job.miss_reported {
                    cands.push(job.release + t.deadline());
                }
            }
            if let Some(job) = self.queues[i].front() {
                if let (SegmentKind::Gpu, Some(s)) = (job.kind(), job.started_at) {
                    cands.push(s + job.current().length);
                }
            }
        }
        if let Busy::Running { task, since } = self.cpu {
            cands.push(since + self.queues[task][0].remaining);
        }
        if let Busy::Running { task, since } = self.bus {
            cands.push(since + self.queues[task][0].current().length);
        }
        cands.into_iter().filter(|&c| c > now).min()
    }

    fn run(mut self) -> SimTrace {
        let cap = self.horizon + self.ts.tasks.iter().map(|t| t.period()).max().unwrap_or_default();
        let mut now = Duration::zero();
        loop {
            // Finishes, then releases, then dispatch, until nothing changes.
            loop {
                let a = self.complete(now);
                let b = self.release(now);
                let c = self.dispatch(now);
                if !(a || b || c) {
                    break;
                }
            }
            self.check_deadlines(now);
            match self.next_time(now) {
                Some(t) if t <= cap => now = t,
                _ => break,
            }
        }
        for (i, q) in self.queues.iter().enumerate() {
            for job in q {
                self.trace.truncated.push(format!(
                    "{} job {} unfinished at {}us (stage {} of {})",
                    self.ts.tasks[i].id,
                    job.index,
                    now,
                    job.stage,
                    job.stages.len()
                ));
            }
        }
        self.trace
    }
}

/// Simulate `ts` under `alloc`. Deterministic for a given configuration.
pub fn simulate(ts: &TaskSet, alloc: &SmAllocation, cfg: &SimConfig) -> Result<SimTrace, SimError> {
    let v = validate_taskset(ts);
    if !v.is_empty() {
        return Err(SimError::InvalidTaskset(v));
    }
    let v = alloc.check(ts);
    if !v.is_empty() {
        return Err(SimError::InvalidAllocation(v));
    }
    if cfg.horizon <= Duration::zero() {
        return Err(SimError::NonPositiveHorizon);
    }
    let virtual_sms: Vec<u32> = ts.tasks.iter().map(|t| alloc.virtual_sms(&t.id)).collect();
    let gpu_upper = ts
        .tasks
        .iter()
        .zip(&virtual_sms)
        .map(|(t, &v)| t.gpu_segments.iter().map(|g| gpu_response_bounds(g, v).map(|b| b.hi)).collect())
        .collect::<Result<_, _>>()?;
    let sim = Sim {
        ts,
        virtual_sms,
        gpu_upper,
        horizon: cfg.horizon,
        sampler: Sampler { policy: cfg.length_policy, rng: ChaCha8Rng::seed_from_u64(cfg.seed) },
        queues: vec![VecDeque::new(); ts.len()],
        next_release: vec![0; ts.len()],
        cpu: Busy::Idle,
        bus: Busy::Idle,
        trace: SimTrace { horizon: cfg.horizon, ..SimTrace::default() },
    };
    Ok(sim.run())
}
