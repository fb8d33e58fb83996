//! Reference tests that ignore the structure RTGPU exploits.
//!
//! Self-suspension: each copy-kernel-copy stretch is a single suspension of
//! the CPU, with its worst case taken from the RTGPU bus and GPU bounds and
//! inflated by the longest lower-priority copy-kernel-copy region, as if
//! regions could not be preempted. Busy-waiting: the CPU spins through every
//! suspension, so the whole job is CPU work.

use std::ops::ControlFlow;

use crate::gpu::GpuError;
use crate::model::{AnalysisReport, Interval, MemModel, Method, SmAllocation, TaskBounds, TaskSet, TaskSpec};
use crate::suspension::SuspTask;
use crate::time::Duration;

use super::rtgpu::{analyze_rtgpu_at, make_report, mem_blocking, search_schedulable, Schedulable, TaskEval, Visitor};
use super::views::task_gpu_bounds;

/// Suspension intervals between consecutive CPU segments.
fn suspensions(t: &TaskSpec, model: MemModel, eval: &TaskEval) -> Vec<Interval> {
    let mr: Vec<Duration> = eval.mr.iter().map(|r| r.expect("schedulable copies have bounds")).collect();
    let ml_lo = |x: usize| t.mem_segments[x].lo();
    (0..eval.gr.len())
        .map(|j| {
            let g = eval.gr[j];
            match model {
                MemModel::TwoCopy => {
                    Interval::new(ml_lo(2 * j) + g.lo + ml_lo(2 * j + 1), mr[2 * j] + g.hi + mr[2 * j + 1])
                }
                MemModel::OneCopy => Interval::new(ml_lo(j) + g.lo, mr[j] + g.hi),
            }
        })
        .collect()
}

/// Lengths of the copy-kernel-copy regions between CPU segments when they
/// run without contention.
fn regions(t: &TaskSpec, model: MemModel, gr: &[Interval]) -> Vec<Duration> {
    let ml = |x: usize| t.mem_segments[x].hi();
    (0..gr.len())
        .map(|j| match model {
            MemModel::TwoCopy => ml(2 * j) + gr[j].hi + ml(2 * j + 1),
            MemModel::OneCopy => ml(j) + gr[j].hi,
        })
        .collect()
}

/// Allocation-independent lower bounds standing in for tasks that have no
/// allocation yet in a partial search.
struct Floors {
    /// Longest copy-kernel-copy region.
    region: Vec<Duration>,
    /// Busy-waiting time spent in suspensions, blocking included.
    spin: Vec<Duration>,
}

impl Floors {
    fn new(ts: &TaskSet) -> Self {
        let budget = ts.platform.physical_sms;
        let gr_floor: Vec<Vec<Interval>> = ts
            .tasks
            .iter()
            .map(|t| {
                (0..t.gpu_segments.len())
                    .map(|j| {
                        let hi = (1..=budget)
                            .filter_map(|g| task_gpu_bounds(t, 2 * g).ok())
                            .map(|gr| gr[j].hi)
                            .min()
                            .unwrap_or_default();
                        Interval::new(hi, hi)
                    })
                    .collect()
            })
            .collect();
        let region: Vec<Duration> = ts
            .tasks
            .iter()
            .zip(&gr_floor)
            .map(|(t, gr)| regions(t, ts.mem_model, gr).into_iter().max().unwrap_or_default())
            .collect();
        let spin = (0..ts.len())
            .map(|k| {
                let t = &ts.tasks[k];
                let copy_floor = mem_blocking(ts, k);
                let copies = t.mem_segments.len() as i128;
                let block = lower_priority_max(ts, k, &region);
                let gaps = gr_floor[k].len() as i128;
                regions(t, ts.mem_model, &gr_floor[k]).into_iter().sum::<Duration>()
                    + copy_floor.times(copies)
                    + block.times(gaps)
            })
            .collect();
        Floors { region, spin }
    }
}

fn lower_priority_max(ts: &TaskSet, k: usize, per_task: &[Duration]) -> Duration {
    let pk = ts.tasks[k].priority;
    (0..ts.len()).filter(|&i| ts.tasks[i].priority > pk).map(|i| per_task[i]).max().unwrap_or_default()
}

struct Suspended {
    plain: Vec<Vec<Interval>>,
    blocking: Vec<Duration>,
}

/// Suspensions of the tasks covered by `evals` (a priority-order prefix of
/// the taskset) and their blocking terms.
fn suspended(ts: &TaskSet, evals: &[TaskEval], floors: Option<&Floors>) -> Suspended {
    let plain: Vec<Vec<Interval>> =
        ts.tasks.iter().zip(evals).map(|(t, e)| suspensions(t, ts.mem_model, e)).collect();
    let longest: Vec<Duration> = (0..ts.len())
        .map(|i| match (evals.get(i), floors) {
            (Some(e), _) => regions(&ts.tasks[i], ts.mem_model, &e.gr).into_iter().max().unwrap_or_default(),
            (None, Some(f)) => f.region[i],
            (None, None) => panic!("bounds missing for task {i}"),
        })
        .collect();
    let blocking = (0..evals.len()).map(|k| lower_priority_max(ts, k, &longest)).collect();
    Suspended { plain, blocking }
}

fn cpu_intervals(t: &TaskSpec) -> Vec<Interval> {
    t.cpu_segments.iter().map(|&b| b.into()).collect()
}

fn hp_of(ts: &TaskSet, k: usize, tasks: &[Option<SuspTask>]) -> Option<Vec<SuspTask>> {
    let pk = ts.tasks[k].priority;
    (0..tasks.len()).filter(|&i| ts.tasks[i].priority < pk).map(|i| tasks[i].clone()).collect()
}

fn self_suspension_bounds(ts: &TaskSet, evals: &[TaskEval], floors: Option<&Floors>) -> Option<Vec<TaskBounds>> {
    let s = suspended(ts, evals, floors);
    let make = |k: usize, extra: Duration| {
        let t = &ts.tasks[k];
        let susp = s.plain[k].iter().map(|i| Interval::new(i.lo, i.hi + extra)).collect();
        SuspTask::new(cpu_intervals(t), susp, t.deadline(), t.period()).ok()
    };
    let plain: Vec<Option<SuspTask>> = (0..evals.len()).map(|k| make(k, Duration::zero())).collect();
    (0..evals.len())
        .map(|k| {
            let hp = hp_of(ts, k, &plain)?;
            let detail = make(k, s.blocking[k])?.response_detail(&hp);
            let e2e = detail.bound?;
            Some(TaskBounds {
                gpu_r: evals[k].gr.clone(),
                mem_r_up: evals[k].mr.clone(),
                cpu_r_up: detail.segments,
                end_to_end_up: Some(e2e),
            })
        })
        .collect()
}

/// With `floors`, tasks past the prefix are checked too, with their
/// busy-waiting time bounded from below.
fn busy_waiting_bounds(ts: &TaskSet, evals: &[TaskEval], floors: Option<&Floors>) -> Option<Vec<TaskBounds>> {
    let s = suspended(ts, evals, floors);
    let covered = if floors.is_some() { ts.len() } else { evals.len() };
    let seq: Vec<Option<SuspTask>> = (0..covered)
        .map(|k| {
            let t = &ts.tasks[k];
            let spin: Duration = match floors {
                Some(f) if k >= evals.len() => f.spin[k],
                _ => s.plain[k].iter().map(|i| i.hi + s.blocking[k]).sum(),
            };
            let wcet = t.cpu_segments.iter().map(|b| b.hi()).sum::<Duration>() + spin;
            SuspTask::sequential(wcet, t.deadline(), t.period()).ok()
        })
        .collect();
    let mut out = Vec::with_capacity(evals.len());
    for k in 0..covered {
        let hp = hp_of(ts, k, &seq)?;
        let e2e = seq[k].as_ref()?.task_response(&hp).ok()?;
        if let Some(e) = evals.get(k) {
            out.push(TaskBounds {
                gpu_r: e.gr.clone(),
                mem_r_up: e.mr.clone(),
                cpu_r_up: vec![Some(e2e)],
                end_to_end_up: Some(e2e),
            });
        }
    }
    Some(out)
}

pub(crate) fn self_suspension_at(ts: &TaskSet, evals: &[TaskEval]) -> Option<Vec<TaskBounds>> {
    self_suspension_bounds(ts, evals, None)
}

pub(crate) fn busy_waiting_at(ts: &TaskSet, evals: &[TaskEval]) -> Option<Vec<TaskBounds>> {
    busy_waiting_bounds(ts, evals, None)
}

/// Finds the first RTGPU-schedulable allocation passing each wanted method.
/// Both baseline bounds only grow with the blocking term and the busy-waiting
/// time, so a prefix that fails with the floors fails for every completion.
struct FirstPassing<'a> {
    ts: &'a TaskSet,
    methods: &'a [Method],
    floors: Floors,
    found: Vec<Option<AnalysisReport>>,
}

impl FirstPassing<'_> {
    fn test(&self, m: Method, evals: &[TaskEval], floors: Option<&Floors>) -> Option<Vec<TaskBounds>> {
        match m {
            Method::Rtgpu => Some(evals.iter().map(TaskEval::bounds).collect()),
            Method::SelfSuspension => self_suspension_bounds(self.ts, evals, floors),
            Method::BusyWaiting => busy_waiting_bounds(self.ts, evals, floors),
        }
    }

    fn run(ts: &TaskSet, methods: &[Method]) -> Vec<AnalysisReport> {
        let mut v = FirstPassing { ts, methods, floors: Floors::new(ts), found: vec![None; methods.len()] };
        search_schedulable(ts, &mut v);
        v.found
            .into_iter()
            .zip(methods)
            .map(|(r, &m)| r.unwrap_or_else(|| AnalysisReport::unschedulable(m)))
            .collect()
    }
}

impl Visitor for FirstPassing<'_> {
    fn keep(&mut self, prefix: &[TaskEval]) -> bool {
        self.methods
            .iter()
            .zip(&self.found)
            .any(|(&m, f)| f.is_none() && self.test(m, prefix, Some(&self.floors)).is_some())
    }

    fn visit(&mut self, s: Schedulable<'_>) -> ControlFlow<()> {
        for i in 0..self.methods.len() {
            if self.found[i].is_some() {
                continue;
            }
            let m = self.methods[i];
            if let Some(b) = self.test(m, s.evals, None) {
                self.found[i] = Some(make_report(m, self.ts, &s.counts, b));
            }
        }
        if self.found.iter().all(Option::is_some) {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    }
}

/// Self-suspension baseline over the same allocation grid.
pub fn analyze_self_suspension_baseline(ts: &TaskSet) -> AnalysisReport {
    FirstPassing::run(ts, &[Method::SelfSuspension]).remove(0)
}

/// Busy-waiting baseline over the same allocation grid.
pub fn analyze_busy_waiting_baseline(ts: &TaskSet) -> AnalysisReport {
    FirstPassing::run(ts, &[Method::BusyWaiting]).remove(0)
}

/// Reports for several methods from one pass over the allocation grid;
/// same results as calling [`super::analyze`] per method.
pub fn analyze_methods(ts: &TaskSet, methods: &[Method]) -> Vec<AnalysisReport> {
    FirstPassing::run(ts, methods)
}

/// Bounds of `method` at one fixed allocation. Baseline bounds need every
/// copy bound of the RTGPU analysis; without them the report has none.
pub fn analyze_at(ts: &TaskSet, alloc: &SmAllocation, method: Method) -> Result<AnalysisReport, GpuError> {
    let rt = analyze_rtgpu_at(ts, alloc)?;
    if method == Method::Rtgpu {
        return Ok(rt);
    }
    let evals: Option<Vec<TaskEval>> = rt
        .per_task
        .values()
        .map(|b| {
            b.mem_r_up.iter().all(Option::is_some).then(|| TaskEval {
                gr: b.gpu_r.clone(),
                mr: b.mem_r_up.clone(),
                cr: b.cpu_r_up.clone(),
                e2e: b.end_to_end_up,
            })
        })
        .collect();
    let bounds = evals.and_then(|e| match method {
        Method::SelfSuspension => self_suspension_at(ts, &e),
        _ => busy_waiting_at(ts, &e),
    });
    Ok(match bounds {
        Some(b) => AnalysisReport {
            method,
            schedulable: true,
            allocation: Some(alloc.clone()),
            per_task: ts.tasks.iter().map(|t| t.id.clone()).zip(b).collect(),
        },
        None => AnalysisReport { allocation: Some(alloc.clone()), ..AnalysisReport::unschedulable(method) },
    })
}
