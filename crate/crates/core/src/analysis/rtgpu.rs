//! Bus, CPU and end-to-end response bounds of federated GPU tasks, and the
//! grid search for the first schedulable SM allocation.

use std::ops::ControlFlow;

use crate::gpu::GpuError;
use crate::model::{AnalysisReport, Interval, Method, SmAllocation, TaskBounds, TaskSet, TaskSpec};
use crate::suspension::{chain_workload, least_fixed_point, least_fixed_points, ResponseDetail, Unschedulable};
use crate::time::Duration;

use super::views::{task_gpu_bounds, Chain, GpuBoundsCache};

fn hp_positions(ts: &TaskSet, k: usize) -> impl Iterator<Item = usize> + '_ {
    let pk = ts.tasks[k].priority;
    (0..ts.len()).filter(move |&i| ts.tasks[i].priority < pk)
}

/// Longest copy of any lower-priority task; the bus is non-preemptive.
pub fn mem_blocking(ts: &TaskSet, k: usize) -> Duration {
    let pk = ts.tasks[k].priority;
    ts.tasks
        .iter()
        .filter(|t| t.priority > pk)
        .flat_map(|t| t.mem_segments.iter().map(|b| b.hi()))
        .max()
        .unwrap_or_default()
}

fn mem_chain(ts: &TaskSet, i: usize, cache: &GpuBoundsCache) -> Result<Chain, Unschedulable> {
    Chain::memory(&ts.tasks[i], ts.mem_model, cache.task(i))
}

fn cpu_chain(ts: &TaskSet, i: usize, cache: &GpuBoundsCache) -> Result<Chain, Unschedulable> {
    Chain::cpu(&ts.tasks[i], ts.mem_model, cache.task(i))
}

/// Maximum bus time task `i` can demand in a window of `horizon` opening with copy `h`.
pub fn mem_workload(
    ts: &TaskSet,
    i: usize,
    h: usize,
    horizon: Duration,
    cache: &GpuBoundsCache,
) -> Result<Duration, Unschedulable> {
    Ok(chain_workload(&mem_chain(ts, i, cache)?, h, horizon))
}

/// Maximum CPU time task `i` can demand in a window of `horizon` opening with segment `h`.
pub fn cpu_workload(
    ts: &TaskSet,
    i: usize,
    h: usize,
    horizon: Duration,
    cache: &GpuBoundsCache,
) -> Result<Duration, Unschedulable> {
    Ok(chain_workload(&cpu_chain(ts, i, cache)?, h, horizon))
}

fn hp_mem_chains(ts: &TaskSet, k: usize, cache: &GpuBoundsCache) -> Result<Vec<Chain>, Unschedulable> {
    hp_positions(ts, k)
        .filter(|&i| !ts.tasks[i].mem_segments.is_empty())
        .map(|i| mem_chain(ts, i, cache))
        .collect()
}

fn hp_cpu_chains(ts: &TaskSet, k: usize, cache: &GpuBoundsCache) -> Result<Vec<Chain>, Unschedulable> {
    hp_positions(ts, k).map(|i| cpu_chain(ts, i, cache)).collect()
}

fn interference<'a>(hp: &'a [&'a Chain]) -> impl Fn(Duration) -> Duration + 'a {
    move |r| hp.iter().map(|c| c.max_workload(r)).sum()
}

fn copy_response(t: &TaskSpec, j: usize, blocking: Duration, hp: &[&Chain]) -> Result<Duration, Unschedulable> {
    least_fixed_point(t.mem_segments[j].hi() + blocking, t.deadline(), interference(hp))
}

fn cpu_segment_response(t: &TaskSpec, j: usize, hp: &[&Chain]) -> Result<Duration, Unschedulable> {
    least_fixed_point(t.cpu_segments[j].hi(), t.deadline(), interference(hp))
}

fn copy_responses(t: &TaskSpec, blocking: Duration, hp: &[&Chain]) -> Vec<Option<Duration>> {
    let bases: Vec<Duration> = t.mem_segments.iter().map(|m| m.hi() + blocking).collect();
    least_fixed_points(&bases, t.deadline(), interference(hp)).into_iter().map(Result::ok).collect()
}

fn cpu_segment_responses(t: &TaskSpec, hp: &[&Chain]) -> Vec<Option<Duration>> {
    let bases: Vec<Duration> = t.cpu_segments.iter().map(|c| c.hi()).collect();
    least_fixed_points(&bases, t.deadline(), interference(hp)).into_iter().map(Result::ok).collect()
}

/// Response bound of copy `j` of task `k` on the bus.
pub fn mem_response(ts: &TaskSet, k: usize, j: usize, cache: &GpuBoundsCache) -> Result<Duration, Unschedulable> {
    let hp = hp_mem_chains(ts, k, cache)?;
    let refs: Vec<&Chain> = hp.iter().collect();
    copy_response(&ts.tasks[k], j, mem_blocking(ts, k), &refs)
}

/// Response bound of CPU segment `j` of task `k`.
pub fn cpu_response(ts: &TaskSet, k: usize, j: usize, cache: &GpuBoundsCache) -> Result<Duration, Unschedulable> {
    let hp = hp_cpu_chains(ts, k, cache)?;
    let refs: Vec<&Chain> = hp.iter().collect();
    cpu_segment_response(&ts.tasks[k], j, &refs)
}

fn end_to_end_detail(
    t: &TaskSpec,
    gr: &[Interval],
    mr: &[Option<Duration>],
    cr: &[Option<Duration>],
    hp_cpu: &[&Chain],
) -> ResponseDetail {
    let Some(mr) = mr.iter().copied().collect::<Option<Vec<_>>>() else {
        return ResponseDetail::new(cr.to_vec(), None, None, t.deadline());
    };
    let offload: Duration = gr.iter().map(|g| g.hi).sum::<Duration>() + mr.iter().sum();
    let by_segments = cr
        .iter()
        .copied()
        .collect::<Option<Vec<_>>>()
        .map(|c| offload + c.into_iter().sum());
    let cpu_up: Duration = t.cpu_segments.iter().map(|b| b.hi()).sum();
    let by_total = least_fixed_point(offload + cpu_up, t.deadline(), interference(hp_cpu)).ok();
    ResponseDetail::new(cr.to_vec(), by_segments, by_total, t.deadline())
}

/// End-to-end response bound of task `k`.
pub fn end_to_end(ts: &TaskSet, k: usize, cache: &GpuBoundsCache) -> Result<Duration, Unschedulable> {
    let t = &ts.tasks[k];
    let mr: Vec<_> = (0..t.mem_segments.len()).map(|j| mem_response(ts, k, j, cache).ok()).collect();
    let hp = hp_cpu_chains(ts, k, cache)?;
    let refs: Vec<&Chain> = hp.iter().collect();
    let cr = cpu_segment_responses(t, &refs);
    end_to_end_detail(t, cache.task(k), &mr, &cr, &refs).bound.ok_or(Unschedulable)
}

/// Bounds of one task at a fixed allocation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct TaskEval {
    pub gr: Vec<Interval>,
    pub mr: Vec<Option<Duration>>,
    pub cr: Vec<Option<Duration>>,
    pub e2e: Option<Duration>,
}

impl TaskEval {
    pub fn bounds(&self) -> TaskBounds {
        TaskBounds {
            gpu_r: self.gr.clone(),
            mem_r_up: self.mr.clone(),
            cpu_r_up: self.cr.clone(),
            end_to_end_up: self.e2e,
        }
    }
}

fn eval_task(t: &TaskSpec, gr: Vec<Interval>, blocking: Duration, hp_mem: &[&Chain], hp_cpu: &[&Chain]) -> TaskEval {
    let mr = copy_responses(t, blocking, hp_mem);
    let cr = cpu_segment_responses(t, hp_cpu);
    let e2e = end_to_end_detail(t, &gr, &mr, &cr, hp_cpu).bound;
    TaskEval { gr, mr, cr, e2e }
}

fn report(method: Method, ts: &TaskSet, alloc: SmAllocation, per_task: Vec<TaskBounds>) -> AnalysisReport {
    let schedulable = per_task.iter().all(|b| b.end_to_end_up.is_some());
    AnalysisReport {
        method,
        schedulable,
        allocation: Some(alloc),
        per_task: ts.tasks.iter().map(|t| t.id.clone()).zip(per_task).collect(),
    }
}

pub(crate) fn make_report(method: Method, ts: &TaskSet, counts: &[u32], per_task: Vec<TaskBounds>) -> AnalysisReport {
    report(method, ts, SmAllocation::from_physical(ts, counts), per_task)
}

/// Full RTGPU bounds of every task at one allocation. Tasks whose
/// higher-priority chains are infeasible get no bounds.
pub fn analyze_rtgpu_at(ts: &TaskSet, alloc: &SmAllocation) -> Result<AnalysisReport, GpuError> {
    let cache = GpuBoundsCache::new(ts, alloc)?;
    let per_task = (0..ts.len())
        .map(|k| {
            let t = &ts.tasks[k];
            let gr = cache.task(k).to_vec();
            match (hp_mem_chains(ts, k, &cache), hp_cpu_chains(ts, k, &cache)) {
                (Ok(mem), Ok(cpu)) => {
                    let mem: Vec<&Chain> = mem.iter().collect();
                    let cpu: Vec<&Chain> = cpu.iter().collect();
                    eval_task(t, gr, mem_blocking(ts, k), &mem, &cpu).bounds()
                }
                _ => TaskBounds {
                    gpu_r: gr,
                    mem_r_up: vec![None; t.mem_segments.len()],
                    cpu_r_up: vec![None; t.m()],
                    end_to_end_up: None,
                },
            }
        })
        .collect();
    Ok(report(Method::Rtgpu, ts, alloc.clone(), per_task))
}

/// A complete allocation that passed the RTGPU test, with its bounds.
pub(crate) struct Schedulable<'s> {
    /// Physical SMs per GPU task, in taskset order.
    pub counts: Vec<u32>,
    pub evals: &'s [TaskEval],
}

struct Search<'a> {
    ts: &'a TaskSet,
    blocking: Vec<Duration>,
    gpu_after: Vec<u32>,
    counts: Vec<u32>,
    evals: Vec<TaskEval>,
    mem_chains: Vec<Chain>,
    cpu_chains: Vec<Chain>,
}

impl<'a> Search<'a> {
    fn new(ts: &'a TaskSet) -> Self {
        let n = ts.len();
        let gpu_after = (0..n).map(|k| ts.tasks[k + 1..].iter().filter(|t| t.uses_gpu()).count() as u32).collect();
        Search {
            ts,
            blocking: (0..n).map(|k| mem_blocking(ts, k)).collect(),
            gpu_after,
            counts: Vec::new(),
            evals: Vec::new(),
            mem_chains: Vec::new(),
            cpu_chains: Vec::new(),
        }
    }

    /// Depth-first over tasks in priority order. Copy and CPU responses of
    /// task `k` only depend on higher-priority allocations, so they are
    /// computed once per prefix and a failing prefix prunes its subtree.
    fn dfs<V: Visitor>(&mut self, k: usize, budget: u32, visitor: &mut V) -> ControlFlow<()> {
        if k == self.ts.len() {
            return visitor.visit(Schedulable { counts: self.counts.clone(), evals: &self.evals });
        }
        let t = &self.ts.tasks[k];
        let model = self.ts.mem_model;
        let hp_mem: Vec<&Chain> = self.mem_chains.iter().collect();
        let hp_cpu: Vec<&Chain> = self.cpu_chains.iter().collect();
        let mr = copy_responses(t, self.blocking[k], &hp_mem);
        if mr.iter().any(Option::is_none) {
            return ControlFlow::Continue(());
        }
        let cr = cpu_segment_responses(t, &hp_cpu);
        let choices: Vec<Option<u32>> = if t.uses_gpu() {
            let top = budget.saturating_sub(self.gpu_after[k]);
            (1..=top).map(Some).collect()
        } else {
            vec![None]
        };
        let mut candidates = Vec::new();
        for g in choices {
            let gr = match g {
                Some(g) => match task_gpu_bounds(t, 2 * g) {
                    Ok(gr) => gr,
                    Err(_) => continue,
                },
                None => Vec::new(),
            };
            let e2e = end_to_end_detail(t, &gr, &mr, &cr, &hp_cpu).bound;
            if e2e.is_none() {
                continue;
            }
            if let (Ok(mc), Ok(cc)) = (Chain::memory(t, model, &gr), Chain::cpu(t, model, &gr)) {
                candidates.push((g, TaskEval { gr, mr: mr.clone(), cr: cr.clone(), e2e }, mc, cc));
            }
        }
        drop(hp_mem);
        drop(hp_cpu);
        for (g, eval, mc, cc) in candidates {
            let has_copies = !mc.is_empty();
            if has_copies {
                self.mem_chains.push(mc);
            }
            self.cpu_chains.push(cc);
            if let Some(g) = g {
                self.counts.push(g);
            }
            self.evals.push(eval);
            let flow = if k + 1 == self.ts.len() || visitor.keep(&self.evals) {
                self.dfs(k + 1, budget - g.unwrap_or(0), visitor)
            } else {
                ControlFlow::Continue(())
            };
            self.evals.pop();
            if g.is_some() {
                self.counts.pop();
            }
            self.cpu_chains.pop();
            if has_copies {
                self.mem_chains.pop();
            }
            flow?;
        }
        ControlFlow::Continue(())
    }
}

pub(crate) trait Visitor {
    /// Whether allocations extending a partial one, whose higher-priority
    /// tasks have the bounds in `prefix`, are still of interest.
    fn keep(&mut self, _prefix: &[TaskEval]) -> bool {
        true
    }

    fn visit(&mut self, s: Schedulable<'_>) -> ControlFlow<()>;
}

struct Visit<F>(F);

impl<F: FnMut(Schedulable<'_>) -> ControlFlow<()>> Visitor for Visit<F> {
    fn visit(&mut self, s: Schedulable<'_>) -> ControlFlow<()> {
        (self.0)(s)
    }
}

/// Visit RTGPU-schedulable allocations in grid-search order until the
/// visitor breaks, skipping subtrees the visitor declines. Expects tasks
/// listed in priority order.
pub(crate) fn search_schedulable<V: Visitor>(ts: &TaskSet, visitor: &mut V) {
    let mut search = Search::new(ts);
    let _ = search.dfs(0, ts.platform.physical_sms, visitor);
}

/// Visit every RTGPU-schedulable allocation in grid-search order until the
/// visitor breaks.
pub(crate) fn for_each_schedulable<F>(ts: &TaskSet, visit: F)
where
    F: FnMut(Schedulable<'_>) -> ControlFlow<()>,
{
    search_schedulable(ts, &mut Visit(visit));
}

/// First allocation in grid order under which every task meets its deadline.
pub fn analyze_rtgpu(ts: &TaskSet) -> AnalysisReport {
    let mut found = None;
    for_each_schedulable(ts, |s| {
        let bounds = s.evals.iter().map(TaskEval::bounds).collect();
        found = Some(make_report(Method::Rtgpu, ts, &s.counts, bounds));
        ControlFlow::Break(())
    });
    found.unwrap_or_else(|| AnalysisReport::unschedulable(Method::Rtgpu))
}
