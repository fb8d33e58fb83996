//! Bus and CPU views of a GPU task as self-suspending segment chains.
//!
//! On the bus, copies execute and the CPU/GPU segments between them are
//! suspensions; on the CPU it is the other way round. Both views only use
//! lower bounds of the foreign segments (GPU response lower bounds for
//! kernels, minimum lengths for CPU segments and copies).

use crate::gpu::{gpu_response_bounds, GpuError};
use crate::model::{Interval, MemModel, SmAllocation, TaskSet, TaskSpec};
use crate::suspension::{chain_max_workload, SegmentChain, Unschedulable, WorkloadTable};
use crate::time::Duration;

/// GPU response bounds of every task for one fixed SM allocation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GpuBoundsCache {
    per_task: Vec<Vec<Interval>>,
}

impl GpuBoundsCache {
    pub fn new(ts: &TaskSet, alloc: &SmAllocation) -> Result<Self, GpuError> {
        let per_task = ts
            .tasks
            .iter()
            .map(|t| task_gpu_bounds(t, alloc.virtual_sms(&t.id)))
            .collect::<Result<_, _>>()?;
        Ok(GpuBoundsCache { per_task })
    }

    pub fn from_bounds(per_task: Vec<Vec<Interval>>) -> Self {
        GpuBoundsCache { per_task }
    }

    /// Bounds of task at position `i`, one per GPU segment.
    pub fn task(&self, i: usize) -> &[Interval] {
        &self.per_task[i]
    }
}

pub(crate) fn task_gpu_bounds(t: &TaskSpec, virtual_sms: u32) -> Result<Vec<Interval>, GpuError> {
    t.gpu_segments.iter().map(|g| gpu_response_bounds(g, virtual_sms)).collect()
}

fn non_negative(d: Duration) -> Result<Duration, Unschedulable> {
    if d.is_negative() {
        Err(Unschedulable)
    } else {
        Ok(d)
    }
}

/// Minimum separation on the bus between copy `j` and copy `j + 1` of a task.
pub(crate) fn mem_gap(t: &TaskSpec, model: MemModel, gr: &[Interval], j: usize) -> Result<Duration, Unschedulable> {
    let m = t.m();
    let p = model.copies(m);
    assert!(p > 0, "task {} has no copies", t.id);
    let cl_lo = |x: usize| t.cpu_segments[x].lo();
    let r = j % p;
    let gap = match model {
        MemModel::TwoCopy => {
            if r != p - 1 && j % 2 == 0 {
                gr[r / 2].lo
            } else if r != p - 1 {
                cl_lo((r + 1) / 2)
            } else if j == p - 1 {
                t.period() - t.deadline() + cl_lo(m - 1) + cl_lo(0)
            } else {
                t.period()
                    - t.mem_segments.iter().map(|b| b.hi()).sum()
                    - (1..m - 1).map(cl_lo).sum()
                    - gr.iter().map(|g| g.lo).sum()
            }
        }
        MemModel::OneCopy => {
            if r != p - 1 {
                gr[r].lo + cl_lo(r + 1)
            } else if j == p - 1 {
                t.period() - t.deadline() + gr[p - 1].lo + cl_lo(m - 1) + cl_lo(0)
            } else {
                t.period()
                    - t.mem_segments.iter().map(|b| b.hi()).sum()
                    - (0..p - 1).map(|x| gr[x].lo + cl_lo(x + 1)).sum()
            }
        }
    };
    non_negative(gap)
}

/// Minimum separation on the CPU between segment `j` and segment `j + 1`.
pub(crate) fn cpu_gap(t: &TaskSpec, model: MemModel, gr: &[Interval], j: usize) -> Result<Duration, Unschedulable> {
    let m = t.m();
    let r = j % m;
    let ml_lo = |x: usize| t.mem_segments[x].lo();
    let gap = if r != m - 1 {
        match model {
            MemModel::TwoCopy => ml_lo(2 * r) + gr[r].lo + ml_lo(2 * r + 1),
            MemModel::OneCopy => ml_lo(r) + gr[r].lo,
        }
    } else if j == m - 1 {
        t.period() - t.deadline()
    } else {
        t.period()
            - t.cpu_segments.iter().map(|b| b.hi()).sum()
            - t.mem_segments.iter().map(|b| b.lo()).sum()
            - gr.iter().map(|g| g.lo).sum()
    };
    non_negative(gap)
}

/// Minimum bus inter-arrival time after copy `j` of task `i`.
pub fn mem_inter_arrival(ts: &TaskSet, i: usize, j: usize, cache: &GpuBoundsCache) -> Result<Duration, Unschedulable> {
    mem_gap(&ts.tasks[i], ts.mem_model, cache.task(i), j)
}

/// Minimum CPU inter-arrival time after CPU segment `j` of task `i`.
pub fn cpu_inter_arrival(ts: &TaskSet, i: usize, j: usize, cache: &GpuBoundsCache) -> Result<Duration, Unschedulable> {
    cpu_gap(&ts.tasks[i], ts.mem_model, cache.task(i), j)
}

/// A segment chain with its gaps evaluated once: the first job's gaps and
/// the steady-state gaps of every later job.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chain {
    exec: Vec<Duration>,
    first: Vec<Duration>,
    steady: Vec<Duration>,
    table: Option<WorkloadTable>,
}

impl Chain {
    fn build(
        exec: Vec<Duration>,
        gap: impl Fn(usize) -> Result<Duration, Unschedulable>,
    ) -> Result<Self, Unschedulable> {
        let p = exec.len();
        let first = (0..p).map(&gap).collect::<Result<_, _>>()?;
        let steady = (p..2 * p).map(&gap).collect::<Result<_, _>>()?;
        let mut chain = Chain { exec, first, steady, table: None };
        chain.table = WorkloadTable::new(&chain);
        Ok(chain)
    }

    /// Copies of `t` as execution segments.
    pub fn memory(t: &TaskSpec, model: MemModel, gr: &[Interval]) -> Result<Self, Unschedulable> {
        Chain::build(t.mem_segments.iter().map(|b| b.hi()).collect(), |j| mem_gap(t, model, gr, j))
    }

    /// CPU segments of `t` as execution segments.
    pub fn cpu(t: &TaskSpec, model: MemModel, gr: &[Interval]) -> Result<Self, Unschedulable> {
        Chain::build(t.cpu_segments.iter().map(|b| b.hi()).collect(), |j| cpu_gap(t, model, gr, j))
    }

    pub fn is_empty(&self) -> bool {
        self.exec.is_empty()
    }

    pub fn max_workload(&self, horizon: Duration) -> Duration {
        match &self.table {
            Some(t) => t.max_workload(horizon),
            None => chain_max_workload(self, horizon),
        }
    }

    pub fn max_exec(&self) -> Duration {
        self.exec.iter().copied().max().unwrap_or_default()
    }
}

impl SegmentChain for Chain {
    fn len(&self) -> usize {
        self.exec.len()
    }

    fn exec_up(&self, idx: usize) -> Duration {
        self.exec[idx]
    }

    fn gap(&self, j: usize) -> Duration {
        let p = self.exec.len();
        if j < p {
            self.first[j]
        } else {
            self.steady[j % p]
        }
    }
}
