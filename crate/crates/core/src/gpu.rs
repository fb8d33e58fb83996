//! GPU kernel timing on dedicated (virtual) SMs and federated SM allocation.

use crate::model::{GpuKernelModel, Interval, SmAllocation, TaskSet};
use crate::time::{Duration, Rational};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GpuError {
    #[error("a kernel needs at least one SM")]
    NoSms,
    #[error("virtual SM count must be even and at least 2, got {0}")]
    OddVirtualSms(u32),
    #[error("overhead exceeds the kernel's work")]
    OverheadExceedsWork,
}

/// Execution time of a kernel with `work` on one SM, sequential `overhead`,
/// spread over `sms` SMs: `(work - overhead) / sms + overhead`.
pub fn kernel_time(work: Duration, overhead: Duration, sms: u32) -> Result<Duration, GpuError> {
    if sms == 0 {
        return Err(GpuError::NoSms);
    }
    if overhead > work {
        return Err(GpuError::OverheadExceedsWork);
    }
    Ok((work - overhead).div_count(sms as u64) + overhead)
}

/// Worst-case response of a self-interleaved kernel whose single-SM work is
/// `work` when it runs on `virtual_sms` dedicated virtual SMs.
pub fn interleaved_upper(
    work: Duration,
    overhead: Duration,
    alpha: Rational,
    virtual_sms: u32,
) -> Result<Duration, GpuError> {
    let inflated = work.scale(alpha);
    if overhead > inflated {
        return Err(GpuError::OverheadExceedsWork);
    }
    check_virtual(virtual_sms)?;
    Ok((inflated - overhead).div_count(virtual_sms as u64) + overhead)
}

fn check_virtual(virtual_sms: u32) -> Result<(), GpuError> {
    if virtual_sms < 2 || virtual_sms % 2 != 0 {
        return Err(GpuError::OddVirtualSms(virtual_sms));
    }
    Ok(())
}

/// Response-time bounds of GPU segment `g` on `virtual_sms` dedicated
/// virtual SMs: best case is fully parallel minimum work with no overhead,
/// worst case inflates work by the interleave ratio and adds the
/// non-parallel launch overhead.
pub fn gpu_response_bounds(g: &GpuKernelModel, virtual_sms: u32) -> Result<Interval, GpuError> {
    check_virtual(virtual_sms)?;
    let lo = g.work.lo().div_count(virtual_sms as u64);
    let hi = interleaved_upper(g.work.hi(), g.critical_path_overhead.to_duration(), g.interleave_ratio, virtual_sms)?;
    Ok(Interval::new(lo, hi))
}

/// Lexicographic enumeration of physical SM counts `(GN_1, ..., GN_n)` with
/// every `GN_i >= 1` and `sum <= GN`, first coordinate outermost.
#[derive(Debug, Clone)]
pub struct AllocationGrid {
    counts: Vec<u32>,
    budget: u32,
    started: bool,
    done: bool,
}

impl AllocationGrid {
    pub fn new(tasks: usize, budget: u32) -> Self {
        AllocationGrid { counts: vec![1; tasks], budget, started: false, done: false }
    }

    fn total(&self) -> u32 {
        self.counts.iter().sum()
    }
}

impl Iterator for AllocationGrid {
    type Item = Vec<u32>;

    fn next(&mut self) -> Option<Vec<u32>> {
        if self.done {
            return None;
        }
        if !self.started {
            self.started = true;
            if self.total() > self.budget {
                self.done = true;
                return None;
            }
            return Some(self.counts.clone());
        }
        let n = self.counts.len();
        for i in (0..n).rev() {
            self.counts[i] += 1;
            for c in &mut self.counts[i + 1..] {
                *c = 1;
            }
            if self.total() <= self.budget {
                return Some(self.counts.clone());
            }
        }
        self.done = true;
        None
    }
}

/// Every federated allocation of `ts`, in grid-search order.
pub fn feasible_allocations(ts: &TaskSet) -> impl Iterator<Item = SmAllocation> + '_ {
    let gpu_tasks = ts.tasks.iter().filter(|t| t.uses_gpu()).count();
    AllocationGrid::new(gpu_tasks, ts.platform.physical_sms).map(move |c| SmAllocation::from_physical(ts, &c))
}
