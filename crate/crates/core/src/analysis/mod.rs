//! Schedulability analyses of federated CPU/bus/GPU task sets.

mod baselines;
mod rtgpu;
mod views;

pub use baselines::{analyze_at, analyze_busy_waiting_baseline, analyze_methods, analyze_self_suspension_baseline};
pub use rtgpu::{
    analyze_rtgpu, analyze_rtgpu_at, cpu_response, cpu_workload, end_to_end, mem_blocking, mem_response,
    mem_workload,
};
pub use views::{cpu_inter_arrival, mem_inter_arrival, Chain, GpuBoundsCache};

use crate::model::{AnalysisReport, Method, TaskSet};

/// Run `method` over the allocation grid of `ts`.
pub fn analyze(ts: &TaskSet, method: Method) -> AnalysisReport {
    match method {
        Method::Rtgpu => analyze_rtgpu(ts),
        Method::SelfSuspension => analyze_self_suspension_baseline(ts),
        Method::BusyWaiting => analyze_busy_waiting_baseline(ts),
    }
}

#[cfg(test)]
mod tests;
