//! Throughput gained by running two interleaved blocks per physical SM.

use serde::{Deserialize, Serialize};

use crate::model::{SmAllocation, TaskSet};
use crate::time::Rational;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThroughputScope {
    /// Normalize by every physical SM of the platform.
    WholeGpu,
    /// Normalize by the physical SMs the allocation hands out.
    UsedSms,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ThroughputError {
    #[error("task {task}: interleave ratio {alpha} outside [1, 2]")]
    RatioOutOfRange { task: String, alpha: String },
    #[error("allocation uses {used} physical SMs but the platform has {available}")]
    OverAllocated { used: u32, available: u32 },
    #[error("allocation gives no SMs to any task")]
    NothingAllocated,
}

/// Fractional throughput improvement: `sum_i share_i * (2 / alpha_i - 1)`,
/// where `share_i` is task i's physical SMs over the scope's SM count and
/// `alpha_i` is its largest kernel interleave ratio.
pub fn throughput_improvement(
    ts: &TaskSet,
    alloc: &SmAllocation,
    scope: ThroughputScope,
) -> Result<Rational, ThroughputError> {
    let used = alloc.total_physical();
    let available = ts.platform.physical_sms;
    if used > available {
        return Err(ThroughputError::OverAllocated { used, available });
    }
    let denom = match scope {
        ThroughputScope::WholeGpu => available,
        ThroughputScope::UsedSms => used,
    };
    if denom == 0 {
        return Err(ThroughputError::NothingAllocated);
    }
    let one = Rational::from_integer(1);
    let two = Rational::from_integer(2);
    let mut eta = Rational::from_integer(0);
    for t in ts.tasks.iter().filter(|t| t.uses_gpu()) {
        let alpha = t.task_interleave_ratio();
        if alpha < one || alpha > two {
            return Err(ThroughputError::RatioOutOfRange {
                task: t.id.clone(),
                alpha: crate::time::format_rational(&alpha),
            });
        }
        let share = Rational::new(alloc.physical_sms(&t.id) as i128, denom as i128);
        eta += share * (two / alpha - one);
    }
    Ok(eta)
}
