//! Response-time analysis for multi-segment self-suspending tasks under
//! preemptive fixed-priority scheduling on one processor.
//!
//! The workload bound and the fixed-point machinery here are generic over
//! [`SegmentChain`] so the bus and CPU views of a GPU task reuse exactly the
//! same code with their own inter-arrival rules.

use crate::model::Interval;
use crate::time::{Duration, Rational};

/// A response-time iterate grew past the deadline of the task under analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("response-time bound exceeds the deadline")]
pub struct Unschedulable;

/// A cyclic sequence of execution segments separated by minimum gaps.
///
/// Index `j` counts segments from the first job in the window: `j < len`
/// belongs to that job, later indices to the following jobs.
pub trait SegmentChain {
    /// Execution segments per job.
    fn len(&self) -> usize;
    /// Upper bound of execution segment `idx` (`idx < len`).
    fn exec_up(&self, idx: usize) -> Duration;
    /// Minimum separation between the end of segment `j` and the start of `j + 1`.
    fn gap(&self, j: usize) -> Duration;
}

/// Maximum execution a chain can place in a window of length `horizon` that
/// opens with segment `h`.
///
/// Whole-job cycles past the first job are skipped arithmetically, so the
/// cost is linear in the number of segments per job regardless of horizon.
pub fn chain_workload<C: SegmentChain + ?Sized>(chain: &C, h: usize, horizon: Duration) -> Duration {
    let p = chain.len();
    assert!(h < p, "start segment {h} out of range for {p} segments");
    if horizon <= Duration::zero() {
        return Duration::zero();
    }
    let mut elapsed = Duration::zero();
    let mut executed = Duration::zero();
    let mut j = h;
    let mut skipped = false;
    loop {
        if !skipped && j == p {
            skipped = true;
            let cycle_exec: Duration = (0..p).map(|i| chain.exec_up(i)).sum();
            let cycle_len = cycle_exec + (p..2 * p).map(|k| chain.gap(k)).sum();
            if cycle_len > Duration::zero() {
                let cycles = (horizon - elapsed).whole_multiples_of(cycle_len);
                elapsed += cycle_len.times(cycles);
                executed += cycle_exec.times(cycles);
                j += p * cycles as usize;
            }
        }
        let exec = chain.exec_up(j % p);
        let step = exec + chain.gap(j);
        if elapsed + step <= horizon {
            elapsed += step;
            executed += exec;
            j += 1;
        } else {
            let tail = std::cmp::min(exec, horizon - elapsed);
            return executed + std::cmp::max(tail, Duration::zero());
        }
    }
}

/// Workload maximized over the starting segment.
pub fn chain_max_workload<C: SegmentChain + ?Sized>(chain: &C, horizon: Duration) -> Duration {
    (0..chain.len()).map(|h| chain_workload(chain, h, horizon)).max().unwrap_or_default()
}

/// Prefix sums of a chain for repeated workload queries. Answers match
/// [`chain_workload`] exactly; each query is a binary search instead of a
/// walk. Values are kept as integer multiples of `1 / unit`, the least common
/// denominator of the chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkloadTable {
    unit: i128,
    exec: Vec<i128>,
    /// Window time and execution consumed before segment `j` of the first job.
    first_at: Vec<i128>,
    first_exec: Vec<i128>,
    /// Same within one steady-state job, starting at its first segment.
    steady_at: Vec<i128>,
    steady_exec: Vec<i128>,
}

impl WorkloadTable {
    /// `None` when the common denominator of the chain does not fit.
    pub fn new<C: SegmentChain + ?Sized>(chain: &C) -> Option<Self> {
        let p = chain.len();
        let exec: Vec<Duration> = (0..p).map(|i| chain.exec_up(i)).collect();
        let gaps: Vec<Duration> = (0..2 * p).map(|j| chain.gap(j)).collect();
        let mut unit: i128 = 1;
        for d in exec.iter().chain(&gaps) {
            let den = *d.as_ratio().denom();
            unit = unit.checked_mul(den / num_integer::gcd(unit, den))?;
        }
        let ticks = |d: Duration| -> Option<i128> { d.as_ratio().numer().checked_mul(unit / d.as_ratio().denom()) };
        let exec: Vec<i128> = exec.into_iter().map(ticks).collect::<Option<_>>()?;
        let gaps: Vec<i128> = gaps.into_iter().map(ticks).collect::<Option<_>>()?;
        let prefix = |offset: usize| -> Option<(Vec<i128>, Vec<i128>)> {
            let mut at = vec![0i128];
            let mut ex = vec![0i128];
            for i in 0..p {
                at.push(at[i].checked_add(exec[i])?.checked_add(gaps[offset + i])?);
                ex.push(ex[i].checked_add(exec[i])?);
            }
            Some((at, ex))
        };
        let (first_at, first_exec) = prefix(0)?;
        let (steady_at, steady_exec) = prefix(p)?;
        Some(WorkloadTable { unit, exec, first_at, first_exec, steady_at, steady_exec })
    }

    pub fn len(&self) -> usize {
        self.exec.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exec.is_empty()
    }

    /// First segment in `from..p` whose step ends past `limit`, measured from
    /// `base` in `at`, or `p` if none.
    fn first_over(at: &[i128], from: usize, limit: i128) -> usize {
        let p = at.len() - 1;
        let bound = at[from] + limit;
        from + at[from + 1..=p].partition_point(|&a| a <= bound)
    }

    pub fn workload(&self, h: usize, horizon: Duration) -> Duration {
        let p = self.len();
        assert!(h < p, "start segment {h} out of range for {p} segments");
        if horizon <= Duration::zero() {
            return Duration::zero();
        }
        let scaled = horizon.as_ratio() * Rational::from_integer(self.unit);
        let limit = scaled.floor().to_integer();
        // Execution `executed` so far, then segment `j` cut at the horizon.
        let finish = |executed: i128, elapsed: i128, j: usize| {
            if self.exec[j] <= limit - elapsed {
                Duration::from_ratio(Rational::new(executed + self.exec[j], self.unit))
            } else {
                horizon + Duration::from_ratio(Rational::new(executed - elapsed, self.unit))
            }
        };
        let j = Self::first_over(&self.first_at, h, limit);
        let base = self.first_at[h];
        if j < p {
            return finish(self.first_exec[j] - self.first_exec[h], self.first_at[j] - base, j);
        }
        let mut elapsed = self.first_at[p] - base;
        let mut executed = self.first_exec[p] - self.first_exec[h];
        let cycle_len = self.steady_at[p];
        if cycle_len <= 0 {
            return Duration::from_ratio(Rational::new(executed, self.unit));
        }
        let cycles = (limit - elapsed).div_euclid(cycle_len);
        elapsed += cycle_len * cycles;
        executed += self.steady_exec[p] * cycles;
        let i = Self::first_over(&self.steady_at, 0, limit - elapsed);
        debug_assert!(i < p);
        finish(executed + self.steady_exec[i], elapsed + self.steady_at[i], i)
    }

    pub fn max_workload(&self, horizon: Duration) -> Duration {
        (0..self.len()).map(|h| self.workload(h, horizon)).max().unwrap_or_default()
    }
}

/// Least fixed point of `r = base + interference(r)`, iterated upward from
/// `base`. Fails once an iterate exceeds `limit`.
pub fn least_fixed_point<F>(base: Duration, limit: Duration, interference: F) -> Result<Duration, Unschedulable>
where
    F: Fn(Duration) -> Duration,
{
    iterate_from(base, base, limit, &interference)
}

fn iterate_from<F>(base: Duration, start: Duration, limit: Duration, interference: &F) -> Result<Duration, Unschedulable>
where
    F: Fn(Duration) -> Duration,
{
    let mut r = start;
    loop {
        if r > limit {
            return Err(Unschedulable);
        }
        let next = base + interference(r);
        if next <= r {
            return Ok(r);
        }
        r = next;
    }
}

/// [`least_fixed_point`] for several bases sharing one interference term.
/// The fixed point grows with the base, so each search starts from the
/// previous smaller one.
pub fn least_fixed_points<F>(bases: &[Duration], limit: Duration, interference: F) -> Vec<Result<Duration, Unschedulable>>
where
    F: Fn(Duration) -> Duration,
{
    let mut order: Vec<usize> = (0..bases.len()).collect();
    order.sort_by_key(|&i| bases[i]);
    let mut out = vec![Err(Unschedulable); bases.len()];
    let mut below = Duration::zero();
    for i in order {
        let r = iterate_from(bases[i], std::cmp::max(bases[i], below), limit, &interference);
        match r {
            Ok(v) => below = v,
            Err(_) => break,
        }
        out[i] = r;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SuspTaskError {
    #[error("a task needs at least one execution segment")]
    NoSegments,
    #[error("expected {expected} suspension intervals, found {found}")]
    SuspensionCount { expected: usize, found: usize },
    #[error("bounds of {what} are inverted or negative")]
    BadBounds { what: String },
    #[error("period must be positive and no smaller than the deadline")]
    BadTiming,
    #[error("execution plus minimum suspension exceeds the period")]
    Overfull,
}

/// A self-suspending sporadic task: `m` execution segments and `m - 1`
/// suspension intervals with lower/upper bounds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuspTask {
    exec: Vec<Interval>,
    susp: Vec<Interval>,
    deadline: Duration,
    period: Duration,
}

fn check_interval(iv: &Interval, what: impl FnOnce() -> String) -> Result<(), SuspTaskError> {
    if iv.lo.is_negative() || iv.lo > iv.hi {
        return Err(SuspTaskError::BadBounds { what: what() });
    }
    Ok(())
}

impl SuspTask {
    pub fn new(
        exec: Vec<Interval>,
        susp: Vec<Interval>,
        deadline: Duration,
        period: Duration,
    ) -> Result<Self, SuspTaskError> {
        if exec.is_empty() {
            return Err(SuspTaskError::NoSegments);
        }
        if susp.len() + 1 != exec.len() {
            return Err(SuspTaskError::SuspensionCount { expected: exec.len() - 1, found: susp.len() });
        }
        for (j, e) in exec.iter().enumerate() {
            check_interval(e, || format!("execution segment {j}"))?;
        }
        for (j, s) in susp.iter().enumerate() {
            check_interval(s, || format!("suspension {j}"))?;
        }
        if period <= Duration::zero() || deadline > period || deadline.is_negative() {
            return Err(SuspTaskError::BadTiming);
        }
        let t = SuspTask { exec, susp, deadline, period };
        if t.total_exec_up() + t.susp.iter().map(|s| s.lo).sum() > t.period {
            return Err(SuspTaskError::Overfull);
        }
        Ok(t)
    }

    /// Single-segment task with no suspension.
    pub fn sequential(wcet: Duration, deadline: Duration, period: Duration) -> Result<Self, SuspTaskError> {
        SuspTask::new(vec![Interval::new(wcet, wcet)], vec![], deadline, period)
    }

    pub fn m(&self) -> usize {
        self.exec.len()
    }

    pub fn exec(&self) -> &[Interval] {
        &self.exec
    }

    pub fn susp(&self) -> &[Interval] {
        &self.susp
    }

    pub fn deadline(&self) -> Duration {
        self.deadline
    }

    pub fn period(&self) -> Duration {
        self.period
    }

    fn total_exec_up(&self) -> Duration {
        self.exec.iter().map(|e| e.hi).sum()
    }

    /// Minimum separation between execution segments `j` and `j + 1`.
    pub fn inter_arrival(&self, j: usize) -> Duration {
        let m = self.m();
        if j % m != m - 1 {
            self.susp[j % m].lo
        } else if j == m - 1 {
            self.period - self.deadline
        } else {
            self.period - self.total_exec_up() - self.susp.iter().map(|s| s.lo).sum()
        }
    }

    pub fn workload(&self, h: usize, horizon: Duration) -> Duration {
        chain_workload(self, h, horizon)
    }

    pub fn max_workload(&self, horizon: Duration) -> Duration {
        chain_max_workload(self, horizon)
    }

    /// Response bound of execution segment `j` under interference from `hp`.
    pub fn segment_response(&self, j: usize, hp: &[SuspTask]) -> Result<Duration, Unschedulable> {
        self.segment_response_in(j, &tables(hp))
    }

    fn segment_response_in(&self, j: usize, hp: &[Interferer<'_>]) -> Result<Duration, Unschedulable> {
        least_fixed_point(self.exec[j].hi, self.deadline, |r| hp.iter().map(|i| i.max_workload(r)).sum())
    }

    /// Both end-to-end bounds and the per-segment responses feeding the first.
    pub fn response_detail(&self, hp: &[SuspTask]) -> ResponseDetail {
        let hp = tables(hp);
        let bases: Vec<Duration> = self.exec.iter().map(|e| e.hi).collect();
        let segments: Vec<Option<Duration>> =
            least_fixed_points(&bases, self.deadline, |r| hp.iter().map(|i| i.max_workload(r)).sum())
                .into_iter()
                .map(Result::ok)
                .collect();
        let susp_up: Duration = self.susp.iter().map(|s| s.hi).sum();
        let by_segments = segments
            .iter()
            .copied()
            .collect::<Option<Vec<_>>>()
            .map(|rs| susp_up + rs.into_iter().sum());
        let by_total = least_fixed_point(susp_up + self.total_exec_up(), self.deadline, |r| {
            hp.iter().map(|i| i.max_workload(r)).sum()
        })
        .ok();
        ResponseDetail::new(segments, by_segments, by_total, self.deadline)
    }

    /// End-to-end response bound: the smaller of the per-segment sum and the
    /// whole-job recurrence, provided it does not exceed the deadline.
    pub fn task_response(&self, hp: &[SuspTask]) -> Result<Duration, Unschedulable> {
        self.response_detail(hp).bound.ok_or(Unschedulable)
    }
}

impl SegmentChain for SuspTask {
    fn len(&self) -> usize {
        self.m()
    }

    fn exec_up(&self, idx: usize) -> Duration {
        self.exec[idx].hi
    }

    fn gap(&self, j: usize) -> Duration {
        self.inter_arrival(j)
    }
}

/// Workload source for one interfering task.
pub(crate) enum Interferer<'a> {
    Table(WorkloadTable),
    Walk(&'a SuspTask),
}

impl Interferer<'_> {
    pub(crate) fn max_workload(&self, horizon: Duration) -> Duration {
        match self {
            Interferer::Table(t) => t.max_workload(horizon),
            Interferer::Walk(t) => chain_max_workload(*t, horizon),
        }
    }
}

fn tables(hp: &[SuspTask]) -> Vec<Interferer<'_>> {
    hp.iter().map(|t| WorkloadTable::new(t).map_or(Interferer::Walk(t), Interferer::Table)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseDetail {
    /// Per execution segment; `None` where the iterate passed the deadline.
    pub segments: Vec<Option<Duration>>,
    /// Sum of suspension upper bounds and segment responses.
    pub by_segments: Option<Duration>,
    /// Least fixed point of the whole-job recurrence.
    pub by_total: Option<Duration>,
    /// `min` of the two, when it meets the deadline.
    pub bound: Option<Duration>,
}

impl ResponseDetail {
    pub(crate) fn new(
        segments: Vec<Option<Duration>>,
        by_segments: Option<Duration>,
        by_total: Option<Duration>,
        deadline: Duration,
    ) -> Self {
        let bound = match (by_segments, by_total) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
        .filter(|r| *r <= deadline);
        ResponseDetail { segments, by_segments, by_total, bound }
    }
}

pub fn inter_arrival(t: &SuspTask, j: usize) -> Duration {
    t.inter_arrival(j)
}

pub fn workload(t: &SuspTask, h: usize, horizon: Duration) -> Duration {
    t.workload(h, horizon)
}

pub fn max_workload(t: &SuspTask, horizon: Duration) -> Duration {
    t.max_workload(horizon)
}

pub fn segment_response(k: &SuspTask, j: usize, hp: &[SuspTask]) -> Result<Duration, Unschedulable> {
    k.segment_response(j, hp)
}

pub fn task_response(k: &SuspTask, hp: &[SuspTask]) -> Result<Duration, Unschedulable> {
    k.task_response(hp)
}
