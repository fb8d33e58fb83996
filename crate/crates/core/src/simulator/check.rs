//! Trace checks: observed responses against analysis bounds, and the
//! resource discipline of the simulated platform.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::Serialize;

use super::{Action, BusySlice, Resource, SegmentKind, SegmentRef, SimTrace};
use crate::model::{AnalysisReport, Method};
use crate::time::Duration;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    SegmentBound,
    EndToEnd,
    DeadlineMiss,
    /// The report has no finite bound for something the trace executed.
    MissingBound,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BoundViolation {
    pub kind: ViolationKind,
    pub task: String,
    pub job: u64,
    pub segment: Option<SegmentRef>,
    pub observed: Option<Duration>,
    pub bound: Option<Duration>,
}

impl fmt::Display for BoundViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: task {} job {}", self.kind, self.task, self.job)?;
        if let Some(s) = self.segment {
            write!(f, " {s}")?;
        }
        match (self.observed, self.bound) {
            (Some(o), Some(b)) => write!(f, ": observed {o}us > bound {b}us"),
            (Some(o), None) => write!(f, ": observed {o}us, no bound"),
            (None, _) => write!(f, ": unfinished"),
        }
    }
}

/// Every observed response that exceeds its bound in `report`, plus every
/// deadline miss. Per-segment bounds are only compared for RTGPU reports;
/// the baselines bound only whole jobs.
pub fn check_against_analysis(trace: &SimTrace, report: &AnalysisReport) -> Vec<BoundViolation> {
    let mut out = Vec::new();
    if report.method == Method::Rtgpu {
        for s in &trace.segments {
            let bound = report.per_task.get(&s.task).and_then(|b| match s.segment.kind {
                SegmentKind::Cpu => b.cpu_r_up.get(s.segment.index).copied().flatten(),
                SegmentKind::Mem => b.mem_r_up.get(s.segment.index).copied().flatten(),
                SegmentKind::Gpu => b.gpu_r.get(s.segment.index).map(|g| g.hi),
            });
            let observed = s.response();
            let kind = match bound {
                Some(b) if observed <= b => continue,
                Some(_) => ViolationKind::SegmentBound,
                None => ViolationKind::MissingBound,
            };
            out.push(BoundViolation {
                kind,
                task: s.task.clone(),
                job: s.job,
                segment: Some(s.segment),
                observed: Some(observed),
                bound,
            });
        }
    }
    for j in &trace.jobs {
        let bound = report.per_task.get(&j.task).and_then(|b| b.end_to_end_up);
        let observed = j.response();
        match (observed, bound) {
            (Some(o), Some(b)) if o <= b => {}
            (Some(_), Some(_)) => out.push(BoundViolation {
                kind: ViolationKind::EndToEnd,
                task: j.task.clone(),
                job: j.job,
                segment: None,
                observed,
                bound,
            }),
            (Some(_), None) => out.push(BoundViolation {
                kind: ViolationKind::MissingBound,
                task: j.task.clone(),
                job: j.job,
                segment: None,
                observed,
                bound,
            }),
            (None, _) => {}
        }
        if j.missed_deadline() {
            out.push(BoundViolation {
                kind: ViolationKind::DeadlineMiss,
                task: j.task.clone(),
                job: j.job,
                segment: None,
                observed,
                bound: Some(j.deadline - j.release),
            });
        }
    }
    out
}

fn overlaps(slices: &mut [&BusySlice], what: &str, out: &mut Vec<String>) {
    slices.sort_by_key(|s| (s.start, s.end));
    for w in slices.windows(2) {
        if w[1].start < w[0].end {
            out.push(format!(
                "{what}: {} job {} {} [{}, {}) overlaps {} job {} {} [{}, {})",
                w[0].task, w[0].job, w[0].segment, w[0].start, w[0].end, w[1].task, w[1].job, w[1].segment, w[1].start,
                w[1].end
            ));
        }
    }
}

/// Platform discipline violated by `trace`: overlapping CPU or bus use,
/// interrupted copies, more than one lower-priority copy delaying a waiting
/// copy, unordered events, and starts without a finish or truncation note.
pub fn check_trace_invariants(trace: &SimTrace) -> Vec<String> {
    let mut out = Vec::new();
    if trace.events.windows(2).any(|w| w[1].time < w[0].time) {
        out.push("events are not ordered by time".to_string());
    }

    let mut cpu: Vec<&BusySlice> = trace.slices.iter().filter(|s| s.resource == Resource::Cpu).collect();
    overlaps(&mut cpu, "cpu", &mut out);
    let mut bus: Vec<&BusySlice> = trace.slices.iter().filter(|s| s.resource == Resource::Bus).collect();
    overlaps(&mut bus, "bus", &mut out);
    let mut by_task: HashMap<&str, Vec<&BusySlice>> = HashMap::new();
    for s in trace.slices.iter().filter(|s| s.resource == Resource::Gpu) {
        by_task.entry(&s.task).or_default().push(s);
    }
    for (task, mut v) in by_task {
        overlaps(&mut v, &format!("gpu of {task}"), &mut out);
    }

    let mut bus_slices: HashMap<(&str, u64, SegmentRef), Vec<&BusySlice>> = HashMap::new();
    for s in &bus {
        bus_slices.entry((&s.task, s.job, s.segment)).or_default().push(s);
    }
    let priority: HashMap<&str, u32> = trace.slices.iter().map(|s| (s.task.as_str(), s.priority)).collect();
    for r in trace.segments.iter().filter(|r| r.segment.kind == SegmentKind::Mem) {
        let held = bus_slices.get(&(r.task.as_str(), r.job, r.segment)).map(Vec::as_slice).unwrap_or(&[]);
        if held.len() != 1 || held[0].start != r.start || held[0].end != r.finish {
            out.push(format!("{} job {} {} was not one uninterrupted transfer", r.task, r.job, r.segment));
        }
        if r.start > r.ready {
            let p = priority[r.task.as_str()];
            let blockers =
                bus.iter().filter(|s| s.priority > p && s.start < r.start && s.end > r.ready).count();
            if blockers > 1 {
                out.push(format!(
                    "{} job {} {} waited behind {blockers} lower-priority copies",
                    r.task, r.job, r.segment
                ));
            }
        }
    }

    let finished: HashSet<(&str, u64, SegmentRef)> =
        trace.segments.iter().map(|r| (r.task.as_str(), r.job, r.segment)).collect();
    let truncated: HashSet<(&str, u64)> = trace
        .jobs
        .iter()
        .filter(|j| j.finish.is_none())
        .map(|j| (j.task.as_str(), j.job))
        .collect();
    for e in trace.events.iter().filter(|e| e.action == Action::Start) {
        let seg = e.segment.expect("start events name a segment");
        if !finished.contains(&(e.task.as_str(), e.job, seg)) && !truncated.contains(&(e.task.as_str(), e.job)) {
            out.push(format!("{} job {} {} started but never finished", e.task, e.job, seg));
        }
    }
    if truncated.len() != trace.truncated.len() {
        out.push(format!(
            "{} unfinished jobs but {} truncation notes",
            truncated.len(),
            trace.truncated.len()
        ));
    }
    out
}
