use std::ops::ControlFlow;

use proptest::prelude::*;

use super::rtgpu::for_each_schedulable;
use super::*;
use crate::gpu::feasible_allocations;
use crate::model::{
    validate_taskset, ExecBounds, GpuKernelModel, Interval, MemModel, Method, PlatformConfig, SmAllocation,
    TaskSet, TaskSpec,
};
use crate::suspension::{chain_max_workload, chain_workload, SegmentChain, SuspTask, Unschedulable};
use crate::testutil::random_taskset;
use crate::time::{Duration, Micros, Rational};

fn us(v: i128) -> Duration {
    Duration::from_micros(v)
}

fn kernel(work: u64) -> GpuKernelModel {
    GpuKernelModel {
        work: ExecBounds::exact(work),
        critical_path_overhead: Micros(0),
        interleave_ratio: Rational::from_integer(1),
    }
}

fn task(id: &str, prio: u32, t: u64, d: u64, cpu: &[u64], mem: &[u64], gpu: &[u64]) -> TaskSpec {
    TaskSpec {
        id: id.into(),
        priority: prio,
        deadline: Micros(d),
        period: Micros(t),
        cpu_segments: cpu.iter().map(|&c| ExecBounds::exact(c)).collect(),
        mem_segments: mem.iter().map(|&c| ExecBounds::exact(c)).collect(),
        gpu_segments: gpu.iter().map(|&w| kernel(w)).collect(),
    }
}

fn set(model: MemModel, sms: u32, tasks: Vec<TaskSpec>) -> TaskSet {
    let ts = TaskSet {
        mem_model: model,
        platform: PlatformConfig { physical_sms: sms, launch_overhead_frac: Rational::new(12, 100) },
        tasks,
    };
    assert_eq!(validate_taskset(&ts), vec![]);
    ts
}

fn alloc(ts: &TaskSet, counts: &[u32]) -> SmAllocation {
    SmAllocation::from_physical(ts, counts)
}

fn cache(ts: &TaskSet, counts: &[u32]) -> GpuBoundsCache {
    GpuBoundsCache::new(ts, &alloc(ts, counts)).unwrap()
}

#[test]
fn random_tasksets_are_valid() {
    for seed in 0..200 {
        let ts = random_taskset(seed);
        assert_eq!(validate_taskset(&ts), vec![], "seed {seed}");
    }
}

#[test]
fn mem_gap_cases() {
    let ts = set(MemModel::TwoCopy, 1, vec![task("a", 1, 20, 18, &[1, 1], &[2, 2], &[10])]);
    let c = cache(&ts, &[1]);
    assert_eq!(mem_inter_arrival(&ts, 0, 0, &c), Ok(us(5)));
    assert_eq!(mem_inter_arrival(&ts, 0, 1, &c), Ok(us(2 + 1 + 1)));
    assert_eq!(mem_inter_arrival(&ts, 0, 2, &c), Ok(us(5)));
    assert_eq!(mem_inter_arrival(&ts, 0, 3, &c), Ok(us(20 - 4 - 5)));
}

#[test]
fn mem_workload_examples() {
    // GRlo = 10 / 2 = 5 on one physical SM.
    let ts = set(MemModel::TwoCopy, 1, vec![task("a", 1, 40, 40, &[1, 1], &[2, 2], &[10])]);
    let c = cache(&ts, &[1]);
    assert_eq!(mem_inter_arrival(&ts, 0, 0, &c), Ok(us(5)));
    assert_eq!(mem_workload(&ts, 0, 0, us(0), &c), Ok(us(0)));
    assert_eq!(mem_workload(&ts, 0, 0, us(7), &c), Ok(us(2)));
    assert_eq!(mem_workload(&ts, 0, 0, us(9), &c), Ok(us(4)));

    // A single copy behaves like a plain sporadic task.
    let one = set(MemModel::OneCopy, 1, vec![task("a", 1, 10, 10, &[1, 1], &[1], &[4])]);
    let c = cache(&one, &[1]);
    // First gap: GRlo + both CPU segments around the job boundary.
    let plain = SuspTask::sequential(us(1), us(6), us(10)).unwrap();
    for h in 0..40 {
        assert_eq!(mem_workload(&one, 0, 0, us(h), &c), Ok(plain.workload(0, us(h))));
    }
}

#[test]
fn mem_response_examples() {
    let alone = set(MemModel::TwoCopy, 2, vec![task("a", 1, 100, 100, &[1, 1], &[2, 4], &[10])]);
    let c = cache(&alone, &[1]);
    assert_eq!(mem_response(&alone, 0, 1, &c), Ok(us(4)));

    let blocked = set(
        MemModel::TwoCopy,
        2,
        vec![task("a", 1, 100, 100, &[1, 1], &[2, 4], &[10]), task("b", 2, 100, 100, &[1, 1], &[3, 1], &[10])],
    );
    let c = cache(&blocked, &[1, 1]);
    assert_eq!(mem_blocking(&blocked, 0), us(3));
    assert_eq!(mem_response(&blocked, 0, 0, &c), Ok(us(5)));
    // a's second copy, then the next job's first copy 2us later: 3 + 4 + 2.
    assert_eq!(mem_response(&blocked, 1, 0, &c), Ok(us(9)));
}

#[test]
fn cpu_examples() {
    let ts = set(MemModel::TwoCopy, 2, vec![task("a", 1, 20, 18, &[3, 3], &[1, 1], &[10])]);
    let c = cache(&ts, &[1]);
    assert_eq!(cpu_inter_arrival(&ts, 0, 0, &c), Ok(us(7)));
    assert_eq!(cpu_inter_arrival(&ts, 0, 1, &c), Ok(us(2)));
    assert_eq!(cpu_inter_arrival(&ts, 0, 3, &c), Ok(us(7)));
    assert_eq!(cpu_workload(&ts, 0, 0, us(0), &c), Ok(us(0)));
    assert_eq!(cpu_response(&ts, 0, 0, &c), Ok(us(3)));

    // Single hp of 1 every 10: R = 2 + ceil-style interference = 4.
    let two = set(
        MemModel::TwoCopy,
        1,
        vec![task("hp", 1, 10, 10, &[1], &[], &[]), task("k", 2, 100, 100, &[2], &[], &[])],
    );
    let c = cache(&two, &[]);
    assert_eq!(cpu_response(&two, 1, 0, &c), Ok(us(4)));

    let overload = set(
        MemModel::TwoCopy,
        1,
        vec![task("hp", 1, 10, 10, &[10], &[], &[]), task("k", 2, 100, 100, &[2], &[], &[])],
    );
    let c = cache(&overload, &[]);
    assert_eq!(cpu_response(&overload, 1, 0, &c), Err(Unschedulable));
    assert_eq!(cpu_workload(&overload, 0, 0, us(25), &c), Ok(us(25)));
}

#[test]
fn single_task_end_to_end_is_sequential_sum() {
    let ts = set(MemModel::TwoCopy, 2, vec![task("a", 1, 100, 100, &[3, 4], &[2, 1], &[40])]);
    let c = cache(&ts, &[2]);
    // GRup = 40 / 4.
    assert_eq!(end_to_end(&ts, 0, &c), Ok(us(3 + 4 + 2 + 1 + 10)));
    let tight = set(MemModel::TwoCopy, 2, vec![task("a", 1, 100, 19, &[3, 4], &[2, 1], &[40])]);
    assert_eq!(end_to_end(&tight, 0, &cache(&tight, &[2])), Err(Unschedulable));
}

#[test]
fn two_task_end_to_end_takes_smaller_branch() {
    let ts = set(
        MemModel::TwoCopy,
        2,
        vec![task("hp", 1, 20, 20, &[2], &[], &[]), task("k", 2, 100, 100, &[2, 2], &[1, 1], &[8])],
    );
    let c = cache(&ts, &[1]);
    // hp carries in one job and releases the next at its deadline, so two
    // hp jobs hit any window longer than 2. Per segment: 6 each, R1 = 4 + 2
    // + 12 = 18; whole job: 10 + 4 = 14.
    assert_eq!(cpu_response(&ts, 1, 0, &c), Ok(us(6)));
    assert_eq!(end_to_end(&ts, 1, &c), Ok(us(14)));
}

#[test]
fn grid_search_examples() {
    let empty = set(MemModel::TwoCopy, 3, vec![]);
    let r = analyze_rtgpu(&empty);
    assert!(r.schedulable);
    assert_eq!(r.allocation, Some(SmAllocation::default()));

    let light = set(
        MemModel::TwoCopy,
        4,
        vec![task("a", 1, 100, 100, &[1, 1], &[1, 1], &[8]), task("b", 2, 100, 100, &[1, 1], &[1, 1], &[8])],
    );
    let r = analyze_rtgpu(&light);
    assert!(r.schedulable);
    assert_eq!(r.allocation.unwrap().physical_counts(&light), vec![1, 1]);

    // Needs more SMs on the second task only.
    let skewed = set(
        MemModel::TwoCopy,
        4,
        vec![task("a", 1, 100, 60, &[1, 1], &[1, 1], &[8]), task("b", 2, 100, 100, &[1, 1], &[1, 1], &[300])],
    );
    let r = analyze_rtgpu(&skewed);
    assert_eq!(r.allocation.unwrap().physical_counts(&skewed), vec![1, 2]);
    let first = feasible_allocations(&skewed).find(|a| analyze_rtgpu_at(&skewed, a).unwrap().schedulable);
    assert_eq!(first.unwrap().physical_counts(&skewed), vec![1, 2]);

    let crowded = set(
        MemModel::TwoCopy,
        1,
        vec![task("a", 1, 100, 100, &[1, 1], &[1, 1], &[8]), task("b", 2, 100, 100, &[1, 1], &[1, 1], &[8])],
    );
    assert!(!analyze_rtgpu(&crowded).schedulable);
    for m in Method::ALL {
        assert!(!analyze(&crowded, m).schedulable);
    }
}

#[test]
fn baselines_on_single_task_match_sequential_sum() {
    let ts = set(MemModel::TwoCopy, 2, vec![task("a", 1, 100, 100, &[3, 4], &[2, 1], &[40])]);
    for m in Method::ALL {
        let r = analyze(&ts, m);
        assert!(r.schedulable, "{m}");
        // One physical SM: GRup = 40 / 2.
        assert_eq!(r.per_task["a"].end_to_end_up, Some(us(30)), "{m}");
        assert_eq!(r.allocation.as_ref().unwrap().physical_counts(&ts), vec![1]);
    }
}

#[test]
fn baselines_on_pure_cpu_tasksets_agree() {
    let ts = set(
        MemModel::TwoCopy,
        1,
        vec![task("a", 1, 10, 10, &[3], &[], &[]), task("b", 2, 14, 14, &[4], &[], &[]), task("c", 3, 40, 40, &[5], &[], &[])],
    );
    let verdicts: Vec<_> = Method::ALL.iter().map(|&m| analyze(&ts, m)).collect();
    for r in &verdicts {
        assert_eq!(r.schedulable, verdicts[0].schedulable);
        assert_eq!(r.per_task["c"].end_to_end_up, verdicts[0].per_task["c"].end_to_end_up);
    }
    assert!(verdicts[0].schedulable);
}

#[test]
fn long_suspensions_defeat_busy_waiting() {
    let ts = set(
        MemModel::TwoCopy,
        2,
        vec![task("a", 1, 80, 80, &[1, 1], &[1, 1], &[100]), task("b", 2, 80, 80, &[1, 1], &[1, 1], &[100])],
    );
    assert!(analyze_rtgpu(&ts).schedulable);
    assert!(!analyze_busy_waiting_baseline(&ts).schedulable);
}

fn first_schedulable_naive(ts: &TaskSet) -> Option<SmAllocation> {
    feasible_allocations(ts).find(|a| analyze_rtgpu_at(ts, a).is_ok_and(|r| r.schedulable))
}

/// The copy chain of a two-copy task is a self-suspending task whose
/// deadline absorbs the CPU segments around the job boundary.
fn mem_as_susp_task(t: &TaskSpec, gr: &[Interval]) -> Option<SuspTask> {
    let m = t.m();
    let exec = t.mem_segments.iter().map(|&b| b.into()).collect();
    let susp = (0..2 * m - 3)
        .map(|j| {
            let lo = if j % 2 == 0 { gr[j / 2].lo } else { t.cpu_segments[(j + 1) / 2].lo() };
            Interval::new(lo, lo)
        })
        .collect();
    let d = t.deadline() - t.cpu_segments[m - 1].lo() - t.cpu_segments[0].lo();
    SuspTask::new(exec, susp, d, t.period()).ok()
}

fn cpu_as_susp_task(t: &TaskSpec, model: MemModel, gr: &[Interval]) -> Option<SuspTask> {
    let exec = t.cpu_segments.iter().map(|&b| b.into()).collect();
    let susp = (0..t.m() - 1)
        .map(|j| {
            let lo = match model {
                MemModel::TwoCopy => t.mem_segments[2 * j].lo() + gr[j].lo + t.mem_segments[2 * j + 1].lo(),
                MemModel::OneCopy => t.mem_segments[j].lo() + gr[j].lo,
            };
            Interval::new(lo, lo)
        })
        .collect();
    SuspTask::new(exec, susp, t.deadline(), t.period()).ok()
}

fn sweep_allocations(ts: &TaskSet) -> Vec<SmAllocation> {
    feasible_allocations(ts).take(6).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn views_reduce_to_suspension_tasks(seed in any::<u64>(), horizons in prop::collection::vec(0i128..400, 8)) {
        let ts = random_taskset(seed);
        for a in sweep_allocations(&ts) {
            let c = GpuBoundsCache::new(&ts, &a).unwrap();
            for (i, t) in ts.tasks.iter().enumerate() {
                let gr = c.task(i);
                let cpu_chain = Chain::cpu(t, ts.mem_model, gr);
                if let (Ok(chain), Some(st)) = (&cpu_chain, cpu_as_susp_task(t, ts.mem_model, gr)) {
                    for &h in &horizons {
                        for start in 0..t.m() {
                            prop_assert_eq!(chain_workload(chain, start, us(h)), st.workload(start, us(h)));
                        }
                    }
                }
                if ts.mem_model == MemModel::TwoCopy && t.uses_gpu() {
                    let chain = Chain::memory(t, ts.mem_model, gr);
                    if let (Ok(chain), Some(st)) = (&chain, mem_as_susp_task(t, gr)) {
                        for &h in &horizons {
                            for start in 0..chain.len() {
                                prop_assert_eq!(chain_workload(chain, start, us(h)), st.workload(start, us(h)));
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn view_workloads_are_monotone(seed in any::<u64>()) {
        let ts = random_taskset(seed);
        for a in sweep_allocations(&ts) {
            let c = GpuBoundsCache::new(&ts, &a).unwrap();
            for (i, t) in ts.tasks.iter().enumerate() {
                let mut chains = vec![];
                chains.extend(Chain::cpu(t, ts.mem_model, c.task(i)));
                if t.uses_gpu() {
                    chains.extend(Chain::memory(t, ts.mem_model, c.task(i)));
                }
                for chain in &chains {
                    let mut prev = us(0);
                    for h in 0..300 {
                        let w = chain_max_workload(chain, us(h));
                        prop_assert!(w >= prev);
                        prop_assert!(w <= us(h));
                        prev = w;
                    }
                }
            }
        }
    }

    #[test]
    fn pruned_search_finds_first_schedulable_allocation(seed in any::<u64>()) {
        let ts = random_taskset(seed);
        let fast = analyze_rtgpu(&ts);
        let naive = first_schedulable_naive(&ts);
        prop_assert_eq!(fast.schedulable, naive.is_some());
        if let Some(a) = naive {
            prop_assert_eq!(fast.allocation.as_ref(), Some(&a));
            let full = analyze_rtgpu_at(&ts, &a).unwrap();
            prop_assert_eq!(&fast.per_task, &full.per_task);
        }
    }

    #[test]
    fn every_visited_allocation_is_schedulable(seed in any::<u64>()) {
        let ts = random_taskset(seed);
        let mut visited = vec![];
        for_each_schedulable(&ts, |s| {
            visited.push(s.counts.clone());
            ControlFlow::Continue(())
        });
        let expected: Vec<_> = feasible_allocations(&ts)
            .filter(|a| analyze_rtgpu_at(&ts, a).unwrap().schedulable)
            .map(|a| a.physical_counts(&ts))
            .collect();
        prop_assert_eq!(visited, expected);
    }

    #[test]
    fn baselines_are_dominated(seed in any::<u64>()) {
        let ts = random_taskset(seed);
        for_each_schedulable(&ts, |s| {
            let ss = super::baselines::self_suspension_at(&ts, s.evals);
            let bw = super::baselines::busy_waiting_at(&ts, s.evals);
            if bw.is_some() {
                assert!(ss.is_some(), "busy-waiting accepted where self-suspension did not");
            }
            for (b, e) in ss.iter().flatten().zip(s.evals) {
                assert!(b.end_to_end_up >= e.e2e);
            }
            if let (Some(ss), Some(bw)) = (&ss, &bw) {
                for (x, y) in ss.iter().zip(bw) {
                    assert!(y.end_to_end_up >= x.end_to_end_up);
                }
            }
            ControlFlow::Continue(())
        });
        let verdict = |m| analyze(&ts, m).schedulable;
        let (rt, ss, bw) = (verdict(Method::Rtgpu), verdict(Method::SelfSuspension), verdict(Method::BusyWaiting));
        prop_assert!(!bw || ss);
        prop_assert!(!ss || rt);
    }

    #[test]
    fn more_sms_never_hurt(seed in any::<u64>()) {
        let mut ts = random_taskset(seed);
        let before: Vec<bool> = Method::ALL.iter().map(|&m| analyze(&ts, m).schedulable).collect();
        ts.platform.physical_sms += 1;
        let after: Vec<bool> = Method::ALL.iter().map(|&m| analyze(&ts, m).schedulable).collect();
        for (b, a) in before.iter().zip(&after) {
            prop_assert!(!b || *a);
        }
    }

    #[test]
    fn raising_upper_bounds_never_lowers_bounds(seed in any::<u64>(), pick in any::<prop::sample::Index>(), bump in 1u64..5) {
        let ts = random_taskset(seed);
        let Some(a) = feasible_allocations(&ts).next() else { return Ok(()) };
        let base = analyze_rtgpu_at(&ts, &a).unwrap();
        let mut raised = ts.clone();
        let k = pick.index(raised.len());
        let t = &mut raised.tasks[k];
        match pick.index(4) {
            0 => t.cpu_segments[0].hi.0 += bump,
            1 if !t.mem_segments.is_empty() => t.mem_segments[0].hi.0 += bump,
            2 if t.uses_gpu() => t.gpu_segments[0].work.hi.0 += bump,
            3 if t.uses_gpu() => t.gpu_segments[0].interleave_ratio = Rational::new(9, 5),
            _ => t.cpu_segments[0].hi.0 += bump,
        }
        let after = analyze_rtgpu_at(&raised, &a).unwrap();
        // An unschedulable bound (None) dominates every value.
        let le = |x: Option<Duration>, y: Option<Duration>| match (x, y) {
            (_, None) => true,
            (None, Some(_)) => false,
            (Some(x), Some(y)) => x <= y,
        };
        for (b, r) in base.per_task.values().zip(after.per_task.values()) {
            prop_assert!(le(b.end_to_end_up, r.end_to_end_up));
            for (x, y) in b.mem_r_up.iter().zip(&r.mem_r_up) {
                prop_assert!(le(*x, *y));
            }
            for (x, y) in b.cpu_r_up.iter().zip(&r.cpu_r_up) {
                prop_assert!(le(*x, *y));
            }
            for (x, y) in b.gpu_r.iter().zip(&r.gpu_r) {
                prop_assert!(x.hi <= y.hi);
            }
        }
    }
}


proptest! {
    #[test]
    fn one_pass_matches_separate_runs(seed in any::<u64>()) {
        let ts = random_taskset(seed);
        let together = analyze_methods(&ts, &Method::ALL);
        for (r, m) in together.iter().zip(Method::ALL) {
            prop_assert_eq!(r, &analyze(&ts, m));
        }
    }
}
