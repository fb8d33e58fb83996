//! Random small tasksets shared by the unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{ExecBounds, GpuKernelModel, MemModel, PlatformConfig, TaskSet, TaskSpec};
use crate::time::{Micros, Rational};

fn draw(rng: &mut impl Rng, lo: u64, hi: u64) -> ExecBounds {
    let h = rng.gen_range(lo..=hi);
    ExecBounds::new(rng.gen_range(lo..=h), h)
}

/// Small random taskset; tasks sorted deadline-monotonic.
pub fn random_taskset(seed: u64) -> TaskSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = if rng.gen_bool(0.5) { MemModel::TwoCopy } else { MemModel::OneCopy };
    let n = rng.gen_range(1..=3);
    let sms = rng.gen_range(n as u32..=4);
    let mut tasks: Vec<TaskSpec> = (0..n)
        .map(|i| {
            let m = rng.gen_range(1..=3usize);
            let cpu: Vec<_> = (0..m).map(|_| draw(&mut rng, 1, 6)).collect();
            let mem: Vec<_> = (0..model.copies(m)).map(|_| draw(&mut rng, 1, 4)).collect();
            let gpu: Vec<_> = (0..m - 1)
                .map(|_| {
                    let work = draw(&mut rng, 2, 30);
                    GpuKernelModel {
                        work,
                        critical_path_overhead: Micros(work.lo.0 / 10),
                        interleave_ratio: [Rational::from_integer(1), Rational::new(29, 20), Rational::new(9, 5)]
                            [rng.gen_range(0..3)],
                    }
                })
                .collect();
            let seq: u64 = cpu.iter().chain(&mem).map(|b| b.hi.0).sum::<u64>()
                + gpu.iter().map(|g| g.work.hi.0).sum::<u64>();
            let period = seq * rng.gen_range(1..=4) / 2 + rng.gen_range(1..=10);
            let deadline = period - rng.gen_range(0..=period / 4);
            TaskSpec {
                id: format!("t{i}"),
                priority: 0,
                deadline: Micros(deadline),
                period: Micros(period),
                cpu_segments: cpu,
                mem_segments: mem,
                gpu_segments: gpu,
            }
        })
        .collect();
    tasks.sort_by_key(|t| (t.deadline, t.id.clone()));
    for (p, t) in tasks.iter_mut().enumerate() {
        t.priority = p as u32 + 1;
    }
    TaskSet {
        mem_model: model,
        platform: PlatformConfig { physical_sms: sms, launch_overhead_frac: Rational::new(12, 100) },
        tasks,
    }
}
