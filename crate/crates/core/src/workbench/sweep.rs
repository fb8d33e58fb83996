//! Acceptance-ratio sweeps over utilization and one varied dimension.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::generator::{generate_with, GenerateError, GeneratorParams};
use crate::analysis::analyze_methods;
use crate::model::{MemModel, Method};
use crate::time::{format_rational, parse_rational, Rational};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    /// Values `c:s`; copy and kernel ranges scaled by `s / c`.
    LengthRatio,
    /// CPU segments per task.
    Subtasks,
    Tasks,
    /// Physical SMs.
    Sms,
    /// No varied dimension; `values` may be empty.
    None,
}

impl Dimension {
    pub fn name(self) -> &'static str {
        match self {
            Dimension::LengthRatio => "length_ratio",
            Dimension::Subtasks => "subtasks",
            Dimension::Tasks => "tasks",
            Dimension::Sms => "sms",
            Dimension::None => "none",
        }
    }
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

fn default_models() -> Vec<MemModel> {
    vec![MemModel::TwoCopy]
}

fn default_count() -> usize {
    100
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub base: GeneratorParams,
    pub dimension: Dimension,
    #[serde(default)]
    pub values: Vec<String>,
    /// Target utilizations as decimal or fraction strings.
    pub utilizations: Vec<String>,
    #[serde(default = "default_count")]
    pub tasksets_per_point: usize,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_models")]
    pub mem_models: Vec<MemModel>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SweepError {
    #[error("utilizations[{index}]: {message}")]
    Utilization { index: usize, message: String },
    #[error("values[{index}] = `{value}`: {message}")]
    Value { index: usize, value: String, message: String },
    #[error("{0} must not be empty")]
    Empty(&'static str),
    #[error("tasksets_per_point must be positive")]
    NoTasksets,
    #[error("generator: {0}")]
    Generate(#[from] GenerateError),
}

/// One CSV row: acceptance of `method` at one grid point.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SweepRow {
    pub dimension: Dimension,
    pub value: String,
    pub method: Method,
    pub mem_model: MemModel,
    pub utilization: Rational,
    pub accepted: usize,
    pub total: usize,
}

impl SweepRow {
    pub fn acceptance(&self) -> f64 {
        self.accepted as f64 / self.total as f64
    }
}

fn apply(base: &GeneratorParams, dim: Dimension, index: usize, value: &str) -> Result<GeneratorParams, SweepError> {
    let err = |message: &str| SweepError::Value { index, value: value.to_string(), message: message.to_string() };
    let int = || value.trim().parse::<u32>().map_err(|_| err("expected a positive integer")).and_then(|v| {
        if v == 0 {
            Err(err("expected a positive integer"))
        } else {
            Ok(v)
        }
    });
    let mut p = base.clone();
    match dim {
        Dimension::LengthRatio => {
            let (c, s) = value.split_once(':').ok_or_else(|| err("expected `computation:suspension`"))?;
            let parse = |x: &str| x.trim().parse::<u32>().ok().filter(|&v| v > 0);
            match (parse(c), parse(s)) {
                (Some(c), Some(s)) => p = p.with_length_ratio(c, s),
                _ => return Err(err("expected positive integers on both sides of `:`")),
            }
        }
        Dimension::Subtasks => p.n_subtasks = int()? as usize,
        Dimension::Tasks => p.n_tasks = int()? as usize,
        Dimension::Sms => p.physical_sms = int()?,
        Dimension::None => {}
    }
    Ok(p)
}

struct Grid {
    /// Per dimension value and memory model.
    params: Vec<(String, MemModel, GeneratorParams)>,
    utilizations: Vec<Rational>,
}

fn grid(cfg: &SweepConfig) -> Result<Grid, SweepError> {
    if cfg.utilizations.is_empty() {
        return Err(SweepError::Empty("utilizations"));
    }
    if cfg.methods.is_empty() {
        return Err(SweepError::Empty("methods"));
    }
    if cfg.mem_models.is_empty() {
        return Err(SweepError::Empty("mem_models"));
    }
    if cfg.tasksets_per_point == 0 {
        return Err(SweepError::NoTasksets);
    }
    let utilizations = cfg
        .utilizations
        .iter()
        .enumerate()
        .map(|(index, s)| {
            let u = parse_rational(s).map_err(|e| SweepError::Utilization { index, message: e.to_string() })?;
            if u <= Rational::from_integer(0) {
                return Err(SweepError::Utilization { index, message: "must be positive".into() });
            }
            Ok(u)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let values: Vec<String> = match (cfg.dimension, cfg.values.is_empty()) {
        (Dimension::None, true) => vec![String::new()],
        (_, true) => return Err(SweepError::Empty("values")),
        _ => cfg.values.clone(),
    };
    let mut params = Vec::new();
    for (i, v) in values.iter().enumerate() {
        let p = apply(&cfg.base, cfg.dimension, i, v)?;
        for &model in &cfg.mem_models {
            let p = GeneratorParams { mem_model: model, utilization: utilizations[0], ..p.clone() };
            generate_with(&p, &mut ChaCha8Rng::seed_from_u64(0))?;
            params.push((v.clone(), model, p));
        }
    }
    Ok(Grid { params, utilizations })
}

/// Random stream of one taskset slot. Independent of the varied dimension
/// and of the memory model, so every column of the grid sees the same draws.
pub fn cell_rng(master_seed: u64, utilization_index: usize, taskset_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(((utilization_index as u64) << 32) | taskset_index as u64);
    rng
}

/// Run the sweep. Rows are ordered by dimension value, memory model,
/// utilization, then method; results do not depend on thread scheduling.
pub fn acceptance_sweep(cfg: &SweepConfig, master_seed: u64) -> Result<Vec<SweepRow>, SweepError> {
    let g = grid(cfg)?;
    let n = cfg.tasksets_per_point;
    let cells: Vec<(usize, usize, usize)> = (0..g.params.len())
        .flat_map(|pi| (0..g.utilizations.len()).flat_map(move |ui| (0..n).map(move |k| (pi, ui, k))))
        .collect();
    let verdicts: Vec<Vec<bool>> = cells
        .par_iter()
        .map(|&(pi, ui, k)| {
            let p = GeneratorParams { utilization: g.utilizations[ui], ..g.params[pi].2.clone() };
            let ts = generate_with(&p, &mut cell_rng(master_seed, ui, k)).expect("parameters checked").taskset;
            analyze_methods(&ts, &cfg.methods).iter().map(|r| r.schedulable).collect()
        })
        .collect();
    let mut rows = Vec::new();
    for (pi, (value, model, _)) in g.params.iter().enumerate() {
        for (ui, &u) in g.utilizations.iter().enumerate() {
            let base = (pi * g.utilizations.len() + ui) * n;
            for (mi, &method) in cfg.methods.iter().enumerate() {
                let accepted = verdicts[base..base + n].iter().filter(|v| v[mi]).count();
                rows.push(SweepRow {
                    dimension: cfg.dimension,
                    value: value.clone(),
                    method,
                    mem_model: *model,
                    utilization: u,
                    accepted,
                    total: n,
                });
            }
        }
    }
    Ok(rows)
}

/// CSV with header `dimension,value,method,mem_model,utilization,acceptance`.
pub fn write_csv<W: Write>(rows: &[SweepRow], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["dimension", "value", "method", "mem_model", "utilization", "acceptance"])?;
    for r in rows {
        out.write_record([
            r.dimension.name(),
            &r.value,
            r.method.name(),
            r.mem_model.name(),
            &format_rational(&r.utilization),
            &format!("{:.4}", r.acceptance()),
        ])?;
    }
    out.flush()?;
    Ok(())
}
