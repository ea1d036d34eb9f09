//! Load, solve, map and score: the steps shared by the batch commands.

use crate::bcd::solve_cruot;
use crate::data_io::{load_prepared, RunConfig};
use crate::entropic_map::{align, fit_map};
use crate::error::Result;
use crate::evaluation::{label_transfer_accuracy, subsample, transported_mass, EvalReport};
use crate::types::{DiscreteMeasure, PointCloud, SolveConfig, SolveResult};

/// Source and target clouds with their measures, ready for the solver.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub source: PointCloud,
    pub a: DiscreteMeasure,
    pub target: PointCloud,
    pub b: DiscreteMeasure,
}

/// Loads both tables, standardizes them if asked and applies subsampling.
pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let label = cfg.label_column.as_deref();
    let (mut source, mut a) = load_prepared(&cfg.source_path, label, cfg.solve.standardize)?;
    let (mut target, mut b) = load_prepared(&cfg.target_path, label, cfg.solve.standardize)?;
    if let Some(spec) = &cfg.subsample {
        if let Some(s) = &spec.source {
            (source, a) = subsample(&source, &a, s)?;
        }
        if let Some(s) = &spec.target {
            (target, b) = subsample(&target, &b, s)?;
        }
    }
    Ok(Prepared {
        source,
        a,
        target,
        b,
    })
}

impl Prepared {
    pub fn solve(&self, config: &SolveConfig) -> Result<SolveResult> {
        solve_cruot(&self.source, &self.a, &self.target, &self.b, config)
    }
}

#[derive(Debug, Clone)]
pub struct MapEval {
    pub result: SolveResult,
    pub aligned: PointCloud,
    pub report: EvalReport,
    /// Whether the inner solve behind the map converged.
    pub map_converged: bool,
}

impl MapEval {
    pub fn converged(&self) -> bool {
        self.result.converged && self.map_converged
    }
}

/// Solves, fits the entropic map, pushes the source through it and scores
/// the alignment by k-NN label transfer.
pub fn map_eval(
    data: &Prepared,
    config: &SolveConfig,
    inner_epsilon: f64,
    k: usize,
) -> Result<MapEval> {
    let result = data.solve(config)?;
    let model = fit_map(&result, &data.source, &data.target, inner_epsilon)?;
    let aligned = align(&model, &data.source)?;
    let report = label_transfer_accuracy(&aligned, &data.target, k)?
        .with_transported_mass(transported_mass(&result.plan));
    Ok(MapEval {
        map_converged: model.converged(),
        result,
        aligned,
        report,
    })
}
