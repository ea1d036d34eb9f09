//! Entropic estimate of the Monge map of a CR-UOT solution.
//!
//! Given a solution `(M, P)` of the outer problem at some `eps'`, the source
//! marginal of `P` is pushed through `M` and a balanced entropic OT problem
//! with cost `-<y', y>` is solved between `M_# alpha` and the target marginal
//! `beta` at a second regularisation `eps`. With `g` the resulting target
//! potential the map is the softmax barycenter
//!
//! ```text
//! T(x) = sum_j y_j w_j(x) / sum_j w_j(x),   w_j(x) = b_j exp((g_j + <M x, y_j>) / eps)
//! ```

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sinkhorn::{solve_uot, SinkhornOptions};
use crate::types::{DiscreteMeasure, EntropySpec, LinearCostMap, PointCloud, SolveResult};

/// Marginal entries below this are considered degenerate.
pub const MIN_MARGINAL: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq)]
pub struct EntropicMapModel {
    cost_map: LinearCostMap,
    target_points: Array2<f64>,
    target_weights: Array1<f64>,
    log_target_weights: Array1<f64>,
    potential_g: Array1<f64>,
    inner_epsilon: f64,
    outer_epsilon: f64,
    converged: bool,
}

impl EntropicMapModel {
    pub fn new(
        cost_map: LinearCostMap,
        target_points: Array2<f64>,
        target_weights: Array1<f64>,
        potential_g: Array1<f64>,
        inner_epsilon: f64,
        outer_epsilon: f64,
    ) -> Result<Self> {
        let m = target_points.nrows();
        if target_points.ncols() != cost_map.output_dim() {
            return Err(Error::DimensionMismatch(format!(
                "target points live in R^{}, cost map maps into R^{}",
                target_points.ncols(),
                cost_map.output_dim()
            )));
        }
        if target_weights.len() != m || potential_g.len() != m || m == 0 {
            return Err(Error::DimensionMismatch(format!(
                "{m} target points, {} weights, {} potentials",
                target_weights.len(),
                potential_g.len()
            )));
        }
        if let Some((index, &value)) = target_weights
            .iter()
            .enumerate()
            .find(|(_, w)| !(**w > 0.0) || !w.is_finite())
        {
            return Err(Error::NonPositiveWeight { index, value });
        }
        if potential_g
            .iter()
            .chain(target_points.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFiniteEntry("map model".into()));
        }
        for (name, eps) in [("inner", inner_epsilon), ("outer", outer_epsilon)] {
            if !(eps > 0.0) || !eps.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "{name} epsilon must be positive, got {eps}"
                )));
            }
        }
        let log_target_weights = target_weights.mapv(f64::ln);
        Ok(Self {
            cost_map,
            target_points,
            target_weights,
            log_target_weights,
            potential_g,
            inner_epsilon,
            outer_epsilon,
            converged: true,
        })
    }

    pub fn cost_map(&self) -> &LinearCostMap {
        &self.cost_map
    }

    pub fn target_points(&self) -> &Array2<f64> {
        &self.target_points
    }

    pub fn target_weights(&self) -> ArrayView1<'_, f64> {
        self.target_weights.view()
    }

    pub fn potential_g(&self) -> ArrayView1<'_, f64> {
        self.potential_g.view()
    }

    pub fn inner_epsilon(&self) -> f64 {
        self.inner_epsilon
    }

    pub fn outer_epsilon(&self) -> f64 {
        self.outer_epsilon
    }

    /// Whether the inner Sinkhorn solve met its tolerance.
    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn input_dim(&self) -> usize {
        self.cost_map.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.cost_map.output_dim()
    }

    /// Same model with every target weight multiplied by `c`.
    pub fn with_scaled_weights(&self, c: f64) -> Result<Self> {
        let mut out = Self::new(
            self.cost_map.clone(),
            self.target_points.clone(),
            &self.target_weights * c,
            self.potential_g.clone(),
            self.inner_epsilon,
            self.outer_epsilon,
        )?;
        out.converged = self.converged;
        Ok(out)
    }

    /// Normalised softmax weights `sigma_j(x)`, summing to one.
    pub fn weights_at(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "point in R^{}, map defined on R^{}",
                x.len(),
                self.input_dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteEntry("query point".into()));
        }
        let mx = self.cost_map.apply(x);
        let eps = self.inner_epsilon;
        let mut logits: Array1<f64> = self
            .target_points
            .rows()
            .into_iter()
            .zip(self.potential_g.iter())
            .zip(self.log_target_weights.iter())
            .map(|((y, &g), &lb)| lb + (g + mx.dot(&y)) / eps)
            .collect();
        let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        logits.mapv_inplace(|v| (v - max).exp());
        let total = logits.sum();
        logits /= total;
        Ok(logits)
    }
}

/// Fits the entropic map with default inner solver settings.
pub fn fit_map(
    solve_result: &SolveResult,
    source: &PointCloud,
    target: &PointCloud,
    inner_epsilon: f64,
) -> Result<EntropicMapModel> {
    let opts = SinkhornOptions::new(inner_epsilon, 1e-9, 10_000);
    fit_map_with(solve_result, source, target, &opts)
}

/// Fits the entropic map; `inner.epsilon` is the inner regularisation.
pub fn fit_map_with(
    solve_result: &SolveResult,
    source: &PointCloud,
    target: &PointCloud,
    inner: &SinkhornOptions,
) -> Result<EntropicMapModel> {
    let plan = &solve_result.plan;
    let (n, m) = plan.shape();
    if source.len() != n || target.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "plan is {n}x{m}, clouds have {} and {} points",
            source.len(),
            target.len()
        )));
    }
    let map = &solve_result.cost_map;
    if map.input_dim() != source.dim() || map.output_dim() != target.dim() {
        return Err(Error::DimensionMismatch(format!(
            "cost map is {}x{}, clouds live in R^{} and R^{}",
            map.output_dim(),
            map.input_dim(),
            source.dim(),
            target.dim()
        )));
    }
    let unit = |w: ArrayView1<f64>| -> Result<DiscreteMeasure> {
        if let Some((index, &value)) = w.iter().enumerate().find(|(_, v)| !(**v >= MIN_MARGINAL)) {
            return Err(Error::DegenerateMarginal { index, value });
        }
        DiscreteMeasure::new(w.to_owned() / w.sum())
    };
    let alpha = unit(plan.row_marginal())?;
    let beta = unit(plan.col_marginal())?;

    let pushed = map.apply_rows(source.points());
    debug_assert!(pushed
        .rows()
        .into_iter()
        .all(|z| z.dot(&z).sqrt() <= map.radius() * source.max_norm() + 1e-9));
    let mut cost = pushed.dot(&target.points().t());
    cost.mapv_inplace(|v| -v);

    let sol = solve_uot(
        cost.view(),
        &alpha,
        &beta,
        &EntropySpec::Balanced,
        &EntropySpec::Balanced,
        inner,
        None,
    )?;
    if !sol.converged {
        log::warn!(
            "inner sinkhorn for the entropic map stopped after {} iterations (delta = {:e})",
            sol.state.iters,
            sol.state.potential_delta
        );
    }
    let mut model = EntropicMapModel::new(
        map.clone(),
        target.points().to_owned(),
        beta.weights().to_owned(),
        sol.state.g,
        inner.epsilon,
        solve_result.epsilon,
    )?;
    model.converged = sol.converged;
    Ok(model)
}

/// Evaluates the map at a single point of the source space.
pub fn evaluate_map(model: &EntropicMapModel, x: ArrayView1<f64>) -> Result<Array1<f64>> {
    let w = model.weights_at(x)?;
    Ok(model.target_points.t().dot(&w))
}

/// Maps every source point; labels are carried over unchanged.
pub fn align(model: &EntropicMapModel, source: &PointCloud) -> Result<PointCloud> {
    if source.dim() != model.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "source lives in R^{}, map defined on R^{}",
            source.dim(),
            model.input_dim()
        )));
    }
    let points = source.points();
    let rows: Vec<ArrayView1<f64>> = points.rows().into_iter().collect();
    let mapped: Vec<Array1<f64>> = rows
        .into_par_iter()
        .map(|x| evaluate_map(model, x))
        .collect::<Result<_>>()?;
    let views: Vec<ArrayView1<f64>> = mapped.iter().map(|r| r.view()).collect();
    let aligned =
        ndarray::stack(Axis(0), &views).map_err(|e| Error::DimensionMismatch(e.to_string()))?;
    PointCloud::new(
        aligned,
        source.labels().map(<[String]>::to_vec),
        format!("{} (aligned)", source.name()),
    )
}
