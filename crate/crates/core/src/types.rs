//! Domain types shared by the solvers, the map estimator and the evaluation
//! harness. All of them are immutable once constructed.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack allowed on the Frobenius-norm bound of a [`LinearCostMap`].
pub const NORM_SLACK: f64 = 1e-12;

/// Points of one modality, stored row-wise as an `n x d` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Array2<f64>,
    labels: Option<Vec<String>>,
    name: String,
}

impl PointCloud {
    pub fn new(
        points: Array2<f64>,
        labels: Option<Vec<String>>,
        name: impl Into<String>,
    ) -> Result<Self> {
        let (n, d) = points.dim();
        if n == 0 || d == 0 {
            return Err(Error::EmptyDataset(format!("point cloud of shape {n}x{d}")));
        }
        if let Some(((i, j), v)) = points.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFiniteEntry(format!("point ({i}, {j}) = {v}")));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "{} labels for {n} points",
                    l.len()
                )));
            }
        }
        Ok(Self {
            points,
            labels,
            name: name.into(),
        })
    }

    pub fn unlabeled(points: Array2<f64>) -> Result<Self> {
        Self::new(points, None, "")
    }

    pub fn points(&self) -> ArrayView2<'_, f64> {
        self.points.view()
    }

    pub fn point(&self, i: usize) -> ArrayView1<'_, f64> {
        self.points.row(i)
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    /// Keeps the rows at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let points = self.points.select(Axis(0), indices);
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i].clone()).collect());
        Self::new(points, labels, self.name.clone())
    }

    pub fn with_labels(self, labels: Option<Vec<String>>) -> Result<Self> {
        Self::new(self.points, labels, self.name)
    }

    /// Z-scores every feature column with its own mean and (population)
    /// standard deviation. Constant columns are only centered.
    pub fn standardized(&self) -> Self {
        let mut points = self.points.clone();
        let n = points.nrows() as f64;
        for mut col in points.columns_mut() {
            let mean = col.sum() / n;
            col.mapv_inplace(|v| v - mean);
            let std = (col.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
            if std > 0.0 {
                col.mapv_inplace(|v| v / std);
            }
        }
        Self {
            points,
            labels: self.labels.clone(),
            name: self.name.clone(),
        }
    }

    /// Largest Euclidean norm among the points.
    pub fn max_norm(&self) -> f64 {
        self.points
            .rows()
            .into_iter()
            .map(|r| r.dot(&r).sqrt())
            .fold(0.0, f64::max)
    }
}

/// Discrete nonnegative measure `sum_i w_i delta_{x_i}` with strictly
/// positive weights.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    weights: Array1<f64>,
    total_mass: f64,
}

impl DiscreteMeasure {
    pub fn new(weights: Array1<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::EmptyDataset("measure with no atoms".into()));
        }
        for (index, &value) in weights.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFiniteEntry(format!("weight {index} = {value}")));
            }
            if value <= 0.0 {
                return Err(Error::NonPositiveWeight { index, value });
            }
        }
        let total_mass = weights.sum();
        Ok(Self {
            weights,
            total_mass,
        })
    }

    /// Builds a measure from nonnegative weights, dropping zero atoms.
    /// Returns the measure together with the indices of the atoms kept.
    pub fn from_nonnegative(weights: &[f64]) -> Result<(Self, Vec<usize>)> {
        let kept: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] != 0.0).collect();
        if kept.len() < weights.len() {
            log::warn!("dropping {} zero-weight atoms", weights.len() - kept.len());
        }
        let w = Array1::from_iter(kept.iter().map(|&i| weights[i]));
        Ok((Self::new(w)?, kept))
    }

    /// Uniform probability measure on `n` atoms.
    pub fn uniform(n: usize) -> Result<Self> {
        Self::new(Array1::from_elem(n, 1.0 / n as f64))
    }

    pub fn weights(&self) -> ArrayView1<'_, f64> {
        self.weights.view()
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Same support, weights multiplied by `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(&self.weights * c)
    }
}

/// Entropy function generating a marginal penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EntropySpec {
    /// Indicator of `{1}`: the marginal constraint is enforced exactly.
    Balanced,
    /// `lambda * phi_KL`.
    ScaledKl { lambda: f64 },
}

impl EntropySpec {
    pub fn scaled_kl(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "KL penalty weight must be positive and finite, got {lambda}"
            )));
        }
        Ok(Self::ScaledKl { lambda })
    }

    /// `+inf` selects the balanced case.
    pub fn from_lambda(lambda: f64) -> Result<Self> {
        if lambda == f64::INFINITY {
            Ok(Self::Balanced)
        } else {
            Self::scaled_kl(lambda)
        }
    }

    pub fn lambda(&self) -> f64 {
        match self {
            Self::Balanced => f64::INFINITY,
            Self::ScaledKl { lambda } => *lambda,
        }
    }

    pub fn is_balanced(&self) -> bool {
        matches!(self, Self::Balanced)
    }
}

/// Dense nonnegative transport plan with cached marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrix {
    entries: Array2<f64>,
    row_marginal: Array1<f64>,
    col_marginal: Array1<f64>,
}

impl CouplingMatrix {
    pub fn new(entries: Array2<f64>) -> Result<Self> {
        if let Some(((i, j), v)) = entries
            .indexed_iter()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::NonFiniteEntry(format!(
                "plan entry ({i}, {j}) = {v} is not a finite nonnegative number"
            )));
        }
        let row_marginal = entries.sum_axis(Axis(1));
        let col_marginal = entries.sum_axis(Axis(0));
        Ok(Self {
            entries,
            row_marginal,
            col_marginal,
        })
    }

    /// Product coupling `a b^T`.
    pub fn product(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<Self> {
        let n = a.len();
        let m = b.len();
        Self::new(Array2::from_shape_fn((n, m), |(i, j)| a[i] * b[j]))
    }

    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            entries: Array2::zeros((n, m)),
            row_marginal: Array1::zeros(n),
            col_marginal: Array1::zeros(m),
        }
    }

    pub fn entries(&self) -> ArrayView2<'_, f64> {
        self.entries.view()
    }

    pub fn row_marginal(&self) -> ArrayView1<'_, f64> {
        self.row_marginal.view()
    }

    pub fn col_marginal(&self) -> ArrayView1<'_, f64> {
        self.col_marginal.view()
    }

    pub fn total_mass(&self) -> f64 {
        self.row_marginal.sum()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.entries.dim()
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(&self.entries * c)
    }
}

/// Linear map `M: R^p -> R^q` with `||M||_F <= radius`, inducing the cost
/// `c_M(x, y) = -<M x, y>`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearCostMap {
    matrix: Array2<f64>,
    radius: f64,
}

impl LinearCostMap {
    pub fn new(matrix: Array2<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "radius must be positive, got {radius}"
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteEntry("cost map matrix".into()));
        }
        let norm = frobenius_norm(matrix.view());
        if norm > radius + NORM_SLACK {
            return Err(Error::NormExceedsRadius { norm, radius });
        }
        Ok(Self { matrix, radius })
    }

    /// Zero map from `R^p` to `R^q`.
    pub fn zero(q: usize, p: usize, radius: f64) -> Result<Self> {
        Self::new(Array2::zeros((q, p)), radius)
    }

    pub fn matrix(&self) -> ArrayView2<'_, f64> {
        self.matrix.view()
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn norm(&self) -> f64 {
        frobenius_norm(self.matrix.view())
    }

    /// Input dimension `p`.
    pub fn input_dim(&self) -> usize {
        self.matrix.ncols()
    }

    /// Output dimension `q`.
    pub fn output_dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `M x` for a single point.
    pub fn apply(&self, x: ArrayView1<f64>) -> Array1<f64> {
        self.matrix.dot(&x)
    }

    /// Images of all rows of `points` (an `n x p` matrix), as an `n x q` matrix.
    pub fn apply_rows(&self, points: ArrayView2<f64>) -> Array2<f64> {
        points.dot(&self.matrix.t())
    }

    /// Cost matrix `C_ij = -<M x_i, y_j>`.
    pub fn cost_matrix(&self, source: ArrayView2<f64>, target: ArrayView2<f64>) -> Array2<f64> {
        let mut c = self.apply_rows(source).dot(&target.t());
        c.mapv_inplace(|v| -v);
        c
    }
}

pub fn frobenius_norm(m: ArrayView2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// How the cost map is initialised before the first plan update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MInit {
    /// Closed-form map of the product coupling `a b^T / m(b)`.
    ProductCoupling,
    Zero,
    /// Random matrix with entries uniform in `[-1, 1]`, rescaled to norm `r`.
    Seeded(u64),
}

/// Hyperparameters of the block coordinate descent solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveConfig {
    pub epsilon: f64,
    pub entropy1: EntropySpec,
    pub entropy2: EntropySpec,
    pub radius: f64,
    pub max_outer_iters: usize,
    pub max_sinkhorn_iters: usize,
    pub sinkhorn_tol: f64,
    pub outer_tol: f64,
    pub m_init: MInit,
    /// Z-score feature columns when loading data. Consumed by the data layer;
    /// the solver takes its inputs as given.
    pub standardize: bool,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            epsilon: 5e-3,
            entropy1: EntropySpec::Balanced,
            entropy2: EntropySpec::Balanced,
            radius: 1.0,
            max_outer_iters: 200,
            max_sinkhorn_iters: 2000,
            sinkhorn_tol: 1e-9,
            outer_tol: 1e-7,
            m_init: MInit::ProductCoupling,
            standardize: false,
        }
    }
}

impl SolveConfig {
    /// Same penalty `lambda * phi_KL` on both marginals (`+inf` = balanced).
    pub fn with_lambda(mut self, lambda: f64) -> Result<Self> {
        let spec = EntropySpec::from_lambda(lambda)?;
        self.entropy1 = spec;
        self.entropy2 = spec;
        Ok(self)
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!(
                    "{name} must be positive and finite, got {v}"
                )))
            }
        };
        positive("epsilon", self.epsilon)?;
        positive("radius", self.radius)?;
        positive("sinkhorn_tol", self.sinkhorn_tol)?;
        positive("outer_tol", self.outer_tol)?;
        for spec in [self.entropy1, self.entropy2] {
            if let EntropySpec::ScaledKl { lambda } = spec {
                positive("lambda", lambda)?;
            }
        }
        if self.max_outer_iters == 0 || self.max_sinkhorn_iters == 0 {
            return Err(Error::InvalidParameter(
                "iteration budgets must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Output of the block coordinate descent solver.
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub cost_map: LinearCostMap,
    pub plan: CouplingMatrix,
    /// Objective after the cost-map update of each outer iteration.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub outer_iters_used: usize,
    /// Relative L1 residuals of the row and column marginals.
    pub marginal_residuals: (f64, f64),
    /// Entropic regularisation the solution was computed at.
    pub epsilon: f64,
}

impl SolveResult {
    pub fn final_objective(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(f64::NAN)
    }
}

/// Checks that `measure` lives on `cloud`.
pub fn validate(cloud: &PointCloud, measure: &DiscreteMeasure) -> Result<()> {
    if cloud.len() != measure.len() {
        return Err(Error::DimensionMismatch(format!(
            "measure has {} atoms, cloud has {} points",
            measure.len(),
            cloud.len()
        )));
    }
    if let Some(((i, j), v)) = cloud.points().indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFiniteEntry(format!("point ({i}, {j}) = {v}")));
    }
    if let Some((index, &value)) = measure
        .weights()
        .iter()
        .enumerate()
        .find(|(_, v)| !(**v > 0.0))
    {
        return Err(Error::NonPositiveWeight { index, value });
    }
    Ok(())
}
