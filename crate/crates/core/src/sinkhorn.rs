//! Log-domain Sinkhorn iterations for entropic unbalanced optimal transport
//! with a fixed cost matrix.
//!
//! The problem solved is
//!
//! ```text
//! min_P  <C, P> + D_phi1(P 1 | a) + D_phi2(P^T 1 | b) + eps KL(P | a (x) b)
//! ```
//!
//! with `P_ij = a_i b_j exp((f_i + g_j - C_ij) / eps)`. Each half-step is the
//! exact maximisation of the dual in one potential:
//!
//! ```text
//! f_i <- -kappa_1 * eps * log sum_j b_j exp((g_j - C_ij) / eps)
//! ```
//!
//! where `kappa = lambda / (lambda + eps)` for a `lambda * phi_KL` penalty and
//! `kappa = 1` for a hard marginal constraint.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;

use crate::divergence::{kl_plan, phi_penalty};
use crate::error::{Error, Result};
use crate::types::{CouplingMatrix, DiscreteMeasure, EntropySpec};

/// Problems with more entries than this are swept in parallel.
const PARALLEL_THRESHOLD: usize = 16_384;

/// Dual potentials and bookkeeping of a Sinkhorn run.
#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornState {
    pub f: Array1<f64>,
    pub g: Array1<f64>,
    pub iters: usize,
    /// Sup-norm change of the potentials in the last iteration.
    pub potential_delta: f64,
}

impl SinkhornState {
    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            f: Array1::zeros(n),
            g: Array1::zeros(m),
            iters: 0,
            potential_delta: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornOptions {
    pub epsilon: f64,
    pub tol: f64,
    pub max_iters: usize,
    /// On cold starts, first run coarse stages with `epsilon` halved from
    /// the cost range down to the target value.
    pub anneal: bool,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        Self {
            epsilon: 5e-3,
            tol: 1e-9,
            max_iters: 2000,
            anneal: true,
        }
    }
}

impl SinkhornOptions {
    pub fn new(epsilon: f64, tol: f64, max_iters: usize) -> Self {
        Self {
            epsilon,
            tol,
            max_iters,
            anneal: true,
        }
    }
}

/// Iterations spent on each coarse annealing stage at most.
const ANNEAL_STAGE_ITERS: usize = 50;

#[derive(Debug, Clone)]
pub struct SinkhornSolution {
    pub plan: CouplingMatrix,
    pub state: SinkhornState,
    /// False when the iteration budget ran out first; the plan is then the
    /// last iterate.
    pub converged: bool,
}

fn damping(spec: &EntropySpec, epsilon: f64) -> f64 {
    match spec {
        EntropySpec::Balanced => 1.0,
        EntropySpec::ScaledKl { lambda } => lambda / (lambda + epsilon),
    }
}

/// `-kappa * eps * log sum_j exp(log_w_j + (h_j - C_ij) / eps)` for every row
/// `i` of `cost`.
fn softmin_rows(
    cost: ArrayView2<f64>,
    log_w: ArrayView1<f64>,
    h: ArrayView1<f64>,
    epsilon: f64,
    kappa: f64,
) -> Array1<f64> {
    let row = |c: ArrayView1<f64>| {
        let mut max = f64::NEG_INFINITY;
        for ((&cij, &lw), &hj) in c.iter().zip(log_w.iter()).zip(h.iter()) {
            let z = lw + (hj - cij) / epsilon;
            if z > max {
                max = z;
            }
        }
        let s: f64 = c
            .iter()
            .zip(log_w.iter())
            .zip(h.iter())
            .map(|((&cij, &lw), &hj)| (lw + (hj - cij) / epsilon - max).exp())
            .sum();
        -kappa * epsilon * (max + s.ln())
    };
    if cost.len() >= PARALLEL_THRESHOLD {
        let rows: Vec<ArrayView1<f64>> = cost.rows().into_iter().collect();
        Array1::from(rows.into_par_iter().map(row).collect::<Vec<f64>>())
    } else {
        cost.rows().into_iter().map(row).collect()
    }
}

fn sup_change(old: &Array1<f64>, new: &Array1<f64>) -> f64 {
    old.iter()
        .zip(new.iter())
        .map(|(o, n)| (o - n).abs())
        .fold(0.0, f64::max)
}

/// `P_ij = a_i b_j exp((f_i + g_j - C_ij) / eps)`.
pub fn recover_plan(
    cost: ArrayView2<f64>,
    a: ArrayView1<f64>,
    b: ArrayView1<f64>,
    state: &SinkhornState,
    epsilon: f64,
) -> Result<CouplingMatrix> {
    let log_a = a.mapv(f64::ln);
    let log_b = b.mapv(f64::ln);
    let p = Array2::from_shape_fn(cost.dim(), |(i, j)| {
        (log_a[i] + log_b[j] + (state.f[i] + state.g[j] - cost[[i, j]]) / epsilon).exp()
    });
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalOverflow(
            "transport plan has non-finite entries".into(),
        ));
    }
    CouplingMatrix::new(p)
}

fn balanced_sides_hold(
    plan: &CouplingMatrix,
    a: ArrayView1<f64>,
    b: ArrayView1<f64>,
    e1: &EntropySpec,
    e2: &EntropySpec,
    tol: f64,
) -> bool {
    let close = |p: ArrayView1<f64>, q: ArrayView1<f64>| {
        p.iter()
            .zip(q.iter())
            .all(|(&pi, &qi)| (pi - qi).abs() <= tol * qi)
    };
    (!e1.is_balanced() || close(plan.row_marginal(), a))
        && (!e2.is_balanced() || close(plan.col_marginal(), b))
}

/// Solves the entropic UOT problem for a fixed cost matrix.
///
/// Iterates until the sup-norm change of both potentials drops below
/// `opts.tol`. Marginals under a hard constraint must additionally match
/// their reference to relative accuracy `opts.tol` entrywise. Running out of
/// iterations is not an error: the last iterate is returned with
/// `converged = false`.
pub fn solve_uot(
    cost: ArrayView2<f64>,
    a: &DiscreteMeasure,
    b: &DiscreteMeasure,
    entropy1: &EntropySpec,
    entropy2: &EntropySpec,
    opts: &SinkhornOptions,
    warm_start: Option<&SinkhornState>,
) -> Result<SinkhornSolution> {
    let (n, m) = cost.dim();
    if a.len() != n || b.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "cost is {n}x{m}, measures have {} and {} atoms",
            a.len(),
            b.len()
        )));
    }
    if !(opts.epsilon > 0.0) || !opts.epsilon.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "epsilon must be positive, got {}",
            opts.epsilon
        )));
    }
    if cost.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteEntry("cost matrix".into()));
    }
    let eps = opts.epsilon;
    let log_a = a.weights().mapv(f64::ln);
    let log_b = b.weights().mapv(f64::ln);
    let cost_t = cost.t().as_standard_layout().into_owned();

    let mut state = match warm_start {
        Some(s) if s.f.len() == n && s.g.len() == m => SinkhornState {
            iters: 0,
            potential_delta: f64::INFINITY,
            ..s.clone()
        },
        Some(_) => {
            return Err(Error::DimensionMismatch(
                "warm-start potentials do not match the cost shape".into(),
            ))
        }
        None => SinkhornState::zeros(n, m),
    };

    let sweep = |state: &mut SinkhornState, eps: f64| -> Result<()> {
        let f = softmin_rows(
            cost,
            log_b.view(),
            state.g.view(),
            eps,
            damping(entropy1, eps),
        );
        let g = softmin_rows(
            cost_t.view(),
            log_a.view(),
            f.view(),
            eps,
            damping(entropy2, eps),
        );
        if f.iter().chain(g.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NumericalOverflow(format!(
                "non-finite dual potential after {} iterations",
                state.iters + 1
            )));
        }
        state.potential_delta = sup_change(&state.f, &f).max(sup_change(&state.g, &g));
        state.f = f;
        state.g = g;
        state.iters += 1;
        Ok(())
    };

    if warm_start.is_none() && opts.anneal {
        let range = cost.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut stage_eps = range;
        let mut stages = Vec::new();
        while stage_eps > 2.0 * eps {
            stages.push(stage_eps);
            stage_eps *= 0.5;
        }
        for stage_eps in stages {
            let start = state.iters;
            while state.iters - start < ANNEAL_STAGE_ITERS && state.iters < opts.max_iters / 2 {
                sweep(&mut state, stage_eps)?;
                if state.potential_delta < stage_eps * 1e-3 {
                    break;
                }
            }
        }
    }

    let mut converged = false;
    let mut plan = None;
    while state.iters < opts.max_iters {
        sweep(&mut state, eps)?;
        if state.potential_delta < opts.tol {
            let p = recover_plan(cost, a.weights(), b.weights(), &state, eps)?;
            if balanced_sides_hold(&p, a.weights(), b.weights(), entropy1, entropy2, opts.tol) {
                converged = true;
                plan = Some(p);
                break;
            }
        }
    }
    let plan = match plan {
        Some(p) => p,
        None => {
            log::debug!(
                "sinkhorn stopped after {} iterations, delta = {:e}",
                state.iters,
                state.potential_delta
            );
            recover_plan(cost, a.weights(), b.weights(), &state, eps)?
        }
    };
    Ok(SinkhornSolution {
        plan,
        state,
        converged,
    })
}

/// Primal UOT objective of `plan` for a fixed cost.
pub fn uot_objective(
    cost: ArrayView2<f64>,
    plan: &CouplingMatrix,
    a: &DiscreteMeasure,
    b: &DiscreteMeasure,
    entropy1: &EntropySpec,
    entropy2: &EntropySpec,
    epsilon: f64,
) -> Result<f64> {
    if cost.dim() != plan.shape() {
        return Err(Error::DimensionMismatch(format!(
            "cost is {:?}, plan is {:?}",
            cost.dim(),
            plan.shape()
        )));
    }
    let linear: f64 = cost
        .iter()
        .zip(plan.entries().iter())
        .map(|(c, p)| c * p)
        .sum();
    let pen1 = phi_penalty(entropy1, plan.row_marginal(), a.weights())?;
    let pen2 = phi_penalty(entropy2, plan.col_marginal(), b.weights())?;
    let ent = kl_plan(plan, a.weights(), b.weights())?;
    Ok(linear + pen1 + pen2 + epsilon * ent)
}

/// Relative L1 residuals `(|P1 - a|_1 / m(a), |P^T 1 - b|_1 / m(b))`.
pub fn marginal_residual(
    plan: &CouplingMatrix,
    a: ArrayView1<f64>,
    b: ArrayView1<f64>,
) -> Result<(f64, f64)> {
    let (n, m) = plan.shape();
    if a.len() != n || b.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "plan is {n}x{m}, measures have {} and {} atoms",
            a.len(),
            b.len()
        )));
    }
    let l1 = |p: ArrayView1<f64>, q: ArrayView1<f64>| {
        p.iter()
            .zip(q.iter())
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            / q.sum()
    };
    Ok((l1(plan.row_marginal(), a), l1(plan.col_marginal(), b)))
}
