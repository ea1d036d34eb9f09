//! Block coordinate descent for entropic CR-UOT with inner-product costs.
//!
//! Each outer iteration
//! 1. solves the plan block with Sinkhorn for the cost `C_ij = -<M x_i, y_j>`,
//! 2. replaces `M` by the maximiser of `<C(P), M>_F` over `||M||_F <= r`,
//!    which is `r C(P) / ||C(P)||_F` (or zero when `C(P) = 0`),
//!
//! where `C(P) = sum_ij P_ij y_j x_i^T`. The joint objective
//!
//! ```text
//! J(P, M) = -sum_ij <M x_i, y_j> P_ij + D_phi1(P 1 | a) + D_phi2(P^T 1 | b) + eps KL(P | a (x) b)
//! ```
//!
//! is recorded after every cost-map update.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::divergence::{kl_plan, phi_penalty};
use crate::error::{Error, Result};
use crate::sinkhorn::{marginal_residual, solve_uot, SinkhornOptions, SinkhornState};
use crate::types::{
    frobenius_norm, validate, CouplingMatrix, DiscreteMeasure, EntropySpec, LinearCostMap, MInit,
    PointCloud, SolveConfig, SolveResult,
};

/// Below this Frobenius norm a cross-correlation is treated as zero.
pub const ZERO_CORRELATION: f64 = 1e-14;

/// `C(P) = sum_ij P_ij y_j x_i^T`, a `q x p` matrix.
pub fn cross_correlation(
    plan: &CouplingMatrix,
    source: &PointCloud,
    target: &PointCloud,
) -> Result<Array2<f64>> {
    let (n, m) = plan.shape();
    if source.len() != n || target.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "plan is {n}x{m}, clouds have {} and {} points",
            source.len(),
            target.len()
        )));
    }
    // Y^T (P^T X)
    let pushed = plan.entries().t().dot(&source.points());
    Ok(target.points().t().dot(&pushed))
}

/// Closed-form cost-map block: `r C / ||C||_F`, or zero when `C` vanishes.
pub fn m_update(corr: ArrayView2<f64>, radius: f64) -> Result<LinearCostMap> {
    let norm = frobenius_norm(corr);
    if !norm.is_finite() {
        return Err(Error::NonFiniteEntry("cross-correlation".into()));
    }
    if norm > ZERO_CORRELATION {
        let mut m = corr.to_owned() * (radius / norm);
        // rounding can leave the norm a few ulps above r
        let actual = frobenius_norm(m.view());
        if actual > radius {
            m *= radius / actual;
        }
        LinearCostMap::new(m, radius)
    } else {
        LinearCostMap::zero(corr.nrows(), corr.ncols(), radius)
    }
}

struct Terms {
    penalty1: f64,
    penalty2: f64,
    entropy: f64,
}

fn penalty_terms(
    plan: &CouplingMatrix,
    a: &DiscreteMeasure,
    b: &DiscreteMeasure,
    entropy1: &EntropySpec,
    entropy2: &EntropySpec,
) -> Result<Terms> {
    Ok(Terms {
        penalty1: phi_penalty(entropy1, plan.row_marginal(), a.weights())?,
        penalty2: phi_penalty(entropy2, plan.col_marginal(), b.weights())?,
        entropy: kl_plan(plan, a.weights(), b.weights())?,
    })
}

/// Problem data shared by every objective evaluation.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub source: &'a PointCloud,
    pub a: &'a DiscreteMeasure,
    pub target: &'a PointCloud,
    pub b: &'a DiscreteMeasure,
}

impl<'a> Problem<'a> {
    pub fn new(
        source: &'a PointCloud,
        a: &'a DiscreteMeasure,
        target: &'a PointCloud,
        b: &'a DiscreteMeasure,
    ) -> Result<Self> {
        validate(source, a)?;
        validate(target, b)?;
        Ok(Self {
            source,
            a,
            target,
            b,
        })
    }

    fn check_plan(&self, plan: &CouplingMatrix) -> Result<()> {
        if plan.shape() != (self.a.len(), self.b.len()) {
            return Err(Error::DimensionMismatch(format!(
                "plan is {:?}, problem is {}x{}",
                plan.shape(),
                self.a.len(),
                self.b.len()
            )));
        }
        Ok(())
    }
}

/// Joint objective `J(P, M)`. Infinite when a hard marginal constraint is
/// violated.
pub fn objective(
    plan: &CouplingMatrix,
    cost_map: &LinearCostMap,
    problem: &Problem<'_>,
    entropy1: &EntropySpec,
    entropy2: &EntropySpec,
    epsilon: f64,
) -> Result<f64> {
    problem.check_plan(plan)?;
    if cost_map.input_dim() != problem.source.dim() || cost_map.output_dim() != problem.target.dim()
    {
        return Err(Error::DimensionMismatch(format!(
            "cost map is {}x{}, clouds live in R^{} and R^{}",
            cost_map.output_dim(),
            cost_map.input_dim(),
            problem.source.dim(),
            problem.target.dim()
        )));
    }
    let cost = cost_map.cost_matrix(problem.source.points(), problem.target.points());
    let linear: f64 = cost
        .iter()
        .zip(plan.entries().iter())
        .map(|(c, p)| c * p)
        .sum();
    let t = penalty_terms(plan, problem.a, problem.b, entropy1, entropy2)?;
    Ok(linear + t.penalty1 + t.penalty2 + epsilon * t.entropy)
}

/// Objective with the cost map eliminated:
/// `-r ||C(P)||_F + D_phi1 + D_phi2 + eps KL(P | a (x) b)`.
pub fn reduced_objective(
    plan: &CouplingMatrix,
    radius: f64,
    problem: &Problem<'_>,
    entropy1: &EntropySpec,
    entropy2: &EntropySpec,
    epsilon: f64,
) -> Result<f64> {
    problem.check_plan(plan)?;
    let corr = cross_correlation(plan, problem.source, problem.target)?;
    let t = penalty_terms(plan, problem.a, problem.b, entropy1, entropy2)?;
    Ok(-radius * frobenius_norm(corr.view()) + t.penalty1 + t.penalty2 + epsilon * t.entropy)
}

/// Objective with the entropic term removed, `J(P, M) - eps KL(P | a (x) b)`.
pub fn stripped_objective(
    plan: &CouplingMatrix,
    cost_map: &LinearCostMap,
    problem: &Problem<'_>,
    entropy1: &EntropySpec,
    entropy2: &EntropySpec,
) -> Result<f64> {
    objective(plan, cost_map, problem, entropy1, entropy2, 0.0)
}

/// Deterministic full-rank map `r E / ||E||_F` with `E_kl = [k == l]`.
fn diagonal_map(q: usize, p: usize, radius: f64) -> Result<LinearCostMap> {
    let k = q.min(p);
    let e = Array2::from_shape_fn((q, p), |(i, j)| if i == j { 1.0 } else { 0.0 });
    LinearCostMap::new(e * (radius / (k as f64).sqrt()), radius)
}

/// Initial cost map for `config.m_init`.
///
/// The product-coupling initialisation degenerates to zero when both point
/// clouds are centered (then `C(a b^T) = m(a) x_bar y_bar^T = 0` and `M = 0`
/// is a fixed point of the iteration); in that case the diagonal map is used.
pub fn initial_map(problem: &Problem<'_>, config: &SolveConfig) -> Result<LinearCostMap> {
    let q = problem.target.dim();
    let p = problem.source.dim();
    let r = config.radius;
    match config.m_init {
        MInit::Zero => LinearCostMap::zero(q, p, r),
        MInit::Seeded(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = Array2::from_shape_fn((q, p), |_| rng.gen_range(-1.0..1.0));
            m_update(m.view(), r)
        }
        MInit::ProductCoupling => {
            let b = problem.b.weights().to_owned() / problem.b.total_mass();
            let prod = CouplingMatrix::product(problem.a.weights(), b.view())?;
            let corr = cross_correlation(&prod, problem.source, problem.target)?;
            let scale =
                problem.a.total_mass() * problem.source.max_norm() * problem.target.max_norm();
            if frobenius_norm(corr.view()) > 1e-8 * scale.max(f64::MIN_POSITIVE) {
                m_update(corr.view(), r)
            } else {
                log::info!(
                    "product coupling has zero cross-correlation, using diagonal initial map"
                );
                diagonal_map(q, p, r)
            }
        }
    }
}

/// Solves entropic CR-UOT by block coordinate descent.
pub fn solve_cruot(
    source: &PointCloud,
    a: &DiscreteMeasure,
    target: &PointCloud,
    b: &DiscreteMeasure,
    config: &SolveConfig,
) -> Result<SolveResult> {
    config.validate()?;
    let problem = Problem::new(source, a, target, b)?;
    let init = initial_map(&problem, config)?;
    run_bcd(&problem, config, init)
}

/// Same as [`solve_cruot`] with an explicit starting cost map.
pub fn solve_cruot_from(
    source: &PointCloud,
    a: &DiscreteMeasure,
    target: &PointCloud,
    b: &DiscreteMeasure,
    config: &SolveConfig,
    init: LinearCostMap,
) -> Result<SolveResult> {
    config.validate()?;
    let problem = Problem::new(source, a, target, b)?;
    if init.input_dim() != source.dim() || init.output_dim() != target.dim() {
        return Err(Error::DimensionMismatch(format!(
            "initial map is {}x{}, expected {}x{}",
            init.output_dim(),
            init.input_dim(),
            target.dim(),
            source.dim()
        )));
    }
    let init = if init.radius() == config.radius {
        init
    } else {
        m_update(init.matrix(), config.radius)?
    };
    run_bcd(&problem, config, init)
}

fn run_bcd(
    problem: &Problem<'_>,
    config: &SolveConfig,
    init: LinearCostMap,
) -> Result<SolveResult> {
    let opts = SinkhornOptions::new(
        config.epsilon,
        config.sinkhorn_tol,
        config.max_sinkhorn_iters,
    );
    let (e1, e2) = (&config.entropy1, &config.entropy2);
    let mut cost_map = init;
    let mut warm: Option<SinkhornState> = None;
    let mut trace = Vec::new();
    let mut plan = None;
    let mut converged = false;
    let mut inner_ok = true;

    for k in 0..config.max_outer_iters {
        let cost = cost_map.cost_matrix(problem.source.points(), problem.target.points());
        let sol = solve_uot(
            cost.view(),
            problem.a,
            problem.b,
            e1,
            e2,
            &opts,
            warm.as_ref(),
        )?;
        if !sol.converged {
            log::warn!(
                "outer iteration {}: sinkhorn hit its budget (delta = {:e})",
                k + 1,
                sol.state.potential_delta
            );
        }
        inner_ok = sol.converged;
        let corr = cross_correlation(&sol.plan, problem.source, problem.target)?;
        cost_map = m_update(corr.view(), config.radius)?;
        let value = objective(&sol.plan, &cost_map, problem, e1, e2, config.epsilon)?;
        log::debug!("outer iteration {}: J = {value:.12e}", k + 1);
        warm = Some(sol.state);
        plan = Some(sol.plan);
        let prev = trace.last().copied();
        trace.push(value);
        if let Some(prev) = prev {
            let change = (value - prev).abs();
            if change < config.outer_tol * (1.0 + prev.abs()) {
                converged = true;
                break;
            }
        }
    }
    let plan = plan.expect("at least one outer iteration");
    let marginal_residuals = marginal_residual(&plan, problem.a.weights(), problem.b.weights())?;
    Ok(SolveResult {
        cost_map,
        plan,
        outer_iters_used: trace.len(),
        objective_trace: trace,
        converged: converged && inner_ok,
        marginal_residuals,
        epsilon: config.epsilon,
    })
}

/// Runs [`solve_cruot`] from several random initial maps and keeps the
/// solution with the lowest final objective.
pub fn solve_cruot_restarts(
    source: &PointCloud,
    a: &DiscreteMeasure,
    target: &PointCloud,
    b: &DiscreteMeasure,
    config: &SolveConfig,
    seeds: &[u64],
) -> Result<SolveResult> {
    use rayon::prelude::*;
    if seeds.is_empty() {
        return Err(Error::InvalidParameter("no restart seeds".into()));
    }
    let results: Vec<SolveResult> = seeds
        .par_iter()
        .map(|&seed| {
            let cfg = SolveConfig {
                m_init: MInit::Seeded(seed),
                ..config.clone()
            };
            solve_cruot(source, a, target, b, &cfg)
        })
        .collect::<Result<_>>()?;
    Ok(results
        .into_iter()
        .min_by(|x, y| x.final_objective().total_cmp(&y.final_objective()))
        .expect("non-empty"))
}

/// One point of an epsilon continuation.
#[derive(Debug, Clone)]
pub struct EpsilonPoint {
    pub epsilon: f64,
    /// `J(P, M) - eps KL(P | a (x) b)` at the returned solution.
    pub stripped_value: f64,
    pub result: SolveResult,
}

/// Solves along a decreasing sequence of `epsilon` values, starting each
/// solve from the cost map of the previous one.
pub fn epsilon_sweep(
    source: &PointCloud,
    a: &DiscreteMeasure,
    target: &PointCloud,
    b: &DiscreteMeasure,
    config: &SolveConfig,
    epsilons: &[f64],
) -> Result<Vec<EpsilonPoint>> {
    if epsilons.windows(2).any(|w| !(w[0] > w[1])) {
        return Err(Error::InvalidParameter(
            "epsilons must be sorted in strictly decreasing order".into(),
        ));
    }
    let problem = Problem::new(source, a, target, b)?;
    let mut out: Vec<EpsilonPoint> = Vec::with_capacity(epsilons.len());
    for &epsilon in epsilons {
        let cfg = config.clone().with_epsilon(epsilon);
        let result = match out.last() {
            None => solve_cruot(source, a, target, b, &cfg)?,
            Some(prev) => {
                solve_cruot_from(source, a, target, b, &cfg, prev.result.cost_map.clone())?
            }
        };
        let stripped_value = stripped_objective(
            &result.plan,
            &result.cost_map,
            &problem,
            &cfg.entropy1,
            &cfg.entropy2,
        )?;
        out.push(EpsilonPoint {
            epsilon,
            stripped_value,
            result,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn cloud(points: Array2<f64>) -> PointCloud {
        PointCloud::unlabeled(points).unwrap()
    }

    fn random_instance(
        seed: u64,
        n: usize,
        m: usize,
        p: usize,
        q: usize,
    ) -> (PointCloud, PointCloud) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, p), |_| rng.gen_range(-1.0..1.0) + 0.3);
        let y = Array2::from_shape_fn((m, q), |_| rng.gen_range(-1.0..1.0) + 0.2);
        (cloud(x), cloud(y))
    }

    #[test]
    fn cross_correlation_single_atom() {
        let plan = CouplingMatrix::new(array![[1.0]]).unwrap();
        let c =
            cross_correlation(&plan, &cloud(array![[3.0, 4.0]]), &cloud(array![[2.0]])).unwrap();
        assert_eq!(c, array![[6.0, 8.0]]);
        let zero = CouplingMatrix::zeros(1, 1);
        let c =
            cross_correlation(&zero, &cloud(array![[3.0, 4.0]]), &cloud(array![[2.0]])).unwrap();
        assert_eq!(c, array![[0.0, 0.0]]);
    }

    #[test]
    fn cross_correlation_matches_triple_loop() {
        let (x, y) = random_instance(1, 4, 3, 5, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = Array2::from_shape_fn((4, 3), |_| rng.gen_range(0.0..1.0));
        let plan = CouplingMatrix::new(p.clone()).unwrap();
        let c = cross_correlation(&plan, &x, &y).unwrap();
        for k in 0..2 {
            for l in 0..5 {
                let mut s = 0.0;
                for i in 0..4 {
                    for j in 0..3 {
                        s += p[[i, j]] * y.points()[[j, k]] * x.points()[[i, l]];
                    }
                }
                assert!((c[[k, l]] - s).abs() < 1e-13);
            }
        }
        assert!(cross_correlation(&plan, &y, &x).is_err());
    }

    #[test]
    fn m_update_examples() {
        let m = m_update(array![[6.0, 8.0]].view(), 1.0).unwrap();
        assert!((m.matrix()[[0, 0]] - 0.6).abs() < 1e-15);
        assert!((m.matrix()[[0, 1]] - 0.8).abs() < 1e-15);
        let m = m_update(Array2::zeros((2, 3)).view(), 5.0).unwrap();
        assert_eq!(m.norm(), 0.0);
        let m = m_update(array![[2.0, 0.0], [0.0, 0.0]].view(), 3.0).unwrap();
        assert_eq!(m.matrix(), array![[3.0, 0.0], [0.0, 0.0]]);
    }

    #[test]
    fn objective_examples() {
        let x = cloud(array![[1.0, 0.0], [0.0, 1.0]]);
        let y = cloud(array![[1.0], [2.0], [-1.0]]);
        let a = DiscreteMeasure::new(array![0.4, 0.6]).unwrap();
        let b = DiscreteMeasure::new(array![0.2, 0.3, 0.5]).unwrap();
        let pb = Problem::new(&x, &a, &y, &b).unwrap();
        let lambda = 1.7;
        let kl = EntropySpec::scaled_kl(lambda).unwrap();
        let eps = 0.3;
        let m = LinearCostMap::new(array![[0.6, 0.8]], 1.0).unwrap();
        let zero = CouplingMatrix::zeros(2, 3);
        let v = objective(&zero, &m, &pb, &kl, &kl, eps).unwrap();
        assert!((v - (2.0 * lambda + eps)).abs() < 1e-14);

        let prod = CouplingMatrix::product(a.weights(), b.weights()).unwrap();
        let m0 = LinearCostMap::zero(1, 2, 1.0).unwrap();
        assert!(objective(&prod, &m0, &pb, &kl, &kl, eps).unwrap().abs() < 1e-14);
    }

    #[test]
    fn objective_matches_term_by_term_evaluation() {
        let x = cloud(array![[0.3, -1.2], [1.1, 0.4], [-0.5, 0.9]]);
        let y = cloud(array![[0.7, 0.1], [-0.2, 1.3]]);
        let a = DiscreteMeasure::new(array![0.2, 0.5, 0.3]).unwrap();
        let b = DiscreteMeasure::new(array![0.6, 0.7]).unwrap();
        let p = array![[0.1, 0.05], [0.2, 0.3], [0.02, 0.25]];
        let plan = CouplingMatrix::new(p.clone()).unwrap();
        let m = LinearCostMap::new(array![[0.5, -0.1], [0.3, 0.6]], 1.0).unwrap();
        let (l1, l2, eps) = (0.8, 2.5, 0.05);
        let pb = Problem::new(&x, &a, &y, &b).unwrap();
        let got = objective(
            &plan,
            &m,
            &pb,
            &EntropySpec::scaled_kl(l1).unwrap(),
            &EntropySpec::scaled_kl(l2).unwrap(),
            eps,
        )
        .unwrap();

        let phi = |t: f64| t * t.ln() - t + 1.0;
        let mut linear = 0.0;
        for i in 0..3 {
            for j in 0..2 {
                let mut mx_y = 0.0;
                for k in 0..2 {
                    let mut mx = 0.0;
                    for l in 0..2 {
                        mx += m.matrix()[[k, l]] * x.points()[[i, l]];
                    }
                    mx_y += mx * y.points()[[j, k]];
                }
                linear -= mx_y * p[[i, j]];
            }
        }
        let mut pen1 = 0.0;
        for i in 0..3 {
            let r: f64 = (0..2).map(|j| p[[i, j]]).sum();
            pen1 += a.weights()[i] * phi(r / a.weights()[i]);
        }
        let mut pen2 = 0.0;
        for j in 0..2 {
            let c: f64 = (0..3).map(|i| p[[i, j]]).sum();
            pen2 += b.weights()[j] * phi(c / b.weights()[j]);
        }
        let mut ent = 0.0;
        for i in 0..3 {
            for j in 0..2 {
                let r = a.weights()[i] * b.weights()[j];
                ent += r * phi(p[[i, j]] / r);
            }
        }
        let expected = linear + l1 * pen1 + l2 * pen2 + eps * ent;
        assert!((got - expected).abs() < 1e-13, "{got} vs {expected}");
    }

    #[test]
    fn single_atom_solve_saturates_norm() {
        let x = cloud(array![[1.0, 0.0]]);
        let y = cloud(array![[1.0]]);
        let one = DiscreteMeasure::new(array![1.0]).unwrap();
        let cfg = SolveConfig {
            epsilon: 0.1,
            ..SolveConfig::default()
        }
        .with_lambda(1.0)
        .unwrap();
        let res = solve_cruot(&x, &one, &y, &one, &cfg).unwrap();
        assert!((res.cost_map.norm() - 1.0).abs() < 1e-12);
        for w in res.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
        // Scalar problem with c = -1: p = exp(1 / (2 + 0.1))
        let expected = (1.0f64 / 2.1).exp();
        assert!((res.plan.entries()[[0, 0]] - expected).abs() < 1e-8);
    }

    #[test]
    fn balanced_fixed_point_matches_reduced_functional() {
        let (x, y) = random_instance(7, 4, 4, 3, 2);
        let a = DiscreteMeasure::uniform(4).unwrap();
        let b = DiscreteMeasure::uniform(4).unwrap();
        let cfg = SolveConfig {
            epsilon: 0.05,
            ..SolveConfig::default()
        };
        let res = solve_cruot(&x, &a, &y, &b, &cfg).unwrap();
        assert!(res.converged);
        let pb = Problem::new(&x, &a, &y, &b).unwrap();
        let bal = EntropySpec::Balanced;
        let reduced = reduced_objective(&res.plan, 1.0, &pb, &bal, &bal, 0.05).unwrap();
        let j = res.final_objective();
        assert!(j.is_finite());
        assert!((j - reduced).abs() <= 1e-8 * j.abs().max(1.0));
    }

    #[test]
    fn m_update_dominates_feasible_maps() {
        let (x, y) = random_instance(3, 6, 5, 4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let plan = CouplingMatrix::new(Array2::from_shape_fn((6, 5), |_| rng.gen_range(0.0..1.0)))
            .unwrap();
        let corr = cross_correlation(&plan, &x, &y).unwrap();
        let r = 2.5;
        let m = m_update(corr.view(), r).unwrap();
        let best = (&corr * &m.matrix()).sum();
        assert!((best - r * frobenius_norm(corr.view())).abs() <= 1e-10 * best.abs());
        for _ in 0..100 {
            let b = Array2::from_shape_fn((3, 4), |_| rng.gen_range(-1.0..1.0));
            let b = &b * (r * rng.gen_range(0.0..1.0) / frobenius_norm(b.view()));
            assert!(best >= (&corr * &b).sum() - 1e-10);
        }
    }

    #[test]
    fn centered_data_do_not_stall_at_zero_map() {
        let x = cloud(array![[1.0, 0.0], [-1.0, 0.0], [0.0, 2.0], [0.0, -2.0]]);
        let y = cloud(array![[1.0], [-1.0], [2.0], [-2.0]]);
        let u = DiscreteMeasure::uniform(4).unwrap();
        let cfg = SolveConfig {
            epsilon: 0.05,
            ..SolveConfig::default()
        }
        .with_lambda(1.0)
        .unwrap();
        let res = solve_cruot(&x, &u, &y, &u, &cfg).unwrap();
        assert!((res.cost_map.norm() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn zero_init_on_centered_data_is_a_fixed_point() {
        let x = cloud(array![[1.0, 0.0], [-1.0, 0.0]]);
        let y = cloud(array![[1.0], [-1.0]]);
        let u = DiscreteMeasure::uniform(2).unwrap();
        let cfg = SolveConfig {
            epsilon: 0.05,
            m_init: MInit::Zero,
            ..SolveConfig::default()
        };
        let res = solve_cruot(&x, &u, &y, &u, &cfg).unwrap();
        assert_eq!(res.cost_map.norm(), 0.0);
        let prod = CouplingMatrix::product(u.weights(), u.weights()).unwrap();
        let d = (&res.plan.entries() - &prod.entries())
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(d < 1e-12);
    }

    #[test]
    fn restarts_pick_lowest_objective() {
        let (x, y) = random_instance(8, 10, 9, 3, 2);
        let a = DiscreteMeasure::uniform(10).unwrap();
        let b = DiscreteMeasure::uniform(9).unwrap();
        let cfg = SolveConfig {
            epsilon: 0.05,
            ..SolveConfig::default()
        }
        .with_lambda(1.0)
        .unwrap();
        let best = solve_cruot_restarts(&x, &a, &y, &b, &cfg, &[1, 2, 3]).unwrap();
        for s in [1, 2, 3] {
            let c = SolveConfig {
                m_init: MInit::Seeded(s),
                ..cfg.clone()
            };
            let r = solve_cruot(&x, &a, &y, &b, &c).unwrap();
            assert!(best.final_objective() <= r.final_objective());
        }
    }

    #[test]
    fn epsilon_sweep_shapes() {
        let (x, y) = random_instance(5, 10, 10, 3, 2);
        let u = DiscreteMeasure::uniform(10).unwrap();
        let cfg = SolveConfig::default().with_lambda(1.0).unwrap();
        let one = epsilon_sweep(&x, &u, &y, &u, &cfg, &[0.1]).unwrap();
        assert_eq!(one.len(), 1);
        let two = epsilon_sweep(&x, &u, &y, &u, &cfg, &[0.1, 0.05]).unwrap();
        assert_eq!(two.len(), 2);
        assert!(two.iter().all(|p| p.stripped_value.is_finite()));
        assert!(epsilon_sweep(&x, &u, &y, &u, &cfg, &[0.05, 0.1]).is_err());
    }

    // With unit-mass marginals and KL penalties, stationarity along the ray
    // s -> sP gives J = (l1 + l2 + eps)(1 - m(P)); J <= 0 then forces m >= 1.
    #[test]
    fn objective_matches_mass_identity() {
        for (seed, l1, l2) in [(11, 0.3, 0.3), (12, 1.0, 2.5), (13, 4.0, 0.7)] {
            let (x, y) = random_instance(seed, 12, 9, 3, 2);
            let a = DiscreteMeasure::uniform(12).unwrap();
            let b = DiscreteMeasure::uniform(9).unwrap();
            let cfg = SolveConfig {
                epsilon: 0.1,
                entropy1: EntropySpec::ScaledKl { lambda: l1 },
                entropy2: EntropySpec::ScaledKl { lambda: l2 },
                ..SolveConfig::default()
            };
            let r = solve_cruot(&x, &a, &y, &b, &cfg).unwrap();
            let m = r.plan.total_mass();
            let predicted = (l1 + l2 + cfg.epsilon) * (1.0 - m);
            let j = r.final_objective();
            assert!(
                (j - predicted).abs() < 1e-7 * (1.0 + j.abs()),
                "{j} vs {predicted}"
            );
            assert!(j <= 0.0 && m >= 1.0, "m = {m}");
        }
    }
}
