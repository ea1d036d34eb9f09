//! Entropy functions and the divergences they generate between discrete
//! measures.
//!
//! Conventions: `phi_KL(0) = 1`, `0 * phi_KL(0 / 0) = 0`, and a violated
//! absolute-continuity or balanced constraint evaluates to `f64::INFINITY`.

use ndarray::ArrayView1;

use crate::error::{Error, Result};
use crate::types::{CouplingMatrix, EntropySpec};

/// Relative tolerance used to decide equality of marginals in the balanced case.
pub const BALANCED_REL_TOL: f64 = 1e-9;

/// `phi_KL(t) = t log t - t + 1`.
pub fn phi_kl(t: f64) -> Result<f64> {
    if t < 0.0 || t.is_nan() {
        return Err(Error::NegativeArgument(t));
    }
    Ok(phi_kl_unchecked(t))
}

#[inline]
fn phi_kl_unchecked(t: f64) -> f64 {
    if t == 0.0 {
        1.0
    } else if t.is_infinite() {
        f64::INFINITY
    } else {
        t * t.ln() - t + 1.0
    }
}

/// Contribution `q * phi_KL(p / q)` of a single atom.
#[inline]
fn kl_term(p: f64, q: f64) -> f64 {
    if q == 0.0 {
        if p == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else if p == 0.0 {
        q
    } else {
        p * (p / q).ln() - p + q
    }
}

fn check_entries(p: ArrayView1<f64>, q: ArrayView1<f64>) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch(format!(
            "vectors of length {} and {}",
            p.len(),
            q.len()
        )));
    }
    if let Some(&v) = p.iter().chain(q.iter()).find(|v| !(**v >= 0.0)) {
        return Err(Error::NegativeArgument(v));
    }
    Ok(())
}

/// Generalized KL divergence `sum_i q_i phi_KL(p_i / q_i)` between
/// nonnegative vectors. Infinite when `p` is not absolutely continuous
/// with respect to `q`.
pub fn kl_divergence(p: ArrayView1<f64>, q: ArrayView1<f64>) -> Result<f64> {
    check_entries(p, q)?;
    Ok(p.iter()
        .zip(q.iter())
        .map(|(&pi, &qi)| kl_term(pi, qi))
        .sum())
}

/// Divergence `D_phi(p || q)` generated by `spec`.
pub fn phi_penalty(spec: &EntropySpec, p: ArrayView1<f64>, q: ArrayView1<f64>) -> Result<f64> {
    match spec {
        EntropySpec::Balanced => {
            check_entries(p, q)?;
            let equal = p
                .iter()
                .zip(q.iter())
                .all(|(&pi, &qi)| (pi - qi).abs() <= BALANCED_REL_TOL * pi.abs().max(qi.abs()));
            Ok(if equal { 0.0 } else { f64::INFINITY })
        }
        EntropySpec::ScaledKl { lambda } => Ok(lambda * kl_divergence(p, q)?),
    }
}

/// `KL(P || a (x) b)`, the flat divergence over the `n x m` grid with
/// reference `a_i b_j`.
pub fn kl_plan(plan: &CouplingMatrix, a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<f64> {
    let (n, m) = plan.shape();
    if a.len() != n || b.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "plan is {n}x{m}, reference measures have {} and {} atoms",
            a.len(),
            b.len()
        )));
    }
    let entries = plan.entries();
    let mut total = 0.0;
    for (i, row) in entries.rows().into_iter().enumerate() {
        for (j, &pij) in row.iter().enumerate() {
            total += kl_term(pij, a[i] * b[j]);
        }
    }
    Ok(total)
}
