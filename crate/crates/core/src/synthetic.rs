//! Synthetic 3D -> 2D alignment benchmark.
//!
//! Source: balanced mixture of uniform distributions on two solid ellipsoids
//! in R^3. Target: mixture `0.85 E + 0.15 S` of the uniform distributions on
//! a solid ellipse `E` and a square `S` in R^2. The geometric constants are
//! fixed below; only the mixture structure is prescribed.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::types::PointCloud;

pub const ELLIPSOID_A_CENTER: [f64; 3] = [1.5, 1.0, 0.5];
pub const ELLIPSOID_B_CENTER: [f64; 3] = [-1.5, -1.0, -0.5];
pub const ELLIPSOID_AXES: [f64; 3] = [1.0, 0.6, 0.4];

pub const ELLIPSE_CENTER: [f64; 2] = [0.0, 0.0];
pub const ELLIPSE_AXES: [f64; 2] = [2.5, 1.0];
/// Weight of the ellipse component in the target mixture.
pub const ELLIPSE_WEIGHT: f64 = 0.85;
pub const SQUARE_CENTER: [f64; 2] = [0.0, 3.0];
pub const SQUARE_SIDE: f64 = 1.5;

pub const LABEL_ELLIPSOID_A: &str = "ellipsoid_a";
pub const LABEL_ELLIPSOID_B: &str = "ellipsoid_b";
pub const LABEL_ELLIPSE: &str = "ellipse";
pub const LABEL_SQUARE: &str = "square";

/// Uniform point of the unit ball in `R^d` by rejection.
fn unit_ball<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if v.iter().map(|x| x * x).sum::<f64>() <= 1.0 {
            return v;
        }
    }
}

fn in_ellipsoid<R: Rng>(rng: &mut R, center: &[f64], axes: &[f64]) -> Vec<f64> {
    unit_ball(rng, center.len())
        .iter()
        .zip(center.iter().zip(axes))
        .map(|(u, (c, a))| c + a * u)
        .collect()
}

/// Source and target clouds of the toy benchmark, labelled by component.
pub fn toy_dataset(
    seed: u64,
    n_source: usize,
    n_target: usize,
) -> Result<(PointCloud, PointCloud)> {
    if n_source == 0 || n_target == 0 {
        return Err(Error::EmptyDataset(format!(
            "toy dataset needs positive sizes, got {n_source} source and {n_target} target points"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut src = Array2::zeros((n_source, 3));
    let mut src_labels = Vec::with_capacity(n_source);
    for i in 0..n_source {
        let (center, label) = if rng.gen_bool(0.5) {
            (&ELLIPSOID_A_CENTER, LABEL_ELLIPSOID_A)
        } else {
            (&ELLIPSOID_B_CENTER, LABEL_ELLIPSOID_B)
        };
        let p = in_ellipsoid(&mut rng, center, &ELLIPSOID_AXES);
        src.row_mut(i).assign(&ndarray::arr1(&p));
        src_labels.push(label.to_string());
    }

    let mut tgt = Array2::zeros((n_target, 2));
    let mut tgt_labels = Vec::with_capacity(n_target);
    for j in 0..n_target {
        let (p, label) = if rng.gen_bool(ELLIPSE_WEIGHT) {
            (
                in_ellipsoid(&mut rng, &ELLIPSE_CENTER, &ELLIPSE_AXES),
                LABEL_ELLIPSE,
            )
        } else {
            let h = SQUARE_SIDE / 2.0;
            (
                vec![
                    SQUARE_CENTER[0] + rng.gen_range(-h..h),
                    SQUARE_CENTER[1] + rng.gen_range(-h..h),
                ],
                LABEL_SQUARE,
            )
        };
        tgt.row_mut(j).assign(&ndarray::arr1(&p));
        tgt_labels.push(label.to_string());
    }

    Ok((
        PointCloud::new(src, Some(src_labels), "toy_source")?,
        PointCloud::new(tgt, Some(tgt_labels), "toy_target")?,
    ))
}
