//! Experiment harness: label-dependent subsampling, brute-force k-NN label
//! transfer and plan diagnostics.

use std::collections::BTreeMap;

use ndarray::{ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{CouplingMatrix, DiscreteMeasure, PointCloud};

/// Keep fractions per label. Labels not listed use `default_rate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsampleScheme {
    #[serde(default)]
    pub per_label_rates: BTreeMap<String, f64>,
    #[serde(default = "one")]
    pub default_rate: f64,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

impl SubsampleScheme {
    pub fn new(
        per_label_rates: BTreeMap<String, f64>,
        default_rate: f64,
        seed: u64,
    ) -> Result<Self> {
        let s = Self {
            per_label_rates,
            default_rate,
            seed,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for (label, &rate) in self
            .per_label_rates
            .iter()
            .map(|(l, r)| (l.as_str(), r))
            .chain(std::iter::once(("<default>", &self.default_rate)))
        {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::InvalidParameter(format!(
                    "keep rate for {label} must lie in [0, 1], got {rate}"
                )));
            }
        }
        Ok(())
    }

    pub fn rate(&self, label: &str) -> f64 {
        self.per_label_rates
            .get(label)
            .copied()
            .unwrap_or(self.default_rate)
    }
}

/// Indices kept by `scheme`, in increasing order. Each label with `n_l`
/// points keeps exactly `round(rate * n_l)` of them, picked by a seeded
/// shuffle; labels are visited in sorted order.
pub fn subsample_indices(labels: &[String], scheme: &SubsampleScheme) -> Result<Vec<usize>> {
    scheme.validate()?;
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        groups.entry(l.as_str()).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(scheme.seed);
    let mut kept = Vec::new();
    for (label, mut idx) in groups {
        let keep = (scheme.rate(label) * idx.len() as f64).round() as usize;
        idx.shuffle(&mut rng);
        kept.extend_from_slice(&idx[..keep.min(idx.len())]);
    }
    kept.sort_unstable();
    Ok(kept)
}

/// Subsamples a labelled cloud and returns it with a uniform probability
/// measure on the kept points.
pub fn subsample(
    cloud: &PointCloud,
    measure: &DiscreteMeasure,
    scheme: &SubsampleScheme,
) -> Result<(PointCloud, DiscreteMeasure)> {
    crate::types::validate(cloud, measure)?;
    let labels = cloud.labels().ok_or(Error::MissingLabels)?;
    let kept = subsample_indices(labels, scheme)?;
    if kept.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "subsampling {} removed every point",
            cloud.name()
        )));
    }
    let out = cloud.select(&kept)?;
    let w = DiscreteMeasure::uniform(kept.len())?;
    Ok((out, w))
}

fn squared_distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Majority vote among the `k` nearest training points (Euclidean).
///
/// Ties are resolved deterministically: equal distances by lower training
/// index; equal vote counts by the label whose closest neighbour ranks
/// first, then by label order.
pub fn knn_predict(
    train_points: ArrayView2<f64>,
    train_labels: &[String],
    query_points: ArrayView2<f64>,
    k: usize,
) -> Result<Vec<String>> {
    let m = train_points.nrows();
    if train_labels.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {m} training points",
            train_labels.len()
        )));
    }
    if train_points.ncols() != query_points.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "training points in R^{}, queries in R^{}",
            train_points.ncols(),
            query_points.ncols()
        )));
    }
    if k == 0 {
        return Err(Error::InvalidParameter("k must be positive".into()));
    }
    if k > m {
        return Err(Error::KTooLarge { k, available: m });
    }
    let predict = |q: ArrayView1<f64>| -> String {
        let mut order: Vec<(f64, usize)> = train_points
            .rows()
            .into_iter()
            .enumerate()
            .map(|(j, t)| (squared_distance(q, t), j))
            .collect();
        order.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        // label -> (votes, rank of its closest neighbour)
        let mut votes: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for (rank, &(_, j)) in order[..k].iter().enumerate() {
            let e = votes.entry(train_labels[j].as_str()).or_insert((0, rank));
            e.0 += 1;
        }
        let (label, _) = votes
            .into_iter()
            .min_by(|(la, (ca, ra)), (lb, (cb, rb))| cb.cmp(ca).then(ra.cmp(rb)).then(la.cmp(lb)))
            .expect("k >= 1");
        label.to_string()
    };
    let queries: Vec<ArrayView1<f64>> = query_points.rows().into_iter().collect();
    Ok(queries.into_par_iter().map(predict).collect())
}

/// Label transfer accuracy and its per-label breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub lta: f64,
    pub k: usize,
    pub n_source_eval: usize,
    pub per_label_accuracy: BTreeMap<String, f64>,
    pub per_label_count: BTreeMap<String, usize>,
    /// Total mass of the plan behind the alignment, when known.
    pub transported_mass: Option<f64>,
}

impl EvalReport {
    pub fn with_transported_mass(mut self, mass: f64) -> Self {
        self.transported_mass = Some(mass);
        self
    }
}

/// Predicts labels of the aligned source points with a k-NN classifier
/// trained on `target` and scores them against the true source labels.
pub fn label_transfer_accuracy(
    aligned_source: &PointCloud,
    target: &PointCloud,
    k: usize,
) -> Result<EvalReport> {
    if aligned_source.dim() != target.dim() {
        return Err(Error::DimensionMismatch(format!(
            "aligned source in R^{}, target in R^{}",
            aligned_source.dim(),
            target.dim()
        )));
    }
    let truth = aligned_source.labels().ok_or(Error::MissingLabels)?;
    let train_labels = target.labels().ok_or(Error::MissingLabels)?;
    let predicted = knn_predict(target.points(), train_labels, aligned_source.points(), k)?;

    let mut correct_by_label: BTreeMap<String, usize> = BTreeMap::new();
    let mut count_by_label: BTreeMap<String, usize> = BTreeMap::new();
    let mut correct = 0usize;
    for (t, p) in truth.iter().zip(&predicted) {
        *count_by_label.entry(t.clone()).or_default() += 1;
        let hit = correct_by_label.entry(t.clone()).or_default();
        if t == p {
            *hit += 1;
            correct += 1;
        }
    }
    let per_label_accuracy = count_by_label
        .iter()
        .map(|(l, &n)| (l.clone(), correct_by_label[l] as f64 / n as f64))
        .collect();
    Ok(EvalReport {
        lta: correct as f64 / truth.len() as f64,
        k,
        n_source_eval: truth.len(),
        per_label_accuracy,
        per_label_count: count_by_label,
        transported_mass: None,
    })
}

/// Total mass `sum_ij P_ij` of a plan.
pub fn transported_mass(plan: &CouplingMatrix) -> f64 {
    plan.entries().sum()
}
