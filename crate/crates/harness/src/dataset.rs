//! Seeded synthetic datasets.

use curvlab::cost::smoothed_targets;
use curvlab::rng::{derive_seed, gaussian_vec, seeded, uniform_vec};
use curvlab::Tensor;

use crate::config::{DatasetKind, DatasetSpec};
use crate::error::{bad, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub x: Tensor,
    /// Class labels (classification) or empty.
    pub labels: Vec<usize>,
    /// Regression targets, or one-hot targets for classification.
    pub y: Tensor,
    pub holdout_x: Tensor,
    pub holdout_labels: Vec<usize>,
    pub holdout_y: Tensor,
    pub classes: usize,
    pub generator: DatasetKind,
    pub seed: u64,
}

impl SyntheticDataset {
    pub fn generate(spec: &DatasetSpec) -> Result<Self> {
        match spec.generator {
            DatasetKind::GaussianClusters => gaussian_clusters(spec),
            DatasetKind::RegressionPoints => regression_points(spec),
        }
    }

    /// Training targets smoothed with `alpha`.
    pub fn smoothed(&self, alpha: f64) -> Result<Tensor> {
        Ok(smoothed_targets(&self.labels, self.classes, alpha)?)
    }

    pub fn holdout_smoothed(&self, alpha: f64) -> Result<Tensor> {
        Ok(smoothed_targets(&self.holdout_labels, self.classes, alpha)?)
    }
}

/// Centres are random directions scaled to `radius`; point `j` belongs to
/// class `j mod classes`.
fn gaussian_clusters(spec: &DatasetSpec) -> Result<SyntheticDataset> {
    let (k, d) = (spec.classes, spec.dim);
    if k < 2 || d == 0 || spec.size == 0 {
        return bad("clusters need ≥ 2 classes, dim ≥ 1 and a positive size");
    }
    if !(spec.spread >= 0.0 && spec.radius > 0.0) {
        return bad("cluster spread must be non-negative and radius positive");
    }
    let total = spec.size + spec.holdout;
    let mut rng = seeded(derive_seed(spec.seed, 0));
    let centres: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            let v = gaussian_vec(&mut rng, d);
            let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            v.iter().map(|a| spec.radius * a / n).collect()
        })
        .collect();
    let mut rng = seeded(derive_seed(spec.seed, 1));
    let noise = gaussian_vec(&mut rng, d * total);
    let labels: Vec<usize> = (0..total).map(|j| j % k).collect();
    let cols: Vec<Vec<f64>> = (0..total)
        .map(|j| {
            (0..d)
                .map(|i| centres[labels[j]][i] + spec.spread * noise[j * d + i])
                .collect()
        })
        .collect();
    let x_all = Tensor::from_columns(&cols)?;
    let train: Vec<usize> = (0..spec.size).collect();
    let held: Vec<usize> = (spec.size..total).collect();
    let onehot = |idx: &[usize]| smoothed_targets(&idx.iter().map(|&j| labels[j]).collect::<Vec<_>>(), k, 0.0);
    Ok(SyntheticDataset {
        x: x_all.select_columns(&train),
        labels: labels[..spec.size].to_vec(),
        y: onehot(&train)?,
        holdout_x: x_all.select_columns(&held),
        holdout_labels: labels[spec.size..].to_vec(),
        holdout_y: onehot(&held)?,
        classes: k,
        generator: spec.generator,
        seed: spec.seed,
    })
}

fn regression_points(spec: &DatasetSpec) -> Result<SyntheticDataset> {
    if spec.size == 0 || spec.holdout != 0 {
        return bad("regression points need a positive size and no holdout");
    }
    let n = spec.size;
    let x = Tensor::matrix(1, n, (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect())?;
    let y = Tensor::matrix(1, n, uniform_vec(&mut seeded(spec.seed), n, -1.0, 1.0))?;
    Ok(SyntheticDataset {
        x,
        labels: Vec::new(),
        y,
        holdout_x: Tensor::zeros(&[1, 0]),
        holdout_labels: Vec::new(),
        holdout_y: Tensor::zeros(&[1, 0]),
        classes: 0,
        generator: spec.generator,
        seed: spec.seed,
    })
}
