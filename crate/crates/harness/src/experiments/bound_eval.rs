//! Sample-maximum and generalisation bounds over an (N, ε, δ) grid.

use std::path::Path;

use curvlab::distributions::{
    generalisation_bound, hypercube_sample, thm_sample_max_bound, Distribution, GeneralisationInputs,
};
use curvlab::rng::{derive_seed, unit_gaussian};
use curvlab::spectral::{jacobian_lipschitz_estimate, jacobian_norms, PowerOptions};
use curvlab::{LayeredNetwork, Tensor};

use crate::config::ExperimentConfig;
use crate::error::{bad, Result};
use crate::table::{Cell, Table};

/// Local step, in latent space, of the Jacobian-Lipschitz pairs.
const PAIR_STEP: f64 = 1e-4;

/// Pairs of nearby points of the distribution's support: latent draws and
/// small latent perturbations (clamped to the cube), both pushed forward.
pub fn local_pairs(dist: &Distribution, count: usize, seed: u64) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let n = dist.latent_dim();
    let z = hypercube_sample(n, count, derive_seed(seed, 0));
    let dirs = unit_gaussian(derive_seed(seed, 1), n * count);
    let mut z2 = z.clone();
    for j in 0..count {
        let d = &dirs[j * n..(j + 1) * n];
        let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (i, &di) in d.iter().enumerate() {
            let v = &mut z2.data_mut()[i * count + j];
            *v = (*v + PAIR_STEP * di / norm).clamp(0.0, 1.0);
        }
    }
    let push = |t: Tensor| -> Result<Tensor> {
        Ok(match dist.generator() {
            Some(g) => g.forward_batch(&t)?,
            None => t,
        })
    };
    let (a, b) = (push(z)?, push(z2)?);
    Ok((0..count)
        .map(|j| (a.column(j), b.column(j)))
        .filter(|(p, q)| p != q)
        .collect())
}

/// One `inputs` row (Jacobian maximum and Lipschitz estimate over the
/// reference sample, generator Lipschitz estimate) and a `bound` row per
/// grid point with the sample-maximum bound at `N` and the generalisation
/// bound.
pub fn run_bound_eval(cfg: &ExperimentConfig, seed: u64) -> Result<Table> {
    let Some(spec) = &cfg.bound else {
        return bad("bound-eval needs a bound section");
    };
    let dist = Distribution::from_spec(&spec.distribution)?;
    let net = match (&spec.network_dir, &spec.network_stem) {
        (Some(dir), Some(stem)) => LayeredNetwork::load(Path::new(dir), stem)?,
        (None, None) => cfg
            .network()?
            .build(dist.output_dim(), spec.output_dim, derive_seed(seed, 0))?,
        _ => return bad("network_dir and network_stem go together"),
    };
    if net.input_dim() != dist.output_dim() {
        return bad("network input dimension differs from the distribution's");
    }
    let ns: Vec<usize> = cfg.sweep.iter().map(|&v| v as usize).collect();
    if cfg.sweep.iter().zip(&ns).any(|(&v, &n)| n as f64 != v || n == 0) {
        return bad("bound-eval sweep values must be positive integers");
    }
    if spec.eps.iter().chain(&spec.delta).any(|&v| v.is_nan() || v < 0.0) {
        return bad("eps and delta must be non-negative");
    }
    let x = dist.sample(spec.reference.max(2), derive_seed(seed, 1))?;
    let max_jac = jacobian_norms(&net, &x, spec.softmaxed, &PowerOptions::default())?.max;
    let mut pairs: Vec<(Vec<f64>, Vec<f64>)> = (1..x.cols()).map(|j| (x.column(j - 1), x.column(j))).collect();
    pairs.retain(|(a, b)| a != b);
    pairs.extend(local_pairs(&dist, spec.reference, derive_seed(seed, 2))?);
    let jac_lip = jacobian_lipschitz_estimate(&net, &pairs, spec.softmaxed)?;
    let profile = dist.profile();

    let mut t = Table::new([
        "row_type",
        "N",
        "eps",
        "delta",
        "sample_max_bound",
        "generalisation_bound",
        "max_jac",
        "jac_lip",
        "generator_lip",
    ]);
    t.push(vec![
        Cell::text("inputs"),
        Cell::Empty,
        Cell::Empty,
        Cell::Empty,
        Cell::Empty,
        Cell::Empty,
        max_jac.into(),
        jac_lip.into(),
        dist.generator_lip().into(),
    ]);
    for &n in &ns {
        for &eps in &spec.eps {
            for &delta in &spec.delta {
                let p = GeneralisationInputs {
                    n_samples: n,
                    eps,
                    delta,
                    max_jac,
                    jac_lip,
                    concentration_c: dist.concentration_c(),
                    cost_lip: spec.cost_lip,
                };
                t.push(vec![
                    Cell::text("bound"),
                    n.into(),
                    eps.into(),
                    delta.into(),
                    thm_sample_max_bound(n, eps, jac_lip, &profile).into(),
                    generalisation_bound(&p, &profile).into(),
                    Cell::Empty,
                    Cell::Empty,
                    Cell::Empty,
                ]);
            }
        }
    }
    Ok(t)
}
