//! Monte Carlo checks of the maximum and concentration inequalities.

use curvlab::distributions::{
    concentration_rate_with, max_inequality_rate_with, reference_stats, Distribution, McOptions, RateReport,
    VectorMap,
};
use curvlab::rng::derive_seed;
use curvlab::{LayerKind, LayeredNetwork, Tensor};

use crate::config::{ExperimentConfig, ProbeSpec};
use crate::error::{bad, Result};
use crate::table::{Cell, Table};

enum Probe {
    Coordinate(usize),
    Sum,
    Norm,
    Constant(f64),
    Net(LayeredNetwork),
}

impl Probe {
    fn build(spec: &ProbeSpec, dim: usize) -> Result<Probe> {
        Ok(match spec {
            ProbeSpec::Coordinate { index } if *index < dim => Probe::Coordinate(*index),
            ProbeSpec::Coordinate { index } => return bad(format!("coordinate {index} of a {dim}-dimensional space")),
            ProbeSpec::Sum => Probe::Sum,
            ProbeSpec::Norm => Probe::Norm,
            ProbeSpec::Constant { value } => Probe::Constant(*value),
            ProbeSpec::RandomMlp { hidden, seed } => {
                let mut dims = vec![dim];
                dims.extend(hidden);
                dims.push(1);
                Probe::Net(LayeredNetwork::mlp(&dims, LayerKind::Tanh, *seed)?)
            }
        })
    }

    fn name(&self) -> String {
        match self {
            Probe::Coordinate(i) => format!("coordinate-{i}"),
            Probe::Sum => "sum".into(),
            Probe::Norm => "norm".into(),
            Probe::Constant(_) => "constant".into(),
            Probe::Net(_) => "random-mlp".into(),
        }
    }
}

impl VectorMap for Probe {
    fn eval(&self, x: &Tensor) -> curvlab::Result<Tensor> {
        if let Probe::Net(net) = self {
            return net.forward_batch(x);
        }
        let n = x.cols();
        let vals = (0..n)
            .map(|j| {
                let c = x.column(j);
                match self {
                    Probe::Coordinate(i) => c[*i],
                    Probe::Sum => c.iter().sum(),
                    Probe::Norm => c.iter().map(|v| v * v).sum::<f64>().sqrt(),
                    Probe::Constant(v) => *v,
                    Probe::Net(_) => unreachable!(),
                }
            })
            .collect();
        Tensor::matrix(1, n, vals)
    }
}

/// One `max-ineq` and one `concentration` row per (probe, ε).
pub fn run_max_ineq_check(cfg: &ExperimentConfig, seed: u64) -> Result<Table> {
    let Some(spec) = &cfg.mc else {
        return bad("max-ineq-check needs an mc section");
    };
    if cfg.sweep.iter().any(|&e| e < 0.0) {
        return bad("tolerances must be non-negative");
    }
    let dist = Distribution::from_spec(&spec.distribution)?;
    let mut t = Table::new([
        "row_type", "probe", "probe_kind", "eps", "rate", "std_error", "bound", "sup", "lip", "trials",
    ]);
    for (k, ps) in spec.probes.iter().enumerate() {
        let probe = Probe::build(ps, dist.output_dim())?;
        let pseed = derive_seed(seed, k as u64);
        let opts = McOptions {
            reference: spec.reference,
            trials: spec.trials,
            seed: pseed,
        };
        let reference = reference_stats(&dist, &probe, spec.reference, derive_seed(pseed, 0))?;
        for &eps in &cfg.sweep {
            let rows: [(&str, RateReport); 2] = [
                ("max-ineq", max_inequality_rate_with(&dist, &probe, eps, &reference, &opts)?),
                ("concentration", concentration_rate_with(&dist, &probe, eps, &reference, &opts)?),
            ];
            for (kind, r) in rows {
                t.push(vec![
                    Cell::text(kind),
                    k.into(),
                    Cell::text(probe.name()),
                    r.eps.into(),
                    r.rate.into(),
                    r.std_error.into(),
                    r.bound.into(),
                    r.sup.into(),
                    r.lip.into(),
                    r.trials.into(),
                ]);
            }
        }
    }
    Ok(t)
}
