//! Strict JSON experiment configuration.

use curvlab::distributions::DistributionSpec;
use curvlab::trainer::TrainConfig;
use curvlab::{BnMode, CostSpec, Layer, LayerKind, LayeredNetwork};
use serde::{Deserialize, Serialize};

use crate::error::{bad, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    LabelSmoothingSweep,
    InputScalingSweep,
    RegressionFrequency,
    WeightDecaySweep,
    BnCheck,
    BoundEval,
    MaxIneqCheck,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::LabelSmoothingSweep => "label-smoothing-sweep",
            ExperimentKind::InputScalingSweep => "input-scaling-sweep",
            ExperimentKind::RegressionFrequency => "regression-frequency",
            ExperimentKind::WeightDecaySweep => "weight-decay-sweep",
            ExperimentKind::BnCheck => "bn-check",
            ExperimentKind::BoundEval => "bound-eval",
            ExperimentKind::MaxIneqCheck => "max-ineq-check",
        }
    }
}

/// One experiment. What `sweep` ranges over depends on the kind:
/// label smoothing α, input scale s, ReLU pretraining frequency f (targets
/// `sin(fπx)`), weight decay, batch size N (bn-check and bound-eval) or
/// tolerance ε (max-ineq-check).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network: Option<NetworkSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<CostSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    pub sweep: Vec<f64>,
    #[serde(default = "one")]
    pub trials: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regression: Option<RegressionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bn: Option<BnSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<BoundSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc: Option<McSpec>,
}

fn one() -> usize {
    1
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical serialisation, the input of the config hash.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serialises")
    }

    pub fn output_name(&self) -> String {
        self.output
            .clone()
            .unwrap_or_else(|| format!("{}.csv", self.experiment.name()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.sweep.is_empty() {
            return bad("sweep must be non-empty");
        }
        if self.sweep.iter().any(|v| !v.is_finite()) {
            return bad("sweep values must be finite");
        }
        if self.trials == 0 {
            return bad("trials must be at least 1");
        }
        if let Some(out) = &self.output {
            if out.is_empty() || out.contains('/') || out.contains('\\') {
                return bad("output must be a plain file name");
            }
        }
        if let Some(t) = &self.train {
            t.validate()?;
        }
        if let Some(c) = &self.cost {
            c.validate()?;
        }
        Ok(())
    }

    pub fn dataset(&self) -> Result<&DatasetSpec> {
        self.dataset.as_ref().map_or_else(|| bad("dataset section required"), Ok)
    }

    pub fn network(&self) -> Result<&NetworkSpec> {
        self.network.as_ref().map_or_else(|| bad("network section required"), Ok)
    }

    pub fn cost(&self) -> Result<CostSpec> {
        self.cost.map_or_else(|| bad("cost section required"), Ok)
    }

    pub fn train(&self) -> Result<&TrainConfig> {
        self.train.as_ref().map_or_else(|| bad("train section required"), Ok)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    /// `classes` isotropic Gaussian clusters in ℝ^dim.
    GaussianClusters,
    /// Evenly spaced points on `[0, 1]` with seeded uniform `[−1, 1]` targets.
    RegressionPoints,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub generator: DatasetKind,
    pub size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "four")]
    pub classes: usize,
    #[serde(default = "sixteen")]
    pub dim: usize,
    /// Distance of each cluster centre from the origin.
    #[serde(default = "one_f")]
    pub radius: f64,
    /// Per-coordinate standard deviation within a cluster.
    #[serde(default = "spread")]
    pub spread: f64,
    /// Points held out from training (taken after the training points).
    #[serde(default)]
    pub holdout: usize,
}

fn four() -> usize {
    4
}

fn sixteen() -> usize {
    16
}

fn one_f() -> f64 {
    1.0
}

fn spread() -> f64 {
    0.15
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub hidden: Vec<usize>,
    pub activation: LayerKind,
    /// Batch norm after every hidden linear layer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_norm: Option<BnMode>,
}

impl NetworkSpec {
    /// `d_in → hidden… → d_out`, uniformly initialised with `seed`.
    pub fn build(&self, d_in: usize, d_out: usize, seed: u64) -> Result<LayeredNetwork> {
        if !self.activation.is_activation() {
            return bad(format!("{:?} is not an activation", self.activation));
        }
        let mut layers = Vec::new();
        let mut prev = d_in;
        for &w in &self.hidden {
            layers.push(Layer::linear(prev, w));
            if let Some(mode) = self.batch_norm {
                layers.push(Layer::batch_norm(w, mode));
            }
            layers.push(Layer::activation(self.activation, w));
            prev = w;
        }
        layers.push(Layer::linear(prev, d_out));
        let mut net = LayeredNetwork::new(layers)?;
        net.init_uniform(seed);
        Ok(net)
    }
}

/// Coordinate regression: four linear layers of width `width` on 1-D inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegressionSpec {
    pub width: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Overrides `learning_rate` for the Gaussian network.
    pub gaussian_learning_rate: Option<f64>,
    pub gaussian_steps: usize,
    pub relu_steps: usize,
    /// First-layer weight and bias multiplier for the Gaussian network; with
    /// the unit-width activation `exp(−u²/2)`, a multiplier `c` gives bumps
    /// of width `1/c` in the input.
    pub gaussian_high_scale: f64,
    pub gaussian_low_scale: f64,
    /// Pretraining of the high-frequency ReLU init on `sin(fπx)`, by Adam
    /// with the usual defaults (β₁ 0.9, β₂ 0.999, ε 1e-8).
    pub pretrain_points: usize,
    pub pretrain_learning_rate: f64,
    pub pretrain_loss: f64,
    pub pretrain_max_steps: usize,
    pub activations: Vec<LayerKind>,
}

impl Default for RegressionSpec {
    fn default() -> Self {
        RegressionSpec {
            width: 64,
            learning_rate: 1e-4,
            momentum: 0.9,
            gaussian_learning_rate: None,
            gaussian_steps: 10_000,
            relu_steps: 100_000,
            gaussian_high_scale: 10.0,
            gaussian_low_scale: 0.5,
            pretrain_points: 64,
            pretrain_learning_rate: 1e-3,
            pretrain_loss: 0.01,
            pretrain_max_steps: 100_000,
            activations: vec![LayerKind::Gaussian, LayerKind::Relu],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BnSpec {
    pub d: usize,
    /// Batch size of the network-versus-dense eval Jacobian cross-check.
    pub crosscheck_n: usize,
}

impl Default for BnSpec {
    fn default() -> Self {
        BnSpec { d: 4, crosscheck_n: 16 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundSpec {
    pub distribution: DistributionSpec,
    /// Directory and stem of a saved network; otherwise `network` is built
    /// and initialised from the seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network_dir: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network_stem: Option<String>,
    #[serde(default = "one")]
    pub output_dim: usize,
    pub eps: Vec<f64>,
    pub delta: Vec<f64>,
    #[serde(default = "one_f")]
    pub cost_lip: f64,
    #[serde(default)]
    pub softmaxed: bool,
    /// Draws used for the Jacobian maximum and its Lipschitz estimate.
    #[serde(default = "thousand")]
    pub reference: usize,
}

fn thousand() -> usize {
    1000
}

/// A probe function `g` for the Monte Carlo checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum ProbeSpec {
    /// `x ↦ x_index`.
    Coordinate { index: usize },
    /// `x ↦ Σ xᵢ`.
    Sum,
    /// `x ↦ ‖x‖₂`.
    Norm,
    Constant { value: f64 },
    /// Random tanh MLP `ℝⁿ → ℝ`.
    RandomMlp { hidden: Vec<usize>, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSpec {
    pub distribution: DistributionSpec,
    pub probes: Vec<ProbeSpec>,
    #[serde(default = "reference")]
    pub reference: usize,
    #[serde(default = "trials")]
    pub trials: usize,
}

fn reference() -> usize {
    100_000
}

fn trials() -> usize {
    1_000_000
}
