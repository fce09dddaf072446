#![allow(dead_code)]

use std::collections::HashMap;
use std::path::PathBuf;

use curvlab::cost::smoothed_targets;
use curvlab::rng::{derive_seed, gaussian_vec, seeded, uniform_vec};
use curvlab::{BnMode, CostSpec, Layer, LayerKind, LayeredNetwork, Tensor};
use curvlab_harness::ExperimentConfig;

pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

pub fn load_config(name: &str) -> ExperimentConfig {
    let text = std::fs::read_to_string(config_path(name)).unwrap();
    ExperimentConfig::from_json(&text).unwrap()
}

/// A CSV file read back independently of the writer: comment lines, a header
/// and string cells.
pub struct Csv {
    pub comments: Vec<String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Csv {
    pub fn parse(text: &str) -> Csv {
        let mut comments = Vec::new();
        let mut lines = Vec::new();
        for line in text.split('\n').filter(|l| !l.is_empty()) {
            if let Some(c) = line.strip_prefix('#') {
                comments.push(c.to_string());
            } else {
                lines.push(line.split(',').map(str::to_string).collect::<Vec<_>>());
            }
        }
        let header = lines.remove(0);
        Csv { comments, header, rows: lines }
    }

    pub fn col(&self, name: &str) -> usize {
        self.header
            .iter()
            .position(|h| h == name)
            .unwrap_or_else(|| panic!("no column {name}"))
    }

    pub fn rows_of<'a>(&'a self, kind: &'a str) -> impl Iterator<Item = &'a Vec<String>> + 'a {
        let c = self.col("row_type");
        self.rows.iter().filter(move |r| r[c] == kind)
    }

    pub fn float(&self, row: &[String], name: &str) -> f64 {
        let cell = &row[self.col(name)];
        cell.parse().unwrap_or_else(|_| panic!("{name} = {cell:?}"))
    }

    pub fn text<'a>(&self, row: &'a [String], name: &str) -> &'a str {
        &row[self.col(name)]
    }

    /// `metric` of the final row of every (param, trial), keyed by trial and
    /// listed in sweep order.
    pub fn finals_by_trial(&self, metric: &str) -> HashMap<String, Vec<f64>> {
        let mut out: HashMap<String, Vec<f64>> = HashMap::new();
        for r in self.rows_of("final") {
            out.entry(self.text(r, "trial").to_string())
                .or_default()
                .push(self.float(r, metric));
        }
        out
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation, written out longhand.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

pub const KINDS: [LayerKind; 4] = [
    LayerKind::Relu,
    LayerKind::Tanh,
    LayerKind::Gaussian,
    LayerKind::SmoothLeakyRelu,
];

pub fn gaussian_tensor(shape: &[usize], seed: u64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), gaussian_vec(&mut seeded(seed), n)).unwrap()
}

/// Architecture `k` of a catalogue covering every activation and both
/// batch-norm modes.
pub fn network(k: usize, d0: usize, d_out: usize, seed: u64) -> LayeredNetwork {
    let act = KINDS[k % KINDS.len()];
    let h = 4;
    let layers = match (k / KINDS.len()) % 4 {
        0 => vec![Layer::linear(d0, h), Layer::activation(act, h), Layer::linear(h, d_out)],
        1 => vec![
            Layer::linear(d0, h),
            Layer::batch_norm(h, BnMode::Train),
            Layer::activation(act, h),
            Layer::linear(h, d_out),
        ],
        2 => vec![
            Layer::linear(d0, h),
            Layer::batch_norm(h, BnMode::Eval),
            Layer::activation(act, h),
            Layer::linear(h, 3),
            Layer::activation(act, 3),
            Layer::linear(3, d_out),
        ],
        _ => vec![
            Layer::linear(d0, h),
            Layer::activation(act, h),
            Layer::linear(h, d_out),
            Layer::activation(LayerKind::Softmax, d_out),
        ],
    };
    let mut net = LayeredNetwork::new(layers).unwrap();
    net.init_uniform(seed);
    let mut rng = seeded(derive_seed(seed, 99));
    for layer in net.layers_mut() {
        if layer.kind == LayerKind::BatchNorm {
            layer.running_mean = uniform_vec(&mut rng, layer.in_dim, -0.5, 0.5);
            layer.running_var = uniform_vec(&mut rng, layer.in_dim, 0.2, 2.0);
        }
    }
    net
}

pub struct Instance {
    pub net: LayeredNetwork,
    pub cost: CostSpec,
    pub x: Tensor,
    pub y: Tensor,
    pub label: String,
}

pub fn instance(k: usize, seed: u64) -> Instance {
    let (d0, d_out, n) = (3, 3, 5);
    let net = network(k, d0, d_out, derive_seed(seed, k as u64));
    let x = gaussian_tensor(&[d0, n], derive_seed(seed, 1000 + k as u64));
    let (cost, y) = if k.is_multiple_of(2) {
        (CostSpec::square(), gaussian_tensor(&[d_out, n], derive_seed(seed, 2000 + k as u64)))
    } else {
        let labels: Vec<usize> = (0..n).map(|j| (j + k) % d_out).collect();
        let alpha = [0.0, 0.5, 0.75][k % 3];
        (
            CostSpec::cross_entropy(alpha, k % 4 == 1),
            smoothed_targets(&labels, d_out, alpha).unwrap(),
        )
    };
    let label = format!("{k}: {:?}", net.layers().iter().map(|l| l.kind).collect::<Vec<_>>());
    Instance { net, cost, x, y, label }
}

pub fn with_params(net: &LayeredNetwork, theta: &[f64]) -> LayeredNetwork {
    let mut n = net.clone();
    n.set_params(Tensor::vector(theta.to_vec())).unwrap();
    n
}
