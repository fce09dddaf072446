#![allow(dead_code)]

use curvlab::cost::smoothed_targets;
use curvlab::rng::{derive_seed, gaussian_vec, seeded, uniform_vec};
use curvlab::{BnMode, CostSpec, Layer, LayerKind, LayeredNetwork, Tensor};

pub struct Instance {
    pub net: LayeredNetwork,
    pub cost: CostSpec,
    pub x: Tensor,
    pub y: Tensor,
    pub label: String,
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

/// Architecture `k` of a fixed catalogue covering every layer kind and both
/// batch-norm modes, with random parameters.
pub fn network(k: usize, d0: usize, d_out: usize, seed: u64) -> LayeredNetwork {
    let act = KINDS[k % KINDS.len()];
    let h = 4;
    let layers = match (k / KINDS.len()) % 4 {
        0 => vec![
            Layer::linear(d0, h),
            Layer::activation(act, h),
            Layer::linear(h, d_out),
        ],
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

/// Random (net, cost, data) instance `k`.
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
