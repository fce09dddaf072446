mod common;

use common::gaussian_tensor;
use curvlab::autodiff;
use curvlab::cost::{
    cost_gradient, cost_hessian, cost_hessian_factor, loss, mean_label_entropy,
    quadratic_lower_bound_check, smoothed_targets, GammaProgram,
};
use curvlab::{CostSpec, Layer, LayeredNetwork, Tensor};
use curvlab_oracle::{eigenvalues_desc, fd_grad, fd_hessian_values, from_row_major, rel_err};
use proptest::prelude::*;

fn gamma<'a>(cost: &CostSpec, y: &'a Tensor) -> impl Fn(&[f64]) -> f64 + 'a {
    let shape = y.shape().to_vec();
    let cost = *cost;
    move |z: &[f64]| {
        let p = GammaProgram { cost: &cost, y };
        autodiff::evaluate(&p, &Tensor::new(shape.clone(), z.to_vec()).unwrap()).unwrap().data()[0]
    }
}

#[test]
fn factor_squared_matches_finite_difference_hessian() {
    for (k, cost) in [CostSpec::cross_entropy(0.0, false), CostSpec::cross_entropy(0.5, true), CostSpec::square()]
        .iter()
        .enumerate()
    {
        let z = gaussian_tensor(&[3, 2], 10 + k as u64);
        let y = smoothed_targets(&[0, 2], 3, cost.label_smoothing).unwrap();
        let c = cost_hessian_factor(cost, &z, &y).unwrap();
        let cd = from_row_major(6, 6, &c.to_dense().unwrap());
        let fd = fd_hessian_values(gamma(cost, &y), z.data(), 1e-4);
        let e = (&cd * &cd - &fd).norm() / fd.norm();
        assert!(e < 1e-6, "{cost:?}: {e:e}");
        let h = from_row_major(6, 6, &cost_hessian(cost, &z, &y).unwrap().to_dense().unwrap());
        assert!((&h - &fd).norm() / fd.norm() < 1e-6);
    }
}

#[test]
fn cost_gradient_matches_finite_differences() {
    let cost = CostSpec::cross_entropy(0.25, true);
    let z = gaussian_tensor(&[4, 3], 2);
    let y = smoothed_targets(&[1, 3, 0], 4, 0.25).unwrap();
    let g = cost_gradient(&cost, &z, &y).unwrap();
    let fd = fd_grad(gamma(&cost, &y), z.data(), 1e-5);
    assert!(rel_err(g.data(), &fd, 1e-8) < 1e-6);
}

#[test]
fn factor_examples() {
    let z = Tensor::matrix(2, 1, vec![0.3, -1.0]).unwrap();
    let c = cost_hessian_factor(&CostSpec::square(), &z, &z).unwrap();
    let out = c.apply(&[1.0, 2.0]).unwrap();
    assert!((out[0] - 2f64.sqrt()).abs() < 1e-15 && (out[1] - 2.0 * 2f64.sqrt()).abs() < 1e-15);
    let sat = Tensor::matrix(2, 1, vec![800.0, 0.0]).unwrap();
    let y = Tensor::matrix(2, 1, vec![1.0, 0.0]).unwrap();
    let c = cost_hessian_factor(&CostSpec::cross_entropy(0.0, false), &sat, &y).unwrap();
    assert!(c.apply(&[1.0, -3.0]).unwrap().iter().all(|v| v.abs() < 1e-100));
}

#[test]
fn cross_entropy_examples() {
    let mut net = LayeredNetwork::new(vec![Layer::linear(2, 2)]).unwrap();
    net.set_params(Tensor::vector(vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0])).unwrap();
    let x = Tensor::matrix(2, 1, vec![1.0, 0.0]).unwrap();
    let y = Tensor::matrix(2, 1, vec![1.0, 0.0]).unwrap();
    let l = loss(&net, &CostSpec::cross_entropy(0.0, false), &x, &y).unwrap();
    assert!((l - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-15);
    assert!((l - 0.3133).abs() < 1e-4);
    let zero = Tensor::matrix(2, 1, vec![0.0, 0.0]).unwrap();
    let half = Tensor::matrix(2, 1, vec![0.5, 0.5]).unwrap();
    let l = loss(&net, &CostSpec::cross_entropy(0.0, true), &zero, &half).unwrap();
    assert!(l.abs() < 1e-15);
}

#[test]
fn smoothed_columns_sum_to_one() {
    for alpha in [0.0, 0.5, 0.75] {
        for classes in [2, 4, 8] {
            let labels: Vec<usize> = (0..classes).collect();
            let y = smoothed_targets(&labels, classes, alpha).unwrap();
            for j in 0..classes {
                assert_eq!(y.column(j).iter().sum::<f64>(), 1.0, "α={alpha} d={classes}");
            }
        }
    }
}

#[test]
fn pinsker_constant_holds_on_the_simplex() {
    assert!(quadratic_lower_bound_check(&CostSpec::cross_entropy(0.0, true), 100_000, 3) >= 0.5);
    assert_eq!(quadratic_lower_bound_check(&CostSpec::square(), 1000, 3), 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn factor_is_symmetric_psd(seed in 0u64..100_000, alpha in 0.0f64..1.0) {
        let z = gaussian_tensor(&[4, 3], seed).scaled(3.0);
        let y = smoothed_targets(&[0, 1, 3], 4, alpha).unwrap();
        let c = cost_hessian_factor(&CostSpec::cross_entropy(alpha, true), &z, &y).unwrap();
        let m = from_row_major(12, 12, &c.to_dense().unwrap());
        prop_assert!((&m - m.transpose()).amax() < 1e-10);
        prop_assert!(*eigenvalues_desc(&m).last().unwrap() >= -1e-10);
    }

    #[test]
    fn entropy_subtracted_loss_is_non_negative(seed in 0u64..100_000, alpha in 0.0f64..1.0) {
        let z = gaussian_tensor(&[3, 4], seed).scaled(5.0);
        let y = smoothed_targets(&[0, 1, 2, 1], 3, alpha).unwrap();
        let cost = CostSpec::cross_entropy(alpha, true);
        let v = gamma(&cost, &y)(z.data());
        prop_assert!(v >= -1e-12, "{}", v);
        prop_assert!(mean_label_entropy(&y) >= 0.0);
    }
}
