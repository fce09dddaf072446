//! Reference implementations that share no code with `curvlab`: central
//! finite differences and dense eigen/singular-value decompositions.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Step used by every finite-difference oracle unless stated otherwise.
pub const H: f64 = 1e-5;

fn shifted(x: &[f64], k: usize, d: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    y[k] += d;
    y
}

/// `∂f/∂xₖ ≈ (f(x + heₖ) − f(x − heₖ))/2h`.
pub fn fd_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|k| (f(&shifted(x, k, h)) - f(&shifted(x, k, -h))) / (2.0 * h))
        .collect()
}

/// Dense Jacobian (`m × n`) of a vector map by central differences.
pub fn fd_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> DMatrix<f64> {
    let cols: Vec<DVector<f64>> = (0..x.len())
        .map(|k| {
            let a = f(&shifted(x, k, h));
            let b = f(&shifted(x, k, -h));
            DVector::from_iterator(a.len(), a.iter().zip(&b).map(|(p, q)| (p - q) / (2.0 * h)))
        })
        .collect();
    DMatrix::from_columns(&cols)
}

/// Directional derivative `(f(x + hv) − f(x − hv))/2h` of a vector map.
pub fn fd_directional(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], v: &[f64], h: f64) -> Vec<f64> {
    let plus: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + h * b).collect();
    let minus: Vec<f64> = x.iter().zip(v).map(|(a, b)| a - h * b).collect();
    f(&plus)
        .iter()
        .zip(f(&minus))
        .map(|(p, q)| (p - q) / (2.0 * h))
        .collect()
}

/// `(∇f(θ + hv) − ∇f(θ − hv))/2h` from an exact gradient.
pub fn fd_hvp(grad: impl Fn(&[f64]) -> Vec<f64>, theta: &[f64], v: &[f64], h: f64) -> Vec<f64> {
    fd_directional(grad, theta, v, h)
}

/// Dense Hessian from differences of an exact gradient, symmetrised.
pub fn fd_hessian(grad: impl Fn(&[f64]) -> Vec<f64>, theta: &[f64], h: f64) -> DMatrix<f64> {
    let j = fd_jacobian(grad, theta, h);
    (&j + j.transpose()) * 0.5
}

/// Dense Hessian of a scalar function from second differences of values only.
pub fn fd_hessian_values(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> DMatrix<f64> {
    let n = x.len();
    let mut m = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in a..n {
            let pp = f(&shifted(&shifted(x, a, h), b, h));
            let pm = f(&shifted(&shifted(x, a, h), b, -h));
            let mp = f(&shifted(&shifted(x, a, -h), b, h));
            let mm = f(&shifted(&shifted(x, a, -h), b, -h));
            let v = (pp - pm - mp + mm) / (4.0 * h * h);
            m[(a, b)] = v;
            m[(b, a)] = v;
        }
    }
    m
}

/// Eigenvalues of a symmetric matrix in decreasing order.
pub fn eigenvalues_desc(m: &DMatrix<f64>) -> Vec<f64> {
    let mut e: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().cloned().collect();
    e.sort_by(|a, b| b.total_cmp(a));
    e
}

/// Largest algebraic eigenvalue of a symmetric matrix.
pub fn top_eigenvalue(m: &DMatrix<f64>) -> f64 {
    eigenvalues_desc(m)[0]
}

/// Largest absolute eigenvalue of a symmetric matrix.
pub fn magnitude_eigenvalue(m: &DMatrix<f64>) -> f64 {
    eigenvalues_desc(m).iter().fold(0.0, |a: f64, &b| a.max(b.abs()))
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.singular_values().iter().fold(0.0, |a: f64, &b| a.max(b))
}

/// `‖a − b‖₂ / max(‖b‖₂, floor)`.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    let d = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let n = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    d / n.max(floor)
}

/// `|a − b| / max(|b|, floor)`.
pub fn rel_err_scalar(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / b.abs().max(floor)
}

/// Least-squares line `y ≈ c + s·x` solved through the normal equations
/// with nalgebra; returns `s`.
pub fn lstsq_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let a = DMatrix::from_fn(xs.len(), 2, |i, j| if j == 0 { 1.0 } else { xs[i] });
    let b = DVector::from_column_slice(ys);
    let ata = a.transpose() * &a;
    let atb = a.transpose() * b;
    ata.lu().solve(&atb).expect("well-posed fit")[1]
}

/// Row-major `rows × cols` data as a matrix.
pub fn from_row_major(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_derivatives() {
        let f = |x: &[f64]| x[0] * x[0] * x[1];
        let g = fd_grad(f, &[1.0, 1.0], H);
        assert!((g[0] - 2.0).abs() < 1e-9 && (g[1] - 1.0).abs() < 1e-9);
        let hm = fd_hessian_values(f, &[1.0, 1.0], 1e-4);
        assert!((hm[(0, 0)] - 2.0).abs() < 1e-6 && (hm[(0, 1)] - 2.0).abs() < 1e-6);
        assert!(hm[(1, 1)].abs() < 1e-6);
    }

    #[test]
    fn decompositions() {
        let m = DMatrix::from_row_slice(2, 2, &[-5.0, 0.0, 0.0, 2.0]);
        assert_eq!(top_eigenvalue(&m), 2.0);
        assert_eq!(magnitude_eigenvalue(&m), 5.0);
        assert!((spectral_norm(&m) - 5.0).abs() < 1e-12);
        assert!((lstsq_slope(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]) - 2.0).abs() < 1e-12);
    }
}
