use crate::error::{Error, Result};
use crate::rng::{derive_seed, unit_gaussian};
use crate::tensor::{dot, norm};

type Action<'a> = Box<dyn Fn(&[f64]) -> Result<Vec<f64>> + Send + Sync + 'a>;

/// Matrix-free linear map `ℝ^dim_in → ℝ^dim_out`, optionally with its adjoint.
pub struct LinearOperator<'a> {
    dim_in: usize,
    dim_out: usize,
    symmetric: bool,
    apply: Action<'a>,
    adjoint: Option<Action<'a>>,
}

impl<'a> LinearOperator<'a> {
    /// Self-adjoint operator on `ℝ^dim`.
    pub fn symmetric(
        dim: usize,
        apply: impl Fn(&[f64]) -> Result<Vec<f64>> + Send + Sync + 'a,
    ) -> Self {
        LinearOperator {
            dim_in: dim,
            dim_out: dim,
            symmetric: true,
            apply: Box::new(apply),
            adjoint: None,
        }
    }

    pub fn general(
        dim_in: usize,
        dim_out: usize,
        apply: impl Fn(&[f64]) -> Result<Vec<f64>> + Send + Sync + 'a,
        adjoint: impl Fn(&[f64]) -> Result<Vec<f64>> + Send + Sync + 'a,
    ) -> Self {
        LinearOperator {
            dim_in,
            dim_out,
            symmetric: false,
            apply: Box::new(apply),
            adjoint: Some(Box::new(adjoint)),
        }
    }

    /// Operator backed by a dense row-major `rows × cols` matrix.
    pub fn from_dense(rows: usize, cols: usize, data: Vec<f64>) -> Result<LinearOperator<'static>> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}×{cols} matrix with {} entries",
                data.len()
            )));
        }
        let data = std::sync::Arc::new(data);
        let d2 = data.clone();
        Ok(LinearOperator::general(
            cols,
            rows,
            move |v| {
                Ok((0..rows)
                    .map(|i| dot(&data[i * cols..(i + 1) * cols], v))
                    .collect())
            },
            move |u| {
                let mut out = vec![0.0; cols];
                for i in 0..rows {
                    for j in 0..cols {
                        out[j] += d2[i * cols + j] * u[i];
                    }
                }
                Ok(out)
            },
        ))
    }

    /// Marks a square operator as symmetric (its adjoint is itself).
    pub fn into_symmetric(mut self) -> Result<Self> {
        if self.dim_in != self.dim_out {
            return Err(Error::Shape(format!(
                "{}×{} operator cannot be symmetric",
                self.dim_out, self.dim_in
            )));
        }
        self.symmetric = true;
        self.adjoint = None;
        Ok(self)
    }

    pub fn dim_in(&self) -> usize {
        self.dim_in
    }

    pub fn dim_out(&self) -> usize {
        self.dim_out
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn has_adjoint(&self) -> bool {
        self.symmetric || self.adjoint.is_some()
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim_in {
            return Err(Error::Shape(format!(
                "operator input {} vs dim_in {}",
                v.len(),
                self.dim_in
            )));
        }
        (self.apply)(v)
    }

    pub fn apply_adjoint(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.dim_out {
            return Err(Error::Shape(format!(
                "adjoint input {} vs dim_out {}",
                u.len(),
                self.dim_out
            )));
        }
        if self.symmetric {
            return (self.apply)(u);
        }
        match &self.adjoint {
            Some(f) => f(u),
            None => Err(Error::MissingAdjoint),
        }
    }

    /// Dense row-major matrix by applying the operator to basis vectors.
    pub fn to_dense(&self) -> Result<Vec<f64>> {
        let (m, n) = (self.dim_out, self.dim_in);
        let mut out = vec![0.0; m * n];
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = self.apply(&e)?;
            e[j] = 0.0;
            for i in 0..m {
                out[i * n + j] = col[i];
            }
        }
        Ok(out)
    }

    /// Largest relative discrepancy `|⟨u,Av⟩ − ⟨Aᵀu,v⟩| / (‖u‖‖Av‖ + ‖Aᵀu‖‖v‖)`
    /// over `probes` random pairs.
    pub fn adjoint_mismatch(&self, probes: usize, seed: u64) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for p in 0..probes as u64 {
            let v = unit_gaussian(derive_seed(seed, 2 * p), self.dim_in);
            let u = unit_gaussian(derive_seed(seed, 2 * p + 1), self.dim_out);
            let av = self.apply(&v)?;
            let atu = self.apply_adjoint(&u)?;
            let lhs = dot(&u, &av);
            let rhs = dot(&atu, &v);
            let scale = norm(&av) + norm(&atu);
            if scale > 0.0 {
                worst = worst.max((lhs - rhs).abs() / scale);
            }
        }
        Ok(worst)
    }
}

/// `AᵀA` as a symmetric operator on `ℝ^dim_in`.
pub fn gram<'a, 'b>(a: &'b LinearOperator<'a>) -> Result<LinearOperator<'b>> {
    if !a.has_adjoint() {
        return Err(Error::MissingAdjoint);
    }
    Ok(LinearOperator::symmetric(a.dim_in(), move |v| {
        let av = a.apply(v)?;
        a.apply_adjoint(&av)
    }))
}
