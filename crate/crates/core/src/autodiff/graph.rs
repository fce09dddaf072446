use crate::error::{Error, Result};
use crate::tensor::{matmul_raw, Scalar, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Smooth leaky ReLU slope on the negative side.
pub const SLR_ALPHA: f64 = 0.2;
/// Smoothing constant inside the square root of the smooth leaky ReLU.
pub const SLR_EPS: f64 = 1e-2;

/// Elementwise functions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Relu,
    Tanh,
    /// `exp(−x²/2)`
    Gaussian,
    /// `αx + (1−α)·½(x + √(x²+ε))`
    SmoothLeakyRelu,
    Square,
    Exp,
    Ln,
    /// `x^{-1/2}`
    Rsqrt,
}

impl Unary {
    #[inline]
    pub fn eval<S: Scalar>(self, x: S) -> S {
        match self {
            Unary::Relu => {
                if x.value() > 0.0 {
                    x
                } else {
                    S::zero()
                }
            }
            Unary::Tanh => x.tanh(),
            Unary::Gaussian => (-(x * x).scale(0.5)).exp(),
            Unary::SmoothLeakyRelu => {
                let r = (x * x + S::from_f64(SLR_EPS)).sqrt();
                x.scale(SLR_ALPHA) + (x + r).scale(0.5 * (1.0 - SLR_ALPHA))
            }
            Unary::Square => x * x,
            Unary::Exp => x.exp(),
            Unary::Ln => x.ln(),
            Unary::Rsqrt => S::one() / x.sqrt(),
        }
    }

    /// Derivative at `x`, given `y = eval(x)`.
    #[inline]
    pub fn deriv<S: Scalar>(self, x: S, y: S) -> S {
        match self {
            Unary::Relu => {
                if x.value() > 0.0 {
                    S::one()
                } else {
                    S::zero()
                }
            }
            Unary::Tanh => S::one() - y * y,
            Unary::Gaussian => -(x * y),
            Unary::SmoothLeakyRelu => {
                let r = (x * x + S::from_f64(SLR_EPS)).sqrt();
                S::from_f64(SLR_ALPHA) + (S::one() + x / r).scale(0.5 * (1.0 - SLR_ALPHA))
            }
            Unary::Square => x.scale(2.0),
            Unary::Exp => y,
            Unary::Ln => S::one() / x,
            Unary::Rsqrt => -(y * y * y).scale(0.5),
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    /// `r×c` matrix plus a length-`r` vector broadcast across columns.
    AddColumn(Var, Var),
    /// `r×c` matrix times a length-`r` vector broadcast across columns.
    MulColumn(Var, Var),
    RowMean(Var),
    Unary(Var, Unary),
    Slice(Var, usize),
    Sum(Var),
    SoftmaxCols(Var),
    LogSoftmaxCols(Var),
    Concat(Vec<Var>),
}

struct Node<S> {
    op: Op,
    value: Tensor<S>,
}

/// A recorded computation. Values are cached when nodes are created, so
/// backward passes never re-run primitives and are deterministic.
pub struct Graph<S: Scalar = f64> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn softmax_col<S: Scalar>(z: &[S]) -> (Vec<S>, S) {
    let m = z
        .iter()
        .map(|v| v.value())
        .fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<S> = z.iter().map(|&v| (v - S::from_f64(m)).exp()).collect();
    let mut s = S::zero();
    for &v in &e {
        s += v;
    }
    let p = e.iter().map(|&v| v / s).collect();
    (p, S::from_f64(m) + s.ln())
}

/// Columnwise softmax of a `d×N` tensor.
pub fn softmax_columns<S: Scalar>(z: &Tensor<S>) -> Tensor<S> {
    let (r, c) = (z.rows(), z.cols());
    let mut out = Tensor::zeros(z.shape());
    for j in 0..c {
        let col = z.column(j);
        let (p, _) = softmax_col(&col);
        for (i, &pi) in p.iter().enumerate().take(r) {
            out.data_mut()[i * c + j] = pi;
        }
    }
    out
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor<S>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    /// Independent variable or constant; the graph does not distinguish them.
    pub fn leaf(&mut self, t: Tensor<S>) -> Var {
        self.push(Op::Leaf, t)
    }

    /// Lifts an `f64` tensor as a constant leaf.
    pub fn constant(&mut self, t: &Tensor<f64>) -> Var {
        self.leaf(t.map(S::from_f64))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.cols() != tb.rows() {
            return Err(Error::Shape(format!(
                "matmul {:?} · {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let data = matmul_raw(ta.data(), tb.data(), m, k, n);
        let out = Tensor::new(vec![m, n], data)?;
        Ok(self.push(Op::MatMul(a, b), out))
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, f: impl Fn(S, S) -> S) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(ta, tb, "elementwise")?;
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(op, out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|x| x.scale(k));
        self.push(Op::Scale(a, k), out)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|x| x + S::from_f64(k));
        self.push(Op::AddScalar(a), out)
    }

    fn column_broadcast(&mut self, a: Var, v: Var, op: Op, f: impl Fn(S, S) -> S) -> Result<Var> {
        let (ta, tv) = (self.value(a), self.value(v));
        if ta.shape().len() != 2 || tv.len() != ta.rows() {
            return Err(Error::Shape(format!(
                "column broadcast {:?} with {:?}",
                ta.shape(),
                tv.shape()
            )));
        }
        let c = ta.cols();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(k, &x)| f(x, tv.data()[k / c]))
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(op, out))
    }

    pub fn add_column(&mut self, a: Var, v: Var) -> Result<Var> {
        self.column_broadcast(a, v, Op::AddColumn(a, v), |x, y| x + y)
    }

    pub fn mul_column(&mut self, a: Var, v: Var) -> Result<Var> {
        self.column_broadcast(a, v, Op::MulColumn(a, v), |x, y| x * y)
    }

    pub fn row_mean(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if ta.shape().len() != 2 {
            return Err(Error::Shape(format!("row_mean of {:?}", ta.shape())));
        }
        let (r, c) = (ta.rows(), ta.cols());
        let inv = 1.0 / c as f64;
        let data = (0..r)
            .map(|i| {
                let mut s = S::zero();
                for &x in &ta.data()[i * c..(i + 1) * c] {
                    s += x;
                }
                s.scale(inv)
            })
            .collect();
        Ok(self.push(Op::RowMean(a), Tensor::vector(data)))
    }

    pub fn unary(&mut self, a: Var, f: Unary) -> Var {
        let out = self.value(a).map(|x| f.eval(x));
        self.push(Op::Unary(a, f), out)
    }

    /// Contiguous slice of the flattened source reshaped to `shape`.
    pub fn slice(&mut self, src: Var, offset: usize, shape: &[usize]) -> Result<Var> {
        let ts = self.value(src);
        let n: usize = shape.iter().product();
        if offset + n > ts.len() {
            return Err(Error::Shape(format!(
                "slice [{offset}, {}) of a tensor with {} entries",
                offset + n,
                ts.len()
            )));
        }
        let out = Tensor::new(shape.to_vec(), ts.data()[offset..offset + n].to_vec())?;
        Ok(self.push(Op::Slice(src, offset), out))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let mut s = S::zero();
        for &x in self.value(a).data() {
            s += x;
        }
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    /// Flattens and concatenates into one vector.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        self.push(Op::Concat(parts.to_vec()), Tensor::vector(data))
    }

    pub fn softmax_cols(&mut self, a: Var) -> Var {
        let out = softmax_columns(self.value(a));
        self.push(Op::SoftmaxCols(a), out)
    }

    pub fn log_softmax_cols(&mut self, a: Var) -> Var {
        let z = self.value(a);
        let (r, c) = (z.rows(), z.cols());
        let mut out = Tensor::zeros(z.shape());
        for j in 0..c {
            let col = z.column(j);
            let (_, lse) = softmax_col(&col);
            for (i, &v) in col.iter().enumerate().take(r) {
                out.data_mut()[i * c + j] = v - lse;
            }
        }
        self.push(Op::LogSoftmaxCols(a), out)
    }

    /// Reverse pass from `output` seeded with `seed` (same shape as the output).
    /// Returns one adjoint slot per node; `None` where nothing flowed.
    pub fn backward(&self, output: Var, seed: Tensor<S>) -> Result<Adjoints<S>> {
        same_shape(self.value(output), &seed, "backward seed")?;
        let mut adj: Vec<Option<Tensor<S>>> = vec![None; output.0 + 1];
        adj[output.0] = Some(seed);
        for idx in (0..=output.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match node.op {
                Op::Leaf => adj[idx] = Some(g),
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(a), self.value(b));
                    let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                    // dA = G Bᵀ, dB = Aᵀ G
                    let bt = tb.transpose();
                    let ga = matmul_raw(g.data(), bt.data(), m, n, k);
                    let at = ta.transpose();
                    let gb = matmul_raw(at.data(), g.data(), k, m, n);
                    accumulate(&mut adj, a, Tensor::new(vec![m, k], ga)?);
                    accumulate(&mut adj, b, Tensor::new(vec![k, n], gb)?);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, a, g.clone());
                    accumulate(&mut adj, b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, b, g.map(|x| -x));
                    accumulate(&mut adj, a, g);
                }
                Op::Mul(a, b) => {
                    let ga = zip_map(&g, self.value(b), |x, y| x * y);
                    let gb = zip_map(&g, self.value(a), |x, y| x * y);
                    accumulate(&mut adj, a, ga);
                    accumulate(&mut adj, b, gb);
                }
                Op::Scale(a, k) => accumulate(&mut adj, a, g.map(|x| x.scale(k))),
                Op::AddScalar(a) => accumulate(&mut adj, a, g),
                Op::AddColumn(a, v) => {
                    let gv = row_sums(&g);
                    accumulate(&mut adj, v, gv);
                    accumulate(&mut adj, a, g);
                }
                Op::MulColumn(a, v) => {
                    let ta = self.value(a);
                    let tv = self.value(v);
                    let c = ta.cols();
                    let ga = Tensor::from_fn(ta.shape(), |k| g.data()[k] * tv.data()[k / c]);
                    let prod = zip_map(&g, ta, |x, y| x * y);
                    accumulate(&mut adj, v, row_sums(&prod));
                    accumulate(&mut adj, a, ga);
                }
                Op::RowMean(a) => {
                    let ta = self.value(a);
                    let c = ta.cols();
                    let inv = 1.0 / c as f64;
                    let ga = Tensor::from_fn(ta.shape(), |k| g.data()[k / c].scale(inv));
                    accumulate(&mut adj, a, ga);
                }
                Op::Unary(a, f) => {
                    let x = self.value(a);
                    let y = &node.value;
                    let ga = Tensor::from_fn(x.shape(), |k| {
                        g.data()[k] * f.deriv(x.data()[k], y.data()[k])
                    });
                    accumulate(&mut adj, a, ga);
                }
                Op::Slice(src, offset) => {
                    let slot = adj[src.0].get_or_insert_with(|| Tensor::zeros(self.value(src).shape()));
                    for (a, &b) in slot.data_mut()[offset..offset + g.len()].iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
                Op::Sum(a) => {
                    let s = g.data()[0];
                    let ga = Tensor::from_fn(self.value(a).shape(), |_| s);
                    accumulate(&mut adj, a, ga);
                }
                Op::SoftmaxCols(a) => {
                    // dz = y ⊙ (g − Σ g⊙y)
                    let y = &node.value;
                    let (r, c) = (y.rows(), y.cols());
                    let mut ga = Tensor::zeros(y.shape());
                    for j in 0..c {
                        let mut s = S::zero();
                        for i in 0..r {
                            s += g.data()[i * c + j] * y.data()[i * c + j];
                        }
                        for i in 0..r {
                            let k = i * c + j;
                            ga.data_mut()[k] = y.data()[k] * (g.data()[k] - s);
                        }
                    }
                    accumulate(&mut adj, a, ga);
                }
                Op::Concat(ref parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let shape = self.value(p).shape().to_vec();
                        let n: usize = shape.iter().product();
                        let piece = Tensor::new(shape, g.data()[off..off + n].to_vec())?;
                        accumulate(&mut adj, p, piece);
                        off += n;
                    }
                }
                Op::LogSoftmaxCols(a) => {
                    // dz = g − softmax(z) Σ g
                    let p = softmax_columns(self.value(a));
                    let (r, c) = (p.rows(), p.cols());
                    let mut ga = Tensor::zeros(p.shape());
                    for j in 0..c {
                        let mut s = S::zero();
                        for i in 0..r {
                            s += g.data()[i * c + j];
                        }
                        for i in 0..r {
                            let k = i * c + j;
                            ga.data_mut()[k] = g.data()[k] - p.data()[k] * s;
                        }
                    }
                    accumulate(&mut adj, a, ga);
                }
            }
        }
        Ok(Adjoints { slots: adj })
    }
}

/// Adjoints produced by [`Graph::backward`].
pub struct Adjoints<S: Scalar> {
    slots: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Adjoints<S> {
    /// Adjoint of `v`, or zeros shaped like `like` when nothing reached it.
    pub fn get(&self, v: Var, graph: &Graph<S>) -> Tensor<S> {
        match self.slots.get(v.0).and_then(Option::as_ref) {
            Some(t) => t.clone(),
            None => Tensor::zeros(graph.value(v).shape()),
        }
    }
}

fn accumulate<S: Scalar>(adj: &mut [Option<Tensor<S>>], v: Var, g: Tensor<S>) {
    match &mut adj[v.0] {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += *b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn zip_map<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, f: impl Fn(S, S) -> S) -> Tensor<S> {
    Tensor::from_fn(a.shape(), |k| f(a.data()[k], b.data()[k]))
}

fn row_sums<S: Scalar>(t: &Tensor<S>) -> Tensor<S> {
    let (r, c) = (t.rows(), t.cols());
    Tensor::vector(
        (0..r)
            .map(|i| {
                let mut s = S::zero();
                for &x in &t.data()[i * c..(i + 1) * c] {
                    s += x;
                }
                s
            })
            .collect(),
    )
}
