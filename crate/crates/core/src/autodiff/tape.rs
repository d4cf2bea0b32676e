//! Reverse-mode tape over [`Tensor`] values.
//!
//! A [`Graph`] records every primitive in application order, so the node
//! list is already topologically sorted and backward is a single reverse
//! sweep. Broadcasting is not supported: every elementwise primitive wants
//! identical shapes, and row expansion goes through [`Graph::expand_rows`].
//!
//! Shape rules per primitive:
//!
//! | primitive        | inputs                          | output                 |
//! |------------------|---------------------------------|------------------------|
//! | `matmul`         | `[m, k]`, `[k, n]`              | `[m, n]`               |
//! | `matmul_nt`      | `[m, k]`, `[n, k]`              | `[m, n]`               |
//! | `add_row`        | `[n, d]`, `[d]`                 | `[n, d]`               |
//! | `add`, `mul`     | equal shapes                    | same                   |
//! | `scale`          | any                             | same                   |
//! | `transpose`      | `[m, n]`                        | `[n, m]`               |
//! | `reshape`        | any, same element count         | requested              |
//! | `concat`         | equal except along `axis`       | summed along `axis`    |
//! | `slice`          | any, `start + len <= extent`    | `len` along `axis`     |
//! | `softmax`        | any, `axis < rank`              | same                   |
//! | `layer_norm`     | `[.., d]`, `[d]`, `[d]`         | same as first          |
//! | `gelu`           | any                             | same                   |
//! | `sum`, `mean`    | any                             | `[1]`                  |
//! | `mean_rows`      | `[n, d]`                        | `[1, d]`               |
//! | `mse`            | equal shapes                    | `[1]`                  |
//! | `cross_entropy`  | `[b, c]` logits, `b` labels     | `[1]`                  |
//! | `gather`         | `[r, c]` table, indices `< r`   | `[len, c]`             |
//! | `sparse_attention` | `[m, d]`, `[n, d]`, `[n, d]`  | `[m, d]`               |

use std::f64::consts::PI;
use std::rc::Rc;

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

const GELU_COEF: f64 = 0.044_715;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var, f64),
    AddRow(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Transpose(Var),
    Reshape(Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    Softmax {
        input: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    /// Keeps the derivative at each input from the forward pass.
    Gelu(Var, Vec<f64>),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    Mse(Var, Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        row_weights: Vec<f64>,
        probs: Vec<f64>,
    },
    Gather {
        table: Var,
        idx: Vec<usize>,
    },
    SparseAttention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        scale: f64,
        sets: Rc<KeySets>,
        /// `[heads, edges]` attention weights.
        probs: Vec<f64>,
    },
}

/// For each query, the ascending list of keys it may attend to, in
/// compressed row form.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeySets {
    offsets: Vec<usize>,
    keys: Vec<usize>,
    n_keys: usize,
}

impl KeySets {
    /// From a row-major `[queries, keys]` mask. Every query needs at least
    /// one allowed key.
    pub fn from_mask(allowed: &[bool], queries: usize, keys: usize) -> Result<Self> {
        if allowed.len() != queries * keys {
            return Err(Error::shape(
                "key sets",
                format!("mask of {} entries for {queries} x {keys}", allowed.len()),
            ));
        }
        let mut offsets = Vec::with_capacity(queries + 1);
        let mut list = Vec::new();
        offsets.push(0);
        for row in allowed.chunks_exact(keys.max(1)).take(queries) {
            list.extend(row.iter().enumerate().filter(|(_, &ok)| ok).map(|(j, _)| j));
            if list.len() == *offsets.last().expect("offsets start with 0") {
                return Err(Error::invalid("query with every key masked"));
            }
            offsets.push(list.len());
        }
        if offsets.len() != queries + 1 {
            return Err(Error::invalid("query with every key masked"));
        }
        Ok(Self {
            offsets,
            keys: list,
            n_keys: keys,
        })
    }

    pub fn queries(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn keys_of(&self, query: usize) -> &[usize] {
        &self.keys[self.offsets[query]..self.offsets[query + 1]]
    }

    pub fn edge_count(&self) -> usize {
        self.keys.len()
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients of a scalar loss with respect to every `requires_grad` leaf.
///
/// Leaves that the loss does not reach carry an all-zero gradient.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for a leaf created with [`Graph::leaf`]; `None` for anything
    /// else.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn wrt(&self, v: Var) -> &Tensor {
        self.get(v)
            .unwrap_or_else(|| panic!("no gradient recorded for {v:?}"))
    }
}

/// The tape. One graph per forward/backward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    backward_ran: bool,
}

/// `(outer, extent, inner)` decomposition of `shape` around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    c: &mut [f64],
    alpha: f64,
    beta: f64,
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the slices are at least as long as the strided views describe,
    // and `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Softmax of one contiguous row into `dst`; masked entries stay 0.
/// Returns false when every entry is masked.
fn softmax_row(x: &[f64], allowed: Option<&[bool]>, dst: &mut [f64]) -> bool {
    let mut max = f64::NEG_INFINITY;
    match allowed {
        None => x.iter().for_each(|&v| max = max.max(v)),
        Some(m) => x
            .iter()
            .zip(m)
            .filter(|(_, &ok)| ok)
            .for_each(|(&v, _)| max = max.max(v)),
    }
    if max == f64::NEG_INFINITY {
        return false;
    }
    let mut z = 0.0;
    match allowed {
        None => {
            for (d, &v) in dst.iter_mut().zip(x) {
                *d = (v - max).exp();
                z += *d;
            }
        }
        Some(m) => {
            for ((d, &v), &ok) in dst.iter_mut().zip(x).zip(m) {
                if ok {
                    *d = (v - max).exp();
                    z += *d;
                }
            }
        }
    }
    let inv = 1.0 / z;
    dst.iter_mut().for_each(|d| *d *= inv);
    true
}

fn gelu_parts(x: f64) -> (f64, f64) {
    let c = (2.0 / PI).sqrt();
    let u = c * (x + GELU_COEF * x * x * x);
    // tanh(u) = 1 - 2 / (exp(2u) + 1); saturates cleanly for large |u|.
    let t = 1.0 - 2.0 / ((2.0 * u).exp() + 1.0);
    let y = 0.5 * x * (1.0 + t);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * GELU_COEF * x * x);
    (y, dy)
}

/// Tanh-approximated GELU on a plain value.
pub fn gelu(x: f64) -> f64 {
    gelu_parts(x).0
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(
        &mut self,
        op_name: &'static str,
        value: Tensor,
        op: Op,
        requires_grad: bool,
    ) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        self.backward_ran = false;
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable input: gradients are collected for it.
    pub fn leaf(&mut self, t: Tensor) -> Result<Var> {
        self.push("leaf", t, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.push("constant", t, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            (k as isize, 1),
            self.value(b).data(),
            (n as isize, 1),
            &mut out,
            1.0,
            0.0,
        );
        let rg = self.rg(&[a, b]);
        self.push("matmul", Tensor::matrix(m, n, out)?, Op::MatMul(a, b), rg)
    }

    /// `alpha * a bᵀ` without materializing the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var, alpha: f64) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Error::shape("matmul_nt", format!("{sa:?} x {sb:?}ᵀ")));
        }
        if !alpha.is_finite() {
            return Err(Error::NonFinite { op: "matmul_nt" });
        }
        let (m, k, n) = (sa[0], sa[1], sb[0]);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            (k as isize, 1),
            self.value(b).data(),
            (1, k as isize),
            &mut out,
            alpha,
            0.0,
        );
        let rg = self.rg(&[a, b]);
        self.push(
            "matmul_nt",
            Tensor::matrix(m, n, out)?,
            Op::MatMulNt(a, b, alpha),
            rg,
        )
    }

    /// Adds a `[d]` row to every row of `[n, d]` `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (sx, sr) = (self.shape(x), self.shape(row));
        if sx.len() != 2 || sr.len() != 1 || sx[1] != sr[0] {
            return Err(Error::shape("add_row", format!("{sx:?} + {sr:?}")));
        }
        let d = sr[0];
        let r = self.value(row).data();
        let mut out = self.value(x).data().to_vec();
        if d > 0 {
            for chunk in out.chunks_exact_mut(d) {
                chunk.iter_mut().zip(r).for_each(|(o, b)| *o += b);
            }
        }
        let t = Tensor::new(sx.to_vec(), out)?;
        let rg = self.rg(&[x, row]);
        self.push("add_row", t, Op::AddRow(x, row), rg)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        self.push("add", t, Op::Add(a, b), rg)
    }

    /// `a - b`, composed from `add` and `scale`.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.scale(b, -1.0)?;
        self.add(a, nb)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        self.push("mul", t, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        if !c.is_finite() {
            return Err(Error::NonFinite { op: "scale" });
        }
        let data = self.value(a).data().iter().map(|x| x * c).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(&[a]);
        self.push("scale", t, Op::Scale(a, c), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(Error::shape(
                "transpose",
                format!("rank-2 input required, got {s:?}"),
            ));
        }
        let (m, n) = (s[0], s[1]);
        let src = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let rg = self.rg(&[a]);
        self.push(
            "transpose",
            Tensor::matrix(n, m, out)?,
            Op::Transpose(a),
            rg,
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().with_shape(shape.to_vec())?;
        let rg = self.rg(&[a]);
        self.push("reshape", t, Op::Reshape(a), rg)
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape(
                "concat",
                format!("axis {axis} out of rank {}", base.len()),
            ));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(Error::shape(
                    "concat",
                    format!("{base:?} vs {s:?} along axis {axis}"),
                ));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let n = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.value(v).data()[o * n..(o + 1) * n]);
            }
        }
        let rg = self.rg(inputs);
        self.push(
            "concat",
            Tensor::new(shape, out)?,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        )
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(Error::shape(
                "slice",
                format!("[{start}, {}) along axis {axis} of {s:?}", start + len),
            ));
        }
        let (outer, extent, inner) = split_axis(&s, axis);
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let rg = self.rg(&[a]);
        self.push(
            "slice",
            Tensor::new(shape, out)?,
            Op::Slice {
                input: a,
                axis,
                start,
            },
            rg,
        )
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.softmax_impl(a, axis, None)
    }

    /// Softmax where entries with `allowed[i] == false` get probability 0.
    /// Every slice along `axis` must allow at least one entry.
    pub fn masked_softmax(&mut self, a: Var, axis: usize, allowed: &[bool]) -> Result<Var> {
        if allowed.len() != self.value(a).len() {
            return Err(Error::shape(
                "softmax",
                format!(
                    "mask of {} entries for input {:?}",
                    allowed.len(),
                    self.shape(a)
                ),
            ));
        }
        self.softmax_impl(a, axis, Some(allowed))
    }

    fn softmax_impl(&mut self, a: Var, axis: usize, allowed: Option<&[bool]>) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() {
            return Err(Error::shape(
                "softmax",
                format!("axis {axis} out of rank {}", s.len()),
            ));
        }
        let (outer, n, inner) = split_axis(&s, axis);
        let x = self.value(a).data();
        let mut out = vec![0.0; x.len()];
        if inner == 1 {
            for o in 0..outer {
                let row = &x[o * n..(o + 1) * n];
                let dst = &mut out[o * n..(o + 1) * n];
                let ok = allowed.map(|m| &m[o * n..(o + 1) * n]);
                if !softmax_row(row, ok, dst) {
                    return Err(Error::invalid("softmax slice with every entry masked"));
                }
            }
        } else {
            for o in 0..outer {
                for i in 0..inner {
                    let at = |j: usize| (o * n + j) * inner + i;
                    let ok = |j: usize| allowed.is_none_or(|m| m[at(j)]);
                    let mut max = f64::NEG_INFINITY;
                    for j in 0..n {
                        if ok(j) {
                            max = max.max(x[at(j)]);
                        }
                    }
                    if max == f64::NEG_INFINITY {
                        return Err(Error::invalid("softmax slice with every entry masked"));
                    }
                    let mut z = 0.0;
                    for j in 0..n {
                        if ok(j) {
                            let e = (x[at(j)] - max).exp();
                            out[at(j)] = e;
                            z += e;
                        }
                    }
                    for j in 0..n {
                        out[at(j)] /= z;
                    }
                }
            }
        }
        let rg = self.rg(&[a]);
        self.push(
            "softmax",
            Tensor::new(s, out)?,
            Op::Softmax { input: a, axis },
            rg,
        )
    }

    /// Normalizes over the last axis, then applies `gamma` and `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let d = *s.last().unwrap();
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::shape(
                "layer_norm",
                format!(
                    "input {s:?} needs gamma/beta [{d}], got {:?}/{:?}",
                    self.shape(gamma),
                    self.shape(beta)
                ),
            ));
        }
        let rows = self.value(x).len() / d;
        let xv = self.value(x).data();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; xv.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        self.push(
            "layer_norm",
            Tensor::new(s, out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
        )
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let rg = self.rg(&[a]);
        let (data, dy): (Vec<f64>, Vec<f64>) = if rg {
            self.value(a).data().iter().map(|&x| gelu_parts(x)).unzip()
        } else {
            (
                self.value(a).data().iter().map(|&x| gelu(x)).collect(),
                Vec::new(),
            )
        };
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push("gelu", t, Op::Gelu(a, dy), rg)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: f64 = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push("sum", Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let m = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(&[a]);
        self.push("mean", Tensor::scalar(m), Op::Mean(a), rg)
    }

    /// Column means of a `[n, d]` matrix as `[1, d]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(Error::shape(
                "mean_rows",
                format!("rank-2 input required, got {s:?}"),
            ));
        }
        let (n, d) = (s[0], s[1]);
        let t = self.value(a);
        let mut out = vec![0.0; d];
        for r in 0..n {
            for (o, v) in out.iter_mut().zip(t.row(r)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= n as f64);
        let rg = self.rg(&[a]);
        self.push("mean_rows", Tensor::matrix(1, d, out)?, Op::MeanRows(a), rg)
    }

    /// Mean of squared differences over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mse", a, b)?;
        let (x, y) = (self.value(a).data(), self.value(b).data());
        let m = x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / x.len() as f64;
        let rg = self.rg(&[a, b]);
        self.push("mse", Tensor::scalar(m), Op::Mse(a, b), rg)
    }

    /// Mean negative log-likelihood of `labels` under `softmax(logits)`.
    ///
    /// `class_weights`, when given, weight each row by the weight of its
    /// label and normalize by the summed weights.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        labels: &[usize],
        class_weights: Option<&[f64]>,
    ) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 2 || s[0] != labels.len() {
            return Err(Error::shape(
                "cross_entropy",
                format!("logits {s:?} for {} labels", labels.len()),
            ));
        }
        let (b, c) = (s[0], s[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::invalid(format!("label {bad} outside 0..{c}")));
        }
        if let Some(w) = class_weights {
            if w.len() != c || w.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
                return Err(Error::invalid(format!(
                    "class weights {w:?} for {c} classes"
                )));
            }
        }
        let x = self.value(logits).data();
        let mut probs = vec![0.0; b * c];
        let row_weights: Vec<f64> = labels
            .iter()
            .map(|&l| class_weights.map_or(1.0, |w| w[l]))
            .collect();
        let total_w: f64 = row_weights.iter().sum();
        let mut loss = 0.0;
        for i in 0..b {
            let row = &x[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let lse = max + z.ln();
            for j in 0..c {
                probs[i * c + j] = (row[j] - lse).exp();
            }
            loss += row_weights[i] * (lse - row[labels[i]]);
        }
        let row_weights = row_weights.into_iter().map(|w| w / total_w).collect();
        let rg = self.rg(&[logits]);
        self.push(
            "cross_entropy",
            Tensor::scalar(loss / total_w),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                row_weights,
                probs,
            },
            rg,
        )
    }

    /// Rows `idx` of a `[r, c]` table, repeats allowed.
    pub fn gather(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let s = self.shape(table);
        if s.len() != 2 {
            return Err(Error::shape(
                "gather",
                format!("rank-2 table required, got {s:?}"),
            ));
        }
        if idx.is_empty() {
            return Err(Error::shape("gather", "empty index list"));
        }
        let (r, c) = (s[0], s[1]);
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::shape(
                "gather",
                format!("index {bad} out of {r} rows"),
            ));
        }
        let t = self.value(table);
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(t.row(i));
        }
        let rg = self.rg(&[table]);
        self.push(
            "gather",
            Tensor::matrix(idx.len(), c, out)?,
            Op::Gather {
                table,
                idx: idx.to_vec(),
            },
            rg,
        )
    }

    /// Multi-head `softmax(q kᵀ / sqrt(d_k)) v` restricted to `sets`: query
    /// `i` only sees the keys listed for it. Head `h` uses columns
    /// `h * d_k .. (h + 1) * d_k`, and the heads are concatenated in the
    /// output.
    pub fn sparse_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        sets: &Rc<KeySets>,
    ) -> Result<Var> {
        let (sq, sk, sv) = (self.shape(q), self.shape(k), self.shape(v));
        if sq.len() != 2 || sk.len() != 2 || sk != sv || sq[1] != sk[1] {
            return Err(Error::shape(
                "sparse_attention",
                format!("q {sq:?}, k {sk:?}, v {sv:?}"),
            ));
        }
        let (m, n, d) = (sq[0], sk[0], sq[1]);
        if heads == 0 || d % heads != 0 {
            return Err(Error::shape(
                "sparse_attention",
                format!("width {d} over {heads} heads"),
            ));
        }
        if sets.queries() != m || sets.n_keys != n {
            return Err(Error::shape(
                "sparse_attention",
                format!(
                    "key sets for {} x {}, inputs {m} x {n}",
                    sets.queries(),
                    sets.n_keys
                ),
            ));
        }
        let dk = d / heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let (qv, kv, vv) = (
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
        );
        let edges = sets.edge_count();
        let mut probs = vec![0.0; heads * edges];
        let mut out = vec![0.0; m * d];
        let mut scores = Vec::new();
        for h in 0..heads {
            let c = h * dk;
            for i in 0..m {
                let qi = &qv[i * d + c..i * d + c + dk];
                let ks = sets.keys_of(i);
                scores.clear();
                scores.extend(
                    ks.iter()
                        .map(|&j| scale * dot(qi, &kv[j * d + c..j * d + c + dk])),
                );
                let base = h * edges + sets.offsets[i];
                let p = &mut probs[base..base + ks.len()];
                softmax_row(&scores, None, p);
                let oi = &mut out[i * d + c..i * d + c + dk];
                for (&j, &pj) in ks.iter().zip(p.iter()) {
                    oi.iter_mut()
                        .zip(&vv[j * d + c..j * d + c + dk])
                        .for_each(|(o, x)| *o += pj * x);
                }
            }
        }
        let rg = self.rg(&[q, k, v]);
        self.push(
            "sparse_attention",
            Tensor::matrix(m, d, out)?,
            Op::SparseAttention {
                q,
                k,
                v,
                heads,
                scale,
                sets: Rc::clone(sets),
                probs,
            },
            rg,
        )
    }

    /// Repeats a `[d]` or `[1, d]` row `n` times.
    pub fn expand_rows(&mut self, row: Var, n: usize) -> Result<Var> {
        let row = match *self.shape(row) {
            [d] => self.reshape(row, &[1, d])?,
            [1, _] => row,
            ref s => {
                return Err(Error::shape(
                    "expand_rows",
                    format!("row vector required, got {s:?}"),
                ))
            }
        };
        self.gather(row, &vec![0; n])
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        if self.backward_ran {
            return Err(Error::BackwardTwice);
        }
        self.backward_ran = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            // Interior gradients are dropped once propagated.
            let Some(g) = grads[id].take() else { continue };
            self.backprop_node(id, &g, &mut grads);
        }

        let grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| match node.op {
                Op::Leaf if node.requires_grad => Some(
                    Tensor::new(
                        node.value.shape().to_vec(),
                        g.unwrap_or_else(|| vec![0.0; node.value.len()]),
                    )
                    .expect("gradient shape matches its leaf"),
                ),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let out = node.value.data();
        // Accumulates into the gradient slot of `v` when it needs one.
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                // dA = G Bᵀ, dB = Aᵀ G
                acc(*a, &mut |ga| {
                    gemm(
                        m,
                        n,
                        k,
                        g,
                        (n as isize, 1),
                        bv,
                        (1, n as isize),
                        ga,
                        1.0,
                        1.0,
                    )
                });
                acc(*b, &mut |gb| {
                    gemm(
                        k,
                        m,
                        n,
                        av,
                        (1, k as isize),
                        g,
                        (n as isize, 1),
                        gb,
                        1.0,
                        1.0,
                    )
                });
            }
            Op::MatMulNt(a, b, alpha) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[0]);
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                // dA = alpha G B, dB = alpha Gᵀ A
                acc(*a, &mut |ga| {
                    gemm(
                        m,
                        n,
                        k,
                        g,
                        (n as isize, 1),
                        bv,
                        (k as isize, 1),
                        ga,
                        *alpha,
                        1.0,
                    )
                });
                acc(*b, &mut |gb| {
                    gemm(
                        n,
                        m,
                        k,
                        g,
                        (1, n as isize),
                        av,
                        (k as isize, 1),
                        gb,
                        *alpha,
                        1.0,
                    )
                });
            }
            Op::AddRow(x, row) => {
                let d = self.shape(*row)[0];
                acc(*x, &mut |gx| {
                    gx.iter_mut().zip(g).for_each(|(a, b)| *a += b)
                });
                if d > 0 {
                    acc(*row, &mut |gr| {
                        for chunk in g.chunks_exact(d) {
                            gr.iter_mut().zip(chunk).for_each(|(a, b)| *a += b);
                        }
                    });
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    acc(v, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |ga| {
                    for i in 0..g.len() {
                        ga[i] += g[i] * bv[i];
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..g.len() {
                        gb[i] += g[i] * av[i];
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |ga| {
                ga.iter_mut().zip(g).for_each(|(x, y)| *x += c * y)
            }),
            Op::Transpose(a) => {
                let s = self.shape(*a);
                let (m, n) = (s[0], s[1]);
                acc(*a, &mut |ga| {
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] += g[j * m + i];
                        }
                    }
                });
            }
            Op::Reshape(a) => acc(*a, &mut |ga| {
                ga.iter_mut().zip(g).for_each(|(x, y)| *x += y)
            }),
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for &v in inputs {
                    let n = self.shape(v)[*axis];
                    acc(v, &mut |gv| {
                        for o in 0..outer {
                            let src =
                                &g[(o * total + offset) * inner..(o * total + offset + n) * inner];
                            gv[o * n * inner..(o + 1) * n * inner]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(x, y)| *x += y);
                        }
                    });
                    offset += n;
                }
            }
            Op::Slice { input, axis, start } => {
                let (outer, extent, inner) = split_axis(self.shape(*input), *axis);
                let len = node.value.shape()[*axis];
                acc(*input, &mut |gi| {
                    for o in 0..outer {
                        let base = (o * extent + start) * inner;
                        gi[base..base + len * inner]
                            .iter_mut()
                            .zip(&g[o * len * inner..(o + 1) * len * inner])
                            .for_each(|(x, y)| *x += y);
                    }
                });
            }
            Op::Softmax { input, axis } => {
                let (outer, n, inner) = split_axis(node.value.shape(), *axis);
                acc(*input, &mut |gi| {
                    if inner == 1 {
                        for ((p, gr), gi) in out
                            .chunks_exact(n)
                            .zip(g.chunks_exact(n))
                            .zip(gi.chunks_exact_mut(n))
                        {
                            let dot: f64 = p.iter().zip(gr).map(|(a, b)| a * b).sum();
                            for j in 0..n {
                                gi[j] += p[j] * (gr[j] - dot);
                            }
                        }
                        return;
                    }
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| (o * n + j) * inner + i;
                            let dot: f64 = (0..n).map(|j| out[at(j)] * g[at(j)]).sum();
                            for j in 0..n {
                                gi[at(j)] += out[at(j)] * (g[at(j)] - dot);
                            }
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let d = self.shape(*gamma)[0];
                let rows = xhat.len() / d;
                let gv = self.value(*gamma).data();
                acc(*gamma, &mut |gg| {
                    for r in 0..rows {
                        for j in 0..d {
                            gg[j] += g[r * d + j] * xhat[r * d + j];
                        }
                    }
                });
                acc(*beta, &mut |gb| {
                    for r in 0..rows {
                        for j in 0..d {
                            gb[j] += g[r * d + j];
                        }
                    }
                });
                acc(*x, &mut |gx| {
                    for r in 0..rows {
                        let mut mean_dh = 0.0;
                        let mut mean_dh_h = 0.0;
                        for j in 0..d {
                            let dh = g[r * d + j] * gv[j];
                            mean_dh += dh;
                            mean_dh_h += dh * xhat[r * d + j];
                        }
                        mean_dh /= d as f64;
                        mean_dh_h /= d as f64;
                        for j in 0..d {
                            let dh = g[r * d + j] * gv[j];
                            gx[r * d + j] += rstd[r] * (dh - mean_dh - xhat[r * d + j] * mean_dh_h);
                        }
                    }
                });
            }
            Op::Gelu(a, dy) => {
                acc(*a, &mut |ga| {
                    for i in 0..g.len() {
                        ga[i] += g[i] * dy[i];
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |ga| ga.iter_mut().for_each(|x| *x += g[0])),
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                acc(*a, &mut |ga| ga.iter_mut().for_each(|x| *x += g[0] / n));
            }
            Op::MeanRows(a) => {
                let s = self.shape(*a);
                let (n, d) = (s[0], s[1]);
                acc(*a, &mut |ga| {
                    for r in 0..n {
                        for j in 0..d {
                            ga[r * d + j] += g[j] / n as f64;
                        }
                    }
                });
            }
            Op::Mse(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let k = 2.0 * g[0] / av.len() as f64;
                acc(*a, &mut |ga| {
                    for i in 0..av.len() {
                        ga[i] += k * (av[i] - bv[i]);
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..av.len() {
                        gb[i] -= k * (av[i] - bv[i]);
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                labels,
                row_weights,
                probs,
            } => {
                let c = self.shape(*logits)[1];
                acc(*logits, &mut |gl| {
                    for (i, &l) in labels.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == l { 1.0 } else { 0.0 };
                            gl[i * c + j] += g[0] * row_weights[i] * (probs[i * c + j] - onehot);
                        }
                    }
                });
            }
            Op::SparseAttention {
                q,
                k,
                v,
                heads,
                scale,
                sets,
                probs,
            } => {
                let (m, d) = (self.shape(*q)[0], self.shape(*q)[1]);
                let n = self.shape(*k)[0];
                let dk = d / heads;
                let edges = sets.edge_count();
                let (qv, kv, vv) = (
                    self.value(*q).data(),
                    self.value(*k).data(),
                    self.value(*v).data(),
                );
                // ds_ij = p_ij (g_i · v_j - Σ_l p_il g_i · v_l), scaled once
                // here so dq and dk can use it directly.
                let mut ds = vec![0.0; heads * edges];
                for h in 0..*heads {
                    let c = h * dk;
                    for i in 0..m {
                        let gi = &g[i * d + c..i * d + c + dk];
                        let lo = h * edges + sets.offsets[i];
                        let ks = sets.keys_of(i);
                        let dp: Vec<f64> = ks
                            .iter()
                            .map(|&j| dot(gi, &vv[j * d + c..j * d + c + dk]))
                            .collect();
                        let p = &probs[lo..lo + ks.len()];
                        let mean: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
                        for e in 0..ks.len() {
                            ds[lo + e] = scale * p[e] * (dp[e] - mean);
                        }
                    }
                }
                let each_edge = |f: &mut dyn FnMut(usize, usize, usize, usize)| {
                    for h in 0..*heads {
                        for i in 0..m {
                            for (e, &j) in sets.keys_of(i).iter().enumerate() {
                                f(h * dk, i, j, h * edges + sets.offsets[i] + e);
                            }
                        }
                    }
                };
                acc(*q, &mut |gq| {
                    each_edge(&mut |c, i, j, e| {
                        let w = ds[e];
                        gq[i * d + c..i * d + c + dk]
                            .iter_mut()
                            .zip(&kv[j * d + c..j * d + c + dk])
                            .for_each(|(a, b)| *a += w * b);
                    })
                });
                acc(*k, &mut |gk| {
                    debug_assert_eq!(gk.len(), n * d);
                    each_edge(&mut |c, i, j, e| {
                        let w = ds[e];
                        gk[j * d + c..j * d + c + dk]
                            .iter_mut()
                            .zip(&qv[i * d + c..i * d + c + dk])
                            .for_each(|(a, b)| *a += w * b);
                    })
                });
                acc(*v, &mut |gv| {
                    each_edge(&mut |c, i, j, e| {
                        let w = probs[e];
                        gv[j * d + c..j * d + c + dk]
                            .iter_mut()
                            .zip(&g[i * d + c..i * d + c + dk])
                            .for_each(|(a, b)| *a += w * b);
                    })
                });
            }
            Op::Gather { table, idx } => {
                let c = self.shape(*table)[1];
                acc(*table, &mut |gt| {
                    for (k, &i) in idx.iter().enumerate() {
                        gt[i * c..(i + 1) * c]
                            .iter_mut()
                            .zip(&g[k * c..(k + 1) * c])
                            .for_each(|(x, y)| *x += y);
                    }
                });
            }
        }
    }
}
