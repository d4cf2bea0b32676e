//! Named parameters and the layers shared by the backbone, fusion and head.

use std::rc::Rc;

use indexmap::IndexMap;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Graph, KeySets, Tensor, Var};
use crate::error::{Error, Result};

pub const INIT_STD: f64 = 0.02;

/// Zero-mean Gaussian with standard deviation `std`, resampled outside
/// `±2 std`.
pub fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], std: f64) -> Tensor {
    let normal = Normal::new(0.0, std).expect("finite std");
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let v: f64 = normal.sample(rng);
            if v.abs() <= 2.0 * std {
                break v;
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

/// Ordered name → tensor table. Insertion order is the canonical order for
/// optimizer state and checkpoints.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: IndexMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        let name = name.into();
        let prev = self.params.insert(name.clone(), t);
        assert!(prev.is_none(), "duplicate parameter {name}");
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn element_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Puts every parameter on `g`. Names for which `frozen` returns true
    /// become constants.
    pub fn bind(&self, g: &mut Graph, frozen: impl Fn(&str) -> bool) -> Result<Bound> {
        let mut vars = IndexMap::with_capacity(self.params.len());
        for (name, t) in &self.params {
            let v = if frozen(name) {
                g.constant(t.clone())?
            } else {
                g.leaf(t.clone())?
            };
            vars.insert(name.clone(), v);
        }
        Ok(Bound { vars })
    }
}

/// Parameters of one [`ParamStore`] placed on a tape.
pub struct Bound {
    vars: IndexMap<String, Var>,
}

impl Bound {
    /// Wraps vars created elsewhere, e.g. by a gradient checker.
    pub fn from_vars(vars: impl IntoIterator<Item = (String, Var)>) -> Self {
        Self {
            vars: vars.into_iter().collect(),
        }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::invalid(format!("parameter {name} is not bound")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: String,
    pub bias: Option<String>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    /// Weight `[d_in, d_out]` from the truncated normal, bias zero.
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
    ) -> Self {
        let weight = format!("{name}.weight");
        store.insert(
            weight.clone(),
            truncated_normal(rng, &[d_in, d_out], INIT_STD),
        );
        let bias = bias.then(|| {
            let b = format!("{name}.bias");
            store.insert(b.clone(), Tensor::zeros([d_out]));
            b
        });
        Self {
            weight,
            bias,
            d_in,
            d_out,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let y = g.matmul(x, p.var(&self.weight)?)?;
        match &self.bias {
            Some(b) => {
                let b = p.var(b)?;
                if g.shape(b).len() == 1 {
                    g.add_row(y, b)
                } else {
                    let b = g.expand_rows(b, g.shape(y)[0])?;
                    g.add(y, b)
                }
            }
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub gamma: String,
    pub beta: String,
}

impl LayerNorm {
    pub fn init(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        let gamma = format!("{name}.gamma");
        let beta = format!("{name}.beta");
        store.insert(gamma.clone(), Tensor::full([dim], 1.0));
        store.insert(beta.clone(), Tensor::zeros([dim]));
        Self { gamma, beta }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        g.layer_norm(x, p.var(&self.gamma)?, p.var(&self.beta)?)
    }
}

/// `softmax(q kᵀ / sqrt(d_k)) v` for one head. Returns the output and the
/// attention weights. `allowed`, when given, is a row-major
/// `[queries, keys]` mask.
pub fn scaled_dot_attention(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    allowed: Option<&[bool]>,
) -> Result<(Var, Var)> {
    let d_k = g.shape(k)[1];
    let scores = g.matmul_nt(q, k, 1.0 / (d_k as f64).sqrt())?;
    let weights = match allowed {
        Some(m) => g.masked_softmax(scores, 1, m)?,
        None => g.softmax(scores, 1)?,
    };
    Ok((g.matmul(weights, v)?, weights))
}

/// Multi-head attention with bias-free projections. Head `i` uses columns
/// `i * d_k .. (i + 1) * d_k` of the query, key and value projections; the
/// concatenated heads go through the output projection.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
}

pub struct AttentionOutput {
    pub out: Var,
    /// Per-head `[queries, keys]` weights.
    pub weights: Vec<Var>,
}

impl MultiHeadAttention {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        dim: usize,
        heads: usize,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::invalid(format!(
                "dimension {dim} not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            wq: Linear::init(store, rng, &format!("{name}.wq"), dim, dim, false),
            wk: Linear::init(store, rng, &format!("{name}.wk"), dim, dim, false),
            wv: Linear::init(store, rng, &format!("{name}.wv"), dim, dim, false),
            wo: Linear::init(store, rng, &format!("{name}.wo"), dim, dim, false),
            heads,
        })
    }

    /// Same result as [`Self::forward`] with the mask `sets` describes,
    /// touching only the allowed query/key pairs. Weights are not returned.
    pub fn forward_sparse(
        &self,
        g: &mut Graph,
        p: &Bound,
        q_in: Var,
        kv_in: Var,
        sets: &Rc<KeySets>,
    ) -> Result<Var> {
        let q = self.wq.forward(g, p, q_in)?;
        let k = self.wk.forward(g, p, kv_in)?;
        let v = self.wv.forward(g, p, kv_in)?;
        let cat = g.sparse_attention(q, k, v, self.heads, sets)?;
        self.wo.forward(g, p, cat)
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        q_in: Var,
        kv_in: Var,
        allowed: Option<&[bool]>,
    ) -> Result<AttentionOutput> {
        let q = self.wq.forward(g, p, q_in)?;
        let k = self.wk.forward(g, p, kv_in)?;
        let v = self.wv.forward(g, p, kv_in)?;
        let d_k = self.wq.d_out / self.heads;
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (
                    g.slice(q, 1, h * d_k, d_k)?,
                    g.slice(k, 1, h * d_k, d_k)?,
                    g.slice(v, 1, h * d_k, d_k)?,
                )
            };
            let (o, w) = scaled_dot_attention(g, qh, kh, vh, allowed)?;
            outs.push(o);
            weights.push(w);
        }
        let cat = if self.heads == 1 {
            outs[0]
        } else {
            g.concat(&outs, 1)?
        };
        Ok(AttentionOutput {
            out: self.wo.forward(g, p, cat)?,
            weights,
        })
    }
}

/// `fc2(gelu(fc1(x)))`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedForward {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl FeedForward {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        dim: usize,
        hidden: usize,
    ) -> Self {
        Self {
            fc1: Linear::init(store, rng, &format!("{name}.fc1"), dim, hidden, true),
            fc2: Linear::init(store, rng, &format!("{name}.fc2"), hidden, dim, true),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let h = self.fc1.forward(g, p, x)?;
        let h = g.gelu(h)?;
        self.fc2.forward(g, p, h)
    }
}

/// Pre-norm self-attention block:
/// `h = x + attn(ln1(x))`, `out = h + ff(ln2(h))`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ff: FeedForward,
}

impl TransformerBlock {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        dim: usize,
        heads: usize,
        mlp_ratio: usize,
    ) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::init(store, &format!("{name}.ln1"), dim),
            attn: MultiHeadAttention::init(store, rng, &format!("{name}.attn"), dim, heads)?,
            ln2: LayerNorm::init(store, &format!("{name}.ln2"), dim),
            ff: FeedForward::init(store, rng, &format!("{name}.ff"), dim, dim * mlp_ratio),
        })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        x: Var,
        allowed: Option<&[bool]>,
    ) -> Result<Var> {
        let n = self.ln1.forward(g, p, x)?;
        let a = match allowed {
            Some(m) => {
                let rows = g.shape(n)[0];
                let sets = Rc::new(KeySets::from_mask(m, rows, rows)?);
                self.attn.forward_sparse(g, p, n, n, &sets)?
            }
            None => self.attn.forward(g, p, n, n, None)?.out,
        };
        let h = g.add(x, a)?;
        let n = self.ln2.forward(g, p, h)?;
        let f = self.ff.forward(g, p, n)?;
        g.add(h, f)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn truncated_normal_stays_in_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = truncated_normal(&mut rng, &[64, 64], INIT_STD);
        assert!(t.data().iter().all(|v| v.abs() <= 2.0 * INIT_STD));
        let mean = t.data().iter().sum::<f64>() / t.len() as f64;
        let std =
            (t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t.len() as f64).sqrt();
        assert!(mean.abs() < 1e-3);
        // Truncation at 2σ shrinks the standard deviation to about 0.88σ.
        assert!((std / INIT_STD - 0.88).abs() < 0.03, "{std}");
    }

    #[test]
    fn bind_respects_frozen() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let lin = Linear::init(&mut store, &mut rng, "a", 3, 2, true);
        let mut g = Graph::new();
        let p = store.bind(&mut g, |n| n.ends_with("bias")).unwrap();
        assert!(g.requires_grad(p.var(&lin.weight).unwrap()));
        assert!(!g.requires_grad(p.var(lin.bias.as_ref().unwrap()).unwrap()));
        assert!(p.var("missing").is_err());
    }

    #[test]
    fn heads_must_divide_dim() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        assert!(MultiHeadAttention::init(&mut store, &mut rng, "x", 10, 4).is_err());
    }
}
