//! Cross-attention fusion of encoder (BN) features with decoder (CRER)
//! features: BN rows are the queries, CRER rows the keys and values.

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{Bound, FeedForward, LayerNorm, Linear, MultiHeadAttention, ParamStore};

#[derive(Clone, Debug, PartialEq)]
pub struct FusionConfig {
    pub d_model: usize,
    pub heads: usize,
    /// Number of stacked cross-attention blocks.
    pub layers: usize,
    pub mlp_ratio: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            heads: 4,
            layers: 1,
            mlp_ratio: 4,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.d_model == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::invalid(format!(
                "fusion d_model {} not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if self.layers == 0 || self.mlp_ratio == 0 {
            return Err(Error::invalid(
                "fusion layers and mlp_ratio must be positive",
            ));
        }
        Ok(())
    }
}

/// One row per query.
#[derive(Clone, Debug)]
pub struct FusedRepresentation {
    /// `[queries, d_model]`.
    pub values: Var,
    /// Per block, per head `[queries, keys]` attention weights.
    pub attention: Vec<Vec<Var>>,
}

/// `h = q + attn(ln_q(q), ln_kv(kv))`, `out = h + ff(ln2(h))`.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossAttentionBlock {
    pub ln_q: LayerNorm,
    pub ln_kv: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ff: FeedForward,
}

impl CrossAttentionBlock {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        cfg: &FusionConfig,
    ) -> Result<Self> {
        let d = cfg.d_model;
        Ok(Self {
            ln_q: LayerNorm::init(store, &format!("{name}.ln_q"), d),
            ln_kv: LayerNorm::init(store, &format!("{name}.ln_kv"), d),
            attn: MultiHeadAttention::init(store, rng, &format!("{name}.attn"), d, cfg.heads)?,
            ln2: LayerNorm::init(store, &format!("{name}.ln2"), d),
            ff: FeedForward::init(store, rng, &format!("{name}.ff"), d, d * cfg.mlp_ratio),
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, q: Var, kv: Var) -> Result<(Var, Vec<Var>)> {
        let nq = self.ln_q.forward(g, p, q)?;
        let nkv = self.ln_kv.forward(g, p, kv)?;
        let a = self.attn.forward(g, p, nq, nkv, None)?;
        let h = g.add(q, a.out)?;
        let n = self.ln2.forward(g, p, h)?;
        let f = self.ff.forward(g, p, n)?;
        Ok((g.add(h, f)?, a.weights))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Fusion {
    pub cfg: FusionConfig,
    pub q_proj: Linear,
    pub kv_proj: Linear,
    pub blocks: Vec<CrossAttentionBlock>,
}

impl Fusion {
    /// `bn_dim` and `crer_dim` are the encoder and decoder widths.
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        cfg: &FusionConfig,
        bn_dim: usize,
        crer_dim: usize,
    ) -> Result<Self> {
        cfg.validate()?;
        let q_proj = Linear::init(store, rng, "fusion.q_proj", bn_dim, cfg.d_model, true);
        let kv_proj = Linear::init(store, rng, "fusion.kv_proj", crer_dim, cfg.d_model, true);
        let blocks = (0..cfg.layers)
            .map(|i| CrossAttentionBlock::init(store, rng, &format!("fusion.block{i}"), cfg))
            .collect::<Result<_>>()?;
        Ok(Self {
            cfg: cfg.clone(),
            q_proj,
            kv_proj,
            blocks,
        })
    }

    /// Maps BN features and CRER to `d_model` with separate linear layers.
    pub fn project_to_common(
        &self,
        g: &mut Graph,
        p: &Bound,
        bn: Var,
        crer: Var,
    ) -> Result<(Var, Var)> {
        Ok((self.project_bn(g, p, bn)?, self.project_crer(g, p, crer)?))
    }

    pub fn project_bn(&self, g: &mut Graph, p: &Bound, bn: Var) -> Result<Var> {
        self.check_width("BN", g.shape(bn), self.q_proj.d_in)?;
        self.q_proj.forward(g, p, bn)
    }

    pub fn project_crer(&self, g: &mut Graph, p: &Bound, crer: Var) -> Result<Var> {
        self.check_width("CRER", g.shape(crer), self.kv_proj.d_in)?;
        self.kv_proj.forward(g, p, crer)
    }

    fn check_width(&self, what: &str, shape: &[usize], want: usize) -> Result<()> {
        if shape.len() != 2 || shape[1] != want {
            return Err(Error::shape(
                "fusion",
                format!("{what} {shape:?}, expected width {want}"),
            ));
        }
        Ok(())
    }

    /// Cross-attention blocks with `q_src` as queries and `kv_src` as keys
    /// and values; the output has one row per query.
    pub fn multi_head_cross_attention(
        &self,
        g: &mut Graph,
        p: &Bound,
        q_src: Var,
        kv_src: Var,
    ) -> Result<FusedRepresentation> {
        let mut h = q_src;
        let mut attention = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (out, w) = block.forward(g, p, h, kv_src)?;
            h = out;
            attention.push(w);
        }
        Ok(FusedRepresentation {
            values: h,
            attention,
        })
    }

    /// Projection followed by cross-attention.
    pub fn fuse(
        &self,
        g: &mut Graph,
        p: &Bound,
        bn: Var,
        crer: Var,
    ) -> Result<FusedRepresentation> {
        let (q, kv) = self.project_to_common(g, p, bn, crer)?;
        self.multi_head_cross_attention(g, p, q, kv)
    }

    /// Self-attention over an already projected source: queries, keys and
    /// values all come from `src`.
    pub fn fuse_self(&self, g: &mut Graph, p: &Bound, src: Var) -> Result<FusedRepresentation> {
        let mut h = src;
        let mut attention = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (out, w) = block.forward(g, p, h, h)?;
            h = out;
            attention.push(w);
        }
        Ok(FusedRepresentation {
            values: h,
            attention,
        })
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::{grad_check_many, Tensor};
    use crate::nn::truncated_normal;

    fn cfg(d: usize, h: usize) -> FusionConfig {
        FusionConfig {
            d_model: d,
            heads: h,
            layers: 1,
            mlp_ratio: 2,
        }
    }

    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
        truncated_normal(rng, &[rows, cols], 1.0)
    }

    #[test]
    fn projections_are_affine_and_independent() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = Fusion::init(&mut store, &mut rng, &cfg(4, 2), 3, 5).unwrap();
        store
            .get_mut("fusion.q_proj.bias")
            .unwrap()
            .data_mut()
            .copy_from_slice(&[1.0, 2.0, 3.0, 4.0]);
        let mut g = Graph::new();
        let p = store.bind(&mut g, |_| false).unwrap();
        let bn = g.constant(Tensor::zeros([2, 3])).unwrap();
        let crer = g.constant(Tensor::zeros([6, 5])).unwrap();
        let (q, kv) = f.project_to_common(&mut g, &p, bn, crer).unwrap();
        assert_eq!(g.value(q).data(), &[1.0, 2.0, 3.0, 4.0, 1.0, 2.0, 3.0, 4.0]);
        assert!(g.value(kv).data().iter().all(|&v| v == 0.0));
        assert_ne!(
            store.get("fusion.q_proj.weight"),
            store.get("fusion.kv_proj.weight")
        );

        let bad = g.constant(Tensor::zeros([2, 4])).unwrap();
        assert!(f.project_to_common(&mut g, &p, bad, crer).is_err());
    }

    #[test]
    fn identity_projection_passes_through() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = Fusion::init(&mut store, &mut rng, &cfg(4, 1), 4, 4).unwrap();
        *store.get_mut("fusion.q_proj.weight").unwrap() = Tensor::eye(4);
        let x = random(&mut rng, 3, 4);
        let mut g = Graph::new();
        let p = store.bind(&mut g, |_| false).unwrap();
        let xv = g.constant(x.clone()).unwrap();
        let q = f.project_bn(&mut g, &p, xv).unwrap();
        assert_eq!(g.value(q), &x);
    }

    #[test]
    fn bn_projection_gradient() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = Fusion::init(&mut store, &mut rng, &cfg(4, 2), 3, 5).unwrap();
        let bn = random(&mut rng, 2, 3);
        let w = random(&mut rng, 3, 4);
        let b = random(&mut rng, 1, 4).with_shape([4]).unwrap();
        let err = grad_check_many(
            |g, v| {
                let p = Bound::from_vars([
                    ("fusion.q_proj.weight".to_string(), v[1]),
                    ("fusion.q_proj.bias".to_string(), v[2]),
                ]);
                let q = f.project_bn(g, &p, v[0])?;
                let sq = g.mul(q, q)?;
                g.sum(sq)
            },
            &[bn, w, b],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }

    fn mha(store: &mut ParamStore, rng: &mut ChaCha8Rng, d: usize, h: usize) -> MultiHeadAttention {
        MultiHeadAttention::init(store, rng, "m", d, h).unwrap()
    }

    #[test]
    fn single_key_returns_its_value_row() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = mha(&mut store, &mut rng, 4, 2);
        for name in ["m.wv.weight", "m.wo.weight"] {
            *store.get_mut(name).unwrap() = Tensor::eye(4);
        }
        let q = random(&mut rng, 3, 4);
        let kv = random(&mut rng, 1, 4);
        let mut g = Graph::new();
        let p = store.bind(&mut g, |_| false).unwrap();
        let (qv, kvv) = (g.constant(q).unwrap(), g.constant(kv.clone()).unwrap());
        let out = m.forward(&mut g, &p, qv, kvv, None).unwrap().out;
        for r in 0..3 {
            let row = g.value(out).row(r);
            assert!(row
                .iter()
                .zip(kv.data())
                .all(|(a, b)| (a - b).abs() < 1e-15));
        }
    }

    #[test]
    fn orthogonal_queries_average_values() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = mha(&mut store, &mut rng, 2, 1);
        for name in ["m.wq.weight", "m.wk.weight", "m.wv.weight", "m.wo.weight"] {
            *store.get_mut(name).unwrap() = Tensor::eye(2);
        }
        let q = Tensor::from_rows(&[vec![1.0, 0.0], vec![-2.0, 0.0]]).unwrap();
        let k = Tensor::from_rows(&[vec![0.0, 1.0], vec![0.0, -3.0], vec![0.0, 0.5]]).unwrap();
        let mut g = Graph::new();
        let p = store.bind(&mut g, |_| false).unwrap();
        let (qv, kv) = (g.constant(q).unwrap(), g.constant(k).unwrap());
        let out = m.forward(&mut g, &p, qv, kv, None).unwrap().out;
        let mean_v = [0.0, (1.0 - 3.0 + 0.5) / 3.0];
        for r in 0..2 {
            let row = g.value(out).row(r);
            assert!((row[0] - mean_v[0]).abs() < 1e-15 && (row[1] - mean_v[1]).abs() < 1e-15);
        }
    }

    /// Per-head softmax(q k^T / sqrt(d_k)) v, concatenated, times W^O,
    /// written with plain loops.
    fn reference_mha(q: &Tensor, kv: &Tensor, w: [&Tensor; 4], heads: usize) -> Vec<Vec<f64>> {
        let mm = |a: &Tensor, b: &Tensor| -> Vec<Vec<f64>> {
            (0..a.rows())
                .map(|i| {
                    (0..b.cols())
                        .map(|j| (0..a.cols()).map(|k| a.at(i, k) * b.at(k, j)).sum())
                        .collect()
                })
                .collect()
        };
        let (qp, kp, vp) = (mm(q, w[0]), mm(kv, w[1]), mm(kv, w[2]));
        let d = w[0].cols();
        let dk = d / heads;
        let mut concat = vec![vec![0.0; d]; q.rows()];
        for h in 0..heads {
            let cols = h * dk..(h + 1) * dk;
            for (i, qi) in qp.iter().enumerate() {
                let scores: Vec<f64> = kp
                    .iter()
                    .map(|kj| cols.clone().map(|c| qi[c] * kj[c]).sum::<f64>() / (dk as f64).sqrt())
                    .collect();
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let z: f64 = e.iter().sum();
                for c in cols.clone() {
                    concat[i][c] = e.iter().zip(&vp).map(|(a, vj)| a / z * vj[c]).sum();
                }
            }
        }
        (0..q.rows())
            .map(|i| {
                (0..d)
                    .map(|j| (0..d).map(|k| concat[i][k] * w[3].at(k, j)).sum())
                    .collect()
            })
            .collect()
    }

    #[test]
    fn multi_head_matches_closed_form() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = mha(&mut store, &mut rng, 4, 2);
        for name in ["m.wq.weight", "m.wk.weight", "m.wv.weight", "m.wo.weight"] {
            *store.get_mut(name).unwrap() = random(&mut rng, 4, 4);
        }
        let q = random(&mut rng, 2, 4);
        let kv = random(&mut rng, 3, 4);
        let mut g = Graph::new();
        let p = store.bind(&mut g, |_| false).unwrap();
        let (qv, kvv) = (
            g.constant(q.clone()).unwrap(),
            g.constant(kv.clone()).unwrap(),
        );
        let out = m.forward(&mut g, &p, qv, kvv, None).unwrap().out;
        let w = ["m.wq.weight", "m.wk.weight", "m.wv.weight", "m.wo.weight"]
            .map(|n| store.get(n).unwrap());
        let want = reference_mha(&q, &kv, w, 2);
        for (i, row) in want.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert!((g.value(out).at(i, j) - v).abs() < 1e-12);
            }
        }
    }

    fn run_block(store: &ParamStore, f: &Fusion, q: &Tensor, kv: &Tensor) -> (Tensor, Vec<Tensor>) {
        let mut g = Graph::new();
        let p = store.bind(&mut g, |_| false).unwrap();
        let (qv, kvv) = (
            g.constant(q.clone()).unwrap(),
            g.constant(kv.clone()).unwrap(),
        );
        let fused = f.multi_head_cross_attention(&mut g, &p, qv, kvv).unwrap();
        let w = fused
            .attention
            .iter()
            .flatten()
            .map(|&w| g.value(w).clone())
            .collect();
        (g.value(fused.values).clone(), w)
    }

    #[test]
    fn rejects_indivisible_heads() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        assert!(Fusion::init(&mut store, &mut rng, &cfg(6, 4), 3, 3).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn weights_are_distributions_and_kv_order_is_irrelevant(
            seed in any::<u64>(),
            n_q in 1usize..5,
            n_kv in 1usize..7,
            layers in 1usize..3,
        ) {
            let mut store = ParamStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = Fusion::init(&mut store, &mut rng, &FusionConfig { layers, ..cfg(4, 2) }, 4, 4).unwrap();
            for (_, t) in store.iter_mut() {
                t.data_mut().iter_mut().for_each(|v| *v *= 20.0);
            }
            let q = random(&mut rng, n_q, 4);
            let kv = random(&mut rng, n_kv, 4);
            let (out, weights) = run_block(&store, &f, &q, &kv);
            prop_assert_eq!(out.shape(), &[n_q, 4]);
            for w in &weights {
                for r in 0..n_q {
                    let row = w.row(r);
                    prop_assert!(row.iter().all(|&v| v >= 0.0));
                    prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                }
            }
            let mut perm: Vec<usize> = (0..n_kv).collect();
            perm.rotate_left(1);
            perm.reverse();
            let (shuffled, _) = run_block(&store, &f, &q, &kv.select_rows(&perm).unwrap());
            prop_assert!(out.max_abs_diff(&shuffled) < 1e-9);
        }
    }

    #[test]
    fn fusion_block_gradients() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let f = Fusion::init(&mut store, &mut rng, &cfg(4, 2), 3, 5).unwrap();
        let names: Vec<String> = store.iter().map(|(n, _)| n.to_string()).collect();
        let mut points: Vec<Tensor> = store
            .iter()
            .map(|(_, t)| {
                let mut t = t.clone();
                t.data_mut().iter_mut().for_each(|v| *v *= 25.0);
                t
            })
            .collect();
        points.push(random(&mut rng, 2, 3));
        points.push(random(&mut rng, 5, 5));
        let err = grad_check_many(
            |g, v| {
                let k = names.len();
                let p = Bound::from_vars(names.iter().cloned().zip(v[..k].iter().copied()));
                let fused = f.fuse(g, &p, v[k], v[k + 1])?;
                let sq = g.mul(fused.values, fused.values)?;
                g.mean(sq)
            },
            &points,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn self_mode_keeps_row_count() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = Fusion::init(&mut store, &mut rng, &cfg(4, 2), 3, 5).unwrap();
        let mut g = Graph::new();
        let p = store.bind(&mut g, |_| false).unwrap();
        let src = g.constant(random(&mut rng, 7, 5)).unwrap();
        let kv = f.project_crer(&mut g, &p, src).unwrap();
        let fused = f.fuse_self(&mut g, &p, kv).unwrap();
        assert_eq!(g.shape(fused.values), &[7, 4]);
    }
}
