//! Masked-autoencoder backbone.
//!
//! The encoder runs over visible patches only and yields bottleneck (BN)
//! features. The decoder re-inserts a shared mask token at every masked
//! position, attends locally over the patch grid, and yields hidden states
//! for all positions (the reconstruction-enhanced representation, CRER)
//! plus per-patch pixel predictions.

use rand::Rng;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{
    truncated_normal, Bound, LayerNorm, Linear, ParamStore, TransformerBlock, INIT_STD,
};
use crate::patch::{embed_with_pos, sincos_2d, EmbeddedPatches, MaskPartition, PatchGrid};

/// Variance guard for per-patch target standardization.
pub const TARGET_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct MaeConfig {
    pub patch_pixels: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    /// Encoder width `C`.
    pub embed_dim: usize,
    /// Decoder width.
    pub dec_dim: usize,
    pub heads: usize,
    /// Chebyshev radius of decoder attention on the patch grid; 0 means
    /// global attention.
    pub local_window: usize,
    pub mlp_ratio: usize,
}

impl Default for MaeConfig {
    fn default() -> Self {
        Self {
            patch_pixels: 256,
            enc_layers: 2,
            dec_layers: 2,
            embed_dim: 64,
            dec_dim: 48,
            heads: 4,
            local_window: 2,
            mlp_ratio: 4,
        }
    }
}

impl MaeConfig {
    /// Full-size geometry: a 12-layer ViT-Base encoder and a 16-layer
    /// decoder.
    pub fn full_size() -> Self {
        Self {
            enc_layers: 12,
            dec_layers: 16,
            embed_dim: 768,
            dec_dim: 512,
            heads: 16,
            ..Self::default()
        }
    }

    /// Full check for training configurations: adds `layers >= 1` to
    /// [`MaeConfig::check_dims`].
    pub fn validate(&self) -> Result<()> {
        if self.enc_layers == 0 || self.dec_layers == 0 {
            return Err(Error::invalid(
                "enc_layers and dec_layers must be at least 1",
            ));
        }
        self.check_dims()
    }

    /// Width and head checks only; zero-depth stacks pass.
    pub fn check_dims(&self) -> Result<()> {
        for (name, dim) in [("embed_dim", self.embed_dim), ("dec_dim", self.dec_dim)] {
            if dim == 0 || self.heads == 0 || dim % self.heads != 0 {
                return Err(Error::invalid(format!(
                    "{name} {dim} not divisible by {} heads",
                    self.heads
                )));
            }
            if dim % 4 != 0 {
                return Err(Error::invalid(format!(
                    "{name} {dim} must be a multiple of 4 for the position table"
                )));
            }
        }
        if self.patch_pixels == 0 || self.mlp_ratio == 0 {
            return Err(Error::invalid(
                "patch_pixels and mlp_ratio must be positive",
            ));
        }
        Ok(())
    }
}

/// Encoder outputs, one row per visible patch in ascending index order.
#[derive(Clone, Debug)]
pub struct BnFeatures {
    /// `[visible, embed_dim]`.
    pub values: Var,
    pub visible: Vec<usize>,
}

/// Decoder outputs over every patch position.
#[derive(Clone, Copy, Debug)]
pub struct Crer {
    /// Hidden states, `[n, dec_dim]`.
    pub values: Var,
    /// `[n, patch_pixels]`, in standardized-target space.
    pub pixel_pred: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub patch_embed: String,
    pub blocks: Vec<TransformerBlock>,
    pub norm: Option<LayerNorm>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decoder {
    pub proj: Linear,
    pub mask_token: String,
    pub blocks: Vec<TransformerBlock>,
    pub norm: LayerNorm,
    pub pixel_head: Linear,
}

/// Parameter names under the `decoder.` prefix belong to the decoder.
pub const DECODER_PREFIX: &str = "decoder.";
pub const ENCODER_PREFIX: &str = "encoder.";

#[derive(Clone, Debug, PartialEq)]
pub struct MaskedAutoencoder {
    pub cfg: MaeConfig,
    pub encoder: Encoder,
    pub decoder: Decoder,
}

impl MaskedAutoencoder {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        cfg: &MaeConfig,
    ) -> Result<Self> {
        cfg.check_dims()?;
        let patch_embed = "encoder.patch_embed.weight".to_string();
        store.insert(
            patch_embed.clone(),
            truncated_normal(rng, &[cfg.patch_pixels, cfg.embed_dim], INIT_STD),
        );
        let blocks = (0..cfg.enc_layers)
            .map(|i| {
                TransformerBlock::init(
                    store,
                    rng,
                    &format!("encoder.block{i}"),
                    cfg.embed_dim,
                    cfg.heads,
                    cfg.mlp_ratio,
                )
            })
            .collect::<Result<_>>()?;
        let norm =
            (cfg.enc_layers > 0).then(|| LayerNorm::init(store, "encoder.norm", cfg.embed_dim));
        let encoder = Encoder {
            patch_embed,
            blocks,
            norm,
        };

        let proj = Linear::init(store, rng, "decoder.proj", cfg.embed_dim, cfg.dec_dim, true);
        let mask_token = "decoder.mask_token".to_string();
        store.insert(
            mask_token.clone(),
            truncated_normal(rng, &[1, cfg.dec_dim], INIT_STD),
        );
        let blocks = (0..cfg.dec_layers)
            .map(|i| {
                TransformerBlock::init(
                    store,
                    rng,
                    &format!("decoder.block{i}"),
                    cfg.dec_dim,
                    cfg.heads,
                    cfg.mlp_ratio,
                )
            })
            .collect::<Result<_>>()?;
        let norm = LayerNorm::init(store, "decoder.norm", cfg.dec_dim);
        let pixel_head = Linear::init(
            store,
            rng,
            "decoder.pixel_head",
            cfg.dec_dim,
            cfg.patch_pixels,
            true,
        );
        Ok(Self {
            cfg: cfg.clone(),
            encoder,
            decoder: Decoder {
                proj,
                mask_token,
                blocks,
                norm,
                pixel_head,
            },
        })
    }

    /// Patch projection plus the fixed position table.
    pub fn embed(&self, g: &mut Graph, p: &Bound, grid: &PatchGrid) -> Result<EmbeddedPatches> {
        embed_with_pos(g, grid, p.var(&self.encoder.patch_embed)?)
    }

    pub fn encode(
        &self,
        g: &mut Graph,
        p: &Bound,
        x: &EmbeddedPatches,
        part: &MaskPartition,
    ) -> Result<BnFeatures> {
        let n = x.f_count * x.t_count;
        if part.total() != n || part.visible.iter().chain(&part.masked).any(|&i| i >= n) {
            return Err(Error::shape(
                "encode",
                format!("partition over {} patches for a grid of {n}", part.total()),
            ));
        }
        if part.visible.is_empty() {
            return Err(Error::invalid("encoder needs at least one visible patch"));
        }
        let mut h = g.gather(x.x_p, &part.visible)?;
        for block in &self.encoder.blocks {
            h = block.forward(g, p, h, None)?;
        }
        if let Some(norm) = &self.encoder.norm {
            h = norm.forward(g, p, h)?;
        }
        Ok(BnFeatures {
            values: h,
            visible: part.visible.clone(),
        })
    }

    pub fn decode(
        &self,
        g: &mut Graph,
        p: &Bound,
        bn: &BnFeatures,
        part: &MaskPartition,
        f_count: usize,
        t_count: usize,
    ) -> Result<Crer> {
        let n = f_count * t_count;
        let bs = g.shape(bn.values).to_vec();
        if bs != [bn.visible.len(), self.cfg.embed_dim]
            || bn.visible != part.visible
            || part.total() != n
        {
            return Err(Error::shape(
                "decode",
                format!(
                    "BN {bs:?} with {} visible of {n} patches",
                    part.visible.len()
                ),
            ));
        }
        let d = &self.decoder;
        let proj = d.proj.forward(g, p, bn.values)?;
        let seq = if part.masked.is_empty() {
            proj
        } else {
            // Row `visible.len()` of the table is the mask token.
            let table = g.concat(&[proj, p.var(&d.mask_token)?], 0)?;
            let mut slot = vec![bn.visible.len(); n];
            for (row, &i) in bn.visible.iter().enumerate() {
                slot[i] = row;
            }
            g.gather(table, &slot)?
        };
        let pos = g.constant(sincos_2d(f_count, t_count, self.cfg.dec_dim)?)?;
        let mut h = g.add(seq, pos)?;
        let allowed = local_attention_mask(f_count, t_count, self.cfg.local_window);
        for block in &d.blocks {
            h = block.forward(g, p, h, allowed.as_deref())?;
        }
        let values = d.norm.forward(g, p, h)?;
        let pixel_pred = d.pixel_head.forward(g, p, values)?;
        Ok(Crer { values, pixel_pred })
    }
}

/// Row-major `[n, n]` mask allowing patch pairs within Chebyshev distance
/// `window` on the `(f, t)` grid; `None` (global) when `window == 0`.
pub fn local_attention_mask(f_count: usize, t_count: usize, window: usize) -> Option<Vec<bool>> {
    if window == 0 {
        return None;
    }
    let n = f_count * t_count;
    let mut allowed = vec![false; n * n];
    for i in 0..n {
        let (fi, ti) = (i / t_count, i % t_count);
        for j in 0..n {
            let (fj, tj) = (j / t_count, j % t_count);
            allowed[i * n + j] = fi.abs_diff(fj) <= window && ti.abs_diff(tj) <= window;
        }
    }
    Some(allowed)
}

/// Per-patch `(pixels - mean) / sqrt(var + eps)`.
pub fn standardize_targets(grid: &PatchGrid) -> Tensor {
    let mut out = grid.patches.clone();
    let p = grid.pixels();
    for row in out.data_mut().chunks_mut(p) {
        let mean = row.iter().sum::<f64>() / p as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / p as f64;
        let s = (var + TARGET_EPS).sqrt();
        row.iter_mut().for_each(|v| *v = (*v - mean) / s);
    }
    out
}

/// Source of externally trained weights for a freshly initialized store.
pub trait WeightImporter {
    fn import(&self, store: &mut ParamStore) -> Result<()>;
}

/// Leaves the random initialization untouched.
pub struct NoImport;

impl WeightImporter for NoImport {
    fn import(&self, _store: &mut ParamStore) -> Result<()> {
        Ok(())
    }
}
