//! The full detector: frontend features, masked autoencoder, fusion and
//! classifier, plus the batch objective.

use rand::Rng;

use crate::autodiff::{Graph, Tensor, Var};
use crate::classifier::ClassifierHead;
use crate::config::TrainConfig;
use crate::data::{Label, Utterance};
use crate::error::{Error, Result};
use crate::frontend::{fix_length, log_mel};
use crate::fusion::Fusion;
use crate::losses::{ce_loss, gar_loss, recon_loss_per_sample, total_loss, LossBundle};
use crate::mae::{standardize_targets, MaskedAutoencoder, DECODER_PREFIX, ENCODER_PREFIX};
use crate::nn::{Bound, ParamStore};
use crate::patch::{patchify, MaskPartition, PatchGrid};

/// Which representations reach the classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branches {
    /// BN queries attend to CRER keys and values.
    Both,
    /// BN features only; the decoder is skipped and `l_gar` is 0.
    BnOnly,
    /// CRER only, fused by self-attention.
    CrerOnly,
}

impl Branches {
    pub fn from_config(cfg: &TrainConfig) -> Result<Self> {
        match (cfg.disable_bn_branch, cfg.disable_crer_branch) {
            (false, false) => Ok(Self::Both),
            (false, true) => Ok(Self::BnOnly),
            (true, false) => Ok(Self::CrerOnly),
            (true, true) => Err(Error::invalid("at most one branch can be disabled")),
        }
    }
}

/// Patch grid and standardized targets of one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub id: String,
    pub label: Label,
    pub grid: PatchGrid,
    pub target: Tensor,
}

/// Crops every utterance to `crop_samples`, then computes its log-mel
/// patches and reconstruction targets.
pub fn prepare(corpus: &[Utterance], cfg: &TrainConfig) -> Result<Vec<Prepared>> {
    let fe = cfg.frontend();
    corpus
        .iter()
        .map(|u| {
            let w = fix_length(&u.waveform, cfg.crop_samples)?;
            let grid = patchify(&log_mel(&w, &fe)?, cfg.patch_h, cfg.patch_w)?;
            let target = standardize_targets(&grid);
            Ok(Prepared {
                id: u.id.clone(),
                label: u.label,
                grid,
                target,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GflModel {
    pub mae: MaskedAutoencoder,
    pub fusion: Fusion,
    pub head: ClassifierHead,
    pub branches: Branches,
}

/// Graph nodes of one batch objective.
pub struct BatchOutput {
    /// `[B, 2]`.
    pub logits: Var,
    pub l_ce: Var,
    pub l_gar: Var,
    pub l_total: Var,
}

impl GflModel {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let mae_cfg = cfg.mae();
        let mae = MaskedAutoencoder::init(store, rng, &mae_cfg)?;
        let fusion = Fusion::init(
            store,
            rng,
            &cfg.fusion(),
            mae_cfg.embed_dim,
            mae_cfg.dec_dim,
        )?;
        let head = ClassifierHead::init(store, rng, cfg.head, cfg.fusion_dim);
        Ok(Self {
            mae,
            fusion,
            head,
            branches: Branches::from_config(cfg)?,
        })
    }

    /// Parameters that receive no update: those frozen by config and those
    /// the active branches never reach.
    pub fn is_frozen(&self, cfg: &TrainConfig, name: &str) -> bool {
        let decoder = name.starts_with(DECODER_PREFIX);
        (cfg.freeze_encoder && name.starts_with(ENCODER_PREFIX))
            || (cfg.freeze_decoder && decoder)
            || (self.branches == Branches::BnOnly
                && (decoder || name.starts_with("fusion.kv_proj.")))
            || (self.branches == Branches::CrerOnly && name.starts_with("fusion.q_proj."))
    }

    /// Per-sample forward passes, then the batch losses. `parts[i]` masks
    /// `batch[i]`.
    pub fn forward_batch(
        &self,
        g: &mut Graph,
        p: &Bound,
        batch: &[&Prepared],
        parts: &[MaskPartition],
        alpha: f64,
        class_weights: Option<[f64; 2]>,
    ) -> Result<BatchOutput> {
        if batch.is_empty() || batch.len() != parts.len() {
            return Err(Error::invalid(format!(
                "{} samples with {} masks",
                batch.len(),
                parts.len()
            )));
        }
        let mut fused = Vec::with_capacity(batch.len());
        let mut recon = Vec::with_capacity(batch.len());
        for (item, part) in batch.iter().zip(parts) {
            let x = self.mae.embed(g, p, &item.grid)?;
            let bn = self.mae.encode(g, p, &x, part)?;
            let f = match self.branches {
                Branches::BnOnly => {
                    let q = self.fusion.project_bn(g, p, bn.values)?;
                    self.fusion.fuse_self(g, p, q)?
                }
                branches => {
                    let crer =
                        self.mae
                            .decode(g, p, &bn, part, item.grid.f_count, item.grid.t_count)?;
                    recon.push(recon_loss_per_sample(
                        g,
                        crer.pixel_pred,
                        &item.target,
                        part,
                    )?);
                    if branches == Branches::Both {
                        self.fusion.fuse(g, p, bn.values, crer.values)?
                    } else {
                        let kv = self.fusion.project_crer(g, p, crer.values)?;
                        self.fusion.fuse_self(g, p, kv)?
                    }
                }
            };
            fused.push(f.values);
        }
        let labels: Vec<Label> = batch.iter().map(|b| b.label).collect();
        let logits = self.head.classify(g, p, &fused)?;
        let l_ce = ce_loss(g, logits, &labels, class_weights)?;
        let l_gar = if recon.is_empty() {
            g.constant(Tensor::scalar(0.0))?
        } else {
            gar_loss(g, &recon, &labels)?
        };
        let l_total = total_loss(g, l_ce, l_gar, alpha)?;
        Ok(BatchOutput {
            logits,
            l_ce,
            l_gar,
            l_total,
        })
    }
}

impl BatchOutput {
    pub fn bundle(&self, g: &Graph, alpha: f64) -> LossBundle {
        LossBundle::read(g, self.l_ce, self.l_gar, self.l_total, alpha)
    }
}
