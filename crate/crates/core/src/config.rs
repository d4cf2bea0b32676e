//! Training configuration and its flat `key=value` text form.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::classifier::HeadKind;
use crate::error::{Error, Result};
use crate::frontend::{FrontendConfig, DEFAULT_CROP};
use crate::fusion::FusionConfig;
use crate::mae::MaeConfig;
use crate::metrics::TdcfCosts;
use crate::patch::{check_mask_ratio, MaskPolicy};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_peak: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub alpha: f64,
    pub mask_ratio: f64,
    pub mask_policy: MaskPolicy,
    /// Mask ratio at evaluation; `None` reuses `mask_ratio`.
    pub eval_mask_ratio: Option<f64>,
    pub eval_seed: u64,
    pub seeds: Vec<u64>,
    /// Keeps `l_gar` in the log but gives it zero weight.
    pub disable_gar: bool,
    /// Classifier sees only decoder features (self-attention fusion).
    pub disable_bn_branch: bool,
    /// Classifier sees only encoder features; the decoder is not run.
    pub disable_crer_branch: bool,
    pub freeze_encoder: bool,
    pub freeze_decoder: bool,
    /// Cross-entropy weights for `[spoof, genuine]`.
    pub class_weights: Option<[f64; 2]>,
    pub head: HeadKind,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub embed_dim: usize,
    pub dec_dim: usize,
    pub heads: usize,
    pub local_window: usize,
    pub mlp_ratio: usize,
    pub patch_h: usize,
    pub patch_w: usize,
    pub fusion_dim: usize,
    pub fusion_heads: usize,
    pub fusion_layers: usize,
    pub mel_bands: usize,
    pub crop_samples: usize,
    pub tdcf_c1: Option<f64>,
    pub tdcf_c2: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// Every key accepted by [`TrainConfig::set`], in serialization order.
pub const KEYS: &[&str] = &[
    "epochs",
    "batch_size",
    "lr_peak",
    "lr_min",
    "weight_decay",
    "alpha",
    "mask_ratio",
    "mask_policy",
    "eval_mask_ratio",
    "eval_seed",
    "seeds",
    "disable_gar",
    "disable_bn_branch",
    "disable_crer_branch",
    "freeze_encoder",
    "freeze_decoder",
    "class_weights",
    "head",
    "enc_layers",
    "dec_layers",
    "embed_dim",
    "dec_dim",
    "heads",
    "local_window",
    "mlp_ratio",
    "patch_h",
    "patch_w",
    "fusion_dim",
    "fusion_heads",
    "fusion_layers",
    "mel_bands",
    "crop_samples",
    "tdcf_c1",
    "tdcf_c2",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::invalid(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::invalid(format!(
            "{key}: expected true or false, got {value:?}"
        ))),
    }
}

fn parse_opt_f64(key: &str, value: &str) -> Result<Option<f64>> {
    if value == "none" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn opt_text(v: Option<f64>) -> String {
    v.map_or("none".to_string(), |v| v.to_string())
}

impl TrainConfig {
    /// Small model and short schedule that train in minutes on one core.
    pub fn desk() -> Self {
        let mae = MaeConfig::default();
        let fusion = FusionConfig::default();
        Self {
            epochs: 30,
            batch_size: 16,
            lr_peak: 1e-3,
            lr_min: 0.0,
            weight_decay: 0.01,
            alpha: 0.01,
            mask_ratio: 0.3,
            mask_policy: MaskPolicy::Unstructured,
            eval_mask_ratio: None,
            eval_seed: 1234,
            seeds: vec![0, 1, 2],
            disable_gar: false,
            disable_bn_branch: false,
            disable_crer_branch: false,
            freeze_encoder: false,
            freeze_decoder: false,
            class_weights: None,
            head: HeadKind::PooledMlp,
            enc_layers: mae.enc_layers,
            dec_layers: mae.dec_layers,
            embed_dim: mae.embed_dim,
            dec_dim: mae.dec_dim,
            heads: mae.heads,
            local_window: mae.local_window,
            mlp_ratio: mae.mlp_ratio,
            patch_h: 16,
            patch_w: 16,
            fusion_dim: fusion.d_model,
            fusion_heads: fusion.heads,
            fusion_layers: fusion.layers,
            mel_bands: 128,
            crop_samples: DEFAULT_CROP,
            tdcf_c1: None,
            tdcf_c2: None,
        }
    }

    /// Full-size backbone, 100 epochs at a peak rate of 5e-6.
    pub fn paper() -> Self {
        let mae = MaeConfig::full_size();
        Self {
            epochs: 100,
            lr_peak: 5e-6,
            enc_layers: mae.enc_layers,
            dec_layers: mae.dec_layers,
            embed_dim: mae.embed_dim,
            dec_dim: mae.dec_dim,
            heads: mae.heads,
            ..Self::desk()
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            _ => Err(Error::invalid(format!(
                "unknown profile {name:?}; expected desk or paper"
            ))),
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "epochs" => self.epochs = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "lr_peak" => self.lr_peak = parse(key, v)?,
            "lr_min" => self.lr_min = parse(key, v)?,
            "weight_decay" => self.weight_decay = parse(key, v)?,
            "alpha" => self.alpha = parse(key, v)?,
            "mask_ratio" => self.mask_ratio = parse(key, v)?,
            "mask_policy" => self.mask_policy = v.parse()?,
            "eval_mask_ratio" => {
                self.eval_mask_ratio = if v == "train" {
                    None
                } else {
                    Some(parse(key, v)?)
                };
            }
            "eval_seed" => self.eval_seed = parse(key, v)?,
            "seeds" => {
                self.seeds = v
                    .split(',')
                    .map(|s| parse(key, s.trim()))
                    .collect::<Result<_>>()?;
            }
            "disable_gar" => self.disable_gar = parse_bool(key, v)?,
            "disable_bn_branch" => self.disable_bn_branch = parse_bool(key, v)?,
            "disable_crer_branch" => self.disable_crer_branch = parse_bool(key, v)?,
            "freeze_encoder" => self.freeze_encoder = parse_bool(key, v)?,
            "freeze_decoder" => self.freeze_decoder = parse_bool(key, v)?,
            "class_weights" => {
                self.class_weights = if v == "none" {
                    None
                } else {
                    let w: Vec<f64> = v
                        .split(',')
                        .map(|s| parse(key, s.trim()))
                        .collect::<Result<_>>()?;
                    let w: [f64; 2] = w.try_into().map_err(|_| {
                        Error::invalid("class_weights: expected two comma-separated values")
                    })?;
                    Some(w)
                };
            }
            "head" => self.head = v.parse()?,
            "enc_layers" => self.enc_layers = parse(key, v)?,
            "dec_layers" => self.dec_layers = parse(key, v)?,
            "embed_dim" => self.embed_dim = parse(key, v)?,
            "dec_dim" => self.dec_dim = parse(key, v)?,
            "heads" => self.heads = parse(key, v)?,
            "local_window" => self.local_window = parse(key, v)?,
            "mlp_ratio" => self.mlp_ratio = parse(key, v)?,
            "patch_h" => self.patch_h = parse(key, v)?,
            "patch_w" => self.patch_w = parse(key, v)?,
            "fusion_dim" => self.fusion_dim = parse(key, v)?,
            "fusion_heads" => self.fusion_heads = parse(key, v)?,
            "fusion_layers" => self.fusion_layers = parse(key, v)?,
            "mel_bands" => self.mel_bands = parse(key, v)?,
            "crop_samples" => self.crop_samples = parse(key, v)?,
            "tdcf_c1" => self.tdcf_c1 = parse_opt_f64(key, v)?,
            "tdcf_c2" => self.tdcf_c2 = parse_opt_f64(key, v)?,
            _ => return Err(Error::invalid(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<String> {
        Ok(match key {
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "lr_peak" => self.lr_peak.to_string(),
            "lr_min" => self.lr_min.to_string(),
            "weight_decay" => self.weight_decay.to_string(),
            "alpha" => self.alpha.to_string(),
            "mask_ratio" => self.mask_ratio.to_string(),
            "mask_policy" => self.mask_policy.to_string(),
            "eval_mask_ratio" => self
                .eval_mask_ratio
                .map_or("train".to_string(), |v| v.to_string()),
            "eval_seed" => self.eval_seed.to_string(),
            "seeds" => self
                .seeds
                .iter()
                .map(u64::to_string)
                .collect::<Vec<_>>()
                .join(","),
            "disable_gar" => self.disable_gar.to_string(),
            "disable_bn_branch" => self.disable_bn_branch.to_string(),
            "disable_crer_branch" => self.disable_crer_branch.to_string(),
            "freeze_encoder" => self.freeze_encoder.to_string(),
            "freeze_decoder" => self.freeze_decoder.to_string(),
            "class_weights" => self
                .class_weights
                .map_or("none".to_string(), |[a, b]| format!("{a},{b}")),
            "head" => self.head.to_string(),
            "enc_layers" => self.enc_layers.to_string(),
            "dec_layers" => self.dec_layers.to_string(),
            "embed_dim" => self.embed_dim.to_string(),
            "dec_dim" => self.dec_dim.to_string(),
            "heads" => self.heads.to_string(),
            "local_window" => self.local_window.to_string(),
            "mlp_ratio" => self.mlp_ratio.to_string(),
            "patch_h" => self.patch_h.to_string(),
            "patch_w" => self.patch_w.to_string(),
            "fusion_dim" => self.fusion_dim.to_string(),
            "fusion_heads" => self.fusion_heads.to_string(),
            "fusion_layers" => self.fusion_layers.to_string(),
            "mel_bands" => self.mel_bands.to_string(),
            "crop_samples" => self.crop_samples.to_string(),
            "tdcf_c1" => opt_text(self.tdcf_c1),
            "tdcf_c2" => opt_text(self.tdcf_c2),
            _ => return Err(Error::invalid(format!("unknown config key {key:?}"))),
        })
    }

    /// Applies `key=value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                msg,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, found {line:?}")))?;
            self.set(k.trim(), v).map_err(|e| err(e.to_string()))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.apply_text(&std::fs::read_to_string(path)?, &path.display().to_string())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::desk();
        cfg.apply_text(text, "config")?;
        Ok(cfg)
    }

    /// Every key in [`KEYS`] order; `from_text(to_text())` is the identity.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for k in KEYS {
            writeln!(s, "{k}={}", self.get(k).expect("listed key")).expect("writing to a String");
        }
        s
    }

    pub fn mae(&self) -> MaeConfig {
        MaeConfig {
            patch_pixels: self.patch_h * self.patch_w,
            enc_layers: self.enc_layers,
            dec_layers: self.dec_layers,
            embed_dim: self.embed_dim,
            dec_dim: self.dec_dim,
            heads: self.heads,
            local_window: self.local_window,
            mlp_ratio: self.mlp_ratio,
        }
    }

    pub fn fusion(&self) -> FusionConfig {
        FusionConfig {
            d_model: self.fusion_dim,
            heads: self.fusion_heads,
            layers: self.fusion_layers,
            mlp_ratio: self.mlp_ratio,
        }
    }

    pub fn frontend(&self) -> FrontendConfig {
        FrontendConfig {
            mel_bands: self.mel_bands,
            ..FrontendConfig::default()
        }
    }

    pub fn eval_ratio(&self) -> f64 {
        self.eval_mask_ratio.unwrap_or(self.mask_ratio)
    }

    /// Weight of `l_gar` in the total loss.
    pub fn effective_alpha(&self) -> f64 {
        if self.disable_gar {
            0.0
        } else {
            self.alpha
        }
    }

    pub fn tdcf_costs(&self) -> Result<TdcfCosts> {
        match (self.tdcf_c1, self.tdcf_c2) {
            (Some(c1), Some(c2)) => TdcfCosts::new(c1, c2),
            _ => Err(Error::invalid(
                "tdcf_c1 and tdcf_c2 must be set to compute min t-DCF",
            )),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("seeds must list at least one seed"));
        }
        for (name, v) in [
            ("lr_peak", self.lr_peak),
            ("lr_min", self.lr_min),
            ("weight_decay", self.weight_decay),
            ("alpha", self.alpha),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        if self.lr_min > self.lr_peak {
            return Err(Error::invalid("lr_min exceeds lr_peak"));
        }
        check_mask_ratio(self.mask_ratio)?;
        check_mask_ratio(self.eval_ratio())?;
        if self.disable_bn_branch && self.disable_crer_branch {
            return Err(Error::invalid(
                "disable_bn_branch and disable_crer_branch cannot both be set",
            ));
        }
        if let Some(w) = self.class_weights {
            if w.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                return Err(Error::invalid("class_weights must be positive"));
            }
        }
        if self.patch_h == 0 || self.patch_w == 0 || self.mel_bands == 0 {
            return Err(Error::invalid("patch sizes and mel_bands must be positive"));
        }
        if self.frontend().frame_count(self.crop_samples).is_none() {
            return Err(Error::invalid(format!(
                "crop_samples {} is shorter than one analysis window",
                self.crop_samples
            )));
        }
        for c in [self.tdcf_c1, self.tdcf_c2].into_iter().flatten() {
            TdcfCosts::new(c, c)?;
        }
        self.mae().validate()?;
        self.fusion().validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = TrainConfig::desk();
        cfg.seeds = vec![4, 9];
        cfg.class_weights = Some([1.0, 9.0]);
        cfg.eval_mask_ratio = Some(0.0);
        cfg.tdcf_c1 = Some(1.0);
        cfg.mask_policy = MaskPolicy::Time;
        cfg.lr_peak = 3.3e-4;
        let text = cfg.to_text();
        assert_eq!(TrainConfig::from_text(&text).unwrap(), cfg);
        assert_eq!(text.lines().count(), KEYS.len());
        for k in KEYS {
            cfg.get(k).unwrap();
        }
    }

    #[test]
    fn file_overrides_and_errors() {
        let cfg =
            TrainConfig::from_text("# desk run\nepochs = 2\nalpha=0.1 # sweep point\n\nseeds=7\n")
                .unwrap();
        assert_eq!(
            (cfg.epochs, cfg.alpha, cfg.seeds.as_slice()),
            (2, 0.1, &[7][..])
        );
        assert!(matches!(
            TrainConfig::from_text("epochs=2\nbogus=1\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(TrainConfig::from_text("epochs\n").is_err());
        assert!(TrainConfig::from_text("epochs=two\n").is_err());
    }

    #[test]
    fn profiles() {
        let p = TrainConfig::profile("paper").unwrap();
        assert_eq!(
            (p.epochs, p.lr_peak, p.batch_size, p.alpha, p.mask_ratio),
            (100, 5e-6, 16, 0.01, 0.3)
        );
        assert_eq!((p.enc_layers, p.dec_layers), (12, 16));
        p.validate().unwrap();
        let d = TrainConfig::desk();
        assert_eq!(
            (d.epochs, d.lr_peak, d.enc_layers, d.embed_dim),
            (30, 1e-3, 2, 64)
        );
        d.validate().unwrap();
        assert!(TrainConfig::profile("huge").is_err());
    }

    #[test]
    fn validation() {
        let bad = |f: fn(&mut TrainConfig)| {
            let mut c = TrainConfig::desk();
            f(&mut c);
            c.validate().is_err()
        };
        assert!(bad(|c| c.epochs = 0));
        assert!(bad(|c| c.mask_ratio = 1.0));
        assert!(bad(|c| c.mask_ratio = -0.1));
        assert!(bad(|c| {
            c.disable_bn_branch = true;
            c.disable_crer_branch = true;
        }));
        assert!(bad(|c| c.heads = 5));
        assert!(bad(|c| c.seeds.clear()));
        assert!(bad(|c| c.tdcf_c1 = Some(0.0)));
        assert!(TrainConfig::desk().tdcf_costs().is_err());
        assert!(!bad(|c| c.mask_ratio = 0.5));
        assert!(!bad(|c| c.eval_mask_ratio = Some(0.7)));
    }

    #[test]
    fn disable_gar_zeroes_alpha() {
        let mut c = TrainConfig::desk();
        assert_eq!(c.effective_alpha(), 0.01);
        c.disable_gar = true;
        assert_eq!(c.effective_alpha(), 0.0);
    }
}
