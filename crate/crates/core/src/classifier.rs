//! Two-class head over fused token sequences.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{Bound, LayerNorm, Linear, ParamStore};

/// Selects the head architecture.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum HeadKind {
    #[default]
    PooledMlp,
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pooled_mlp" => Ok(Self::PooledMlp),
            _ => Err(Error::invalid(format!("unknown head {s:?}"))),
        }
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::PooledMlp => f.write_str("pooled_mlp"),
        }
    }
}

/// Mean-pool over tokens, layer norm, then `Linear(d, 2d) -> GELU ->
/// Linear(2d, 2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PooledMlpHead {
    pub norm: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl PooledMlpHead {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, d_model: usize) -> Self {
        Self {
            norm: LayerNorm::init(store, "head.norm", d_model),
            fc1: Linear::init(store, rng, "head.fc1", d_model, 2 * d_model, true),
            fc2: Linear::init(store, rng, "head.fc2", 2 * d_model, 2, true),
        }
    }

    fn logits(&self, g: &mut Graph, p: &Bound, pooled: Var) -> Result<Var> {
        let h = self.norm.forward(g, p, pooled)?;
        let h = self.fc1.forward(g, p, h)?;
        let h = g.gelu(h)?;
        self.fc2.forward(g, p, h)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ClassifierHead {
    PooledMlp(PooledMlpHead),
}

impl ClassifierHead {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        kind: HeadKind,
        d_model: usize,
    ) -> Self {
        match kind {
            HeadKind::PooledMlp => Self::PooledMlp(PooledMlpHead::init(store, rng, d_model)),
        }
    }

    /// `[B, 2]` logits, one row per `[tokens, d_model]` input; column 1 is
    /// genuine.
    pub fn classify(&self, g: &mut Graph, p: &Bound, fused: &[Var]) -> Result<Var> {
        if fused.is_empty() {
            return Err(Error::invalid("classify needs at least one sample"));
        }
        let pooled = fused
            .iter()
            .map(|&f| g.mean_rows(f))
            .collect::<Result<Vec<_>>>()?;
        let pooled = if pooled.len() == 1 {
            pooled[0]
        } else {
            g.concat(&pooled, 0)?
        };
        match self {
            Self::PooledMlp(h) => h.logits(g, p, pooled),
        }
    }
}

/// `logit(genuine) - logit(spoof)` per row.
pub fn scores(logits: &Tensor) -> Vec<f64> {
    (0..logits.rows())
        .map(|r| logits.at(r, 1) - logits.at(r, 0))
        .collect()
}
