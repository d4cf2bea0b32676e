//! Spectrogram patching, fixed 2-D sinusoidal position tables and mask
//! sampling.

use rand::seq::index;
use rand::Rng;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::frontend::MelSpectrogram;

/// A spectrogram cut into `f_count * t_count` tiles of `patch_h * patch_w`
/// pixels. Patch `i` sits at `(i / t_count, i % t_count)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchGrid {
    /// `[n, patch_h * patch_w]`, each row a tile in row-major pixel order.
    pub patches: Tensor,
    pub f_count: usize,
    pub t_count: usize,
    pub patch_h: usize,
    pub patch_w: usize,
}

impl PatchGrid {
    pub fn len(&self) -> usize {
        self.f_count * self.t_count
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pixels(&self) -> usize {
        self.patch_h * self.patch_w
    }

    pub fn coord(&self, i: usize) -> (usize, usize) {
        (i / self.t_count, i % self.t_count)
    }

    pub fn coords(&self) -> Vec<(usize, usize)> {
        (0..self.len()).map(|i| self.coord(i)).collect()
    }
}

/// Zero-pads `spec` to multiples of the patch size and tiles it.
pub fn patchify(spec: &MelSpectrogram, patch_h: usize, patch_w: usize) -> Result<PatchGrid> {
    if patch_h == 0 || patch_w == 0 {
        return Err(Error::invalid("patch extents must be at least 1"));
    }
    let f_count = spec.mel_bands.div_ceil(patch_h);
    let t_count = spec.frames.div_ceil(patch_w);
    let pixels = patch_h * patch_w;
    let mut data = vec![0.0; f_count * t_count * pixels];
    for f in 0..f_count {
        for t in 0..t_count {
            let base = (f * t_count + t) * pixels;
            for r in 0..patch_h {
                let band = f * patch_h + r;
                if band >= spec.mel_bands {
                    break;
                }
                for c in 0..patch_w {
                    let frame = t * patch_w + c;
                    if frame < spec.frames {
                        data[base + r * patch_w + c] = spec.at(band, frame);
                    }
                }
            }
        }
    }
    Ok(PatchGrid {
        patches: Tensor::matrix(f_count * t_count, pixels, data)?,
        f_count,
        t_count,
        patch_h,
        patch_w,
    })
}

/// Inverse of [`patchify`]: the padded spectrogram as
/// `(values, rows, cols)`, row-major.
pub fn unpatchify(grid: &PatchGrid) -> (Vec<f64>, usize, usize) {
    let rows = grid.f_count * grid.patch_h;
    let cols = grid.t_count * grid.patch_w;
    let mut out = vec![0.0; rows * cols];
    for i in 0..grid.len() {
        let (f, t) = grid.coord(i);
        let patch = grid.patches.row(i);
        for r in 0..grid.patch_h {
            for c in 0..grid.patch_w {
                out[(f * grid.patch_h + r) * cols + t * grid.patch_w + c] =
                    patch[r * grid.patch_w + c];
            }
        }
    }
    (out, rows, cols)
}

/// Fixed 2-D sin/cos position table, `[f_count * t_count, dim]`.
///
/// The first half of each row encodes the frequency index and the second
/// half the time index. Within a half of width `dim / 2`, column `k` of the
/// first quarter is `sin(pos * w_k)` and column `k` of the second quarter is
/// `cos(pos * w_k)` with `w_k = 10000^(-k / (dim / 4))`.
pub fn sincos_2d(f_count: usize, t_count: usize, dim: usize) -> Result<Tensor> {
    if dim == 0 || !dim.is_multiple_of(4) {
        return Err(Error::invalid(format!(
            "position table width {dim} must be a positive multiple of 4"
        )));
    }
    let quarter = dim / 4;
    let omega: Vec<f64> = (0..quarter)
        .map(|k| 1.0 / 10_000f64.powf(k as f64 / quarter as f64))
        .collect();
    let mut data = Vec::with_capacity(f_count * t_count * dim);
    for f in 0..f_count {
        for t in 0..t_count {
            for pos in [f as f64, t as f64] {
                data.extend(omega.iter().map(|w| (pos * w).sin()));
                data.extend(omega.iter().map(|w| (pos * w).cos()));
            }
        }
    }
    Tensor::matrix(f_count * t_count, dim, data)
}

/// Patch embeddings with the position table already added.
#[derive(Clone, Copy, Debug)]
pub struct EmbeddedPatches {
    /// `[n, dim]` on the tape.
    pub x_p: Var,
    pub f_count: usize,
    pub t_count: usize,
}

/// `X_p = patches · w_embed + pos_table`, row by row.
pub fn embed_with_pos(g: &mut Graph, grid: &PatchGrid, w_embed: Var) -> Result<EmbeddedPatches> {
    let ws = g.shape(w_embed).to_vec();
    if ws.len() != 2 || ws[0] != grid.pixels() {
        return Err(Error::shape(
            "embed_with_pos",
            format!("projection {ws:?} for {}-pixel patches", grid.pixels()),
        ));
    }
    let patches = g.constant(grid.patches.clone())?;
    let proj = g.matmul(patches, w_embed)?;
    let pos = g.constant(sincos_2d(grid.f_count, grid.t_count, ws[1])?)?;
    let x_p = g.add(proj, pos)?;
    Ok(EmbeddedPatches {
        x_p,
        f_count: grid.f_count,
        t_count: grid.t_count,
    })
}

/// Which patches the encoder sees. Both index lists are ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskPartition {
    pub masked: Vec<usize>,
    pub visible: Vec<usize>,
}

impl MaskPartition {
    pub fn total(&self) -> usize {
        self.masked.len() + self.visible.len()
    }

    pub fn none(n: usize) -> Self {
        Self {
            masked: Vec::new(),
            visible: (0..n).collect(),
        }
    }

    fn from_flags(flags: &[bool]) -> Self {
        let (mut masked, mut visible) = (Vec::new(), Vec::new());
        for (i, &m) in flags.iter().enumerate() {
            if m {
                masked.push(i)
            } else {
                visible.push(i)
            }
        }
        Self { masked, visible }
    }

    /// `true` at masked positions.
    pub fn flags(&self) -> Vec<bool> {
        let mut f = vec![false; self.total()];
        for &i in &self.masked {
            f[i] = true;
        }
        f
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MaskPolicy {
    /// Uniform sample of individual patches.
    #[default]
    Unstructured,
    /// Whole time columns first, then a partial column.
    Time,
    /// Whole frequency rows first, then a partial row.
    Freq,
}

impl std::str::FromStr for MaskPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unstructured" => Ok(Self::Unstructured),
            "time" => Ok(Self::Time),
            "freq" => Ok(Self::Freq),
            _ => Err(Error::invalid(format!("unknown mask policy {s:?}"))),
        }
    }
}

impl std::fmt::Display for MaskPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Unstructured => "unstructured",
            Self::Time => "time",
            Self::Freq => "freq",
        })
    }
}

/// Errors unless `0 <= ratio < 1`.
pub fn check_mask_ratio(ratio: f64) -> Result<()> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::invalid(format!("mask ratio {ratio} outside [0, 1)")));
    }
    Ok(())
}

/// Number of masked patches for ratio `ratio` over `n` patches, checked so
/// that at least one patch stays visible.
pub fn mask_count(n: usize, ratio: f64) -> Result<usize> {
    check_mask_ratio(ratio)?;
    let k = (ratio * n as f64).round() as usize;
    if k >= n {
        return Err(Error::invalid(format!(
            "mask ratio {ratio} over {n} patches leaves none visible"
        )));
    }
    Ok(k)
}

/// Uniformly masks `round(ratio * n)` of `n` patches.
pub fn sample_mask<R: Rng + ?Sized>(n: usize, ratio: f64, rng: &mut R) -> Result<MaskPartition> {
    let k = mask_count(n, ratio)?;
    let mut flags = vec![false; n];
    for i in index::sample(rng, n, k) {
        flags[i] = true;
    }
    Ok(MaskPartition::from_flags(&flags))
}

/// Masks `round(ratio * n)` patches of an `f_count` by `t_count` grid
/// under `policy`. Structured policies mask whole rows or columns while
/// the budget allows and spend the remainder inside one more unit.
pub fn sample_mask_with_policy<R: Rng + ?Sized>(
    f_count: usize,
    t_count: usize,
    ratio: f64,
    policy: MaskPolicy,
    rng: &mut R,
) -> Result<MaskPartition> {
    let n = f_count * t_count;
    let (units, unit_len) = match policy {
        MaskPolicy::Unstructured => return sample_mask(n, ratio, rng),
        MaskPolicy::Time => (t_count, f_count),
        MaskPolicy::Freq => (f_count, t_count),
    };
    let cell = |unit: usize, j: usize| match policy {
        MaskPolicy::Time => j * t_count + unit,
        _ => unit * t_count + j,
    };
    let mut budget = mask_count(n, ratio)?;
    let mut flags = vec![false; n];
    let order = index::sample(rng, units, units).into_vec();
    for unit in order {
        if budget == 0 {
            break;
        }
        if budget >= unit_len {
            (0..unit_len).for_each(|j| flags[cell(unit, j)] = true);
            budget -= unit_len;
        } else {
            for j in index::sample(rng, unit_len, budget) {
                flags[cell(unit, j)] = true;
            }
            budget = 0;
        }
    }
    Ok(MaskPartition::from_flags(&flags))
}
