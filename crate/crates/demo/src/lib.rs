//! WebAssembly bindings for the static demo page in `www/`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use wasm_bindgen::prelude::*;

use gfl_fad::data::{synth_corpus, SpoofArtifact, SynthConfig};
use gfl_fad::frontend::{log_mel, FrontendConfig};
use gfl_fad::metrics::{eer, min_tdcf, operating_points, TdcfCosts};
use gfl_fad::patch::{sample_mask_with_policy, MaskPolicy};

fn js_err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Log-mel image, band-major.
#[wasm_bindgen]
pub struct Spectrogram {
    bands: usize,
    frames: usize,
    values: Vec<f64>,
}

#[wasm_bindgen]
impl Spectrogram {
    #[wasm_bindgen(getter)]
    pub fn bands(&self) -> usize {
        self.bands
    }

    #[wasm_bindgen(getter)]
    pub fn frames(&self) -> usize {
        self.frames
    }

    /// `values[band * frames + frame]`.
    pub fn values(&self) -> Vec<f64> {
        self.values.clone()
    }
}

/// Log-mel spectrogram of one synthetic utterance. The genuine and spoof
/// clips of a seed come from the same corpus draw.
#[wasm_bindgen]
pub fn synth_spectrogram(
    artifact: &str,
    genuine: bool,
    seed: u32,
    duration_s: f64,
    mel_bands: usize,
) -> Result<Spectrogram, String> {
    let spoof_artifact: SpoofArtifact = artifact.parse().map_err(js_err)?;
    let corpus = synth_corpus(&SynthConfig {
        n_genuine: 1,
        n_spoof: 1,
        duration_s,
        seed: seed.into(),
        spoof_artifact,
    })
    .map_err(js_err)?;
    let u = &corpus[if genuine { 0 } else { 1 }];
    let cfg = FrontendConfig {
        mel_bands,
        ..FrontendConfig::default()
    };
    let spec = log_mel(&u.waveform, &cfg).map_err(js_err)?;
    Ok(Spectrogram {
        bands: spec.mel_bands,
        frames: spec.frames,
        values: spec.values,
    })
}

/// Row-major `f_count x t_count` flags, 1 for masked patches.
#[wasm_bindgen]
pub fn mask_pattern(
    f_count: usize,
    t_count: usize,
    ratio: f64,
    policy: &str,
    seed: u32,
) -> Result<Vec<u8>, String> {
    let policy: MaskPolicy = policy.parse().map_err(js_err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.into());
    let part =
        sample_mask_with_policy(f_count, t_count, ratio, policy, &mut rng).map_err(js_err)?;
    Ok(part.flags().into_iter().map(u8::from).collect())
}

/// Metrics of Gaussian genuine and spoof score clouds.
#[wasm_bindgen]
pub struct ScoreReport {
    eer: f64,
    threshold: f64,
    min_tdcf: f64,
    genuine: Vec<f64>,
    spoof: Vec<f64>,
    frr: Vec<f64>,
    far: Vec<f64>,
}

#[wasm_bindgen]
impl ScoreReport {
    #[wasm_bindgen(getter)]
    pub fn eer(&self) -> f64 {
        self.eer
    }

    #[wasm_bindgen(getter)]
    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    #[wasm_bindgen(getter)]
    pub fn min_tdcf(&self) -> f64 {
        self.min_tdcf
    }

    pub fn genuine(&self) -> Vec<f64> {
        self.genuine.clone()
    }

    pub fn spoof(&self) -> Vec<f64> {
        self.spoof.clone()
    }

    /// Miss rate at each operating point, ascending threshold.
    pub fn frr(&self) -> Vec<f64> {
        self.frr.clone()
    }

    /// False-alarm rate at each operating point.
    pub fn far(&self) -> Vec<f64> {
        self.far.clone()
    }
}

/// Genuine scores from `N(separation, 1)`, spoof scores from `N(0, 1)`.
#[wasm_bindgen]
pub fn score_demo(
    separation: f64,
    n_genuine: usize,
    n_spoof: usize,
    seed: u32,
    c1: f64,
    c2: f64,
) -> Result<ScoreReport, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.into());
    let unit = Normal::new(0.0, 1.0).map_err(js_err)?;
    let genuine: Vec<f64> = (0..n_genuine)
        .map(|_| separation + unit.sample(&mut rng))
        .collect();
    let spoof: Vec<f64> = (0..n_spoof).map(|_| unit.sample(&mut rng)).collect();
    let e = eer(&genuine, &spoof).map_err(js_err)?;
    let t = min_tdcf(&genuine, &spoof, TdcfCosts::new(c1, c2).map_err(js_err)?).map_err(js_err)?;
    let (frr, far) = operating_points(&genuine, &spoof)
        .into_iter()
        .map(|(_, frr, far)| (frr, far))
        .unzip();
    Ok(ScoreReport {
        eer: e.eer,
        threshold: e.threshold,
        min_tdcf: t,
        genuine,
        spoof,
        frr,
        far,
    })
}
