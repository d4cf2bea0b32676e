//! Waveform to log-mel spectrogram.
//!
//! Frames are taken without centering or edge padding, so a waveform of
//! `len` samples yields `1 + (len - window) / hop` frames. Each frame is
//! multiplied by a periodic Hann window, zero-padded to the next power of
//! two, and turned into a power spectrum. Triangular HTK-mel filters
//! (peak 1, no area normalization) project it onto `mel_bands` bands
//! spanning 0 Hz to Nyquist, and the result is `ln(power + floor)`.

use std::f64::consts::PI;
use std::path::Path;

use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;
pub const LOG_FLOOR: f64 = 1e-10;
/// 64,600 samples, about four seconds at 16 kHz.
pub const DEFAULT_CROP: usize = 64_600;

#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("empty waveform"));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite { op: "waveform" });
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Log-mel values, `mel_bands` rows by `frames` columns, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    pub values: Vec<f64>,
    pub mel_bands: usize,
    pub frames: usize,
    pub frame_window: f64,
    pub frame_hop: f64,
}

impl MelSpectrogram {
    pub fn at(&self, band: usize, frame: usize) -> f64 {
        self.values[band * self.frames + frame]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrontendConfig {
    pub sample_rate: u32,
    pub mel_bands: usize,
    /// Seconds.
    pub frame_window: f64,
    /// Seconds.
    pub frame_hop: f64,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            sample_rate: SAMPLE_RATE,
            mel_bands: 128,
            frame_window: 0.025,
            frame_hop: 0.010,
        }
    }
}

impl FrontendConfig {
    pub fn window_samples(&self) -> usize {
        (self.frame_window * self.sample_rate as f64).round() as usize
    }

    pub fn hop_samples(&self) -> usize {
        (self.frame_hop * self.sample_rate as f64).round() as usize
    }

    pub fn fft_size(&self) -> usize {
        self.window_samples().next_power_of_two()
    }

    pub fn frame_count(&self, len: usize) -> Option<usize> {
        let win = self.window_samples();
        (len >= win).then(|| 1 + (len - win) / self.hop_samples())
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Periodic Hann window of length `n`.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Triangular filters, `bands` rows by `fft_size / 2 + 1` bins.
pub struct MelFilterbank {
    pub weights: Vec<f64>,
    pub bands: usize,
    pub bins: usize,
    /// Center frequency of each band in Hz.
    pub centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(bands: usize, fft_size: usize, sample_rate: u32) -> Self {
        let bins = fft_size / 2 + 1;
        let nyquist = sample_rate as f64 / 2.0;
        let top = hz_to_mel(nyquist);
        let edges: Vec<f64> = (0..bands + 2)
            .map(|i| mel_to_hz(top * i as f64 / (bands + 1) as f64))
            .collect();
        let bin_hz = sample_rate as f64 / fft_size as f64;
        let mut weights = vec![0.0; bands * bins];
        for b in 0..bands {
            let (lo, mid, hi) = (edges[b], edges[b + 1], edges[b + 2]);
            for k in 0..bins {
                let f = k as f64 * bin_hz;
                let w = if f > lo && f <= mid {
                    (f - lo) / (mid - lo)
                } else if f > mid && f < hi {
                    (hi - f) / (hi - mid)
                } else {
                    0.0
                };
                weights[b * bins + k] = w;
            }
        }
        Self {
            weights,
            bands,
            bins,
            centers_hz: edges[1..=bands].to_vec(),
        }
    }
}

/// Power spectrum frames, `frames` rows by `fft_size / 2 + 1` bins.
pub fn power_spectrogram(w: &Waveform, cfg: &FrontendConfig) -> Result<(Vec<f64>, usize)> {
    let win = cfg.window_samples();
    let hop = cfg.hop_samples();
    if win == 0 || hop == 0 {
        return Err(Error::invalid(
            "frame window and hop must be at least one sample",
        ));
    }
    let frames = cfg.frame_count(w.len()).ok_or_else(|| {
        Error::invalid(format!(
            "waveform of {} samples is shorter than one {win}-sample window",
            w.len()
        ))
    })?;
    let n_fft = cfg.fft_size();
    let bins = n_fft / 2 + 1;
    let window = hann(win);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut power = Vec::with_capacity(frames * bins);
    for f in 0..frames {
        let frame = &w.samples[f * hop..f * hop + win];
        for (i, c) in buf.iter_mut().enumerate() {
            *c = Complex::new(if i < win { frame[i] * window[i] } else { 0.0 }, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        power.extend(buf[..bins].iter().map(|c| c.norm_sqr()));
    }
    Ok((power, frames))
}

pub fn log_mel(w: &Waveform, cfg: &FrontendConfig) -> Result<MelSpectrogram> {
    if w.sample_rate != cfg.sample_rate {
        return Err(Error::invalid(format!(
            "sample rate {} Hz, expected {} Hz (resampling is not supported)",
            w.sample_rate, cfg.sample_rate
        )));
    }
    if w.is_empty() {
        return Err(Error::invalid("empty waveform"));
    }
    if w.samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite { op: "log_mel" });
    }
    if cfg.mel_bands == 0 {
        return Err(Error::invalid("mel_bands must be at least 1"));
    }
    let (power, frames) = power_spectrogram(w, cfg)?;
    let fb = MelFilterbank::new(cfg.mel_bands, cfg.fft_size(), cfg.sample_rate);
    let bins = fb.bins;
    let mut values = vec![0.0; cfg.mel_bands * frames];
    for t in 0..frames {
        let spec = &power[t * bins..(t + 1) * bins];
        for b in 0..cfg.mel_bands {
            let row = &fb.weights[b * bins..(b + 1) * bins];
            let e: f64 = row.iter().zip(spec).map(|(w, p)| w * p).sum();
            values[b * frames + t] = (e + LOG_FLOOR).ln();
        }
    }
    Ok(MelSpectrogram {
        values,
        mel_bands: cfg.mel_bands,
        frames,
        frame_window: cfg.frame_window,
        frame_hop: cfg.frame_hop,
    })
}

/// Truncates to `target` samples or tiles cyclically up to it.
pub fn fix_length(w: &Waveform, target: usize) -> Result<Waveform> {
    if w.is_empty() {
        return Err(Error::invalid("empty waveform"));
    }
    if target == 0 {
        return Err(Error::invalid("target length must be positive"));
    }
    let samples = w.samples.iter().copied().cycle().take(target).collect();
    Ok(Waveform {
        samples,
        sample_rate: w.sample_rate,
    })
}

/// Reads a mono PCM WAV (16-bit integer or 32-bit float).
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::invalid(format!(
            "{}: {} channels, expected mono",
            path.display(),
            spec.channels
        )));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        (fmt, bits) => {
            return Err(Error::invalid(format!(
                "{}: unsupported sample format {fmt:?}/{bits}-bit",
                path.display()
            )))
        }
    };
    Waveform::new(samples, spec.sample_rate)
}

/// Writes a mono 32-bit float WAV.
pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in &w.samples {
        writer.write_sample(s as f32).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}
