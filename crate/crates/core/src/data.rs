//! Corpus ingestion: ASVspoof-style protocol files, a seeded synthetic
//! genuine/spoof generator, manifests, and epoch batching.

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};
use crate::frontend::{fix_length, read_wav, write_wav, Waveform, SAMPLE_RATE};

/// Authenticity label. Genuine (bonafide) speech is class 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Spoof = 0,
    Genuine = 1,
}

impl Label {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            0 => Ok(Label::Spoof),
            1 => Ok(Label::Genuine),
            _ => Err(Error::invalid(format!("label {i} outside {{0, 1}}"))),
        }
    }

    pub fn is_genuine(self) -> bool {
        self == Label::Genuine
    }
}

/// One line of a protocol file: `SPEAKER UTT_ID ENV ATTACK KEY`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProtocolRecord {
    pub speaker_id: String,
    pub utterance_id: String,
    /// Third column; `-` in logical-access protocols.
    pub environment: String,
    /// `None` for `-`.
    pub attack_id: Option<String>,
    pub label: Label,
}

impl fmt::Display for ProtocolRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {} {}",
            self.speaker_id,
            self.utterance_id,
            self.environment,
            self.attack_id.as_deref().unwrap_or("-"),
            if self.label.is_genuine() {
                "bonafide"
            } else {
                "spoof"
            }
        )
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ProtocolSummary {
    pub bonafide: usize,
    pub spoof: usize,
}

pub fn summarize(records: &[ProtocolRecord]) -> ProtocolSummary {
    let bonafide = records.iter().filter(|r| r.label.is_genuine()).count();
    ProtocolSummary {
        bonafide,
        spoof: records.len() - bonafide,
    }
}

/// Parses protocol text; `origin` names the source in error messages.
pub fn parse_protocol_str(text: &str, origin: &str) -> Result<Vec<ProtocolRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: origin.to_string(),
            line: i + 1,
            msg,
        };
        if fields.len() != 5 {
            return Err(err(format!("expected 5 fields, found {}", fields.len())));
        }
        let label = match fields[4] {
            "bonafide" => Label::Genuine,
            "spoof" => Label::Spoof,
            other => return Err(err(format!("unknown key {other:?}"))),
        };
        out.push(ProtocolRecord {
            speaker_id: fields[0].to_string(),
            utterance_id: fields[1].to_string(),
            environment: fields[2].to_string(),
            attack_id: (fields[3] != "-").then(|| fields[3].to_string()),
            label,
        });
    }
    Ok(out)
}

pub fn parse_protocol(path: impl AsRef<Path>) -> Result<Vec<ProtocolRecord>> {
    let path = path.as_ref();
    parse_protocol_str(&std::fs::read_to_string(path)?, &path.display().to_string())
}

pub fn format_protocol(records: &[ProtocolRecord]) -> String {
    records.iter().map(|r| format!("{r}\n")).collect()
}

/// A labeled waveform.
#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub label: Label,
    pub waveform: Waveform,
}

/// Loads `audio_dir/<UTT_ID>.wav` for every protocol record.
pub fn load_protocol_corpus(
    records: &[ProtocolRecord],
    audio_dir: impl AsRef<Path>,
) -> Result<Vec<Utterance>> {
    records
        .iter()
        .map(|r| {
            let path = audio_dir.as_ref().join(format!("{}.wav", r.utterance_id));
            Ok(Utterance {
                id: r.utterance_id.clone(),
                label: r.label,
                waveform: read_wav(path)?,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SpoofArtifact {
    /// Zeroes the spectrum between [`NOTCH_BAND_HZ`] after synthesis.
    #[default]
    SpectralNotch,
    /// Flips the signal's sign about every half second.
    PhaseJump,
    /// Hard-clips at a fraction of the peak.
    HarmonicClip,
}

impl FromStr for SpoofArtifact {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spectral_notch" => Ok(Self::SpectralNotch),
            "phase_jump" => Ok(Self::PhaseJump),
            "harmonic_clip" => Ok(Self::HarmonicClip),
            _ => Err(Error::invalid(format!("unknown spoof artifact {s:?}"))),
        }
    }
}

impl fmt::Display for SpoofArtifact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::SpectralNotch => "spectral_notch",
            Self::PhaseJump => "phase_jump",
            Self::HarmonicClip => "harmonic_clip",
        })
    }
}

/// Frequency range removed by [`SpoofArtifact::SpectralNotch`].
pub const NOTCH_BAND_HZ: (f64, f64) = (2000.0, 2800.0);
const SNR_DB: f64 = 30.0;
const PEAK: f64 = 0.9;
const CLIP_FRACTION: f64 = 0.3;
const JUMP_PERIOD_S: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_genuine: usize,
    pub n_spoof: usize,
    pub duration_s: f64,
    pub seed: u64,
    pub spoof_artifact: SpoofArtifact,
}

impl Default for SynthConfig {
    /// 1:9 genuine to spoof, four-second clips.
    fn default() -> Self {
        Self {
            n_genuine: 20,
            n_spoof: 180,
            duration_s: 64_600.0 / SAMPLE_RATE as f64,
            seed: 0,
            spoof_artifact: SpoofArtifact::SpectralNotch,
        }
    }
}

/// Harmonic tone with vibrato plus white noise at 30 dB SNR.
fn harmonic_voice(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let sr = SAMPLE_RATE as f64;
    let f0 = rng.random_range(100.0..300.0);
    let harmonics = rng.random_range(3..=5);
    let rate = rng.random_range(3.0..6.0);
    let depth = rng.random_range(0.005..0.02);
    let amps: Vec<f64> = (1..=harmonics)
        .map(|h| rng.random_range(0.5..1.0) / h as f64)
        .collect();
    let mut phases: Vec<f64> = (0..harmonics)
        .map(|_| rng.random_range(0.0..2.0 * PI))
        .collect();
    let mut x = vec![0.0; len];
    for (i, s) in x.iter_mut().enumerate() {
        let inst = f0 * (1.0 + depth * (2.0 * PI * rate * i as f64 / sr).sin());
        for (h, (a, ph)) in amps.iter().zip(phases.iter_mut()).enumerate() {
            *s += a * ph.sin();
            *ph += 2.0 * PI * inst * (h + 1) as f64 / sr;
        }
    }
    let power = x.iter().map(|v| v * v).sum::<f64>() / len as f64;
    let noise =
        Normal::new(0.0, (power / 10f64.powf(SNR_DB / 10.0)).sqrt()).expect("finite noise level");
    x.iter_mut().for_each(|v| *v += noise.sample(rng));
    x
}

fn zero_band(x: &mut [f64], lo_hz: f64, hi_hz: f64) {
    let n = x.len();
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    let bin_hz = SAMPLE_RATE as f64 / n as f64;
    for k in 0..n {
        let f = k.min(n - k) as f64 * bin_hz;
        if (lo_hz..=hi_hz).contains(&f) {
            buf[k] = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    for (v, c) in x.iter_mut().zip(&buf) {
        *v = c.re / n as f64;
    }
}

fn apply_artifact(x: &mut [f64], artifact: SpoofArtifact, rng: &mut ChaCha8Rng) {
    match artifact {
        SpoofArtifact::SpectralNotch => zero_band(x, NOTCH_BAND_HZ.0, NOTCH_BAND_HZ.1),
        SpoofArtifact::PhaseJump => {
            let period = JUMP_PERIOD_S * SAMPLE_RATE as f64;
            let mut next = rng.random_range(0.8..1.2) * period;
            let mut sign = 1.0;
            for (i, v) in x.iter_mut().enumerate() {
                if i as f64 >= next {
                    sign = -sign;
                    next += rng.random_range(0.8..1.2) * period;
                }
                *v *= sign;
            }
        }
        SpoofArtifact::HarmonicClip => {
            let limit = CLIP_FRACTION * x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            x.iter_mut().for_each(|v| *v = v.clamp(-limit, limit));
        }
    }
}

fn normalize_peak(x: &mut [f64]) {
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        x.iter_mut().for_each(|v| *v *= PEAK / peak);
    }
}

/// Deterministic synthetic corpus: genuine utterances `SYN_G_k` first, then
/// spoofed ones `SYN_S_k` built the same way with the artifact applied.
pub fn synth_corpus(cfg: &SynthConfig) -> Result<Vec<Utterance>> {
    let len = (cfg.duration_s * SAMPLE_RATE as f64).round() as usize;
    if len < 400 {
        return Err(Error::invalid(format!(
            "duration {} s is shorter than one analysis window",
            cfg.duration_s
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.n_genuine + cfg.n_spoof);
    for k in 0..cfg.n_genuine {
        let mut x = harmonic_voice(&mut rng, len);
        normalize_peak(&mut x);
        out.push(Utterance {
            id: format!("SYN_G_{k}"),
            label: Label::Genuine,
            waveform: Waveform::new(x, SAMPLE_RATE)?,
        });
    }
    for k in 0..cfg.n_spoof {
        let mut x = harmonic_voice(&mut rng, len);
        apply_artifact(&mut x, cfg.spoof_artifact, &mut rng);
        normalize_peak(&mut x);
        out.push(Utterance {
            id: format!("SYN_S_{k}"),
            label: Label::Spoof,
            waveform: Waveform::new(x, SAMPLE_RATE)?,
        });
    }
    Ok(out)
}

/// Power in `[lo_hz, hi_hz]` relative to total power.
pub fn band_power_fraction(x: &[f64], lo_hz: f64, hi_hz: f64) -> f64 {
    let n = x.len();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::<f64>::new()
        .plan_fft_forward(n)
        .process(&mut buf);
    let bin_hz = SAMPLE_RATE as f64 / n as f64;
    let (mut band, mut total) = (0.0, 0.0);
    for (k, c) in buf.iter().enumerate().take(n / 2 + 1) {
        let p = c.norm_sqr();
        total += p;
        if (lo_hz..=hi_hz).contains(&(k as f64 * bin_hz)) {
            band += p;
        }
    }
    band / total
}

/// Seeded per-epoch order of `n` items split into batches of `batch_size`;
/// the last batch may be short.
pub fn batch_order(
    n: usize,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch_size must be at least 1"));
    }
    if n == 0 {
        return Err(Error::invalid("cannot batch an empty corpus"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    Ok(idx.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub ids: Vec<String>,
    pub labels: Vec<Label>,
    /// All exactly the crop length.
    pub waveforms: Vec<Waveform>,
}

/// Batches for one epoch with every waveform fixed to `crop` samples.
pub fn make_batches(
    corpus: &[Utterance],
    batch_size: usize,
    seed: u64,
    epoch: usize,
    crop: usize,
) -> Result<Vec<Batch>> {
    batch_order(corpus.len(), batch_size, seed, epoch)?
        .into_iter()
        .map(|idx| {
            let mut b = Batch {
                ids: Vec::with_capacity(idx.len()),
                labels: Vec::with_capacity(idx.len()),
                waveforms: Vec::with_capacity(idx.len()),
            };
            for i in idx {
                let u = &corpus[i];
                b.ids.push(u.id.clone());
                b.labels.push(u.label);
                b.waveforms.push(fix_length(&u.waveform, crop)?);
            }
            Ok(b)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub utterance_id: String,
    pub label: Label,
    pub path: PathBuf,
}

pub const MANIFEST_HEADER: &str = "utterance_id,label,path";

/// Writes each utterance as `<dir>/<id>.wav` and returns the manifest
/// entries, with paths relative to `dir`.
pub fn write_corpus(dir: impl AsRef<Path>, corpus: &[Utterance]) -> Result<Vec<ManifestEntry>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(corpus.len());
    for u in corpus {
        let rel = PathBuf::from(format!("{}.wav", u.id));
        write_wav(dir.join(&rel), &u.waveform)?;
        entries.push(ManifestEntry {
            utterance_id: u.id.clone(),
            label: u.label,
            path: rel,
        });
    }
    std::fs::write(dir.join("manifest.csv"), format_manifest(&entries))?;
    Ok(entries)
}

pub fn format_manifest(entries: &[ManifestEntry]) -> String {
    let mut s = format!("{MANIFEST_HEADER}\n");
    for e in entries {
        s.push_str(&format!(
            "{},{},{}\n",
            e.utterance_id,
            e.label.index(),
            e.path.display()
        ));
    }
    s
}

pub fn parse_manifest_str(text: &str, origin: &str) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let err = |msg: String| Error::Parse {
            path: origin.to_string(),
            line: i + 1,
            msg,
        };
        if i == 0 {
            if line.trim() != MANIFEST_HEADER {
                return Err(err(format!("expected header {MANIFEST_HEADER:?}")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.splitn(3, ',').collect();
        if fields.len() != 3 {
            return Err(err(format!("expected 3 fields, found {}", fields.len())));
        }
        let label = fields[1]
            .trim()
            .parse::<usize>()
            .map_err(|e| err(e.to_string()))
            .and_then(|l| Label::from_index(l).map_err(|e| err(e.to_string())))?;
        out.push(ManifestEntry {
            utterance_id: fields[0].trim().to_string(),
            label,
            path: PathBuf::from(fields[2].trim()),
        });
    }
    Ok(out)
}

/// Reads a manifest and loads its WAV files; relative paths resolve
/// against the manifest's directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<Utterance>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let entries = parse_manifest_str(&std::fs::read_to_string(path)?, &path.display().to_string())?;
    entries
        .into_iter()
        .map(|e| {
            Ok(Utterance {
                waveform: read_wav(base.join(&e.path))?,
                id: e.utterance_id,
                label: e.label,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn parses_bonafide_line() {
        let r = parse_protocol_str("LA_0069 LA_D_1047731 - - bonafide\n", "p").unwrap();
        assert_eq!(
            r,
            vec![ProtocolRecord {
                speaker_id: "LA_0069".into(),
                utterance_id: "LA_D_1047731".into(),
                environment: "-".into(),
                attack_id: None,
                label: Label::Genuine,
            }]
        );
        assert_eq!(format_protocol(&r), "LA_0069 LA_D_1047731 - - bonafide\n");
    }

    #[test]
    fn parses_spoof_line() {
        let r = parse_protocol_str("LA_0069 LA_D_1105538 - A01 spoof", "p").unwrap();
        assert_eq!(r[0].label, Label::Spoof);
        assert_eq!(r[0].label.index(), 0);
        assert_eq!(r[0].attack_id.as_deref(), Some("A01"));
    }

    #[test]
    fn counts_and_errors() {
        let text = "S1 U1 - - bonafide\n\nS1 U2 - A01 spoof\nS2 U3 - A02 spoof\n";
        let s = summarize(&parse_protocol_str(text, "p").unwrap());
        assert_eq!((s.bonafide, s.spoof), (1, 2));

        match parse_protocol_str("S1 U1 - - bonafide\nS1 U2 - spoof\n", "proto.txt") {
            Err(Error::Parse { line, path, .. }) => {
                assert_eq!((line, path.as_str()), (2, "proto.txt"))
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_protocol_str("S1 U1 - - fake", "p"),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    fn token() -> impl Strategy<Value = String> {
        "[A-Za-z0-9_]{1,12}"
    }

    proptest! {
        #[test]
        fn protocol_round_trip(rows in prop::collection::vec((token(), token(), prop::option::of(token()), any::<bool>()), 0..20)) {
            let records: Vec<ProtocolRecord> = rows
                .into_iter()
                .map(|(s, u, a, g)| ProtocolRecord {
                    speaker_id: s,
                    utterance_id: u,
                    environment: "-".into(),
                    attack_id: a.filter(|a| a != "-"),
                    label: if g { Label::Genuine } else { Label::Spoof },
                })
                .collect();
            let text = format_protocol(&records);
            let parsed = parse_protocol_str(&text, "p").unwrap();
            prop_assert_eq!(&parsed, &records);
            prop_assert_eq!(format_protocol(&parsed), text);
        }
    }

    fn small(seed: u64, g: usize, s: usize, artifact: SpoofArtifact) -> SynthConfig {
        SynthConfig {
            n_genuine: g,
            n_spoof: s,
            duration_s: 0.5,
            seed,
            spoof_artifact: artifact,
        }
    }

    #[test]
    fn synth_is_deterministic_and_bounded() {
        let a = synth_corpus(&small(3, 2, 3, SpoofArtifact::PhaseJump)).unwrap();
        let b = synth_corpus(&small(3, 2, 3, SpoofArtifact::PhaseJump)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].id, "SYN_G_0");
        assert_eq!(a[4].id, "SYN_S_2");
        for artifact in [
            SpoofArtifact::SpectralNotch,
            SpoofArtifact::PhaseJump,
            SpoofArtifact::HarmonicClip,
        ] {
            for u in synth_corpus(&small(1, 2, 2, artifact)).unwrap() {
                assert!(u.waveform.samples.iter().all(|v| v.abs() <= 1.0));
                assert_eq!(u.waveform.len(), 8000);
            }
        }
        let c = synth_corpus(&small(4, 2, 3, SpoofArtifact::PhaseJump)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn no_genuine_means_all_spoof() {
        let c = synth_corpus(&small(0, 0, 4, SpoofArtifact::SpectralNotch)).unwrap();
        assert!(c.iter().all(|u| u.label == Label::Spoof));
    }

    #[test]
    fn notch_band_power_separates_classes() {
        let corpus = synth_corpus(&SynthConfig {
            n_genuine: 10,
            n_spoof: 10,
            duration_s: 1.0,
            seed: 11,
            spoof_artifact: SpoofArtifact::SpectralNotch,
        })
        .unwrap();
        let power = |l: Label| -> Vec<f64> {
            corpus
                .iter()
                .filter(|u| u.label == l)
                .map(|u| {
                    band_power_fraction(
                        &u.waveform.samples,
                        NOTCH_BAND_HZ.0 + 50.0,
                        NOTCH_BAND_HZ.1 - 50.0,
                    )
                })
                .collect()
        };
        let g = power(Label::Genuine);
        let s = power(Label::Spoof);
        let g_min = g.iter().cloned().fold(f64::INFINITY, f64::min);
        let s_max = s.iter().cloned().fold(0.0, f64::max);
        assert!(s_max < g_min, "spoof max {s_max} vs genuine min {g_min}");
    }

    #[test]
    fn batch_sizes_and_determinism() {
        let sizes: Vec<usize> = batch_order(34, 16, 1, 0)
            .unwrap()
            .iter()
            .map(Vec::len)
            .collect();
        assert_eq!(sizes, vec![16, 16, 2]);
        assert_eq!(
            batch_order(34, 16, 1, 0).unwrap(),
            batch_order(34, 16, 1, 0).unwrap()
        );
        assert!(batch_order(0, 4, 1, 0).is_err());
        assert!(batch_order(3, 0, 1, 0).is_err());
    }

    #[test]
    fn epochs_reshuffle() {
        // For seed 7 the epoch 0 and epoch 1 permutations of 10 items differ.
        let e0 = batch_order(10, 10, 7, 0).unwrap();
        let e1 = batch_order(10, 10, 7, 1).unwrap();
        assert_ne!(e0, e1);
    }

    #[test]
    fn batches_preserve_label_multiset() {
        let corpus = synth_corpus(&small(5, 3, 8, SpoofArtifact::HarmonicClip)).unwrap();
        let batches = make_batches(&corpus, 4, 9, 2, 10_000).unwrap();
        let mut got: Vec<Label> = batches.iter().flat_map(|b| b.labels.clone()).collect();
        let mut want: Vec<Label> = corpus.iter().map(|u| u.label).collect();
        got.sort();
        want.sort();
        assert_eq!(got, want);
        assert!(batches
            .iter()
            .flat_map(|b| &b.waveforms)
            .all(|w| w.len() == 10_000));
        let mut ids: Vec<&String> = batches.iter().flat_map(|b| &b.ids).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), corpus.len());
    }

    #[test]
    fn manifest_round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = synth_corpus(&small(2, 1, 2, SpoofArtifact::SpectralNotch)).unwrap();
        let entries = write_corpus(dir.path(), &corpus).unwrap();
        let text = std::fs::read_to_string(dir.path().join("manifest.csv")).unwrap();
        assert!(text.starts_with("utterance_id,label,path\nSYN_G_0,1,SYN_G_0.wav\n"));
        assert_eq!(parse_manifest_str(&text, "m").unwrap(), entries);
        let loaded = load_manifest(dir.path().join("manifest.csv")).unwrap();
        assert_eq!(loaded.len(), 3);
        for (a, b) in loaded.iter().zip(&corpus) {
            assert_eq!((a.id.as_str(), a.label), (b.id.as_str(), b.label));
            assert!(a
                .waveform
                .samples
                .iter()
                .zip(&b.waveform.samples)
                .all(|(x, y)| (x - y).abs() < 1e-6));
        }
        assert!(parse_manifest_str("id,label\n", "m").is_err());
        assert!(matches!(
            parse_manifest_str("utterance_id,label,path\nU1,2,a.wav\n", "m"),
            Err(Error::Parse { line: 2, .. })
        ));
    }
}
