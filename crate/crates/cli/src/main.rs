use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Arg, ArgMatches, Args, Command, FromArgMatches, Parser, Subcommand};

use gfl_fad::config::KEYS;
use gfl_fad::data::{
    format_protocol, load_manifest, load_protocol_corpus, parse_manifest_str, parse_protocol,
    synth_corpus, write_corpus, ProtocolRecord, SpoofArtifact, SynthConfig, Utterance,
    MANIFEST_HEADER,
};
use gfl_fad::metrics::{compute_eer, compute_min_tdcf, format_metrics, read_scores, TdcfCosts};
use gfl_fad::model::{prepare, Prepared};
use gfl_fad::train::{
    checkpoint_config, evaluate, format_sweep, sweep, train_and_evaluate, train_run, SweepAxis,
    Trainer,
};
use gfl_fad::{Label, TrainConfig};

#[derive(Parser)]
#[command(
    name = "gfl-fad",
    version,
    about = "Train and evaluate genuine-focused fake audio detectors"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train every seed in `seeds`; evaluates each run when --eval is given.
    Train {
        #[command(flatten)]
        data: TrainData,
        /// Output directory: config.txt, seed_<s>/ runs and summary.csv.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Score a corpus with a checkpoint; writes scores.txt and metrics.csv.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Manifest or protocol file.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        audio_dir: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train and evaluate once per value of `alpha` or `mask_ratio`.
    Sweep {
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[command(flatten)]
        data: TrainData,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Write a synthetic corpus: WAV files, manifest.csv and protocol.txt.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = SynthConfig::default().n_genuine)]
        n_genuine: usize,
        #[arg(long, default_value_t = SynthConfig::default().n_spoof)]
        n_spoof: usize,
        #[arg(long, default_value_t = SynthConfig::default().duration_s)]
        duration_s: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = SpoofArtifact::SpectralNotch)]
        spoof_artifact: SpoofArtifact,
    },
    /// EER and min t-DCF of a score file against manifest or protocol labels.
    Score {
        #[arg(long)]
        scores: PathBuf,
        /// Manifest or protocol file carrying the labels.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long = "tdcf_c1", alias = "tdcf-c1")]
        tdcf_c1: Option<f64>,
        #[arg(long = "tdcf_c2", alias = "tdcf-c2")]
        tdcf_c2: Option<f64>,
        /// Write the metrics CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct TrainData {
    /// Training corpus: manifest.csv or a protocol file.
    #[arg(long)]
    train: PathBuf,
    /// Scored after every epoch for the dev_eer log column.
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Scored once per seed after training.
    #[arg(long)]
    eval: Option<PathBuf>,
    /// Audio directory for protocol inputs; defaults to the protocol's
    /// directory.
    #[arg(long)]
    audio_dir: Option<PathBuf>,
}

/// `--profile`, `--config` and one `--<key> VALUE` flag per config key.
/// Precedence: profile (or checkpoint), then file, then flags.
struct ConfigArgs {
    profile: Option<String>,
    file: Option<PathBuf>,
    overrides: Vec<(&'static str, String)>,
}

impl ConfigArgs {
    fn resolve(&self, base: Option<TrainConfig>) -> Result<TrainConfig> {
        let mut cfg = match (&self.profile, base) {
            (Some(p), _) => TrainConfig::profile(p)?,
            (None, Some(b)) => b,
            (None, None) => TrainConfig::desk(),
        };
        if let Some(f) = &self.file {
            cfg.apply_file(f)?;
        }
        for (k, v) in &self.overrides {
            cfg.set(k, v).with_context(|| format!("--{k}"))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl FromArgMatches for ConfigArgs {
    fn from_arg_matches(m: &ArgMatches) -> clap::error::Result<Self> {
        Ok(Self {
            profile: m.get_one::<String>("profile").cloned(),
            file: m.get_one::<PathBuf>("config").cloned(),
            overrides: KEYS
                .iter()
                .filter_map(|&k| m.get_one::<String>(k).map(|v| (k, v.clone())))
                .collect(),
        })
    }

    fn update_from_arg_matches(&mut self, m: &ArgMatches) -> clap::error::Result<()> {
        *self = Self::from_arg_matches(m)?;
        Ok(())
    }
}

impl Args for ConfigArgs {
    fn augment_args(cmd: Command) -> Command {
        let cmd = cmd
            .arg(
                Arg::new("profile")
                    .long("profile")
                    .value_name("desk|paper")
                    .help("Base configuration [default: desk]"),
            )
            .arg(
                Arg::new("config")
                    .long("config")
                    .value_name("FILE")
                    .value_parser(clap::value_parser!(PathBuf))
                    .help("key=value configuration file"),
            );
        KEYS.iter().fold(cmd, |cmd, &k| {
            let kebab: &'static str = Box::leak(k.replace('_', "-").into_boxed_str());
            cmd.arg(
                Arg::new(k)
                    .long(k)
                    .alias(kebab)
                    .value_name("VALUE")
                    .help_heading("Configuration keys"),
            )
        })
    }

    fn augment_args_for_update(cmd: Command) -> Command {
        Self::augment_args(cmd)
    }
}

fn is_manifest(path: &Path) -> Result<bool> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().next().map(str::trim) == Some(MANIFEST_HEADER))
}

fn load_corpus(path: &Path, audio_dir: Option<&Path>) -> Result<Vec<Utterance>> {
    if is_manifest(path)? {
        return Ok(load_manifest(path)?);
    }
    let records = parse_protocol(path)?;
    let dir = audio_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| path.parent().unwrap_or(Path::new(".")).to_path_buf());
    Ok(load_protocol_corpus(&records, dir)?)
}

fn load_prepared(
    path: &Path,
    audio_dir: Option<&Path>,
    cfg: &TrainConfig,
) -> Result<Vec<Prepared>> {
    let corpus = load_corpus(path, audio_dir)?;
    if corpus.is_empty() {
        bail!("{} lists no utterances", path.display());
    }
    Ok(prepare(&corpus, cfg)?)
}

fn read_labels(path: &Path) -> Result<HashMap<String, Label>> {
    if is_manifest(path)? {
        let text = std::fs::read_to_string(path)?;
        let entries = parse_manifest_str(&text, &path.display().to_string())?;
        return Ok(entries
            .into_iter()
            .map(|e| (e.utterance_id, e.label))
            .collect());
    }
    Ok(parse_protocol(path)?
        .into_iter()
        .map(|r| (r.utterance_id, r.label))
        .collect())
}

fn costs_of(cfg: &TrainConfig) -> Result<Option<TdcfCosts>> {
    Ok(match (cfg.tdcf_c1, cfg.tdcf_c2) {
        (None, None) => None,
        _ => Some(cfg.tdcf_costs()?),
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Cmd::Train { data, out, config } => {
            let cfg = config.resolve(None)?;
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("config.txt"), cfg.to_text())?;
            let dir = data.audio_dir.as_deref();
            let train = load_prepared(&data.train, dir, &cfg)?;
            let dev = data
                .dev
                .as_deref()
                .map(|p| load_prepared(p, dir, &cfg))
                .transpose()?;
            match data.eval.as_deref() {
                Some(e) => {
                    let eval = load_prepared(e, dir, &cfg)?;
                    let summary =
                        train_and_evaluate(&cfg, &train, dev.as_deref(), &eval, Some(&out))?;
                    std::fs::write(out.join("summary.csv"), summary.to_csv())?;
                    print!("{}", summary.to_csv());
                }
                None => {
                    for &seed in &cfg.seeds {
                        let run_dir = out.join(format!("seed_{seed}"));
                        let t = train_run(&cfg, seed, &train, dev.as_deref(), Some(&run_dir))?;
                        let last = t.log.last().expect("at least one epoch");
                        println!(
                            "seed {seed}: {} epochs, final l_total {}",
                            t.epoch, last.l_total
                        );
                    }
                }
            }
        }
        Cmd::Evaluate {
            checkpoint,
            data,
            audio_dir,
            out,
            config,
        } => {
            let cfg = config.resolve(Some(checkpoint_config(&checkpoint)?))?;
            let t = Trainer::load_with_config(&checkpoint, &cfg)?;
            let corpus = load_prepared(&data, audio_dir.as_deref(), &cfg)?;
            let m = evaluate(&t, &corpus, costs_of(&cfg)?, &out)?;
            print!("{}", format_metrics(&m.rows()));
        }
        Cmd::Sweep {
            axis,
            values,
            data,
            out,
            config,
        } => {
            let cfg = config.resolve(None)?;
            let Some(eval_path) = data.eval.as_deref() else {
                bail!("sweep needs --eval");
            };
            if data.dev.is_some() {
                bail!("sweep does not use --dev");
            }
            let dir = data.audio_dir.as_deref();
            let train = load_prepared(&data.train, dir, &cfg)?;
            let eval = load_prepared(eval_path, dir, &cfg)?;
            let rows = sweep(&cfg, axis, &values, &train, &eval, Some(&out))?;
            std::fs::write(out.join("sweep.csv"), format_sweep(&rows))?;
            print!("{}", format_sweep(&rows));
        }
        Cmd::Synth {
            out,
            n_genuine,
            n_spoof,
            duration_s,
            seed,
            spoof_artifact,
        } => {
            let corpus = synth_corpus(&SynthConfig {
                n_genuine,
                n_spoof,
                duration_s,
                seed,
                spoof_artifact,
            })?;
            write_corpus(&out, &corpus)?;
            let records: Vec<ProtocolRecord> = corpus
                .iter()
                .map(|u| ProtocolRecord {
                    speaker_id: "SYN".into(),
                    utterance_id: u.id.clone(),
                    environment: "-".into(),
                    attack_id: (!u.label.is_genuine()).then(|| spoof_artifact.to_string()),
                    label: u.label,
                })
                .collect();
            std::fs::write(out.join("protocol.txt"), format_protocol(&records))?;
            println!("wrote {} utterances to {}", corpus.len(), out.display());
        }
        Cmd::Score {
            scores,
            labels,
            tdcf_c1,
            tdcf_c2,
            out,
        } => {
            let mut set = read_scores(&scores)?;
            set.attach_labels(&read_labels(&labels)?)?;
            let e = compute_eer(&set)?;
            let mut rows = vec![("eer", e.eer), ("eer_threshold", e.threshold)];
            match (tdcf_c1, tdcf_c2) {
                (None, None) => {}
                (Some(c1), Some(c2)) => {
                    rows.push(("min_tdcf", compute_min_tdcf(&set, TdcfCosts::new(c1, c2)?)?))
                }
                _ => bail!("give both --tdcf_c1 and --tdcf_c2, or neither"),
            }
            let csv = format_metrics(&rows);
            match out {
                Some(p) => std::fs::write(p, csv)?,
                None => print!("{csv}"),
            }
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
