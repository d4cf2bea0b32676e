//! Training loop, checkpoints, evaluation, seed averaging and sweeps.

use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Tensor};
use crate::classifier::scores;
use crate::config::TrainConfig;
use crate::data::batch_order;
use crate::error::{Error, Result};
use crate::losses::LossBundle;
use crate::metrics::{eer, min_tdcf, Eer, ScoreSet, TdcfCosts};
use crate::model::{GflModel, Prepared};
use crate::nn::ParamStore;
use crate::optim::{cosine_lr, AdamW, AdamWParams};
use crate::patch::{sample_mask_with_policy, MaskPartition};

/// Stream ids that keep initialization and masking independent of the
/// per-epoch shuffle, which uses the epoch number as its stream.
const INIT_STREAM: u64 = u64::MAX;
const MASK_STREAM: u64 = u64::MAX - 1;

pub const LOG_HEADER: &str = "epoch,l_ce,l_gar,l_total,lr,dev_eer";

/// Epoch means of the batch losses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub l_ce: f64,
    pub l_gar: f64,
    pub l_total: f64,
    /// Rate used by the epoch's last step.
    pub lr: f64,
    /// `NaN` without a dev set.
    pub dev_eer: f64,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{},{}",
            self.epoch, self.l_ce, self.l_gar, self.l_total, self.lr, self.dev_eer
        )
    }
}

pub fn format_log(rows: &[EpochLog]) -> String {
    let mut s = format!("{LOG_HEADER}\n");
    for r in rows {
        writeln!(s, "{r}").expect("writing to a String");
    }
    s
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct Accum {
    l_ce: f64,
    l_gar: f64,
    l_total: f64,
    batches: u64,
}

/// Model, parameters and optimizer state of one seeded run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub seed: u64,
    pub model: GflModel,
    pub params: ParamStore,
    pub opt: AdamW,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub step: usize,
    /// Next batch within the current epoch.
    pub batch_cursor: usize,
    pub log: Vec<EpochLog>,
    mask_rng: ChaCha8Rng,
    acc: Accum,
    last_lr: f64,
}

impl Trainer {
    pub fn new(cfg: &TrainConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        crate::heap::retain_freed_memory();
        let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
        init_rng.set_stream(INIT_STREAM);
        let mut params = ParamStore::new();
        let model = GflModel::init(&mut params, &mut init_rng, cfg)?;
        let opt = AdamW::new(&params, AdamWParams::with_weight_decay(cfg.weight_decay));
        let mut mask_rng = ChaCha8Rng::seed_from_u64(seed);
        mask_rng.set_stream(MASK_STREAM);
        Ok(Self {
            cfg: cfg.clone(),
            seed,
            model,
            params,
            opt,
            epoch: 0,
            step: 0,
            batch_cursor: 0,
            log: Vec::new(),
            mask_rng,
            acc: Accum::default(),
            last_lr: cfg.lr_peak,
        })
    }

    fn batches_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.cfg.batch_size)
    }

    pub fn total_steps(&self, n: usize) -> usize {
        self.cfg.epochs * self.batches_per_epoch(n)
    }

    pub fn is_finished(&self) -> bool {
        self.epoch >= self.cfg.epochs
    }

    /// Runs the next batch of the current epoch and applies one update.
    pub fn train_step(&mut self, data: &[Prepared]) -> Result<LossBundle> {
        check_two_classes(data)?;
        if self.is_finished() {
            return Err(Error::invalid("all configured epochs are complete"));
        }
        let order = batch_order(data.len(), self.cfg.batch_size, self.seed, self.epoch)?;
        let idx = order
            .get(self.batch_cursor)
            .ok_or_else(|| Error::invalid("epoch already complete; call finish_epoch"))?;
        let batch: Vec<&Prepared> = idx.iter().map(|&i| &data[i]).collect();
        let parts = batch
            .iter()
            .map(|b| {
                sample_mask_with_policy(
                    b.grid.f_count,
                    b.grid.t_count,
                    self.cfg.mask_ratio,
                    self.cfg.mask_policy,
                    &mut self.mask_rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;

        let alpha = self.cfg.effective_alpha();
        let mut g = Graph::new();
        let frozen = |name: &str| self.model.is_frozen(&self.cfg, name);
        let p = self.params.bind(&mut g, frozen)?;
        let diverged = |detail: String| Error::Diverged {
            epoch: self.epoch + 1,
            step: self.step,
            detail,
        };
        let out = self
            .model
            .forward_batch(&mut g, &p, &batch, &parts, alpha, self.cfg.class_weights)
            .map_err(|e| match e {
                Error::NonFinite { op } => diverged(format!("non-finite value in {op}")),
                e => e,
            })?;
        let bundle = out.bundle(&g, alpha);
        if !bundle.l_total.is_finite() {
            return Err(diverged(format!("l_total = {}", bundle.l_total)));
        }
        let grads = g.backward(out.l_total)?;
        let grads: Vec<Option<Tensor>> = p
            .iter()
            .map(|(name, v)| (!self.model.is_frozen(&self.cfg, name)).then(|| grads.wrt(v).clone()))
            .collect();
        if grads.iter().flatten().any(|t| !t.is_finite()) {
            return Err(diverged("non-finite gradient".into()));
        }
        let lr = cosine_lr(
            self.step,
            self.total_steps(data.len()),
            self.cfg.lr_peak,
            self.cfg.lr_min,
        )?;
        self.opt.step(&mut self.params, &grads, lr)?;

        self.step += 1;
        self.batch_cursor += 1;
        self.last_lr = lr;
        self.acc.l_ce += bundle.l_ce;
        self.acc.l_gar += bundle.l_gar;
        self.acc.l_total += bundle.l_total;
        self.acc.batches += 1;
        Ok(bundle)
    }

    /// Finishes the current epoch: remaining batches, then the log row.
    pub fn run_epoch(&mut self, train: &[Prepared], dev: Option<&[Prepared]>) -> Result<EpochLog> {
        while self.batch_cursor < self.batches_per_epoch(train.len()) {
            self.train_step(train)?;
        }
        let dev_eer = match dev {
            Some(d) => eer_of(&self.score(d)?)?.eer,
            None => f64::NAN,
        };
        let n = self.acc.batches as f64;
        self.epoch += 1;
        let row = EpochLog {
            epoch: self.epoch,
            l_ce: self.acc.l_ce / n,
            l_gar: self.acc.l_gar / n,
            l_total: self.acc.l_total / n,
            lr: self.last_lr,
            dev_eer,
        };
        self.log.push(row);
        self.batch_cursor = 0;
        self.acc = Accum::default();
        Ok(row)
    }

    /// Scores in `data` order: `logit(genuine) - logit(spoof)`, with masks
    /// drawn from `eval_seed` at the evaluation ratio.
    pub fn score(&self, data: &[Prepared]) -> Result<ScoreSet> {
        score_with(&self.model, &self.params, &self.cfg, data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?, None)
    }

    /// Loads parameters into a model built from `cfg`; errors when any
    /// parameter name or shape differs.
    pub fn load_with_config(path: impl AsRef<Path>, cfg: &TrainConfig) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?, Some(cfg))
    }
}

fn check_two_classes(data: &[Prepared]) -> Result<()> {
    let genuine = data.iter().filter(|p| p.label.is_genuine()).count();
    if genuine == 0 || genuine == data.len() {
        return Err(Error::SingleClass {
            what: "training corpus",
        });
    }
    Ok(())
}

pub fn score_with(
    model: &GflModel,
    params: &ParamStore,
    cfg: &TrainConfig,
    data: &[Prepared],
) -> Result<ScoreSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.eval_seed);
    let ratio = cfg.eval_ratio();
    let mut ids = Vec::with_capacity(data.len());
    let mut out = Vec::with_capacity(data.len());
    let mut labels = Vec::with_capacity(data.len());
    for chunk in data.chunks(cfg.batch_size.max(1)) {
        let parts: Vec<MaskPartition> = chunk
            .iter()
            .map(|b| {
                sample_mask_with_policy(
                    b.grid.f_count,
                    b.grid.t_count,
                    ratio,
                    cfg.mask_policy,
                    &mut rng,
                )
            })
            .collect::<Result<_>>()?;
        let refs: Vec<&Prepared> = chunk.iter().collect();
        let mut g = Graph::new();
        let p = params.bind(&mut g, |_| true)?;
        let o = model.forward_batch(&mut g, &p, &refs, &parts, 0.0, None)?;
        out.extend(scores(g.value(o.logits)));
        ids.extend(chunk.iter().map(|b| b.id.clone()));
        labels.extend(chunk.iter().map(|b| b.label));
    }
    ScoreSet::labeled(&ids, &out, &labels)
}

fn eer_of(scores: &ScoreSet) -> Result<Eer> {
    let (g, s) = scores.split()?;
    eer(&g, &s)
}

/// Metrics of one scored set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub eer: f64,
    pub threshold: f64,
    /// Present when t-DCF costs were given.
    pub min_tdcf: Option<f64>,
}

pub fn metrics(scores: &ScoreSet, costs: Option<TdcfCosts>) -> Result<Metrics> {
    let (g, s) = scores.split()?;
    let e = eer(&g, &s)?;
    Ok(Metrics {
        eer: e.eer,
        threshold: e.threshold,
        min_tdcf: costs.map(|c| min_tdcf(&g, &s, c)).transpose()?,
    })
}

impl Metrics {
    pub fn rows(&self) -> Vec<(&'static str, f64)> {
        let mut rows = vec![("eer", self.eer), ("eer_threshold", self.threshold)];
        if let Some(t) = self.min_tdcf {
            rows.push(("min_tdcf", t));
        }
        rows
    }
}

/// Scores `data` with `t`, writes `scores.txt` to `out_dir`, then computes
/// the metrics and writes `metrics.csv`. Scores are written even when the
/// metrics fail, e.g. for a single-class corpus.
pub fn evaluate(
    t: &Trainer,
    data: &[Prepared],
    costs: Option<TdcfCosts>,
    out_dir: &Path,
) -> Result<Metrics> {
    std::fs::create_dir_all(out_dir)?;
    let scores = t.score(data)?;
    crate::metrics::write_scores(out_dir.join("scores.txt"), &scores)?;
    let m = metrics(&scores, costs)?;
    std::fs::write(
        out_dir.join("metrics.csv"),
        crate::metrics::format_metrics(&m.rows()),
    )?;
    Ok(m)
}

/// Trains one seed to completion, saving `epoch_NNN.ckpt` and
/// `train_log.csv` under `out_dir` when given.
pub fn train_run(
    cfg: &TrainConfig,
    seed: u64,
    train: &[Prepared],
    dev: Option<&[Prepared]>,
    out_dir: Option<&Path>,
) -> Result<Trainer> {
    let mut t = Trainer::new(cfg, seed)?;
    continue_run(&mut t, train, dev, out_dir)?;
    Ok(t)
}

/// Runs the remaining epochs of `t`.
pub fn continue_run(
    t: &mut Trainer,
    train: &[Prepared],
    dev: Option<&[Prepared]>,
    out_dir: Option<&Path>,
) -> Result<()> {
    if let Some(d) = out_dir {
        std::fs::create_dir_all(d)?;
    }
    while !t.is_finished() {
        t.run_epoch(train, dev)?;
        if let Some(d) = out_dir {
            t.save(checkpoint_path(d, t.epoch))?;
            std::fs::write(d.join("train_log.csv"), format_log(&t.log))?;
        }
    }
    Ok(())
}

pub fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("epoch_{epoch:03}.ckpt"))
}

/// Per-seed and mean metrics on an evaluation set.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub per_seed: Vec<(u64, Metrics)>,
    pub mean_eer: f64,
    pub mean_min_tdcf: Option<f64>,
}

impl RunSummary {
    pub fn from_runs(per_seed: Vec<(u64, Metrics)>) -> Self {
        let n = per_seed.len() as f64;
        let mean_eer = per_seed.iter().map(|(_, m)| m.eer).sum::<f64>() / n;
        let mean_min_tdcf = per_seed
            .iter()
            .map(|(_, m)| m.min_tdcf)
            .sum::<Option<f64>>()
            .map(|s| s / n);
        Self {
            per_seed,
            mean_eer,
            mean_min_tdcf,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("seed,eer,min_tdcf\n");
        let opt = |v: Option<f64>| v.map_or("nan".to_string(), |v| v.to_string());
        for (seed, m) in &self.per_seed {
            writeln!(s, "{seed},{},{}", m.eer, opt(m.min_tdcf)).expect("writing to a String");
        }
        writeln!(s, "mean,{},{}", self.mean_eer, opt(self.mean_min_tdcf))
            .expect("writing to a String");
        s
    }
}

/// Trains every seed in `cfg.seeds` and evaluates each on `eval`. Run
/// directories are `out_dir/seed_<seed>`.
pub fn train_and_evaluate(
    cfg: &TrainConfig,
    train: &[Prepared],
    dev: Option<&[Prepared]>,
    eval: &[Prepared],
    out_dir: Option<&Path>,
) -> Result<RunSummary> {
    cfg.validate()?;
    let costs = match (cfg.tdcf_c1, cfg.tdcf_c2) {
        (None, None) => None,
        _ => Some(cfg.tdcf_costs()?),
    };
    let mut per_seed = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let dir = out_dir.map(|d| d.join(format!("seed_{seed}")));
        let t = train_run(cfg, seed, train, dev, dir.as_deref())?;
        let scores = t.score(eval)?;
        if let Some(d) = &dir {
            crate::metrics::write_scores(d.join("scores.txt"), &scores)?;
        }
        per_seed.push((seed, metrics(&scores, costs)?));
    }
    Ok(RunSummary::from_runs(per_seed))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    MaskRatio,
    Alpha,
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mask_ratio" => Ok(Self::MaskRatio),
            "alpha" => Ok(Self::Alpha),
            _ => Err(Error::invalid(format!(
                "unknown sweep axis {s:?}; expected mask_ratio or alpha"
            ))),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::MaskRatio => "mask_ratio",
            Self::Alpha => "alpha",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub eer: f64,
    pub min_tdcf: f64,
}

pub const SWEEP_HEADER: &str = "value,eer,min_tdcf";

pub fn format_sweep(rows: &[SweepRow]) -> String {
    let mut s = format!("{SWEEP_HEADER}\n");
    for r in rows {
        writeln!(s, "{},{},{}", r.value, r.eer, r.min_tdcf).expect("writing to a String");
    }
    s
}

/// One seed-averaged train and evaluate per value. t-DCF costs are required.
pub fn sweep(
    cfg: &TrainConfig,
    axis: SweepAxis,
    values: &[f64],
    train: &[Prepared],
    eval: &[Prepared],
    out_dir: Option<&Path>,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::invalid("sweep needs at least one value"));
    }
    cfg.tdcf_costs()?;
    let configs = values
        .iter()
        .map(|&v| {
            let mut c = cfg.clone();
            match axis {
                SweepAxis::MaskRatio => c.mask_ratio = v,
                SweepAxis::Alpha => c.alpha = v,
            }
            c.validate()
                .map_err(|e| Error::invalid(format!("{axis}={v}: {e}")))?;
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(values.len());
    for (&v, c) in values.iter().zip(&configs) {
        let dir = out_dir.map(|d| d.join(format!("{axis}_{v}")));
        let s = train_and_evaluate(c, train, None, eval, dir.as_deref())?;
        rows.push(SweepRow {
            value: v,
            eer: s.mean_eer,
            min_tdcf: s.mean_min_tdcf.expect("costs validated"),
        });
    }
    Ok(rows)
}

const MAGIC: &[u8; 8] = b"GFLFADCK";
const VERSION: u32 = 1;
/// Parameter values are stored as little-endian f64.
const DTYPE_F64: u8 = 2;

/// The configuration stored in a checkpoint file.
pub fn checkpoint_config(path: impl AsRef<Path>) -> Result<TrainConfig> {
    let buf = std::fs::read(path)?;
    read_header(&mut Reader { buf: &buf, pos: 0 })
}

fn read_header(r: &mut Reader) -> Result<TrainConfig> {
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(r.array()?);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let dtype = r.take(1)?[0];
    if dtype != DTYPE_F64 {
        return Err(Error::Checkpoint(format!("unsupported dtype tag {dtype}")));
    }
    TrainConfig::from_text(&r.string()?)
}

struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.0.extend_from_slice(b);
    }

    fn tensor_values(&mut self, t: &Tensor) {
        for &v in t.data() {
            self.f64(v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end =
            end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("count overflows usize".into()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.usize()?;
        self.take(n)
    }

    fn string(&mut self) -> Result<String> {
        String::from_utf8(self.bytes()?.to_vec())
            .map_err(|_| Error::Checkpoint("invalid UTF-8".into()))
    }

    fn values(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

impl Trainer {
    /// Layout: magic, version (u32), dtype tag (u8), config text, run
    /// counters, epoch accumulators, mask RNG state, log rows, optimizer
    /// step count, then per parameter its name, rank, dims, values and the
    /// two Adam moments.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.0.extend_from_slice(&VERSION.to_le_bytes());
        w.0.push(DTYPE_F64);
        w.bytes(self.cfg.to_text().as_bytes());
        for v in [
            self.seed,
            self.epoch as u64,
            self.step as u64,
            self.batch_cursor as u64,
        ] {
            w.u64(v);
        }
        w.f64(self.acc.l_ce);
        w.f64(self.acc.l_gar);
        w.f64(self.acc.l_total);
        w.u64(self.acc.batches);
        w.f64(self.last_lr);
        w.0.extend_from_slice(&self.mask_rng.get_seed());
        w.u64(self.mask_rng.get_stream());
        w.0.extend_from_slice(&self.mask_rng.get_word_pos().to_le_bytes());
        w.u64(self.log.len() as u64);
        for r in &self.log {
            w.u64(r.epoch as u64);
            for v in [r.l_ce, r.l_gar, r.l_total, r.lr, r.dev_eer] {
                w.f64(v);
            }
        }
        w.u64(self.opt.t);
        w.u64(self.params.len() as u64);
        for (i, (name, t)) in self.params.iter().enumerate() {
            w.bytes(name.as_bytes());
            w.u64(t.rank() as u64);
            for &d in t.shape() {
                w.u64(d as u64);
            }
            w.tensor_values(t);
            w.tensor_values(&self.opt.m[i]);
            w.tensor_values(&self.opt.v[i]);
        }
        w.0
    }

    fn from_bytes(buf: &[u8], cfg_override: Option<&TrainConfig>) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        let saved_cfg = read_header(&mut r)?;
        let cfg = cfg_override.cloned().unwrap_or(saved_cfg);
        let seed = r.u64()?;
        let mut t = Trainer::new(&cfg, seed)?;
        t.epoch = r.usize()?;
        t.step = r.usize()?;
        t.batch_cursor = r.usize()?;
        t.acc = Accum {
            l_ce: r.f64()?,
            l_gar: r.f64()?,
            l_total: r.f64()?,
            batches: r.u64()?,
        };
        t.last_lr = r.f64()?;
        let rng_seed: [u8; 32] = r.array()?;
        let mut rng = ChaCha8Rng::from_seed(rng_seed);
        rng.set_stream(r.u64()?);
        rng.set_word_pos(u128::from_le_bytes(r.array()?));
        t.mask_rng = rng;
        let rows = r.usize()?;
        t.log = (0..rows)
            .map(|_| {
                Ok(EpochLog {
                    epoch: r.usize()?,
                    l_ce: r.f64()?,
                    l_gar: r.f64()?,
                    l_total: r.f64()?,
                    lr: r.f64()?,
                    dev_eer: r.f64()?,
                })
            })
            .collect::<Result<_>>()?;
        t.opt.t = r.u64()?;
        let count = r.usize()?;
        if count != t.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {count} parameters, model expects {}",
                t.params.len()
            )));
        }
        let names: Vec<String> = t.params.iter().map(|(n, _)| n.to_string()).collect();
        for (i, want) in names.iter().enumerate() {
            let name = r.string()?;
            let rank = r.usize()?;
            let shape = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
            let slot = t.params.get_mut(want).expect("name from store");
            if &name != want || shape != slot.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {i}: checkpoint has {name} {shape:?}, model expects {want} {:?}",
                    slot.shape()
                )));
            }
            let n = slot.len();
            *slot = Tensor::new(shape.clone(), r.values(n)?)?;
            t.opt.m[i] = Tensor::new(shape.clone(), r.values(n)?)?;
            t.opt.v[i] = Tensor::new(shape, r.values(n)?)?;
        }
        if r.pos != buf.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                buf.len() - r.pos
            )));
        }
        Ok(t)
    }
}
