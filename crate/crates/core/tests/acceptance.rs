//! Acceptance suite. Prints one `PASS`/`FAIL` line per criterion, then
//! fails if any criterion failed.
//!
//! Everything runs inside a single test so the timed criteria are not
//! competing with other test threads.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gfl_fad::autodiff::{grad_check_many, Graph, Tensor, Var};
use gfl_fad::classifier::{ClassifierHead, HeadKind};
use gfl_fad::data::{synth_corpus, SynthConfig};
use gfl_fad::fusion::{Fusion, FusionConfig};
use gfl_fad::losses::{ce_loss, gar_loss, recon_loss_per_sample, total_loss};
use gfl_fad::mae::{local_attention_mask, MaeConfig, MaskedAutoencoder};
use gfl_fad::metrics::{compute_eer, compute_min_tdcf, eer, ScoreSet, TdcfCosts};
use gfl_fad::model::{prepare, GflModel, Prepared};
use gfl_fad::nn::{Bound, ParamStore, TransformerBlock};
use gfl_fad::patch::{
    embed_with_pos, mask_count, sample_mask_with_policy, MaskPartition, MaskPolicy, PatchGrid,
};
use gfl_fad::train::{format_sweep, sweep, train_run, SweepAxis, Trainer, SWEEP_HEADER};
use gfl_fad::{Label, TrainConfig};

/// Finite-difference step and pass threshold for gradient checks.
const FD_STEP: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;
const GRAD_BUDGET_S: f64 = 60.0;
const FOCUS_BUDGET_S: f64 = 5.0;
const METRIC_TOL: f64 = 1e-12;
const METRIC_SETS: usize = 1000;
const LOSS_TOL: f64 = 1e-9;
const TRAIN_EER_MAX: f64 = 0.05;
const HELD_EER_MAX: f64 = 0.15;
const E2E_SEEDS: [u64; 3] = [0, 1, 2];
const E2E_MIN_PASSING: usize = 2;
const E2E_BUDGET_S: f64 = 600.0;
/// Corpus seeds for the end-to-end check; the held-out corpus shares no
/// utterance with the training one.
const TRAIN_CORPUS_SEED: u64 = 0;
const HELD_CORPUS_SEED: u64 = 1;

#[derive(Default)]
struct Report {
    failed: Vec<&'static str>,
}

impl Report {
    /// Writes to the process stdout so the line shows without --nocapture.
    fn check(&mut self, name: &'static str, ok: bool, detail: String) {
        let line = format!("{} {name}: {detail}\n", if ok { "PASS" } else { "FAIL" });
        let mut out = std::io::stdout().lock();
        out.write_all(line.as_bytes()).unwrap();
        out.flush().unwrap();
        if !ok {
            self.failed.push(name);
        }
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-scale..scale)).collect(),
    )
    .unwrap()
}

/// Parameters of `store` blown up tenfold plus jitter, so the check is not
/// taken in the near-linear regime of the 0.02 init.
fn inflated(store: &ParamStore, rng: &mut ChaCha8Rng) -> (Vec<String>, Vec<Tensor>) {
    store
        .iter()
        .map(|(n, t)| {
            let mut t = t.clone();
            t.data_mut()
                .iter_mut()
                .for_each(|v| *v = *v * 10.0 + rng.random_range(-0.3..0.3));
            (n.to_string(), t)
        })
        .unzip()
}

/// `sum(out * weights)` with fixed random weights.
fn probe(g: &mut Graph, out: Var, weights: &Tensor) -> gfl_fad::Result<Var> {
    let w = g.constant(weights.clone())?;
    let m = g.mul(out, w)?;
    g.sum(m)
}

fn bound(names: &[String], vars: &[Var]) -> Bound {
    Bound::from_vars(names.iter().cloned().zip(vars.iter().copied()))
}

fn gradient_integrity(r: &mut Report) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let mut errs: Vec<(&str, f64)> = Vec::new();

    // Patch projection with positions: 2 x 3 grid of 4-pixel patches to 8.
    {
        let grid = PatchGrid {
            patches: random_tensor(&mut rng, &[6, 4], 2.0),
            f_count: 2,
            t_count: 3,
            patch_h: 2,
            patch_w: 2,
        };
        let w = random_tensor(&mut rng, &[4, 8], 1.0);
        let out_w = random_tensor(&mut rng, &[6, 8], 1.0);
        let err = grad_check_many(
            |g, v| {
                let e = embed_with_pos(g, &grid, v[0])?;
                let sq = g.mul(e.x_p, e.x_p)?;
                probe(g, sq, &out_w)
            },
            &[w],
            FD_STEP,
        )
        .unwrap();
        errs.push(("patch projection", err));
    }

    // Encoder block (global attention) and decoder block (local window).
    for (name, window) in [("encoder block", None), ("decoder block", Some(1))] {
        let mut store = ParamStore::new();
        let block = TransformerBlock::init(&mut store, &mut rng, "b", 8, 2, 2).unwrap();
        let (names, mut points) = inflated(&store, &mut rng);
        points.push(random_tensor(&mut rng, &[6, 8], 1.0));
        let out_w = random_tensor(&mut rng, &[6, 8], 1.0);
        let mask = window.and_then(|w| local_attention_mask(2, 3, w));
        let err = grad_check_many(
            |g, v| {
                let (params, x) = v.split_at(v.len() - 1);
                let p = bound(&names, params);
                let y = block.forward(g, &p, x[0], mask.as_deref())?;
                probe(g, y, &out_w)
            },
            &points,
            FD_STEP,
        )
        .unwrap();
        errs.push((name, err));
    }

    // Fusion: BN [5, 8] queries against CRER [6, 4].
    {
        let mut store = ParamStore::new();
        let cfg = FusionConfig {
            d_model: 8,
            heads: 2,
            layers: 1,
            mlp_ratio: 2,
        };
        let fusion = Fusion::init(&mut store, &mut rng, &cfg, 8, 4).unwrap();
        let (names, mut points) = inflated(&store, &mut rng);
        points.push(random_tensor(&mut rng, &[5, 8], 1.0));
        points.push(random_tensor(&mut rng, &[6, 4], 1.0));
        let out_w = random_tensor(&mut rng, &[5, 8], 1.0);
        let err = grad_check_many(
            |g, v| {
                let (params, x) = v.split_at(v.len() - 2);
                let p = bound(&names, params);
                let f = fusion.fuse(g, &p, x[0], x[1])?;
                probe(g, f.values, &out_w)
            },
            &points,
            FD_STEP,
        )
        .unwrap();
        errs.push(("fusion block", err));
    }

    // Classifier head with cross-entropy over two samples.
    {
        let mut store = ParamStore::new();
        let head = ClassifierHead::init(&mut store, &mut rng, HeadKind::PooledMlp, 4);
        let (names, mut points) = inflated(&store, &mut rng);
        points.push(random_tensor(&mut rng, &[3, 4], 1.0));
        points.push(random_tensor(&mut rng, &[5, 4], 1.0));
        let err = grad_check_many(
            |g, v| {
                let (params, x) = v.split_at(v.len() - 2);
                let p = bound(&names, params);
                let logits = head.classify(g, &p, x)?;
                ce_loss(g, logits, &[Label::Genuine, Label::Spoof], None)
            },
            &points,
            FD_STEP,
        )
        .unwrap();
        errs.push(("classifier head", err));
    }

    let secs = start.elapsed().as_secs_f64();
    let worst = errs.iter().map(|e| e.1).fold(0.0, f64::max);
    let detail = errs
        .iter()
        .map(|(n, e)| format!("{n} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    r.check(
        "gradient_integrity",
        worst < GRAD_TOL && secs < GRAD_BUDGET_S,
        format!("{detail}; max {worst:.1e} < {GRAD_TOL:.0e}, {secs:.1}s < {GRAD_BUDGET_S}s"),
    );
}

fn toy_config() -> TrainConfig {
    let mut cfg = TrainConfig::desk();
    for (k, v) in [
        ("epochs", "2"),
        ("batch_size", "4"),
        ("embed_dim", "8"),
        ("dec_dim", "8"),
        ("heads", "2"),
        ("fusion_dim", "8"),
        ("fusion_heads", "2"),
        ("mel_bands", "16"),
        ("patch_h", "4"),
        ("patch_w", "4"),
        ("crop_samples", "4000"),
        ("seeds", "0"),
    ] {
        cfg.set(k, v).unwrap();
    }
    cfg
}

fn toy_data(cfg: &TrainConfig, n_genuine: usize, n_spoof: usize, seed: u64) -> Vec<Prepared> {
    let corpus = synth_corpus(&SynthConfig {
        n_genuine,
        n_spoof,
        duration_s: 0.25,
        seed,
        ..SynthConfig::default()
    })
    .unwrap();
    prepare(&corpus, cfg).unwrap()
}

/// Gradients of `l_total` for `batch`, with nothing frozen, by parameter
/// name.
fn batch_grads(
    model: &GflModel,
    store: &ParamStore,
    cfg: &TrainConfig,
    batch: &[&Prepared],
    seed: u64,
) -> Vec<(String, Tensor)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let parts: Vec<MaskPartition> = batch
        .iter()
        .map(|b| {
            sample_mask_with_policy(
                b.grid.f_count,
                b.grid.t_count,
                cfg.mask_ratio,
                cfg.mask_policy,
                &mut rng,
            )
            .unwrap()
        })
        .collect();
    let mut g = Graph::new();
    let p = store.bind(&mut g, |_| false).unwrap();
    let out = model
        .forward_batch(&mut g, &p, batch, &parts, cfg.effective_alpha(), None)
        .unwrap();
    let grads = g.backward(out.l_total).unwrap();
    p.iter()
        .map(|(n, v)| (n.to_string(), grads.wrt(v).clone()))
        .collect()
}

fn genuine_focus(r: &mut Report) {
    let start = Instant::now();
    let cfg = toy_config();
    let data = toy_data(&cfg, 2, 4, 7);
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let model = GflModel::init(&mut store, &mut rng, &cfg).unwrap();
    let head = &model.mae.decoder.pixel_head;
    let head_names: Vec<&str> = std::iter::once(head.weight.as_str())
        .chain(head.bias.as_deref())
        .collect();
    let head_abs = |grads: &[(String, Tensor)]| -> f64 {
        grads
            .iter()
            .filter(|(n, _)| head_names.contains(&n.as_str()))
            .flat_map(|(_, t)| t.data().iter().map(|v| v.abs()))
            .sum()
    };
    let spoof: Vec<&Prepared> = data.iter().filter(|d| !d.label.is_genuine()).collect();
    let mixed: Vec<&Prepared> = data.iter().skip(1).take(4).collect();
    let all_spoof = head_abs(&batch_grads(&model, &store, &cfg, &spoof, 1));
    let with_genuine = head_abs(&batch_grads(&model, &store, &cfg, &mixed, 1));
    let secs = start.elapsed().as_secs_f64();
    r.check(
        "genuine_focus",
        all_spoof == 0.0 && with_genuine > 0.0 && secs < FOCUS_BUDGET_S,
        format!("pixel head |grad| all-spoof {all_spoof:e}, mixed {with_genuine:.3e}, {secs:.2}s < {FOCUS_BUDGET_S}s"),
    );
}

fn masked_only_reconstruction(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let mut worst = 0.0f64;
    let mut trials = 0;
    for n in [4usize, 10, 50] {
        for ratio in [0.1, 0.3, 0.7] {
            let part =
                sample_mask_with_policy(1, n, ratio, MaskPolicy::Unstructured, &mut rng).unwrap();
            if part.masked.is_empty() {
                continue;
            }
            let pred = random_tensor(&mut rng, &[n, 6], 2.0);
            let target = random_tensor(&mut rng, &[n, 6], 2.0);
            let loss = |pred: &Tensor, target: &Tensor| {
                let mut g = Graph::new();
                let pv = g.constant(pred.clone()).unwrap();
                let l = recon_loss_per_sample(&mut g, pv, target, &part).unwrap();
                g.value(l).item()
            };
            let base = loss(&pred, &target);
            let (mut p2, mut t2) = (pred.clone(), target.clone());
            for &i in &part.visible {
                for c in 0..6 {
                    p2.data_mut()[i * 6 + c] += rng.random_range(-100.0..100.0);
                    t2.data_mut()[i * 6 + c] -= rng.random_range(-100.0..100.0);
                }
            }
            worst = worst.max((loss(&p2, &t2) - base).abs());
            trials += 1;
        }
    }
    r.check(
        "masked_only_reconstruction",
        worst == 0.0,
        format!("max change {worst:e} over {trials} perturbed visible sets"),
    );
}

fn mask_accounting(r: &mut Report) {
    let cfg = MaeConfig {
        patch_pixels: 4,
        enc_layers: 1,
        dec_layers: 1,
        embed_dim: 8,
        dec_dim: 8,
        heads: 2,
        local_window: 1,
        mlp_ratio: 2,
    };
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    let mae = MaskedAutoencoder::init(&mut store, &mut rng, &cfg).unwrap();
    let mut bad = Vec::new();
    let mut cases = 0;
    for (n, f, t) in [(10usize, 2usize, 5usize), (208, 8, 26), (500, 10, 50)] {
        let grid = PatchGrid {
            patches: random_tensor(&mut rng, &[n, 4], 1.0),
            f_count: f,
            t_count: t,
            patch_h: 2,
            patch_w: 2,
        };
        for ratio in [0.0, 0.1, 0.3, 0.7] {
            let want = (ratio * n as f64).round() as usize;
            for policy in [MaskPolicy::Unstructured, MaskPolicy::Time, MaskPolicy::Freq] {
                let part = sample_mask_with_policy(f, t, ratio, policy, &mut rng).unwrap();
                let mut g = Graph::new();
                let p = store.bind(&mut g, |_| false).unwrap();
                let x = mae.embed(&mut g, &p, &grid).unwrap();
                let bn = mae.encode(&mut g, &p, &x, &part).unwrap();
                let rows = g.shape(bn.values)[0];
                cases += 1;
                if part.masked.len() != want
                    || mask_count(n, ratio).unwrap() != want
                    || rows != n - want
                {
                    bad.push(format!(
                        "N={n} rho={ratio} {policy:?}: masked {} rows {rows}",
                        part.masked.len()
                    ));
                }
            }
        }
    }
    r.check(
        "mask_accounting",
        bad.is_empty(),
        if bad.is_empty() {
            format!("{cases} cases, |masked| = round(rho N), encoder rows = N - |masked|")
        } else {
            bad.join("; ")
        },
    );
}

/// `(frr, far)` at threshold `t` by direct counting.
fn rates_at(genuine: &[f64], spoof: &[f64], t: f64) -> (f64, f64) {
    let frr = genuine.iter().filter(|&&s| s < t).count() as f64 / genuine.len() as f64;
    let far = spoof.iter().filter(|&&s| s >= t).count() as f64 / spoof.len() as f64;
    (frr, far)
}

/// Every distinct score and `+inf` as thresholds, each point counted from
/// scratch.
fn brute_points(genuine: &[f64], spoof: &[f64]) -> Vec<(f64, f64, f64)> {
    let mut ts: Vec<f64> = genuine.iter().chain(spoof).copied().collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    ts.push(f64::INFINITY);
    ts.into_iter()
        .map(|t| {
            let (frr, far) = rates_at(genuine, spoof, t);
            (t, frr, far)
        })
        .collect()
}

fn brute_eer(genuine: &[f64], spoof: &[f64]) -> f64 {
    let pts = brute_points(genuine, spoof);
    for k in 0..pts.len() {
        let (_, frr1, far1) = pts[k];
        let d1 = far1 - frr1;
        if d1 == 0.0 {
            return frr1;
        }
        if d1 < 0.0 {
            let (_, frr0, far0) = pts[k - 1];
            let d0 = far0 - frr0;
            return frr0 + d0 / (d0 - d1) * (frr1 - frr0);
        }
    }
    unreachable!("far reaches 0 while frr reaches 1")
}

fn brute_tdcf(genuine: &[f64], spoof: &[f64], c1: f64, c2: f64) -> f64 {
    let norm = c1.min(c2);
    let mut best = c2 / norm;
    for (_, frr, far) in brute_points(genuine, spoof) {
        best = best.min((c1 * frr + c2 * far) / norm);
    }
    best
}

fn metric_oracles(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(400);
    let (mut eer_err, mut tdcf_err) = (0.0f64, 0.0f64);
    for _ in 0..METRIC_SETS {
        let ng = rng.random_range(1..=100);
        let ns = rng.random_range(1..=100);
        // Coarse grids produce ties, fine ones do not.
        let levels = if rng.random_bool(0.5) { 8.0 } else { 1e6 };
        let mut draw =
            |shift: f64| ((rng.random_range(-1.0..1.0) + shift) * levels).round() / levels;
        let genuine: Vec<f64> = (0..ng).map(|_| draw(0.3)).collect();
        let spoof: Vec<f64> = (0..ns).map(|_| draw(-0.3)).collect();
        let (c1, c2) = (rng.random_range(0.1..10.0), rng.random_range(0.1..10.0));
        let ids: Vec<String> = (0..ng + ns).map(|i| format!("u{i}")).collect();
        let labels: Vec<Label> = (0..ng + ns)
            .map(|i| if i < ng { Label::Genuine } else { Label::Spoof })
            .collect();
        let scores: Vec<f64> = genuine.iter().chain(&spoof).copied().collect();
        let set = ScoreSet::labeled(&ids, &scores, &labels).unwrap();
        eer_err = eer_err.max((compute_eer(&set).unwrap().eer - brute_eer(&genuine, &spoof)).abs());
        let costs = TdcfCosts::new(c1, c2).unwrap();
        tdcf_err = tdcf_err.max(
            (compute_min_tdcf(&set, costs).unwrap() - brute_tdcf(&genuine, &spoof, c1, c2)).abs(),
        );
    }
    let third = eer(&[0.9, 0.8, 0.2], &[0.7, 0.3, 0.1]).unwrap().eer;
    let (frr, far) = rates_at(&[0.9, 0.8, 0.2], &[0.7, 0.3, 0.1], 0.5);
    r.check(
        "metric_oracles",
        eer_err <= METRIC_TOL && tdcf_err <= METRIC_TOL && third == 1.0 / 3.0 && frr == third && far == third,
        format!("{METRIC_SETS} sets: EER err {eer_err:.1e}, min t-DCF err {tdcf_err:.1e} (tol {METRIC_TOL:.0e}); worked example EER {third}"),
    );
}

fn loss_arithmetic(r: &mut Report) {
    let mut g = Graph::new();
    // Two masked patches of four pixels with residuals 1 and 3.
    let pred = g
        .constant(Tensor::from_rows(&[vec![1.0; 4], vec![3.0; 4], vec![7.0; 4]]).unwrap())
        .unwrap();
    let part = MaskPartition {
        masked: vec![0, 1],
        visible: vec![2],
    };
    let recon = recon_loss_per_sample(&mut g, pred, &Tensor::zeros([3, 4]), &part).unwrap();
    let s = |g: &mut Graph, v: f64| g.constant(Tensor::scalar(v)).unwrap();
    let (a, b) = (s(&mut g, 0.4), s(&mut g, 0.9));
    let gar_single = gar_loss(&mut g, &[a, b], &[Label::Genuine, Label::Spoof]).unwrap();
    let (a, b, c) = (s(&mut g, 0.2), s(&mut g, 0.6), s(&mut g, 1.0));
    let gar_mean = gar_loss(
        &mut g,
        &[a, b, c],
        &[Label::Genuine, Label::Genuine, Label::Spoof],
    )
    .unwrap();
    let (l_ce, l_gar) = (s(&mut g, 0.5), s(&mut g, 2.0));
    let total = total_loss(&mut g, l_ce, l_gar, 0.01).unwrap();
    let logits = g
        .constant(Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap())
        .unwrap();
    let ce = ce_loss(&mut g, logits, &[Label::Genuine], None).unwrap();
    let got = [
        ("recon", g.value(recon).item(), 5.0),
        ("gar single", g.value(gar_single).item(), 0.4),
        ("gar mean", g.value(gar_mean).item(), 0.4),
        ("total", g.value(total).item(), 0.52),
        ("ce uniform", g.value(ce).item(), std::f64::consts::LN_2),
    ];
    let worst = got
        .iter()
        .map(|(_, v, w)| (v - w).abs())
        .fold(0.0, f64::max);
    let detail = got
        .iter()
        .map(|(n, v, _)| format!("{n} {v}"))
        .collect::<Vec<_>>()
        .join(", ");
    r.check(
        "loss_arithmetic",
        worst <= LOSS_TOL,
        format!("{detail}; max err {worst:.1e}"),
    );
}

fn eer_of(t: &Trainer, data: &[Prepared]) -> f64 {
    compute_eer(&t.score(data).unwrap()).unwrap().eer
}

fn end_to_end(r: &mut Report) {
    let cfg = TrainConfig::desk();
    let start = Instant::now();
    let corpus = |seed| {
        synth_corpus(&SynthConfig {
            seed,
            ..SynthConfig::default()
        })
        .unwrap()
    };
    let train = prepare(&corpus(TRAIN_CORPUS_SEED), &cfg).unwrap();
    let held = prepare(&corpus(HELD_CORPUS_SEED), &cfg).unwrap();
    let mut passing = 0;
    let mut lines = Vec::new();
    let mut decreases = Vec::new();
    for seed in E2E_SEEDS {
        let t = train_run(&cfg, seed, &train, None, None).unwrap();
        let (tr, he) = (eer_of(&t, &train), eer_of(&t, &held));
        let ok = tr <= TRAIN_EER_MAX && he <= HELD_EER_MAX;
        passing += usize::from(ok);
        lines.push(format!("seed {seed}: train {tr:.3}, held-out {he:.3}"));
        let (first, last) = (t.log[0].l_total, t.log[t.log.len() - 1].l_total);
        decreases.push((seed, first, last));
    }
    let secs = start.elapsed().as_secs_f64();
    r.check(
        "end_to_end_learning",
        passing >= E2E_MIN_PASSING,
        format!(
            "{}; {passing}/{} seeds within train <= {TRAIN_EER_MAX}, held-out <= {HELD_EER_MAX}",
            lines.join("; "),
            E2E_SEEDS.len()
        ),
    );
    r.check(
        "end_to_end_runtime",
        secs <= E2E_BUDGET_S,
        format!(
            "{secs:.0}s for {} seeds x {} epochs on {} utterances, budget {E2E_BUDGET_S}s",
            E2E_SEEDS.len(),
            cfg.epochs,
            train.len()
        ),
    );
    r.check(
        "loss_decrease",
        decreases.iter().all(|&(_, first, last)| last < first),
        decreases
            .iter()
            .map(|(s, f, l)| format!("seed {s}: epoch 1 {f:.4} -> epoch {} {l:.4}", cfg.epochs))
            .collect::<Vec<_>>()
            .join("; "),
    );
}

fn parse_csv(text: &str) -> Option<Vec<(f64, f64, f64)>> {
    let mut lines = text.lines();
    if lines.next()? != SWEEP_HEADER {
        return None;
    }
    lines
        .map(|l| {
            let f: Vec<f64> = l
                .split(',')
                .map(|x| x.parse().ok())
                .collect::<Option<_>>()?;
            (f.len() == 3 && f.iter().all(|v| v.is_finite())).then(|| (f[0], f[1], f[2]))
        })
        .collect()
}

fn ablation_sweeps(r: &mut Report) {
    let mut cfg = toy_config();
    cfg.set("epochs", "1").unwrap();
    cfg.set("tdcf_c1", "1").unwrap();
    cfg.set("tdcf_c2", "10").unwrap();
    let train = toy_data(&cfg, 4, 8, 11);
    let eval = toy_data(&cfg, 4, 8, 12);
    let mut notes = Vec::new();
    let mut ok = true;
    for (axis, name, values) in [
        (SweepAxis::Alpha, "alpha", vec![1.0, 0.1, 0.01]),
        (SweepAxis::MaskRatio, "mask_ratio", vec![0.1, 0.3, 0.5, 0.7]),
    ] {
        let rows = sweep(&cfg, axis, &values, &train, &eval, None).unwrap();
        let parsed = parse_csv(&format_sweep(&rows));
        let good = parsed.as_ref().is_some_and(|p| {
            p.len() == values.len() && p.iter().zip(&values).all(|(row, v)| row.0 == *v)
        });
        ok &= good;
        notes.push(format!("{name} {} rows", parsed.map_or(0, |p| p.len())));
    }
    r.check(
        "ablation_sweeps",
        ok,
        format!("{}, header {SWEEP_HEADER}", notes.join(", ")),
    );
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

fn determinism(r: &mut Report) {
    let cfg = toy_config();
    let data = toy_data(&cfg, 3, 5, 13);
    let tmp = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let dir = tmp.path().join(name);
        std::fs::create_dir_all(&dir).unwrap();
        train_run(&cfg, 5, &data, Some(&data), Some(&dir)).unwrap();
        dir_bytes(&dir)
    };
    let (a, b) = (run("a"), run("b"));
    let names: Vec<&str> = a.iter().map(|f| f.0.as_str()).collect();
    r.check(
        "determinism",
        a == b && names.iter().any(|n| n.ends_with(".ckpt")) && names.contains(&"train_log.csv"),
        format!(
            "{} files bit-identical across two runs: {}",
            a.len(),
            names.join(" ")
        ),
    );
}

fn checkpoint_round_trip(r: &mut Report) {
    let cfg = toy_config();
    let data = toy_data(&cfg, 3, 6, 14);
    let tmp = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(&cfg, 9).unwrap();
    t.run_epoch(&data, None).unwrap();
    t.train_step(&data).unwrap();
    let path = tmp.path().join("mid.ckpt");
    t.save(&path).unwrap();
    let mut resumed = Trainer::load(&path).unwrap();
    let la = t.train_step(&data).unwrap();
    let lb = resumed.train_step(&data).unwrap();
    let (pa, pb) = (tmp.path().join("a.ckpt"), tmp.path().join("b.ckpt"));
    t.save(&pa).unwrap();
    resumed.save(&pb).unwrap();
    let same = std::fs::read(&pa).unwrap() == std::fs::read(&pb).unwrap();
    r.check(
        "checkpoint_round_trip",
        same && la.l_total.to_bits() == lb.l_total.to_bits(),
        format!(
            "resumed at epoch {} step {}: l_total {} vs {}, checkpoints identical: {same}",
            t.epoch,
            t.step - 1,
            la.l_total,
            lb.l_total
        ),
    );
}

fn ablation_wiring(r: &mut Report) {
    let mut cfg = toy_config();
    cfg.disable_crer_branch = true;
    let data = toy_data(&cfg, 2, 2, 15);
    let batch: Vec<&Prepared> = data.iter().collect();
    let mut store = ParamStore::new();
    let model = GflModel::init(&mut store, &mut ChaCha8Rng::seed_from_u64(16), &cfg).unwrap();
    let grads = batch_grads(&model, &store, &cfg, &batch, 2);
    let decoder_abs: f64 = grads
        .iter()
        .filter(|(n, _)| n.starts_with("decoder."))
        .flat_map(|(_, t)| t.data().iter().map(|v| v.abs()))
        .sum();
    let decoder_frozen = store
        .iter()
        .filter(|(n, _)| n.starts_with("decoder."))
        .all(|(n, _)| model.is_frozen(&cfg, n));
    let encoder_abs: f64 = grads
        .iter()
        .filter(|(n, _)| n.starts_with("encoder."))
        .flat_map(|(_, t)| t.data().iter().map(|v| v.abs()))
        .sum();

    // Without BN, the query projection of BN features is unreachable.
    let mut cfg_en = toy_config();
    cfg_en.disable_bn_branch = true;
    let mut store_en = ParamStore::new();
    let model_en =
        GflModel::init(&mut store_en, &mut ChaCha8Rng::seed_from_u64(17), &cfg_en).unwrap();
    let grads_en = batch_grads(&model_en, &store_en, &cfg_en, &batch, 3);
    let q_abs: f64 = grads_en
        .iter()
        .filter(|(n, _)| n.starts_with("fusion.q_proj."))
        .flat_map(|(_, t)| t.data().iter().map(|v| v.abs()))
        .sum();
    let head_abs: f64 = grads_en
        .iter()
        .filter(|(n, _)| n.starts_with("decoder.pixel_head."))
        .flat_map(|(_, t)| t.data().iter().map(|v| v.abs()))
        .sum();
    r.check(
        "ablation_wiring",
        decoder_abs == 0.0 && decoder_frozen && encoder_abs > 0.0 && q_abs == 0.0 && head_abs > 0.0,
        format!(
            "w/o DE: decoder |grad| {decoder_abs:e}, encoder |grad| {encoder_abs:.2e}; w/o EN: BN query projection |grad| {q_abs:e}, decoder pixel head |grad| {head_abs:.2e}"
        ),
    );
}

#[test]
fn acceptance() {
    let mut r = Report::default();
    gradient_integrity(&mut r);
    genuine_focus(&mut r);
    masked_only_reconstruction(&mut r);
    mask_accounting(&mut r);
    metric_oracles(&mut r);
    loss_arithmetic(&mut r);
    ablation_sweeps(&mut r);
    determinism(&mut r);
    checkpoint_round_trip(&mut r);
    ablation_wiring(&mut r);
    end_to_end(&mut r);
    assert!(r.failed.is_empty(), "failed criteria: {:?}", r.failed);
}
