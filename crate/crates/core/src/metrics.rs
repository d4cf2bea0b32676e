//! Equal error rate, minimum normalized t-DCF, and score files.
//!
//! Higher scores mean "more likely genuine"; an utterance is accepted as
//! genuine at threshold `t` when `score >= t`.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::data::Label;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreEntry {
    pub utterance_id: String,
    pub score: f64,
    pub label: Option<Label>,
}

/// Scored utterances with unique ids and finite scores.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreSet {
    entries: Vec<ScoreEntry>,
}

impl ScoreSet {
    pub fn new(entries: Vec<ScoreEntry>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if !e.score.is_finite() {
                return Err(Error::invalid(format!(
                    "score for {} is not finite",
                    e.utterance_id
                )));
            }
            if !seen.insert(e.utterance_id.as_str()) {
                return Err(Error::invalid(format!(
                    "duplicate utterance id {}",
                    e.utterance_id
                )));
            }
        }
        Ok(Self { entries })
    }

    /// Builds a labeled set from parallel slices.
    pub fn labeled(ids: &[String], scores: &[f64], labels: &[Label]) -> Result<Self> {
        if ids.len() != scores.len() || ids.len() != labels.len() {
            return Err(Error::invalid("ids, scores and labels differ in length"));
        }
        Self::new(
            ids.iter()
                .zip(scores)
                .zip(labels)
                .map(|((id, &score), &label)| ScoreEntry {
                    utterance_id: id.clone(),
                    score,
                    label: Some(label),
                })
                .collect(),
        )
    }

    pub fn entries(&self) -> &[ScoreEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Fills labels from an id → label map; every id must be present.
    pub fn attach_labels(&mut self, labels: &HashMap<String, Label>) -> Result<()> {
        for e in &mut self.entries {
            e.label = Some(
                *labels
                    .get(&e.utterance_id)
                    .ok_or_else(|| Error::invalid(format!("no label for {}", e.utterance_id)))?,
            );
        }
        Ok(())
    }

    /// Genuine and spoof scores. Errors if any label is missing or either
    /// class is empty.
    pub fn split(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let (mut genuine, mut spoof) = (Vec::new(), Vec::new());
        for e in &self.entries {
            match e.label {
                Some(Label::Genuine) => genuine.push(e.score),
                Some(Label::Spoof) => spoof.push(e.score),
                None => {
                    return Err(Error::invalid(format!(
                        "score for {} has no label",
                        e.utterance_id
                    )))
                }
            }
        }
        if genuine.is_empty() || spoof.is_empty() {
            return Err(Error::SingleClass { what: "score set" });
        }
        Ok((genuine, spoof))
    }
}

/// Operating points `(threshold, frr, far)` at every distinct score in
/// ascending order, followed by `+inf`.
pub fn operating_points(genuine: &[f64], spoof: &[f64]) -> Vec<(f64, f64, f64)> {
    let mut all: Vec<(f64, bool)> = genuine
        .iter()
        .map(|&s| (s, true))
        .chain(spoof.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (ng, ns) = (genuine.len() as f64, spoof.len() as f64);
    let (mut g_below, mut s_below) = (0usize, 0usize);
    let mut out = Vec::new();
    let mut i = 0;
    while i < all.len() {
        let t = all[i].0;
        out.push((t, g_below as f64 / ng, (spoof.len() - s_below) as f64 / ns));
        while i < all.len() && all[i].0 == t {
            if all[i].1 {
                g_below += 1;
            } else {
                s_below += 1;
            }
            i += 1;
        }
    }
    out.push((f64::INFINITY, 1.0, 0.0));
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Eer {
    pub eer: f64,
    pub threshold: f64,
}

/// Interpolated EER. At the first operating point where `far - frr` stops
/// being positive, the exact rate is returned if the two are equal;
/// otherwise both rates are interpolated linearly from the previous point
/// to where they cross.
pub fn eer(genuine: &[f64], spoof: &[f64]) -> Result<Eer> {
    if genuine.is_empty() || spoof.is_empty() {
        return Err(Error::SingleClass { what: "EER" });
    }
    if genuine.iter().chain(spoof).any(|s| !s.is_finite()) {
        return Err(Error::invalid("scores must be finite"));
    }
    let pts = operating_points(genuine, spoof);
    // pts[0] has frr = 0 and far = 1, so the crossing index k is >= 1.
    let k = pts
        .iter()
        .position(|&(_, frr, far)| far - frr <= 0.0)
        .expect("+inf point has far < frr");
    let (t1, frr1, far1) = pts[k];
    let d1 = far1 - frr1;
    if d1 == 0.0 {
        return Ok(Eer {
            eer: frr1,
            threshold: t1,
        });
    }
    let (t0, frr0, far0) = pts[k - 1];
    let d0 = far0 - frr0;
    let lambda = d0 / (d0 - d1);
    let threshold = if t1.is_finite() {
        t0 + lambda * (t1 - t0)
    } else {
        t0
    };
    Ok(Eer {
        eer: frr0 + lambda * (frr1 - frr0),
        threshold,
    })
}

pub fn compute_eer(scores: &ScoreSet) -> Result<Eer> {
    let (g, s) = scores.split()?;
    eer(&g, &s)
}

/// Costs of a countermeasure miss (`c1`) and false alarm (`c2`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TdcfCosts {
    pub c1: f64,
    pub c2: f64,
}

impl TdcfCosts {
    pub fn new(c1: f64, c2: f64) -> Result<Self> {
        if !(c1 > 0.0 && c2 > 0.0 && c1.is_finite() && c2.is_finite()) {
            return Err(Error::invalid(format!(
                "t-DCF costs must be positive, got {c1} and {c2}"
            )));
        }
        Ok(Self { c1, c2 })
    }
}

/// `min_t (c1 * Pmiss(t) + c2 * Pfa(t)) / min(c1, c2)` over every distinct
/// score and `±inf`.
pub fn min_tdcf(genuine: &[f64], spoof: &[f64], costs: TdcfCosts) -> Result<f64> {
    if genuine.is_empty() || spoof.is_empty() {
        return Err(Error::SingleClass { what: "t-DCF" });
    }
    let costs = TdcfCosts::new(costs.c1, costs.c2)?;
    let norm = costs.c1.min(costs.c2);
    // Threshold -inf accepts everything: Pmiss = 0, Pfa = 1.
    let mut best = costs.c2 / norm;
    for (_, p_miss, p_fa) in operating_points(genuine, spoof) {
        best = best.min((costs.c1 * p_miss + costs.c2 * p_fa) / norm);
    }
    Ok(best)
}

pub fn compute_min_tdcf(scores: &ScoreSet, costs: TdcfCosts) -> Result<f64> {
    let (g, s) = scores.split()?;
    min_tdcf(&g, &s, costs)
}

/// `utterance_id score` lines. Scores use the shortest representation that
/// reads back to the same value.
pub fn format_scores(scores: &ScoreSet) -> String {
    let mut s = String::new();
    for e in scores.entries() {
        writeln!(s, "{} {}", e.utterance_id, e.score).expect("writing to a String");
    }
    s
}

pub fn write_scores(path: impl AsRef<Path>, scores: &ScoreSet) -> Result<()> {
    std::fs::write(path, format_scores(scores))?;
    Ok(())
}

pub fn parse_scores_str(text: &str, origin: &str) -> Result<ScoreSet> {
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let err = |msg: String| Error::Parse {
            path: origin.to_string(),
            line: i + 1,
            msg,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            [] => continue,
            [id, score] => {
                let score: f64 = score
                    .parse()
                    .map_err(|_| err(format!("bad score {score:?}")))?;
                if !score.is_finite() {
                    return Err(err(format!("score {score} is not finite")));
                }
                if !seen.insert(id.to_string()) {
                    return Err(err(format!("duplicate utterance id {id}")));
                }
                entries.push(ScoreEntry {
                    utterance_id: id.to_string(),
                    score,
                    label: None,
                });
            }
            _ => {
                return Err(err(format!(
                    "expected \"utterance_id score\", found {} fields",
                    fields.len()
                )))
            }
        }
    }
    ScoreSet::new(entries)
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<ScoreSet> {
    let path = path.as_ref();
    parse_scores_str(&std::fs::read_to_string(path)?, &path.display().to_string())
}

/// `metric,value` CSV.
pub fn format_metrics(rows: &[(&str, f64)]) -> String {
    let mut s = String::from("metric,value\n");
    for (name, value) in rows {
        writeln!(s, "{name},{value}").expect("writing to a String");
    }
    s
}
