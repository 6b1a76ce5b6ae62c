//! Next-event correctness metrics and the chronological evaluation split.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::ops::Deref;
use serde::{Deserialize, Serialize};

use crate::bkt::{fit_parameters, skill_sequences, trace_student, BktParams, FitConfig, FitResult};
use crate::error::{Error, Result};
use crate::event::SignalEvent;

/// Probabilities are clipped into `[NLL_CLIP, 1 - NLL_CLIP]` before logs.
pub const NLL_CLIP: f64 = 1e-9;

/// `(predicted probability, observed label)` pairs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictionSet(Vec<(f64, bool)>);

impl PredictionSet {
    pub fn new(pairs: Vec<(f64, bool)>) -> Result<Self> {
        if let Some((p, _)) = pairs.iter().find(|(p, _)| !p.is_finite() || !(0.0..=1.0).contains(p)) {
            return Err(Error::ParameterDomain(format!("prediction {p} not a probability")));
        }
        Ok(Self(pairs))
    }

    pub fn positives(&self) -> usize {
        self.0.iter().filter(|(_, y)| *y).count()
    }

    pub fn into_inner(self) -> Vec<(f64, bool)> {
        self.0
    }
}

impl Deref for PredictionSet {
    type Target = [(f64, bool)];
    fn deref(&self) -> &[(f64, bool)] {
        &self.0
    }
}

fn nonempty(set: &[(f64, bool)]) -> Result<()> {
    if set.is_empty() {
        Err(Error::EmptySet)
    } else {
        Ok(())
    }
}

/// Fraction of pairs where `p >= threshold` agrees with the label.
pub fn accuracy(set: &[(f64, bool)], threshold: f64) -> Result<f64> {
    nonempty(set)?;
    let hits = set.iter().filter(|(p, y)| (*p >= threshold) == *y).count();
    Ok(hits as f64 / set.len() as f64)
}

/// Probability that a random positive scores above a random negative, ties
/// counting one half. Computed from average ranks.
pub fn auc_roc(set: &[(f64, bool)]) -> Result<f64> {
    nonempty(set)?;
    let pos = set.iter().filter(|(_, y)| *y).count();
    let neg = set.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("AUC-ROC needs both classes"));
    }
    let mut sorted: Vec<(f64, bool)> = set.to_vec();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            j += 1;
        }
        // ranks i+1 ..= j share their mean
        let mean_rank = (i + 1 + j) as f64 / 2.0;
        let tied_pos = sorted[i..j].iter().filter(|(_, y)| *y).count();
        rank_sum += mean_rank * tied_pos as f64;
        i = j;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Average precision: precision at each distinct score threshold, weighted
/// by the recall gained there. No interpolation.
pub fn pr_auc(set: &[(f64, bool)]) -> Result<f64> {
    nonempty(set)?;
    let pos = set.iter().filter(|(_, y)| *y).count();
    if pos == 0 {
        return Err(Error::UndefinedMetric("PR-AUC needs at least one positive"));
    }
    let mut sorted: Vec<(f64, bool)> = set.to_vec();
    sorted.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            if sorted[j].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    Ok(ap)
}

pub fn rmse(set: &[(f64, bool)]) -> Result<f64> {
    nonempty(set)?;
    let se: f64 = set
        .iter()
        .map(|&(p, y)| {
            let d = p - y as u8 as f64;
            d * d
        })
        .sum();
    Ok((se / set.len() as f64).sqrt())
}

/// Binary cross-entropy of one prediction, with clipping.
pub fn log_loss(p: f64, y: bool) -> f64 {
    let p = p.clamp(NLL_CLIP, 1.0 - NLL_CLIP);
    if y {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

pub fn nll(set: &[(f64, bool)]) -> Result<f64> {
    nonempty(set)?;
    Ok(set.iter().map(|&(p, y)| log_loss(p, y)).sum::<f64>() / set.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    /// `None` when the set holds a single class.
    pub auc_roc: Option<f64>,
    /// `None` when the set holds no positives.
    pub pr_auc: Option<f64>,
    pub rmse: f64,
    pub nll: f64,
    pub n: usize,
    pub positives: usize,
}

impl MetricReport {
    /// All five metrics; ranking metrics are left undefined rather than
    /// failing the whole report.
    pub fn compute(set: &[(f64, bool)]) -> Result<Self> {
        nonempty(set)?;
        let undefined_ok = |r: Result<f64>| match r {
            Ok(v) => Ok(Some(v)),
            Err(Error::UndefinedMetric(_)) => Ok(None),
            Err(e) => Err(e),
        };
        Ok(Self {
            accuracy: accuracy(set, 0.5)?,
            auc_roc: undefined_ok(auc_roc(set))?,
            pr_auc: undefined_ok(pr_auc(set))?,
            rmse: rmse(set)?,
            nll: nll(set)?,
            n: set.len(),
            positives: set.iter().filter(|(_, y)| *y).count(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Leading share of each student's events used for fitting.
    pub train_fraction: f64,
    pub fit: FitConfig,
    /// Used for skills that never occur in a training prefix.
    pub fallback: BktParams,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            fit: FitConfig::default(),
            fallback: BktParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: MetricReport,
    pub fits: BTreeMap<String, FitResult>,
    pub predictions: PredictionSet,
}

/// Orders each student's events by timestamp (stable) and splits them at
/// `floor(train_fraction * len)`.
fn chronological_split(events: &[SignalEvent], train_fraction: f64) -> Result<Vec<(Vec<SignalEvent>, usize)>> {
    if !(train_fraction > 0.0 && train_fraction <= 1.0) {
        return Err(Error::InvalidSplit(format!(
            "train fraction {train_fraction} not in (0, 1]"
        )));
    }
    let mut per_student: BTreeMap<&str, Vec<SignalEvent>> = BTreeMap::new();
    for ev in events {
        per_student.entry(ev.student_id.as_str()).or_default().push(ev.clone());
    }
    Ok(per_student
        .into_values()
        .map(|mut evs| {
            evs.sort_by_key(|e| e.timestamp);
            let cut = (train_fraction * evs.len() as f64).floor() as usize;
            (evs, cut)
        })
        .collect())
}

/// Collects test-portion predictions: every student's full history is traced
/// so test predictions condition on the training prefix.
fn test_predictions(
    split: &[(Vec<SignalEvent>, usize)],
    params: &BTreeMap<String, BktParams>,
    fallback: &BktParams,
) -> Result<PredictionSet> {
    let mut pairs = Vec::new();
    for (evs, cut) in split {
        let mut table = params.clone();
        for ev in evs {
            for s in &ev.skill_ids {
                table.entry(s.clone()).or_insert(*fallback);
            }
        }
        let traj = trace_student(evs, &table)?;
        pairs.extend(traj.event_predictions().into_iter().skip(*cut));
    }
    if pairs.is_empty() {
        return Err(Error::InvalidSplit("test split is empty".into()));
    }
    PredictionSet::new(pairs)
}

/// Scores fixed parameters on the test portion of the split.
pub fn score_params(
    events: &[SignalEvent],
    params: &BTreeMap<String, BktParams>,
    train_fraction: f64,
) -> Result<MetricReport> {
    let split = chronological_split(events, train_fraction)?;
    let set = test_predictions(&split, params, &BktParams::default())?;
    MetricReport::compute(&set)
}

/// Fits every skill on training prefixes and scores next-event predictions
/// on the held-out suffixes.
pub fn evaluate_model(events: &[SignalEvent], cfg: &EvalConfig) -> Result<Evaluation> {
    let split = chronological_split(events, cfg.train_fraction)?;
    if split.iter().all(|(evs, cut)| *cut == evs.len()) {
        return Err(Error::InvalidSplit("test split is empty".into()));
    }
    let train: Vec<SignalEvent> = split
        .iter()
        .flat_map(|(evs, cut)| evs[..*cut].iter().cloned())
        .collect();
    let mut fits = BTreeMap::new();
    for (skill, seqs) in skill_sequences(&train) {
        fits.insert(skill, fit_parameters(&seqs, &cfg.fit)?);
    }
    let params: BTreeMap<String, BktParams> = fits.iter().map(|(k, f)| (k.clone(), f.params)).collect();
    let predictions = test_predictions(&split, &params, &cfg.fallback)?;
    Ok(Evaluation {
        report: MetricReport::compute(&predictions)?,
        fits,
        predictions,
    })
}
