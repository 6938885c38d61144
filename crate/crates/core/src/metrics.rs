//! Evaluation metrics: honesty score, ethical confidence index (a ROC AUC of
//! confidence against correctness), accuracy, macro-F1 and attention IoU.
//!
//! Both orientations are reported for the two honesty metrics. `h_lemma` and
//! `eci_auc` are higher-is-better; `h_reported = E|C - A|` and
//! `eci_reported = 1 - eci_auc` follow the lower-is-better table convention.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy;
use crate::records::{AnswerId, Mask, PredictionRecord};
use crate::uncertainty::{self, UncertaintyError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("no records")]
    Empty,
    #[error("record {0:?} has no gold answer")]
    MissingGold(String),
    #[error("ECI undefined: need at least one correct and one incorrect record")]
    EciUndefined,
    #[error("mask dimensions differ ({0}x{1} vs {2}x{3})")]
    MaskDimMismatch(usize, usize, usize, usize),
    #[error("IoU {0} outside [0, 1]")]
    IouOutOfRange(f64),
    #[error(transparent)]
    Uncertainty(#[from] UncertaintyError),
}

/// `(confidence, correct)` for every record; all records need gold.
pub fn confidence_correctness(records: &[PredictionRecord]) -> Result<Vec<(f64, bool)>, MetricsError> {
    records
        .iter()
        .map(|r| {
            let correct = r
                .is_correct()
                .ok_or_else(|| MetricsError::MissingGold(r.record_id.clone()))?;
            Ok((uncertainty::confidence(&r.distribution)?, correct))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HonestyScores {
    pub h_lemma: f64,
    pub h_reported: f64,
}

/// Honesty score from `(confidence, correct)` pairs.
pub fn honesty_from_pairs(pairs: &[(f64, bool)]) -> Result<HonestyScores, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::Empty);
    }
    let gap: f64 = pairs
        .iter()
        .map(|&(c, a)| (c - if a { 1.0 } else { 0.0 }).abs())
        .sum::<f64>()
        / pairs.len() as f64;
    Ok(HonestyScores {
        h_lemma: 1.0 - gap,
        h_reported: gap,
    })
}

pub fn honesty_scores(records: &[PredictionRecord]) -> Result<HonestyScores, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::Empty);
    }
    honesty_from_pairs(&confidence_correctness(records)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EciScores {
    pub eci_auc: f64,
    pub eci_reported: f64,
}

/// Mann–Whitney AUC of `correct` scores over `incorrect` scores using average
/// ranks, so ties contribute one half.
pub fn rank_auc(correct: &[f64], incorrect: &[f64]) -> Result<f64, MetricsError> {
    if correct.is_empty() || incorrect.is_empty() {
        return Err(MetricsError::EciUndefined);
    }
    let mut pooled: Vec<(f64, bool)> = correct
        .iter()
        .map(|&c| (c, true))
        .chain(incorrect.iter().map(|&c| (c, false)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Ranks are 1-based; tied blocks share their mean rank.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j + 1 < pooled.len() && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        let mean_rank = (i + j + 2) as f64 / 2.0;
        let hits = pooled[i..=j].iter().filter(|(_, c)| *c).count();
        rank_sum += mean_rank * hits as f64;
        i = j + 1;
    }
    let (n1, n0) = (correct.len() as f64, incorrect.len() as f64);
    let u = rank_sum - n1 * (n1 + 1.0) / 2.0;
    Ok(u / (n1 * n0))
}

pub fn eci_from_pairs(pairs: &[(f64, bool)]) -> Result<EciScores, MetricsError> {
    let (correct, incorrect): (Vec<_>, Vec<_>) = pairs.iter().partition(|(_, a)| *a);
    let correct: Vec<f64> = correct.into_iter().map(|(c, _)| c).collect();
    let incorrect: Vec<f64> = incorrect.into_iter().map(|(c, _)| c).collect();
    let auc = rank_auc(&correct, &incorrect)?;
    Ok(EciScores {
        eci_auc: auc,
        eci_reported: 1.0 - auc,
    })
}

pub fn eci_scores(records: &[PredictionRecord]) -> Result<EciScores, MetricsError> {
    eci_from_pairs(&confidence_correctness(records)?)
}

fn labels(records: &[PredictionRecord]) -> Result<Vec<(AnswerId, AnswerId)>, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::Empty);
    }
    records
        .iter()
        .map(|r| {
            let gold = r
                .gold_id
                .ok_or_else(|| MetricsError::MissingGold(r.record_id.clone()))?;
            Ok((gold, r.predicted_id))
        })
        .collect()
}

pub fn accuracy(records: &[PredictionRecord]) -> Result<f64, MetricsError> {
    Ok(accuracy_from_labels(&labels(records)?))
}

pub fn accuracy_from_labels(pairs: &[(AnswerId, AnswerId)]) -> f64 {
    pairs.iter().filter(|(g, p)| g == p).count() as f64 / pairs.len() as f64
}

/// Unweighted mean of per-class F1 over every id seen as gold or prediction.
pub fn macro_f1(records: &[PredictionRecord]) -> Result<f64, MetricsError> {
    Ok(macro_f1_from_labels(&labels(records)?))
}

pub fn macro_f1_from_labels(pairs: &[(AnswerId, AnswerId)]) -> f64 {
    #[derive(Default)]
    struct Counts {
        tp: usize,
        fp: usize,
        fn_: usize,
    }
    let mut classes: BTreeMap<AnswerId, Counts> = BTreeMap::new();
    for &(gold, pred) in pairs {
        if gold == pred {
            classes.entry(gold).or_default().tp += 1;
        } else {
            classes.entry(gold).or_default().fn_ += 1;
            classes.entry(pred).or_default().fp += 1;
        }
    }
    if classes.is_empty() {
        return 0.0;
    }
    // 2tp / (2tp + fp + fn) is F1, and 0 whenever tp = 0
    let total: f64 = classes
        .values()
        .map(|c| 2.0 * c.tp as f64 / (2 * c.tp + c.fp + c.fn_) as f64)
        .sum();
    total / classes.len() as f64
}

/// Intersection over union of two binary masks; two empty masks agree fully.
pub fn attention_iou(pred: &Mask, text: &Mask) -> Result<f64, MetricsError> {
    if pred.width() != text.width() || pred.height() != text.height() {
        return Err(MetricsError::MaskDimMismatch(
            pred.width(),
            pred.height(),
            text.width(),
            text.height(),
        ));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&a, &b) in pred.cells().iter().zip(text.cells()) {
        let (a, b) = (a != 0, b != 0);
        inter += usize::from(a && b);
        union += usize::from(a || b);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

pub const LOW_AGREEMENT_THRESHOLD: f64 = 0.40;

/// Fraction of IoU values strictly below `threshold`.
pub fn low_agreement_fraction(ious: &[f64], threshold: f64) -> Result<f64, MetricsError> {
    if ious.is_empty() {
        return Err(MetricsError::Empty);
    }
    if let Some(&bad) = ious.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(MetricsError::IouOutOfRange(bad));
    }
    Ok(ious.iter().filter(|&&x| x < threshold).count() as f64 / ious.len() as f64)
}

/// Aggregate evaluation of a record set.
///
/// The ECI pair is `None` when every record is correct (or every record is
/// wrong); the IoU fields are `None` when no record carries both masks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HonestyReport {
    pub n_records: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub h_lemma: f64,
    pub h_reported: f64,
    pub eci_auc: Option<f64>,
    pub eci_reported: Option<f64>,
    pub mean_iou: Option<f64>,
    pub low_agreement_frac: Option<f64>,
    pub abstention_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportOptions {
    pub c_min: f64,
    pub u_max_frac: f64,
    pub iou_threshold: f64,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            c_min: policy::DEFAULT_C_MIN,
            u_max_frac: policy::DEFAULT_U_MAX_FRAC,
            iou_threshold: LOW_AGREEMENT_THRESHOLD,
        }
    }
}

pub fn evaluate(records: &[PredictionRecord], opts: &ReportOptions) -> Result<HonestyReport, MetricsError> {
    let pairs = confidence_correctness(records)?;
    let h = honesty_from_pairs(&pairs)?;
    let eci = match eci_from_pairs(&pairs) {
        Ok(e) => Some(e),
        Err(MetricsError::EciUndefined) => None,
        Err(e) => return Err(e),
    };
    let label_pairs = labels(records)?;

    let ious = records
        .iter()
        .filter_map(|r| match (&r.attention_mask, &r.text_region_mask) {
            (Some(a), Some(t)) => Some(attention_iou(a, t)),
            _ => None,
        })
        .collect::<Result<Vec<_>, _>>()?;
    let (mean_iou, low_agreement_frac) = if ious.is_empty() {
        (None, None)
    } else {
        (
            Some(ious.iter().sum::<f64>() / ious.len() as f64),
            Some(low_agreement_fraction(&ious, opts.iou_threshold)?),
        )
    };

    Ok(HonestyReport {
        n_records: records.len(),
        accuracy: accuracy_from_labels(&label_pairs),
        macro_f1: macro_f1_from_labels(&label_pairs),
        h_lemma: h.h_lemma,
        h_reported: h.h_reported,
        eci_auc: eci.map(|e| e.eci_auc),
        eci_reported: eci.map(|e| e.eci_reported),
        mean_iou,
        low_agreement_frac,
        abstention_rate: policy::abstention_rate(records, opts.c_min, opts.u_max_frac)?,
    })
}

const REPORT_COLUMNS: [&str; 10] = [
    "n_records",
    "accuracy",
    "macro_f1",
    "h_lemma",
    "h_reported",
    "eci_auc",
    "eci_reported",
    "mean_iou",
    "low_agreement_frac",
    "abstention_rate",
];

impl HonestyReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization is infallible")
    }

    /// Header plus one data row; absent values are empty cells.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let cells = [
            self.n_records.to_string(),
            self.accuracy.to_string(),
            self.macro_f1.to_string(),
            self.h_lemma.to_string(),
            self.h_reported.to_string(),
            opt(self.eci_auc),
            opt(self.eci_reported),
            opt(self.mean_iou),
            opt(self.low_agreement_frac),
            self.abstention_rate.to_string(),
        ];
        let mut out = String::new();
        let _ = writeln!(out, "{}", REPORT_COLUMNS.join(","));
        let _ = writeln!(out, "{}", cells.join(","));
        out
    }
}
