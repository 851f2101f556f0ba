//! Binary classification metrics: ROC-AUC, accuracy, TPR, TNR and the
//! balanced "average accuracy" `(TPR + TNR) / 2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Area under the ROC curve as the Mann–Whitney pair statistic: the share of
/// (positive, negative) pairs where the positive scores higher, ties counting
/// one half. Runs in O(n log n).
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Validation("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::AucUndefined(format!(
            "labels contain {n_pos} positives and {n_neg} negatives"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Twice the number of wins, so half-credit ties stay integral.
    let mut doubled_wins: u64 = 0;
    let mut negatives_below: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (mut pos, mut neg) = (0u64, 0u64);
        let mut j = i;
        while j < order.len() && scores[order[j]] == s {
            if labels[order[j]] {
                pos += 1;
            } else {
                neg += 1;
            }
            j += 1;
        }
        doubled_wins += 2 * pos * negatives_below + pos * neg;
        negatives_below += neg;
        i = j;
    }
    Ok(pair_fraction(doubled_wins, 2 * n_pos * n_neg))
}

/// `wins / pairs`, computed from whichever tail is smaller and snapped to a
/// multiple of 2⁻⁵³ so that `1 − x` is exact. Reversing the scores then gives
/// exactly `1 − auc`; the snap moves the value by at most 2⁻⁵⁴.
fn pair_fraction(wins: u64, pairs: u64) -> f64 {
    const SCALE: f64 = (1u64 << 53) as f64;
    let snap = |num: u64| (num as f64 / pairs as f64 * SCALE).round() / SCALE;
    if 2 * wins <= pairs {
        snap(wins)
    } else {
        1.0 - snap(pairs - wins)
    }
}

/// `label = positive` iff `score >= threshold`.
pub fn threshold_predictions(scores: &[f64], threshold: f64) -> Vec<bool> {
    scores.iter().map(|&s| s >= threshold).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    /// Present when the report was built from scores rather than hard labels.
    pub auc: Option<f64>,
    pub tpr: f64,
    pub tnr: f64,
    pub average_accuracy: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub n_samples: usize,
    /// Set when there were no positives and `tpr` was defined as 1.0.
    pub tpr_undefined: bool,
    /// Set when there were no negatives and `tnr` was defined as 1.0.
    pub tnr_undefined: bool,
}

impl EvalReport {
    pub fn confusion(&self) -> Confusion {
        Confusion {
            tp: self.tp,
            fp: self.fp,
            tn: self.tn,
            fn_: self.fn_,
        }
    }
}

pub fn classification_report(predicted: &[bool], truth: &[bool]) -> Result<EvalReport> {
    if predicted.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::Validation("classification report needs at least one sample".into()));
    }
    let mut c = Confusion::default();
    for (&p, &t) in predicted.iter().zip(truth) {
        match (p, t) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    let n = truth.len();
    let rate = |hit: usize, miss: usize| {
        if hit + miss == 0 {
            (1.0, true)
        } else {
            (hit as f64 / (hit + miss) as f64, false)
        }
    };
    let (tpr, tpr_undefined) = rate(c.tp, c.fn_);
    let (tnr, tnr_undefined) = rate(c.tn, c.fp);
    Ok(EvalReport {
        accuracy: (c.tp + c.tn) as f64 / n as f64,
        auc: None,
        tpr,
        tnr,
        average_accuracy: (tpr + tnr) / 2.0,
        tp: c.tp,
        fp: c.fp,
        tn: c.tn,
        fn_: c.fn_,
        n_samples: n,
        tpr_undefined,
        tnr_undefined,
    })
}

/// Full report from positive-class scores: thresholded labels plus AUC.
pub fn evaluate_scores(scores: &[f64], truth: &[bool], threshold: f64) -> Result<EvalReport> {
    let mut report = classification_report(&threshold_predictions(scores, threshold), truth)?;
    report.auc = Some(roc_auc(scores, truth)?);
    Ok(report)
}
