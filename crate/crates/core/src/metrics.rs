//! Binary classification metrics with fake as the positive class.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{FnrError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn confusion(labels: &[Label], predictions: &[Label]) -> Result<ConfusionMatrix> {
    if labels.len() != predictions.len() {
        return Err(FnrError::Contract(format!(
            "{} labels but {} predictions",
            labels.len(),
            predictions.len()
        )));
    }
    if labels.is_empty() {
        return Err(FnrError::Contract(
            "confusion matrix of zero records".into(),
        ));
    }
    let mut cm = ConfusionMatrix::default();
    for (&y, &p) in labels.iter().zip(predictions) {
        match (y, p) {
            (Label::Fake, Label::Fake) => cm.tp += 1,
            (Label::Real, Label::Fake) => cm.fp += 1,
            (Label::Real, Label::Real) => cm.tn += 1,
            (Label::Fake, Label::Real) => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

/// Precision, recall and F1 for one class. A zero denominator yields 0 and
/// sets the matching `*_undefined` flag.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub f1_undefined: bool,
}

fn ratio(num: usize, den: usize) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

impl ClassMetrics {
    fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let (precision, precision_undefined) = ratio(tp, tp + fp);
        let (recall, recall_undefined) = ratio(tp, tp + fn_);
        let (f1, f1_undefined) = ratio(2 * tp, 2 * tp + fp + fn_);
        ClassMetrics {
            precision,
            recall,
            f1,
            precision_undefined,
            recall_undefined,
            f1_undefined,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf1 {
    pub accuracy: f64,
    pub fake: ClassMetrics,
    pub real: ClassMetrics,
    pub micro_f1: f64,
}

pub fn prf1(cm: &ConfusionMatrix) -> Result<Prf1> {
    let total = cm.total();
    if total == 0 {
        return Err(FnrError::Contract("metrics of zero records".into()));
    }
    let correct = cm.tp + cm.tn;
    let wrong = cm.fp + cm.fn_;
    // Pooled over both classes: TP = correct, FP = FN = wrong.
    let micro_f1 = (2 * correct) as f64 / (2 * correct + 2 * wrong) as f64;
    Ok(Prf1 {
        accuracy: correct as f64 / total as f64,
        fake: ClassMetrics::from_counts(cm.tp, cm.fp, cm.fn_),
        real: ClassMetrics::from_counts(cm.tn, cm.fn_, cm.fp),
        micro_f1,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

fn check_scored(labels: &[Label], scores: &[f64]) -> Result<(usize, usize)> {
    if labels.len() != scores.len() {
        return Err(FnrError::Contract(format!(
            "{} labels but {} scores",
            labels.len(),
            scores.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(FnrError::Contract(format!("score {i} is not finite")));
    }
    let pos = labels.iter().filter(|&&l| l == Label::Fake).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(FnrError::Contract(
            "ROC/AUC needs both classes present".into(),
        ));
    }
    Ok((pos, neg))
}

/// Mann-Whitney AUC from mid-ranks: `(R_fake - P(P+1)/2) / (P N)`.
pub fn auc_rank(labels: &[Label], scores: &[f64]) -> Result<f64> {
    let (pos, neg) = check_scored(labels, scores)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && scores[order[end + 1]] == scores[order[start]] {
            end += 1;
        }
        let mid_rank = (start + end + 2) as f64 / 2.0;
        let fakes = order[start..=end]
            .iter()
            .filter(|&&i| labels[i] == Label::Fake)
            .count();
        rank_sum += mid_rank * fakes as f64;
        start = end + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// ROC vertices from a descending-score sweep, one vertex per tie group,
/// starting at (0,0) and ending at (1,1).
pub fn roc_curve(labels: &[Label], scores: &[f64]) -> Result<Vec<RocPoint>> {
    let (pos, neg) = check_scored(labels, scores)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && scores[order[end + 1]] == scores[order[start]] {
            end += 1;
        }
        for &i in &order[start..=end] {
            match labels[i] {
                Label::Fake => tp += 1,
                Label::Real => fp += 1,
            }
        }
        points.push(RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
        start = end + 1;
    }
    Ok(points)
}

pub fn trapezoid_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0)
        .sum()
}

pub fn roc_auc(labels: &[Label], scores: &[f64]) -> Result<(f64, Vec<RocPoint>)> {
    Ok((auc_rank(labels, scores)?, roc_curve(labels, scores)?))
}

/// Two-column `fpr,tpr` CSV.
pub fn roc_csv(points: &[RocPoint]) -> String {
    let mut out = String::from("fpr,tpr\n");
    for p in points {
        writeln!(out, "{},{}", p.fpr, p.tpr).expect("writing to a String");
    }
    out
}

/// Parses the output of [`roc_csv`].
pub fn parse_roc_csv(text: &str) -> Result<Vec<RocPoint>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("fpr,tpr") {
        return Err(FnrError::Data(
            "ROC CSV must start with an fpr,tpr header".into(),
        ));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            let bad = || FnrError::Data(format!("ROC CSV line {}: {l:?}", n + 2));
            let (a, b) = l.split_once(',').ok_or_else(bad)?;
            Ok(RocPoint {
                fpr: a.trim().parse().map_err(|_| bad())?,
                tpr: b.trim().parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub fake: ClassMetrics,
    pub real: ClassMetrics,
    pub micro_f1: f64,
    pub auc: f64,
    pub roc: Vec<RocPoint>,
}

impl EvalReport {
    /// A record is predicted fake when its fake probability exceeds 0.5.
    pub fn from_scores(labels: &[Label], fake_scores: &[f64]) -> Result<Self> {
        let preds: Vec<Label> = fake_scores
            .iter()
            .map(|&s| if s > 0.5 { Label::Fake } else { Label::Real })
            .collect();
        let cm = confusion(labels, &preds)?;
        let m = prf1(&cm)?;
        let (auc, roc) = roc_auc(labels, fake_scores)?;
        Ok(EvalReport {
            n: labels.len(),
            confusion: cm,
            accuracy: m.accuracy,
            fake: m.fake,
            real: m.real,
            micro_f1: m.micro_f1,
            auc,
            roc,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn to_text(&self) -> String {
        let flag = |v: f64, undefined: bool| {
            if undefined {
                format!("{v:.4}*")
            } else {
                format!("{v:.4}")
            }
        };
        let mut s = String::new();
        let cm = &self.confusion;
        writeln!(s, "records      {}", self.n).unwrap();
        writeln!(s, "accuracy     {:.4}", self.accuracy).unwrap();
        writeln!(s, "auc          {:.4}", self.auc).unwrap();
        writeln!(s, "micro f1     {:.4}", self.micro_f1).unwrap();
        writeln!(
            s,
            "confusion    tp={} fp={} tn={} fn={}",
            cm.tp, cm.fp, cm.tn, cm.fn_
        )
        .unwrap();
        writeln!(s, "class   precision  recall     f1").unwrap();
        for (name, c) in [("fake", &self.fake), ("real", &self.real)] {
            writeln!(
                s,
                "{name:<7} {:<10} {:<10} {}",
                flag(c.precision, c.precision_undefined),
                flag(c.recall, c.recall_undefined),
                flag(c.f1, c.f1_undefined)
            )
            .unwrap();
        }
        if [&self.fake, &self.real]
            .iter()
            .any(|c| c.precision_undefined || c.recall_undefined || c.f1_undefined)
        {
            writeln!(s, "* zero denominator, reported as 0").unwrap();
        }
        s
    }
}
