//! Reconstruction-error anomaly detection and its evaluation.
//!
//! Anomalies are the positive class and receive high scores. A sample is
//! flagged when its score is strictly greater than the threshold.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::federation::Executor;
use crate::linalg::{Basis, DenseMatrix};
use crate::rng::{self, Domain};

/// Standard deviations below this are treated as constant features.
pub const CONSTANT_FEATURE_STD: f64 = 1e-12;

/// Per-feature z-score transform fitted on training data.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Normalizer {
    pub mean: Vec<f64>,
    /// Population standard deviation; constant features store 1.
    pub std: Vec<f64>,
}

/// Fits on the columns of `train` (one sample per column).
pub fn fit_normalizer(train: &DenseMatrix) -> Result<Normalizer> {
    let n = train.cols();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, found: n });
    }
    if !train.is_finite() {
        return Err(Error::NonFinite("normalizer input"));
    }
    let mut mean = Vec::with_capacity(train.rows());
    let mut std = Vec::with_capacity(train.rows());
    for i in 0..train.rows() {
        let row = train.row(i);
        let m = row.iter().sum::<f64>() / n as f64;
        let var = row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
        let s = libm::sqrt(var);
        mean.push(m);
        std.push(if s < CONSTANT_FEATURE_STD { 1.0 } else { s });
    }
    Ok(Normalizer { mean, std })
}

impl Normalizer {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        if x.rows() != self.dim() {
            return Err(Error::DimensionMismatch {
                op: "Normalizer::apply",
                expected: (self.dim(), x.cols()),
                found: x.shape(),
            });
        }
        Ok(DenseMatrix::from_fn(x.rows(), x.cols(), |i, j| {
            (x[(i, j)] - self.mean[i]) / self.std[i]
        }))
    }
}

/// Reconstruction error of every column of `x` under `basis`.
pub fn score_dataset(basis: &Basis, x: &DenseMatrix) -> Result<Vec<f64>> {
    score_dataset_with(basis, x, &crate::federation::Sequential)
}

/// [`score_dataset`] with columns scored through `exec`; output order is
/// column order.
pub fn score_dataset_with<E: Executor>(basis: &Basis, x: &DenseMatrix, exec: &E) -> Result<Vec<f64>> {
    if x.rows() != basis.dim() {
        return Err(Error::DimensionMismatch {
            op: "score_dataset",
            expected: (basis.dim(), x.cols()),
            found: x.shape(),
        });
    }
    exec.map(x.cols(), |j| basis.residual_energy(&x.column(j)))
        .into_iter()
        .collect()
}

/// One operating point: flagging every score `> threshold` yields `tp` true
/// and `fp` false positives.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
    pub tp: usize,
    pub fp: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PrPoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            op: "scores vs labels",
            expected: (labels.len(), 1),
            found: (scores.len(), 1),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("scores"));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::InvalidArgument("labels must be 0 or 1"));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    Ok((pos, labels.len() - pos))
}

/// Cumulative `(score, tp, fp)` after each group of tied scores, by
/// descending score.
fn sweep(scores: &[f64], labels: &[u8]) -> Vec<(f64, usize, usize)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out: Vec<(f64, usize, usize)> = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    for (pos, &i) in order.iter().enumerate() {
        if labels[i] == 1 {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_group = order.get(pos + 1).is_none_or(|&next| scores[next] != scores[i]);
        if last_of_group {
            out.push((scores[i], tp, fp));
        }
    }
    out
}

/// Threshold below every score, so that everything is flagged.
fn below(s_min: f64) -> f64 {
    s_min - s_min.abs().max(1.0)
}

/// ROC points from `(0, 0)` to `(1, 1)`, one per distinct score, with the
/// trapezoidal area under them.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<(Vec<RocPoint>, f64)> {
    let (pos, neg) = check_inputs(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    let groups = sweep(scores, labels);
    let mut points = Vec::with_capacity(groups.len() + 1);
    points.push(RocPoint {
        threshold: groups[0].0,
        fpr: 0.0,
        tpr: 0.0,
        tp: 0,
        fp: 0,
    });
    for (g, &(score, tp, fp)) in groups.iter().enumerate() {
        let threshold = groups.get(g + 1).map_or_else(|| below(score), |next| next.0);
        points.push(RocPoint {
            threshold,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            tp,
            fp,
        });
    }
    let auc = points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) * 0.5)
        .sum();
    Ok((points, auc))
}

/// Precision and recall after each distinct score, by descending score, and
/// the average precision `Σ (R_n − R_{n−1})·P_n`.
pub fn pr_curve(scores: &[f64], labels: &[u8]) -> Result<(Vec<PrPoint>, f64)> {
    let (pos, _) = check_inputs(scores, labels)?;
    if pos == 0 {
        return Err(Error::SingleClass);
    }
    let groups = sweep(scores, labels);
    let mut points = Vec::with_capacity(groups.len());
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (g, &(score, tp, fp)) in groups.iter().enumerate() {
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        let threshold = groups.get(g + 1).map_or_else(|| below(score), |next| next.0);
        points.push(PrPoint {
            threshold,
            recall,
            precision,
        });
    }
    Ok((points, ap))
}

/// Threshold of the point maximizing Youden's `J = tpr − fpr`. Ties go to the
/// higher threshold. `J` is compared exactly through the counts, with the
/// class sizes read off the final `(1, 1)` point of the curve.
pub fn select_threshold(points: &[RocPoint]) -> Result<f64> {
    let last = points.last().ok_or(Error::EmptySample)?;
    let (pos, neg) = (last.tp, last.fp);
    let j = |p: &RocPoint| p.tp as i128 * neg as i128 - p.fp as i128 * pos as i128;
    let mut best = &points[0];
    for p in &points[1..] {
        let (jp, jb) = (j(p), j(best));
        if jp > jb || (jp == jb && p.threshold > best.threshold) {
            best = p;
        }
    }
    Ok(best.threshold)
}

/// Confusion counts and scalar metrics at one threshold.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Metrics {
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[cfg_attr(feature = "serde", serde(rename = "fn"))]
    pub fn_: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub fnr: f64,
}

impl Metrics {
    pub fn from_counts(threshold: f64, tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            threshold,
            tp,
            fp,
            tn,
            fn_,
            accuracy: ratio(tp + tn, tp + fp + tn + fn_),
            precision,
            recall,
            f1,
            fnr: ratio(fn_, tp + fn_),
        }
    }

    /// `Acc | Pre | Rec | F1 | FNR` in percent.
    pub fn table_row(&self) -> String {
        alloc::format!(
            "Acc {:.2} | Pre {:.2} | Rec {:.2} | F1 {:.2} | FNR {:.2}",
            100.0 * self.accuracy,
            100.0 * self.precision,
            100.0 * self.recall,
            100.0 * self.f1,
            100.0 * self.fnr
        )
    }
}

/// Flags `score > threshold` and compares against `labels`.
pub fn compute_metrics(scores: &[f64], labels: &[u8], threshold: f64) -> Result<Metrics> {
    check_inputs(scores, labels)?;
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s > threshold, l == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(Metrics::from_counts(threshold, tp, fp, tn, fn_))
}

/// How the operating threshold is chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ThresholdMode {
    /// Maximize Youden's J on the evaluated scores themselves.
    Youden,
    /// Use the given value.
    Fixed(f64),
    /// Select with Youden's J on a seeded carve-out of this fraction and
    /// report on the remaining samples.
    Holdout { fraction: f64, seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DetectionReport {
    #[cfg_attr(feature = "serde", serde(flatten))]
    pub metrics: Metrics,
    pub roc: Vec<RocPoint>,
    pub pr: Vec<PrPoint>,
    pub auc_roc: f64,
    pub average_precision: f64,
    /// Samples the metrics were computed on.
    pub evaluated: usize,
}

/// Carve-out and remainder indices, each ascending.
pub fn holdout_split(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument("holdout fraction must be in (0, 1)"));
    }
    let m = libm::round(fraction * n as f64) as usize;
    if m == 0 || m >= n {
        return Err(Error::TooFewSamples { needed: 2, found: n });
    }
    let mut stream = rng::keyed(seed, Domain::Holdout, n as u64, 0);
    let mut carve = rand::seq::index::sample(&mut stream, n, m).into_vec();
    carve.sort_unstable();
    let mut in_carve = alloc::vec![false; n];
    for &i in &carve {
        in_carve[i] = true;
    }
    let rest = (0..n).filter(|&i| !in_carve[i]).collect();
    Ok((carve, rest))
}

/// Threshold selection, metrics and curves for one scored test set.
pub fn evaluate(scores: &[f64], labels: &[u8], mode: ThresholdMode) -> Result<DetectionReport> {
    let (scores, labels, threshold) = match mode {
        ThresholdMode::Youden => {
            let (roc, _) = roc_curve(scores, labels)?;
            (scores.to_vec(), labels.to_vec(), select_threshold(&roc)?)
        }
        ThresholdMode::Fixed(t) => (scores.to_vec(), labels.to_vec(), t),
        ThresholdMode::Holdout { fraction, seed } => {
            check_inputs(scores, labels)?;
            let (carve, rest) = holdout_split(scores.len(), fraction, seed)?;
            let pick = |idx: &[usize]| -> (Vec<f64>, Vec<u8>) {
                (
                    idx.iter().map(|&i| scores[i]).collect(),
                    idx.iter().map(|&i| labels[i]).collect(),
                )
            };
            let (cs, cl) = pick(&carve);
            let (roc, _) = roc_curve(&cs, &cl)?;
            let threshold = select_threshold(&roc)?;
            let (rs, rl) = pick(&rest);
            (rs, rl, threshold)
        }
    };
    let (roc, auc_roc) = roc_curve(&scores, &labels)?;
    let (pr, average_precision) = pr_curve(&scores, &labels)?;
    Ok(DetectionReport {
        metrics: compute_metrics(&scores, &labels, threshold)?,
        roc,
        pr,
        auc_roc,
        average_precision,
        evaluated: scores.len(),
    })
}
