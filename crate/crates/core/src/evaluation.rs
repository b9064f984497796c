//! Detection quality at IOU thresholds and Fréchet distance between image sets.
//!
//! The non-standard hand is the positive class. Predictions are matched to
//! ground truth greedily in confidence order; each prediction claims the
//! unmatched ground-truth box with the highest IOU at or above the threshold.
//! Matched pairs count by label agreement, unmatched non-standard ground
//! truths are false negatives and unmatched non-standard predictions are
//! false positives. Unmatched standard boxes on either side are not counted.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use image::{imageops, RgbImage};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::contract::detection_order;
use crate::backends::{BackendError, HandDetection, HandLabel};
use crate::dataset::{self, DatasetError};
use crate::masking::BoundingBox;
use crate::raster;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("IOU threshold must lie in (0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("need at least 2 feature vectors, got {0}")]
    InsufficientSamples(usize),
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("eigendecomposition did not converge")]
    NumericalFailure,
    #[error("no images found in {0}")]
    EmptyImageSet(PathBuf),
    #[error("feature extraction failed on {path}: {source}")]
    Extractor {
        path: PathBuf,
        #[source]
        source: BackendError,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = a.x2.min(b.x2) - a.x1.max(b.x1);
    let ih = a.y2.min(b.y2) - a.y1.max(b.y1);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub label: HandLabel,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl std::ops::AddAssign for Counts {
    fn add_assign(&mut self, o: Counts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    #[serde(flatten)]
    pub counts: Counts,
    pub iou_threshold: f64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64, iou_threshold: f64) -> Self {
        Self {
            counts: Counts { tp, fp, fn_, tn },
            iou_threshold,
        }
    }
}

fn check_threshold(t: f64) -> Result<(), EvalError> {
    if t > 0.0 && t <= 1.0 {
        Ok(())
    } else {
        Err(EvalError::InvalidThreshold(t))
    }
}

/// Greedy one-to-one assignment; entry `i` is the ground-truth index matched
/// by `predictions[i]`.
pub fn greedy_match(
    predictions: &[HandDetection],
    ground_truth: &[GroundTruth],
    threshold: f64,
) -> Result<Vec<Option<usize>>, EvalError> {
    check_threshold(threshold)?;
    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&i, &j| detection_order(&predictions[i], &predictions[j]).then(i.cmp(&j)));
    let mut taken = vec![false; ground_truth.len()];
    let mut assignment = vec![None; predictions.len()];
    for i in order {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in ground_truth.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let v = iou(&predictions[i].bbox, &gt.bbox);
            if v >= threshold && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
            assignment[i] = Some(g);
        }
    }
    Ok(assignment)
}

/// Reference matcher for small instances. Enumerates every one-to-one
/// assignment whose pairs clear the threshold and keeps the one whose IOU
/// sequence, read in confidence order with unmatched entries lowest, is
/// lexicographically largest.
pub fn exhaustive_match(
    predictions: &[HandDetection],
    ground_truth: &[GroundTruth],
    threshold: f64,
) -> Result<Vec<Option<usize>>, EvalError> {
    check_threshold(threshold)?;
    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&i, &j| detection_order(&predictions[i], &predictions[j]).then(i.cmp(&j)));

    fn search(
        depth: usize,
        order: &[usize],
        preds: &[HandDetection],
        gts: &[GroundTruth],
        t: f64,
        used: &mut Vec<bool>,
        current: &mut Vec<(Option<usize>, f64)>,
        best: &mut Option<Vec<(Option<usize>, f64)>>,
    ) {
        if depth == order.len() {
            let better = best.as_ref().is_none_or(|b| {
                let key = |v: &[(Option<usize>, f64)]| v.iter().map(|(_, s)| *s).collect::<Vec<_>>();
                key(current).partial_cmp(&key(b)) == Some(std::cmp::Ordering::Greater)
            });
            if better {
                *best = Some(current.clone());
            }
            return;
        }
        let p = &preds[order[depth]];
        current.push((None, -1.0));
        search(depth + 1, order, preds, gts, t, used, current, best);
        current.pop();
        for g in 0..gts.len() {
            let v = iou(&p.bbox, &gts[g].bbox);
            if used[g] || v < t {
                continue;
            }
            used[g] = true;
            current.push((Some(g), v));
            search(depth + 1, order, preds, gts, t, used, current, best);
            current.pop();
            used[g] = false;
        }
    }

    let mut best = None;
    search(
        0,
        &order,
        predictions,
        ground_truth,
        threshold,
        &mut vec![false; ground_truth.len()],
        &mut Vec::new(),
        &mut best,
    );
    let mut assignment = vec![None; predictions.len()];
    for (slot, (m, _)) in order.iter().zip(best.unwrap_or_default()) {
        assignment[*slot] = m;
    }
    Ok(assignment)
}

/// Tallies an assignment produced by any matcher.
pub fn count_assignment(
    predictions: &[HandDetection],
    ground_truth: &[GroundTruth],
    assignment: &[Option<usize>],
) -> Counts {
    use HandLabel::{NonStandard, Standard};
    let mut c = Counts::default();
    let mut matched_gt = vec![false; ground_truth.len()];
    for (pred, m) in predictions.iter().zip(assignment) {
        match m {
            Some(g) => {
                matched_gt[*g] = true;
                match (pred.label, ground_truth[*g].label) {
                    (NonStandard, NonStandard) => c.tp += 1,
                    (Standard, Standard) => c.tn += 1,
                    (NonStandard, Standard) => c.fp += 1,
                    (Standard, NonStandard) => c.fn_ += 1,
                }
            }
            None if pred.label == NonStandard => c.fp += 1,
            None => {}
        }
    }
    for (gt, matched) in ground_truth.iter().zip(matched_gt) {
        if !matched && gt.label == NonStandard {
            c.fn_ += 1;
        }
    }
    c
}

pub fn match_and_count(
    predictions: &[HandDetection],
    ground_truth: &[GroundTruth],
    threshold: f64,
) -> Result<ConfusionCounts, EvalError> {
    let assignment = greedy_match(predictions, ground_truth, threshold)?;
    Ok(ConfusionCounts {
        counts: count_assignment(predictions, ground_truth, &assignment),
        iou_threshold: threshold,
    })
}

/// `None` marks an undefined ratio (zero denominator).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

pub fn precision_recall(c: &ConfusionCounts) -> PrecisionRecall {
    let Counts { tp, fp, fn_, .. } = c.counts;
    let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
    PrecisionRecall {
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
    }
}

/// Rounds to two decimals the way the report prints them.
pub fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

fn fmt_ratio(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}"))
}

pub fn render_detection_table(rows: &[ConfusionCounts]) -> String {
    let mut out = String::from("IOU   TP     FP     FN     TN     Precision  Recall\n");
    for r in rows {
        let pr = precision_recall(r);
        let c = r.counts;
        out.push_str(&format!(
            "{:<5} {:<6} {:<6} {:<6} {:<6} {:<10} {}\n",
            format!("{:.2}", r.iou_threshold),
            c.tp,
            c.fp,
            c.fn_,
            c.tn,
            fmt_ratio(pr.precision),
            fmt_ratio(pr.recall)
        ));
    }
    out
}

/// `key = value` lines, one block per threshold.
pub fn render_detection_metrics(rows: &[ConfusionCounts]) -> String {
    let mut out = String::new();
    for r in rows {
        let pr = precision_recall(r);
        let k = format!("iou_{:.2}", r.iou_threshold);
        let c = r.counts;
        out.push_str(&format!("{k}.tp = {}\n{k}.fp = {}\n{k}.fn = {}\n{k}.tn = {}\n", c.tp, c.fp, c.fn_, c.tn));
        out.push_str(&format!(
            "{k}.precision = {}\n{k}.recall = {}\n",
            pr.precision.map_or("undefined".into(), |v| format!("{v:.6}")),
            pr.recall.map_or("undefined".into(), |v| format!("{v:.6}"))
        ));
    }
    out
}

/// Evaluates per-image annotation files: `<pred_dir>/<id>.txt` lines
/// `label cx cy w h confidence` against `<gt_dir>/<id>.txt` lines
/// `label cx cy w h`, in normalized coordinates.
pub fn evaluate_detection_dirs(
    pred_dir: &Path,
    gt_dir: &Path,
    thresholds: &[f64],
) -> Result<Vec<ConfusionCounts>, EvalError> {
    for t in thresholds {
        check_threshold(*t)?;
    }
    let preds = dataset::load_annotation_dir(pred_dir)?;
    let gts = dataset::load_annotation_dir(gt_dir)?;
    let ids: BTreeSet<&String> = preds.keys().chain(gts.keys()).collect();
    let mut totals: Vec<Counts> = vec![Counts::default(); thresholds.len()];
    for id in ids {
        let p: Vec<HandDetection> = preds
            .get(id)
            .map(|r| r.hands.iter().filter_map(|h| h.to_detection()).collect())
            .unwrap_or_default();
        let g: Vec<GroundTruth> = gts
            .get(id)
            .map(|r| r.hands.iter().filter_map(|h| h.to_ground_truth()).collect())
            .unwrap_or_default();
        for (t, total) in thresholds.iter().zip(totals.iter_mut()) {
            *total += match_and_count(&p, &g, *t)?.counts;
        }
    }
    Ok(thresholds
        .iter()
        .zip(totals)
        .map(|(t, counts)| ConfusionCounts {
            counts,
            iou_threshold: *t,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDistribution {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub sample_count: usize,
}

impl FeatureDistribution {
    pub fn dimension(&self) -> usize {
        self.mean.len()
    }
}

/// Sample mean and unbiased covariance, symmetrized.
pub fn feature_distribution(features: &[Vec<f64>]) -> Result<FeatureDistribution, EvalError> {
    let n = features.len();
    if n < 2 {
        return Err(EvalError::InsufficientSamples(n));
    }
    let d = features[0].len();
    for f in features {
        if f.len() != d {
            return Err(EvalError::DimensionMismatch {
                expected: d,
                got: f.len(),
            });
        }
    }
    let mut mean = DVector::zeros(d);
    for f in features {
        mean += DVector::from_column_slice(f);
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for f in features {
        let centered = DVector::from_column_slice(f) - &mean;
        cov.ger(1.0, &centered, &centered, 1.0);
    }
    cov /= (n - 1) as f64;
    let covariance = (&cov + cov.transpose()) * 0.5;
    Ok(FeatureDistribution {
        mean,
        covariance,
        sample_count: n,
    })
}

fn symmetric_eigen(m: DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>, EvalError> {
    let sym = (&m + m.transpose()) * 0.5;
    SymmetricEigen::try_new(sym, f64::EPSILON, 10_000).ok_or(EvalError::NumericalFailure)
}

/// Square root of a symmetric positive semi-definite matrix, clamping
/// negative eigenvalues to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>, EvalError> {
    let eig = symmetric_eigen(m.clone())?;
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// Fréchet distance between the Gaussian fits of two feature sets:
/// `|μ₁ − μ₂|² + Tr(Σ₁ + Σ₂ − 2 (Σ₁ Σ₂)^½)`.
///
/// The trace of `(Σ₁ Σ₂)^½` is taken from the eigenvalues of the symmetric
/// product `Σ₁^½ Σ₂ Σ₁^½`, which shares its spectrum.
pub fn fid(p: &FeatureDistribution, q: &FeatureDistribution) -> Result<f64, EvalError> {
    if p.dimension() != q.dimension() {
        return Err(EvalError::DimensionMismatch {
            expected: p.dimension(),
            got: q.dimension(),
        });
    }
    let mean_term = (&p.mean - &q.mean).norm_squared();
    let root_p = psd_sqrt(&p.covariance)?;
    let product = &root_p * &q.covariance * &root_p;
    let eig = symmetric_eigen(product)?;
    let trace_sqrt: f64 = eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    let total = mean_term + p.covariance.trace() + q.covariance.trace() - 2.0 * trace_sqrt;
    if total >= 0.0 {
        Ok(total)
    } else if total > -1e-6 {
        Ok(0.0)
    } else {
        Err(EvalError::NumericalFailure)
    }
}

/// Turns an image into a fixed-length feature vector.
pub trait FeatureExtractor: Send + Sync {
    fn name(&self) -> &str;
    fn dimension(&self) -> usize;
    fn extract(&self, image: &RgbImage) -> Result<Vec<f64>, BackendError>;
}

/// Center-crop to a square, downsample to `side × side` grayscale by box
/// averaging, flatten. Values lie in `[0, 1]`.
#[derive(Debug, Clone, Copy)]
pub struct PixelFeatureExtractor {
    pub side: u32,
}

impl Default for PixelFeatureExtractor {
    fn default() -> Self {
        Self { side: 8 }
    }
}

impl FeatureExtractor for PixelFeatureExtractor {
    fn name(&self) -> &str {
        "pixels"
    }

    fn dimension(&self) -> usize {
        (self.side * self.side) as usize
    }

    fn extract(&self, image: &RgbImage) -> Result<Vec<f64>, BackendError> {
        let (w, h) = image.dimensions();
        let s = w.min(h);
        if s < self.side {
            return Err(BackendError::InvalidRequest(format!(
                "image {w}x{h} is smaller than the {0}x{0} feature grid",
                self.side
            )));
        }
        let crop = imageops::crop_imm(image, (w - s) / 2, (h - s) / 2, s, s).to_image();
        let mut sums = vec![0.0f64; self.dimension()];
        let mut counts = vec![0u32; self.dimension()];
        for (x, y, px) in crop.enumerate_pixels() {
            let cell = (y * self.side / s * self.side + x * self.side / s) as usize;
            let luma = 0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64;
            sums[cell] += luma / 255.0;
            counts[cell] += 1;
        }
        Ok(sums
            .into_iter()
            .zip(counts)
            .map(|(s, c)| s / c as f64)
            .collect())
    }
}

pub fn extractor_by_name(name: &str) -> Option<Box<dyn FeatureExtractor>> {
    match name {
        "pixels" | "identity" => Some(Box::new(PixelFeatureExtractor::default())),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidReport {
    pub extractor: String,
    pub count_a: usize,
    pub count_b: usize,
    pub dimension: usize,
    pub fid: f64,
}

impl FidReport {
    pub fn render_text(&self) -> String {
        format!(
            "extractor  {}\nimages A   {}\nimages B   {}\ndimension  {}\nFID        {:.4}\n",
            self.extractor, self.count_a, self.count_b, self.dimension, self.fid
        )
    }

    pub fn render_metrics(&self) -> String {
        format!(
            "extractor = {}\ncount_a = {}\ncount_b = {}\ndimension = {}\nfid = {:.9}\n",
            self.extractor, self.count_a, self.count_b, self.dimension, self.fid
        )
    }
}

/// PNG/JPEG files in `dir`, sorted by file name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>, EvalError> {
    let io = |source| EvalError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io)?
        .collect::<Result<Vec<_>, _>>()
        .map_err(io)?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        })
        .collect();
    files.sort();
    Ok(files)
}

fn extract_dir(dir: &Path, extractor: &dyn FeatureExtractor) -> Result<Vec<Vec<f64>>, EvalError> {
    let files = list_images(dir)?;
    if files.is_empty() {
        return Err(EvalError::EmptyImageSet(dir.to_path_buf()));
    }
    files
        .iter()
        .map(|path| {
            let img = raster::read_rgb(path).map_err(|e| EvalError::Extractor {
                path: path.clone(),
                source: BackendError::InvalidRequest(e.to_string()),
            })?;
            extractor.extract(&img).map_err(|source| EvalError::Extractor {
                path: path.clone(),
                source,
            })
        })
        .collect()
}

pub fn evaluate_image_sets(
    set_a: &Path,
    set_b: &Path,
    extractor: &dyn FeatureExtractor,
) -> Result<FidReport, EvalError> {
    let a = extract_dir(set_a, extractor)?;
    let b = extract_dir(set_b, extractor)?;
    let (pa, pb) = (feature_distribution(&a)?, feature_distribution(&b)?);
    Ok(FidReport {
        extractor: extractor.name().to_string(),
        count_a: a.len(),
        count_b: b.len(),
        dimension: pa.dimension(),
        fid: fid(&pa, &pb)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox {
        BoundingBox::new(x1, y1, x2, y2).unwrap()
    }

    fn det(b: BoundingBox, label: HandLabel, confidence: f64) -> HandDetection {
        HandDetection {
            bbox: b,
            label,
            confidence,
        }
    }

    fn gt(b: BoundingBox, label: HandLabel) -> GroundTruth {
        GroundTruth { label, bbox: b }
    }

    #[test]
    fn iou_examples() {
        let a = bx(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert!((iou(&a, &bx(1.0, 1.0, 3.0, 3.0)) - 1.0 / 7.0).abs() < 1e-12);
        assert_eq!(iou(&a, &bx(5.0, 5.0, 6.0, 6.0)), 0.0);
        assert_eq!(iou(&a, &bx(2.0, 0.0, 4.0, 2.0)), 0.0);
    }

    #[test]
    fn perfect_predictions() {
        use HandLabel::*;
        let boxes = [bx(0.0, 0.0, 1.0, 1.0), bx(5.0, 5.0, 7.0, 7.0), bx(10.0, 0.0, 12.0, 3.0)];
        let labels = [NonStandard, Standard, NonStandard];
        let g: Vec<_> = boxes.iter().zip(labels).map(|(b, l)| gt(*b, l)).collect();
        let p: Vec<_> = boxes.iter().zip(labels).map(|(b, l)| det(*b, l, 0.9)).collect();
        let c = match_and_count(&p, &g, 0.8).unwrap().counts;
        assert_eq!(c, Counts { tp: 2, fp: 0, fn_: 0, tn: 1 });
    }

    #[test]
    fn misclassified_box_is_a_false_negative() {
        let b = bx(0.0, 0.0, 4.0, 4.0);
        let c = match_and_count(&[det(b, HandLabel::Standard, 0.9)], &[gt(b, HandLabel::NonStandard)], 0.5)
            .unwrap()
            .counts;
        assert_eq!(c, Counts { tp: 0, fp: 0, fn_: 1, tn: 0 });
    }

    #[test]
    fn higher_confidence_claims_the_single_truth() {
        let g = [gt(bx(0.0, 0.0, 10.0, 10.0), HandLabel::NonStandard)];
        let p = [
            det(bx(0.0, 0.0, 10.0, 9.5), HandLabel::NonStandard, 0.6),
            det(bx(0.0, 0.0, 10.0, 9.0), HandLabel::NonStandard, 0.9),
        ];
        assert_eq!(greedy_match(&p, &g, 0.8).unwrap(), vec![None, Some(0)]);
        let c = match_and_count(&p, &g, 0.8).unwrap().counts;
        assert_eq!(c, Counts { tp: 1, fp: 1, fn_: 0, tn: 0 });
    }

    #[test]
    fn unmatched_standard_boxes_are_not_counted() {
        let c = match_and_count(
            &[det(bx(50.0, 50.0, 60.0, 60.0), HandLabel::Standard, 0.9)],
            &[gt(bx(0.0, 0.0, 4.0, 4.0), HandLabel::Standard)],
            0.5,
        )
        .unwrap()
        .counts;
        assert_eq!(c, Counts::default());
    }

    #[test]
    fn threshold_domain() {
        assert!(match_and_count(&[], &[], 0.0).is_err());
        assert!(match_and_count(&[], &[], 1.2).is_err());
        assert!(match_and_count(&[], &[], 1.0).is_ok());
    }

    #[test]
    fn undefined_ratios_are_flagged() {
        let pr = precision_recall(&ConfusionCounts::new(0, 0, 0, 5, 0.8));
        assert_eq!(pr.precision, None);
        assert_eq!(pr.recall, None);
        assert!(render_detection_table(&[ConfusionCounts::new(0, 0, 0, 5, 0.8)]).contains("n/a"));
    }

    #[test]
    fn distribution_examples() {
        let d = feature_distribution(&[vec![0.0, 0.0], vec![2.0, 2.0]]).unwrap();
        assert_eq!(d.mean.as_slice(), &[1.0, 1.0]);
        assert_eq!(d.covariance, DMatrix::from_row_slice(2, 2, &[2.0, 2.0, 2.0, 2.0]));
        let same = feature_distribution(&vec![vec![3.0, -1.0, 4.0]; 5]).unwrap();
        assert!(same.covariance.iter().all(|v| *v == 0.0));
        assert!(matches!(
            feature_distribution(&[vec![0.0, 1.0], vec![1.0]]),
            Err(EvalError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            feature_distribution(&[vec![0.0]]),
            Err(EvalError::InsufficientSamples(1))
        ));
    }

    fn gaussian(mean: &[f64], cov_diag: &[f64]) -> FeatureDistribution {
        FeatureDistribution {
            mean: DVector::from_column_slice(mean),
            covariance: DMatrix::from_diagonal(&DVector::from_column_slice(cov_diag)),
            sample_count: 100,
        }
    }

    #[test]
    fn fid_closed_forms() {
        let a = gaussian(&[0.0, 0.0], &[1.0, 1.0]);
        let b = gaussian(&[3.0, 4.0], &[1.0, 1.0]);
        assert!((fid(&a, &b).unwrap() - 25.0).abs() < 1e-8);
        let c = gaussian(&[0.0, 0.0], &[4.0, 4.0]);
        assert!((fid(&c, &a).unwrap() - 2.0).abs() < 1e-8);
        assert!(fid(&a, &a).unwrap() <= 1e-6);
        assert!(fid(&a, &gaussian(&[0.0], &[1.0])).is_err());
    }

    #[test]
    fn pixel_extractor_shapes() {
        let img = RgbImage::from_fn(40, 24, |x, _| image::Rgb([if x < 20 { 0 } else { 255 }; 3]));
        let f = PixelFeatureExtractor::default().extract(&img).unwrap();
        assert_eq!(f.len(), 64);
        assert_eq!(f[0], 0.0);
        assert!((f[7] - 1.0).abs() < 1e-12);
        assert!(PixelFeatureExtractor::default().extract(&RgbImage::new(4, 30)).is_err());
    }
}
