//! Label-dependent oracle: VOC-style mAP at IoU 0.5 and Pearson correlation,
//! used to check how well label-free scores track real accuracy.

use thiserror::Error;

use crate::matching::iou;
use crate::model::{GroundTruthSet, PassDump};
use crate::score::ScoreReport;

pub const MAP_IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("ground truth contains no objects")]
    NoGroundTruth,
    #[error("image {0} has no ground-truth record")]
    ImageNotInGroundTruth(String),
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least two samples, got {0}")]
    TooFewSamples(usize),
    #[error("a series has zero variance")]
    DegenerateVariance,
}

/// Precision/recall sequence for one class, ordered by descending confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    pub confidences: Vec<f64>,
    pub true_positive: Vec<bool>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub num_ground_truth: usize,
}

impl PrCurve {
    /// All-point interpolated AP: area under the monotone precision envelope.
    ///
    /// Every true positive raises recall by exactly `1/G`, so the area is the
    /// envelope precision at each true positive, summed and divided by `G`.
    pub fn average_precision(&self) -> f64 {
        if self.num_ground_truth == 0 {
            return 0.0;
        }
        let mut envelope = self.precision.clone();
        for i in (0..envelope.len().saturating_sub(1)).rev() {
            envelope[i] = envelope[i].max(envelope[i + 1]);
        }
        let area: f64 = envelope
            .iter()
            .zip(&self.true_positive)
            .filter(|(_, hit)| **hit)
            .map(|(p, _)| *p)
            .sum();
        area / self.num_ground_truth as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapResult {
    pub map: f64,
    /// AP per zero-based class; `None` for classes without ground truth.
    pub per_class: Vec<Option<f64>>,
}

/// Builds the PR curve for zero-based class `class`.
pub fn pr_curve(dump: &PassDump, gt: &GroundTruthSet, class: usize) -> Result<PrCurve, EvalError> {
    let class_id = class + 1;
    // (confidence, image position, detection position)
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    let mut gt_boxes = Vec::with_capacity(dump.images.len());
    for (ii, img) in dump.images.iter().enumerate() {
        let objects = gt
            .images
            .get(&img.image_id)
            .ok_or_else(|| EvalError::ImageNotInGroundTruth(img.image_id.clone()))?;
        gt_boxes.push(
            objects
                .iter()
                .filter(|o| o.class_id == class_id)
                .map(|o| o.bbox)
                .collect::<Vec<_>>(),
        );
        for (di, d) in img.detections.iter().enumerate() {
            if d.class_index() == class {
                candidates.push((d.confidence(), ii, di));
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then_with(|| dump.images[a.1].image_id.cmp(&dump.images[b.1].image_id))
            .then_with(|| a.2.cmp(&b.2))
    });

    let num_ground_truth = gt_boxes.iter().map(Vec::len).sum();
    let mut matched: Vec<Vec<bool>> = gt_boxes.iter().map(|g| vec![false; g.len()]).collect();
    let mut curve = PrCurve {
        confidences: Vec::with_capacity(candidates.len()),
        true_positive: Vec::with_capacity(candidates.len()),
        precision: Vec::with_capacity(candidates.len()),
        recall: Vec::with_capacity(candidates.len()),
        num_ground_truth,
    };
    let (mut tp, mut fp) = (0usize, 0usize);
    for (conf, ii, di) in candidates {
        let bbox = &dump.images[ii].detections[di].bbox;
        let mut best: Option<(usize, f64)> = None;
        for (gi, g) in gt_boxes[ii].iter().enumerate() {
            if matched[ii][gi] {
                continue;
            }
            let o = iou(bbox, g);
            if o >= MAP_IOU_THRESHOLD && best.is_none_or(|(_, b)| o > b) {
                best = Some((gi, o));
            }
        }
        let hit = if let Some((gi, _)) = best {
            matched[ii][gi] = true;
            tp += 1;
            true
        } else {
            fp += 1;
            false
        };
        curve.confidences.push(conf);
        curve.true_positive.push(hit);
        curve.precision.push(tp as f64 / (tp + fp) as f64);
        curve.recall.push(if num_ground_truth == 0 {
            0.0
        } else {
            tp as f64 / num_ground_truth as f64
        });
    }
    Ok(curve)
}

/// mAP@0.5 over the classes that have at least one ground-truth object.
pub fn map50(dump: &PassDump, gt: &GroundTruthSet, num_classes: usize) -> Result<MapResult, EvalError> {
    let per_class = (0..num_classes)
        .map(|c| {
            let curve = pr_curve(dump, gt, c)?;
            Ok((curve.num_ground_truth > 0).then(|| curve.average_precision()))
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(EvalError::NoGroundTruth);
    }
    Ok(MapResult {
        map: present.iter().sum::<f64>() / present.len() as f64,
        per_class,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationResult {
    pub pcc: f64,
    pub n: usize,
}

/// Sample Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<CorrelationResult, EvalError> {
    if x.len() != y.len() {
        return Err(EvalError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 2 {
        return Err(EvalError::TooFewSamples(n));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EvalError::DegenerateVariance);
    }
    Ok(CorrelationResult {
        pcc: (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0),
        n,
    })
}

/// The Last / Ours / Imp. / Oracle comparison for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionSummary {
    pub last: f64,
    pub ours: f64,
    pub improvement: f64,
    pub oracle: f64,
    pub selected_position: usize,
    pub oracle_position: usize,
}

impl SelectionSummary {
    /// Signed improvement with two decimals, e.g. `+5.85`.
    pub fn improvement_str(&self) -> String {
        let s = format!("{:+.2}", self.improvement);
        // Keep a zero delta unsigned-positive rather than "-0.00".
        if s == "-0.00" {
            "+0.00".to_string()
        } else {
            s
        }
    }
}

pub fn selection_summary(maps: &[f64], selected_position: usize) -> Result<SelectionSummary, EvalError> {
    if maps.is_empty() {
        return Err(EvalError::TooFewSamples(0));
    }
    if selected_position >= maps.len() {
        return Err(EvalError::LengthMismatch(selected_position + 1, maps.len()));
    }
    let last = *maps.last().expect("non-empty");
    let ours = maps[selected_position];
    let oracle_position = maps
        .iter()
        .enumerate()
        .fold(0, |best, (i, &m)| if m > maps[best] { i } else { best });
    Ok(SelectionSummary {
        last,
        ours,
        improvement: ours - last,
        oracle: maps[oracle_position],
        selected_position,
        oracle_position,
    })
}

/// Comparison table plus the correlation of each named score series with
/// `maps`.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionReport {
    pub summary: SelectionSummary,
    pub correlations: Vec<(String, Result<CorrelationResult, EvalError>)>,
}

pub fn selection_report(
    scores: &ScoreReport,
    maps: &[f64],
    extra_series: &[(String, Vec<f64>)],
) -> Result<SelectionReport, EvalError> {
    if maps.len() != scores.rows.len() {
        return Err(EvalError::LengthMismatch(scores.rows.len(), maps.len()));
    }
    let summary = selection_summary(maps, scores.selected_position)?;
    let mut series: Vec<(String, Vec<f64>)> = vec![
        ("das".into(), scores.rows.iter().map(|r| r.das).collect()),
        ("fis".into(), scores.rows.iter().map(|r| r.fis).collect()),
        ("pdr".into(), scores.rows.iter().map(|r| r.pdr).collect()),
    ];
    series.extend(extra_series.iter().cloned());
    let correlations = series
        .into_iter()
        .map(|(name, values)| {
            let r = pearson(&values, maps);
            (name, r)
        })
        .collect();
    Ok(SelectionReport {
        summary,
        correlations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BoundingBox, Detection, Domain, GroundTruthObject, ImageInference, PassKind, ProbabilityVector};

    fn det(b: [f64; 4], probs: &[f64]) -> Detection {
        Detection::new(
            BoundingBox::from_array(b).unwrap(),
            ProbabilityVector::new(probs.to_vec()).unwrap(),
        )
    }

    fn setup(dets: Vec<Detection>, gt_boxes: &[([f64; 4], usize)]) -> (PassDump, GroundTruthSet) {
        let mut img = ImageInference::new("img");
        img.detections = dets;
        let mut gt = GroundTruthSet::default();
        gt.images.insert(
            "img".into(),
            gt_boxes
                .iter()
                .map(|(b, c)| GroundTruthObject {
                    bbox: BoundingBox::from_array(*b).unwrap(),
                    class_id: *c,
                })
                .collect(),
        );
        (PassDump::new(Domain::Target, PassKind::Original, vec![img]), gt)
    }

    #[test]
    fn perfect_detection() {
        let (d, gt) = setup(vec![det([0.0, 0.0, 10.0, 10.0], &[0.9, 0.1])], &[([0.0, 0.0, 10.0, 10.0], 1)]);
        let r = map50(&d, &gt, 2).unwrap();
        assert_eq!(r.map, 1.0);
        assert_eq!(r.per_class, vec![Some(1.0), None]);
    }

    #[test]
    fn false_positive_ranked_first() {
        let (d, gt) = setup(
            vec![
                det([50.0, 50.0, 60.0, 60.0], &[0.9, 0.1]),
                det([0.0, 0.0, 10.0, 10.0], &[0.8, 0.2]),
            ],
            &[([0.0, 0.0, 10.0, 10.0], 1)],
        );
        let curve = pr_curve(&d, &gt, 0).unwrap();
        assert_eq!(curve.precision, vec![0.0, 0.5]);
        assert_eq!(curve.recall, vec![0.0, 1.0]);
        assert_eq!(map50(&d, &gt, 2).unwrap().map, 0.5);
    }

    #[test]
    fn low_iou_misses() {
        // IoU = 40 / 100 = 0.4
        let (d, gt) = setup(vec![det([0.0, 0.0, 10.0, 4.0], &[0.9, 0.1])], &[([0.0, 0.0, 10.0, 10.0], 1)]);
        assert_eq!(map50(&d, &gt, 2).unwrap().map, 0.0);
    }

    #[test]
    fn each_ground_truth_matches_once() {
        let (d, gt) = setup(
            vec![
                det([0.0, 0.0, 10.0, 10.0], &[0.9, 0.1]),
                det([0.0, 0.0, 10.0, 10.0], &[0.8, 0.2]),
            ],
            &[([0.0, 0.0, 10.0, 10.0], 1)],
        );
        let curve = pr_curve(&d, &gt, 0).unwrap();
        assert_eq!(curve.true_positive, vec![true, false]);
        assert_eq!(map50(&d, &gt, 2).unwrap().map, 1.0);
    }

    #[test]
    fn no_ground_truth_is_an_error() {
        let (d, gt) = setup(vec![det([0.0, 0.0, 1.0, 1.0], &[0.9, 0.1])], &[]);
        assert_eq!(map50(&d, &gt, 2), Err(EvalError::NoGroundTruth));
        let empty_gt = GroundTruthSet::default();
        assert!(matches!(
            map50(&d, &empty_gt, 2),
            Err(EvalError::ImageNotInGroundTruth(_))
        ));
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0];
        assert!((pearson(&x, &[2.0, 4.0, 6.0]).unwrap().pcc - 1.0).abs() < 1e-12);
        assert!((pearson(&x, &[3.0, 2.0, 1.0]).unwrap().pcc + 1.0).abs() < 1e-12);
        assert!((pearson(&x, &[1.0, 3.0, 2.0]).unwrap().pcc - 0.5).abs() < 1e-12);
        assert_eq!(pearson(&x, &[1.0, 1.0, 1.0]), Err(EvalError::DegenerateVariance));
        assert_eq!(pearson(&x, &[1.0]), Err(EvalError::LengthMismatch(3, 1)));
    }

    #[test]
    fn selection_summary_examples() {
        let s = selection_summary(&[10.0, 20.0, 30.0], 2).unwrap();
        assert_eq!((s.last, s.ours, s.oracle, s.improvement), (30.0, 30.0, 30.0, 0.0));
        assert_eq!(s.improvement_str(), "+0.00");

        let s = selection_summary(&[44.1, 47.83, 45.0, 41.98], 1).unwrap();
        assert_eq!(s.improvement_str(), "+5.85");
        assert_eq!(s.oracle, 47.83);

        let s = selection_summary(&[50.0, 40.0], 1).unwrap();
        assert_eq!(s.improvement_str(), "+0.00");
        assert_eq!(s.oracle_position, 0);
    }
}
