//! Flatness Index Score.
//!
//! For each target image the original and weight-perturbed detections are
//! matched one-to-one under the cost `KL(p ‖ p̃) − IoU(b, b̃)`; the image cost
//! is the mean matched cost, and FIS is the negated mean over images and
//! perturbation draws. A perfectly flat checkpoint (identical outputs after
//! perturbation) scores exactly 1.

use std::collections::HashMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::assignment::{hungarian_assign, CostMatrix};
use crate::model::{BoundingBox, CheckpointRecord, Detection, PassDump, ProbabilityVector};

pub const DEFAULT_CONF_THRESH: f64 = 0.5;

/// Floor applied to probabilities before taking logarithms.
pub const KL_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatchingError {
    #[error("probability vectors have different lengths ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("checkpoint {checkpoint} has no perturbed pass")]
    NoPerturbedPass { checkpoint: String },
    #[error("checkpoint {checkpoint}: image {image_id} is missing from {pass}")]
    ImageMismatch {
        checkpoint: String,
        image_id: String,
        pass: String,
    },
    #[error("checkpoint {checkpoint}: no image has surviving detections in both the original pass and {pass}")]
    NoContributingImages { checkpoint: String, pass: String },
}

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = (a.x2().min(b.x2()) - a.x1().max(b.x1())).max(0.0);
    let ih = (a.y2().min(b.y2()) - a.y1().max(b.y1())).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// A probability vector after ε-clamping and renormalization, with its
/// logarithms and negative entropy cached.
#[derive(Debug, Clone)]
pub(crate) struct ClampedDist {
    p: Vec<f64>,
    log_p: Vec<f64>,
    p_log_p: f64,
}

impl ClampedDist {
    pub(crate) fn new(probs: &[f64]) -> Self {
        let mut p: Vec<f64> = probs.iter().map(|&v| v.max(KL_EPSILON)).collect();
        let sum: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= sum);
        let log_p: Vec<f64> = p.iter().map(|v| v.ln()).collect();
        let p_log_p = dot(&p, &log_p);
        Self { p, log_p, p_log_p }
    }

    /// `Σ p ln p`, i.e. the negative Shannon entropy.
    pub(crate) fn neg_entropy(&self) -> f64 {
        self.p_log_p
    }

    fn kl_to(&self, other: &ClampedDist) -> f64 {
        (self.p_log_p - dot(&self.p, &other.log_p)).max(0.0)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `KL(p ‖ q)` in nats, after flooring both vectors at [`KL_EPSILON`].
pub fn kl_divergence(p: &ProbabilityVector, q: &ProbabilityVector) -> Result<f64, MatchingError> {
    if p.len() != q.len() {
        return Err(MatchingError::LengthMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    Ok(ClampedDist::new(p.as_slice()).kl_to(&ClampedDist::new(q.as_slice())))
}

/// Matching cost between an original detection `a` and a perturbed one `b`.
pub fn pair_cost(a: &Detection, b: &Detection) -> Result<f64, MatchingError> {
    Ok(kl_divergence(a.probs(), b.probs())? - iou(&a.bbox, &b.bbox))
}

struct Prepared<'a> {
    bbox: &'a BoundingBox,
    dist: ClampedDist,
}

fn prepare<'a>(dets: &[&'a Detection]) -> Vec<Prepared<'a>> {
    dets.iter()
        .map(|d| Prepared {
            bbox: &d.bbox,
            dist: ClampedDist::new(d.probs().as_slice()),
        })
        .collect()
}

/// Mean cost of the optimal one-to-one matching between `orig` and `pert`,
/// or `None` when either side is empty.
pub fn image_flatness_cost(
    orig: &[Detection],
    pert: &[Detection],
) -> Result<Option<f64>, MatchingError> {
    let orig: Vec<&Detection> = orig.iter().collect();
    let pert: Vec<&Detection> = pert.iter().collect();
    image_cost_refs(&orig, &pert)
}

fn image_cost_refs(orig: &[&Detection], pert: &[&Detection]) -> Result<Option<f64>, MatchingError> {
    if orig.is_empty() || pert.is_empty() {
        return Ok(None);
    }
    if let Some(bad) = orig
        .iter()
        .chain(pert)
        .find(|d| d.probs().len() != orig[0].probs().len())
    {
        return Err(MatchingError::LengthMismatch {
            left: orig[0].probs().len(),
            right: bad.probs().len(),
        });
    }
    let a = prepare(orig);
    let b = prepare(pert);
    let matrix = CostMatrix::from_fn(a.len(), b.len(), |r, c| {
        a[r].dist.kl_to(&b[c].dist) - iou(a[r].bbox, b[c].bbox)
    })
    .expect("non-empty finite cost matrix");
    let assignment = hungarian_assign(&matrix);
    Ok(Some(assignment.total_cost / assignment.len() as f64))
}

fn surviving(dets: &[Detection], conf_thresh: f64) -> Vec<&Detection> {
    dets.iter().filter(|d| d.confidence() >= conf_thresh).collect()
}

/// Mean image cost of one perturbed pass against the original pass.
///
/// Images are matched by id; per-image costs are reduced in ascending id
/// order so the result does not depend on scheduling.
pub fn pass_flatness_cost(
    checkpoint: &str,
    original: &PassDump,
    perturbed: &PassDump,
    conf_thresh: f64,
) -> Result<f64, MatchingError> {
    let pert_by_id: HashMap<&str, &[Detection]> = perturbed
        .images
        .iter()
        .map(|img| (img.image_id.as_str(), img.detections.as_slice()))
        .collect();

    let mut costs = original
        .images
        .par_iter()
        .map(|img| {
            let pert = pert_by_id.get(img.image_id.as_str()).ok_or_else(|| {
                MatchingError::ImageMismatch {
                    checkpoint: checkpoint.to_string(),
                    image_id: img.image_id.clone(),
                    pass: perturbed.kind.to_string(),
                }
            })?;
            let cost = image_cost_refs(
                &surviving(&img.detections, conf_thresh),
                &surviving(pert, conf_thresh),
            )?;
            Ok((img.image_id.as_str(), cost))
        })
        .collect::<Result<Vec<_>, MatchingError>>()?;
    costs.sort_unstable_by(|a, b| a.0.cmp(b.0));

    let (sum, n) = costs
        .iter()
        .filter_map(|(_, c)| *c)
        .fold((0.0, 0usize), |(s, n), c| (s + c, n + 1));
    if n == 0 {
        return Err(MatchingError::NoContributingImages {
            checkpoint: checkpoint.to_string(),
            pass: perturbed.kind.to_string(),
        });
    }
    Ok(sum / n as f64)
}

pub fn fis(ckpt: &CheckpointRecord, conf_thresh: f64) -> Result<f64, MatchingError> {
    if ckpt.target_perturbed.is_empty() {
        return Err(MatchingError::NoPerturbedPass {
            checkpoint: ckpt.id.clone(),
        });
    }
    let mut total = 0.0;
    for pert in &ckpt.target_perturbed {
        total += pass_flatness_cost(&ckpt.id, &ckpt.target_original, pert, conf_thresh)?;
    }
    Ok(-(total / ckpt.target_perturbed.len() as f64))
}
