//! Domain types shared by every scoring stage.
//!
//! Everything here is validated on construction: a [`BoundingBox`] always has
//! positive extent, a [`ProbabilityVector`] always sums to one, and a
//! [`Detection`] always carries the confidence implied by its probabilities.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

/// Largest tolerated deviation of a probability vector's sum from one before
/// it is rejected. Anything closer is silently renormalized.
pub const PROB_SUM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoxError {
    #[error("non-finite box coordinate in {0:?}")]
    NonFinite([f64; 4]),
    #[error("degenerate box {0:?}: need x2 > x1 and y2 > y1")]
    Degenerate([f64; 4]),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProbabilityError {
    #[error("empty probability vector")]
    Empty,
    #[error("probability entry {index} is {value} (must be finite and non-negative)")]
    InvalidEntry { index: usize, value: f64 },
    #[error("probabilities sum to {sum}, more than {PROB_SUM_TOLERANCE} away from 1")]
    SumOutOfTolerance { sum: f64 },
}

/// Axis-aligned box in absolute pixel coordinates, corner format.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, BoxError> {
        let raw = [x1, y1, x2, y2];
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(BoxError::NonFinite(raw));
        }
        if x2 <= x1 || y2 <= y1 {
            return Err(BoxError::Degenerate(raw));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn from_array(raw: [f64; 4]) -> Result<Self, BoxError> {
        Self::new(raw[0], raw[1], raw[2], raw[3])
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }
    pub fn y1(&self) -> f64 {
        self.y1
    }
    pub fn x2(&self) -> f64 {
        self.x2
    }
    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }
}

/// A discrete distribution over classes.
///
/// Construction rejects negative or non-finite entries and sums further than
/// [`PROB_SUM_TOLERANCE`] from one; accepted vectors are rescaled so the
/// stored values sum to one up to rounding.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    pub fn new(values: Vec<f64>) -> Result<Self, ProbabilityError> {
        if values.is_empty() {
            return Err(ProbabilityError::Empty);
        }
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(ProbabilityError::InvalidEntry { index, value });
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(ProbabilityError::SumOutOfTolerance { sum });
        }
        let mut values = values;
        // Leave rounding-level discrepancies alone so values survive a
        // serialization round trip bit for bit.
        if (sum - 1.0).abs() > 1e-12 {
            values.iter_mut().for_each(|v| *v /= sum);
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Largest entry.
    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Index of the largest entry; the first one wins on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.0.iter().enumerate() {
            if v > self.0[best] {
                best = i;
            }
        }
        best
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// A final (post-selection) prediction: box plus foreground class
/// distribution of length K.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: BoundingBox,
    probs: ProbabilityVector,
    confidence: f64,
}

impl Detection {
    pub fn new(bbox: BoundingBox, probs: ProbabilityVector) -> Self {
        let confidence = probs.max();
        Self {
            bbox,
            probs,
            confidence,
        }
    }

    pub fn probs(&self) -> &ProbabilityVector {
        &self.probs
    }

    pub fn confidence(&self) -> f64 {
        self.confidence
    }

    /// Zero-based foreground class index with the highest probability.
    pub fn class_index(&self) -> usize {
        self.probs.argmax()
    }
}

/// A region proposal: pooled instance feature plus a (K+1)-way distribution
/// with background as the last entry.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalRecord {
    pub feature: Vec<f64>,
    pub probs: ProbabilityVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageInference {
    pub image_id: String,
    pub detections: Vec<Detection>,
    pub proposals: Vec<ProposalRecord>,
}

impl ImageInference {
    pub fn new(image_id: impl Into<String>) -> Self {
        Self {
            image_id: image_id.into(),
            detections: Vec::new(),
            proposals: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Domain {
    Source,
    Target,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Domain::Source => f.write_str("source"),
            Domain::Target => f.write_str("target"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PassKind {
    Original,
    /// Inference under the n-th weight perturbation draw.
    Perturbed(u32),
}

impl fmt::Display for PassKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PassKind::Original => f.write_str("original"),
            PassKind::Perturbed(i) => write!(f, "perturbed[{i}]"),
        }
    }
}

/// Every image's output from one inference pass of one checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct PassDump {
    pub domain: Domain,
    pub kind: PassKind,
    pub images: Vec<ImageInference>,
}

impl PassDump {
    pub fn new(domain: Domain, kind: PassKind, images: Vec<ImageInference>) -> Self {
        Self {
            domain,
            kind,
            images,
        }
    }

    pub fn image_ids(&self) -> impl Iterator<Item = &str> {
        self.images.iter().map(|img| img.image_id.as_str())
    }

    pub fn detection_count(&self) -> usize {
        self.images.iter().map(|img| img.detections.len()).sum()
    }

    pub fn proposal_count(&self) -> usize {
        self.images.iter().map(|img| img.proposals.len()).sum()
    }
}

/// All inference dumps belonging to one checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointRecord {
    pub id: String,
    /// Position in training order.
    pub index: u64,
    pub target_original: PassDump,
    pub target_perturbed: Vec<PassDump>,
    pub source_proposals: PassDump,
}

impl CheckpointRecord {
    /// Target-domain proposals live inside the original target pass.
    pub fn target_proposals(&self) -> &PassDump {
        &self.target_original
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthObject {
    pub bbox: BoundingBox,
    /// One-based foreground class id in `1..=K`.
    pub class_id: usize,
}

/// Target-domain annotations keyed by image id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruthSet {
    pub images: BTreeMap<String, Vec<GroundTruthObject>>,
}

impl GroundTruthSet {
    pub fn objects(&self, image_id: &str) -> &[GroundTruthObject] {
        self.images.get(image_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn object_count(&self) -> usize {
        self.images.values().map(Vec::len).sum()
    }
}

/// A fully loaded run: the manifest header plus every dump it references.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub run_id: String,
    /// Foreground class count K.
    pub num_classes: usize,
    /// Proposal feature dimension d.
    pub feature_dim: usize,
    /// Radius of the weight perturbation used to produce the perturbed passes.
    pub gamma: f64,
    pub class_names: Vec<String>,
    pub checkpoints: Vec<CheckpointRecord>,
    pub ground_truth: Option<GroundTruthSet>,
}
