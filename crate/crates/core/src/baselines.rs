//! Label-free baseline scores: mean confidence (PS), negated entropy (ES),
//! above-threshold fraction (ATC) and negated Fréchet feature distance (FD).
//!
//! Every score is oriented so that higher predicts a better checkpoint.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::matching::ClampedDist;
use crate::model::{CheckpointRecord, Detection, PassDump};

pub const DEFAULT_ATC_THRESHOLDS: [f64; 3] = [0.3, 0.4, 0.95];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BaselineError {
    #[error("no detections survive the confidence threshold {0}")]
    NoDetections(f64),
    #[error("{domain} pass has {found} proposal features; at least 2 are needed")]
    InsufficientSamples { domain: &'static str, found: usize },
    #[error("feature dimensions differ ({0} vs {1})")]
    DimMismatch(usize, usize),
    #[error("ATC threshold must lie in [0, 1), got {0}")]
    InvalidThreshold(f64),
}

fn surviving(dump: &PassDump, conf_thresh: f64) -> Result<Vec<&Detection>, BaselineError> {
    let dets: Vec<&Detection> = dump
        .images
        .iter()
        .flat_map(|img| &img.detections)
        .filter(|d| d.confidence() >= conf_thresh)
        .collect();
    if dets.is_empty() {
        return Err(BaselineError::NoDetections(conf_thresh));
    }
    Ok(dets)
}

/// Mean top-class confidence over surviving detections.
pub fn baseline_ps(dump: &PassDump, conf_thresh: f64) -> Result<f64, BaselineError> {
    let dets = surviving(dump, conf_thresh)?;
    Ok(dets.iter().map(|d| d.confidence()).sum::<f64>() / dets.len() as f64)
}

/// Negated mean Shannon entropy (nats) of surviving detections.
pub fn baseline_es(dump: &PassDump, conf_thresh: f64) -> Result<f64, BaselineError> {
    let dets = surviving(dump, conf_thresh)?;
    let total: f64 = dets
        .iter()
        .map(|d| ClampedDist::new(d.probs().as_slice()).neg_entropy())
        .sum();
    Ok(total / dets.len() as f64)
}

/// Fraction of surviving detections, pooled over images, whose confidence
/// exceeds `threshold`.
pub fn baseline_atc(dump: &PassDump, threshold: f64, conf_thresh: f64) -> Result<f64, BaselineError> {
    if !(0.0..1.0).contains(&threshold) {
        return Err(BaselineError::InvalidThreshold(threshold));
    }
    let dets = surviving(dump, conf_thresh)?;
    let above = dets.iter().filter(|d| d.confidence() > threshold).count();
    Ok(above as f64 / dets.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FdMode {
    #[default]
    Full,
    Diagonal,
}

/// Sample mean and (n−1)-normalized covariance of a set of feature rows.
#[derive(Debug, Clone)]
pub struct GaussianFit {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub samples: usize,
}

pub fn fit_gaussian<'a>(
    features: impl IntoIterator<Item = &'a [f64]>,
    dim: usize,
    mode: FdMode,
) -> GaussianFit {
    let rows: Vec<&[f64]> = features.into_iter().collect();
    let n = rows.len();
    let mut mean = DVector::zeros(dim);
    for r in &rows {
        for (m, v) in mean.iter_mut().zip(r.iter()) {
            *m += v;
        }
    }
    mean /= n.max(1) as f64;
    let mut cov = DMatrix::zeros(dim, dim);
    for r in &rows {
        let centered = DVector::from_iterator(dim, r.iter().zip(mean.iter()).map(|(v, m)| v - m));
        match mode {
            FdMode::Full => cov.ger(1.0, &centered, &centered, 1.0),
            FdMode::Diagonal => {
                for i in 0..dim {
                    cov[(i, i)] += centered[i] * centered[i];
                }
            }
        }
    }
    cov /= (n.max(2) - 1) as f64;
    GaussianFit {
        mean,
        cov,
        samples: n,
    }
}

/// Principal square root of a symmetric positive semi-definite matrix via its
/// eigendecomposition. Slightly negative eigenvalues from rounding are
/// clamped to zero.
pub fn spd_sqrt(x: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (x + x.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose()
}

/// `‖μ₁−μ₂‖² + Tr(Σ₁ + Σ₂ − 2(Σ₁Σ₂)^{1/2})`, with the trace of the product
/// root taken as `Tr((Σ₁^{1/2} Σ₂ Σ₁^{1/2})^{1/2})`.
pub fn frechet_distance(a: &GaussianFit, b: &GaussianFit, mode: FdMode) -> f64 {
    let mean_term = (&a.mean - &b.mean).norm_squared();
    let cov_term = match mode {
        FdMode::Diagonal => a
            .cov
            .diagonal()
            .iter()
            .zip(b.cov.diagonal().iter())
            .map(|(x, y)| {
                let d = x.max(0.0).sqrt() - y.max(0.0).sqrt();
                d * d
            })
            .sum(),
        FdMode::Full => {
            let root_a = spd_sqrt(&a.cov);
            let inner = &root_a * &b.cov * &root_a;
            let inner = (&inner + inner.transpose()) * 0.5;
            let tr_root: f64 = inner
                .symmetric_eigenvalues()
                .iter()
                .map(|v| v.max(0.0).sqrt())
                .sum();
            a.cov.trace() + b.cov.trace() - 2.0 * tr_root
        }
    };
    mean_term + cov_term
}

fn pooled_features(pass: &PassDump) -> Vec<&[f64]> {
    pass.images
        .iter()
        .flat_map(|img| img.proposals.iter().map(|p| p.feature.as_slice()))
        .collect()
}

/// Negated Fréchet distance between Gaussians fitted to the pooled proposal
/// features of the two passes. Full covariance falls back to the diagonal
/// estimator when either domain has at most `d` samples.
pub fn baseline_fd(
    source_props: &PassDump,
    target_props: &PassDump,
    mode: FdMode,
) -> Result<f64, BaselineError> {
    let src = pooled_features(source_props);
    let tgt = pooled_features(target_props);
    for (domain, feats) in [("source", &src), ("target", &tgt)] {
        if feats.len() < 2 {
            return Err(BaselineError::InsufficientSamples {
                domain,
                found: feats.len(),
            });
        }
    }
    let dim = src[0].len();
    if tgt[0].len() != dim {
        return Err(BaselineError::DimMismatch(dim, tgt[0].len()));
    }
    let mode = if mode == FdMode::Full && (src.len() <= dim || tgt.len() <= dim) {
        log::info!(
            "FD: {} source / {} target samples for d = {dim}; using diagonal covariance",
            src.len(),
            tgt.len()
        );
        FdMode::Diagonal
    } else {
        mode
    };
    let a = fit_gaussian(src, dim, mode);
    let b = fit_gaussian(tgt, dim, mode);
    Ok(-frechet_distance(&a, &b, mode))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineScores {
    pub ps: f64,
    pub es: f64,
    /// `(threshold, score)` pairs in the requested order.
    pub atc: Vec<(f64, f64)>,
    /// Absent when the run carries no proposals.
    pub fd: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct BaselineOptions {
    pub conf_thresh: f64,
    pub atc_thresholds: Vec<f64>,
    pub fd_mode: FdMode,
}

impl Default for BaselineOptions {
    fn default() -> Self {
        Self {
            conf_thresh: crate::matching::DEFAULT_CONF_THRESH,
            atc_thresholds: DEFAULT_ATC_THRESHOLDS.to_vec(),
            fd_mode: FdMode::Full,
        }
    }
}

pub fn checkpoint_baselines(
    ckpt: &CheckpointRecord,
    opts: &BaselineOptions,
) -> Result<BaselineScores, BaselineError> {
    let dump = &ckpt.target_original;
    let atc = opts
        .atc_thresholds
        .iter()
        .map(|&t| baseline_atc(dump, t, opts.conf_thresh).map(|v| (t, v)))
        .collect::<Result<Vec<_>, _>>()?;
    let fd = match baseline_fd(&ckpt.source_proposals, ckpt.target_proposals(), opts.fd_mode) {
        Ok(v) => Some(v),
        Err(BaselineError::InsufficientSamples { .. }) => None,
        Err(e) => return Err(e),
    };
    Ok(BaselineScores {
        ps: baseline_ps(dump, opts.conf_thresh)?,
        es: baseline_es(dump, opts.conf_thresh)?,
        atc,
        fd,
    })
}
