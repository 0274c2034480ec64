//! Soft class prototypes and the Prototypical Distance Ratio.
//!
//! A prototype is the probability-weighted mean of proposal features for one
//! foreground class: per image, `(1/n) Σ_j F_j · p_j[k]`, then averaged over
//! images. PDR compares how far apart different classes sit (within and
//! across domains) against how far each class drifts between domains.

use rayon::prelude::*;
use thiserror::Error;

use crate::model::{Domain, PassDump};

/// Floor on the cross-domain distance in the PDR denominator.
pub const PDR_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PrototypeError {
    #[error("{domain} pass has no images")]
    EmptyPass { domain: Domain },
    #[error("no image of the {domain} pass has proposals")]
    NoProposals { domain: Domain },
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("class distances need at least two classes")]
    SingleClass,
}

/// K×d matrix of class prototypes for one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    pub domain: Domain,
    num_classes: usize,
    dim: usize,
    data: Vec<f64>,
}

impl PrototypeSet {
    pub fn from_rows(domain: Domain, rows: Vec<Vec<f64>>) -> Result<Self, PrototypeError> {
        let num_classes = rows.len();
        let dim = rows.first().map_or(0, Vec::len);
        if num_classes == 0 || dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return Err(PrototypeError::DimMismatch(
                "prototype rows must be non-empty and of equal length".into(),
            ));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(PrototypeError::DimMismatch("non-finite prototype entry".into()));
        }
        Ok(Self {
            domain,
            num_classes,
            dim,
            data: rows.concat(),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }
}

/// K×K matrix of Euclidean distances between two prototype sets.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    size: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.size + col]
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PrototypeOptions {
    /// Keep only the `n` proposals per image with the highest foreground
    /// probability. `None` uses every proposal.
    pub top_n: Option<usize>,
}

pub fn soft_prototypes(
    pass: &PassDump,
    num_classes: usize,
    dim: usize,
) -> Result<PrototypeSet, PrototypeError> {
    soft_prototypes_with(pass, num_classes, dim, PrototypeOptions::default())
}

pub fn soft_prototypes_with(
    pass: &PassDump,
    num_classes: usize,
    dim: usize,
    opts: PrototypeOptions,
) -> Result<PrototypeSet, PrototypeError> {
    if pass.images.is_empty() {
        return Err(PrototypeError::EmptyPass {
            domain: pass.domain,
        });
    }

    let mut partials = pass
        .images
        .par_iter()
        .filter(|img| !img.proposals.is_empty())
        .map(|img| {
            let mut chosen: Vec<_> = img.proposals.iter().collect();
            if let Some(n) = opts.top_n {
                let fg_max = |p: &crate::model::ProposalRecord| {
                    p.probs.as_slice()[..num_classes]
                        .iter()
                        .copied()
                        .fold(0.0, f64::max)
                };
                chosen.sort_by(|a, b| fg_max(b).total_cmp(&fg_max(a)));
                chosen.truncate(n.max(1));
            }
            let mut acc = vec![0.0; num_classes * dim];
            for prop in &chosen {
                if prop.feature.len() != dim || prop.probs.len() != num_classes + 1 {
                    return Err(PrototypeError::DimMismatch(format!(
                        "image {}: proposal has {} features / {} probs, expected {dim} / {}",
                        img.image_id,
                        prop.feature.len(),
                        prop.probs.len(),
                        num_classes + 1
                    )));
                }
                // The trailing background probability never weights a prototype.
                for (k, &w) in prop.probs.as_slice()[..num_classes].iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    let row = &mut acc[k * dim..(k + 1) * dim];
                    for (r, &f) in row.iter_mut().zip(&prop.feature) {
                        *r += w * f;
                    }
                }
            }
            let n = chosen.len() as f64;
            acc.iter_mut().for_each(|v| *v /= n);
            Ok((img.image_id.as_str(), acc))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let skipped = pass.images.len() - partials.len();
    if partials.is_empty() {
        return Err(PrototypeError::NoProposals {
            domain: pass.domain,
        });
    }
    if skipped > 0 {
        log::warn!(
            "{} {} images have no proposals and were left out of the prototypes",
            skipped,
            pass.domain
        );
    }

    partials.sort_unstable_by(|a, b| a.0.cmp(b.0));
    let mut data = vec![0.0; num_classes * dim];
    for (_, acc) in &partials {
        for (d, v) in data.iter_mut().zip(acc) {
            *d += v;
        }
    }
    let n = partials.len() as f64;
    data.iter_mut().for_each(|v| *v /= n);

    Ok(PrototypeSet {
        domain: pass.domain,
        num_classes,
        dim,
        data,
    })
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn pairwise_distance_matrix(
    p: &PrototypeSet,
    q: &PrototypeSet,
) -> Result<DistanceMatrix, PrototypeError> {
    if p.dim != q.dim || p.num_classes != q.num_classes {
        return Err(PrototypeError::DimMismatch(format!(
            "{}x{} vs {}x{} prototypes",
            p.num_classes, p.dim, q.num_classes, q.dim
        )));
    }
    let size = p.num_classes;
    let mut data = Vec::with_capacity(size * size);
    for a in p.rows() {
        for b in q.rows() {
            data.push(euclidean(a, b));
        }
    }
    Ok(DistanceMatrix { size, data })
}

/// Mean diagonal entry of a cross-domain distance matrix.
pub fn intra_distance(cross: &DistanceMatrix) -> f64 {
    (0..cross.size).map(|k| cross.get(k, k)).sum::<f64>() / cross.size as f64
}

/// Mean of the K²−K off-diagonal entries.
pub fn mean_offdiagonal(m: &DistanceMatrix) -> Result<f64, PrototypeError> {
    let k = m.size;
    if k < 2 {
        return Err(PrototypeError::SingleClass);
    }
    let mut sum = 0.0;
    for r in 0..k {
        for c in 0..k {
            if r != c {
                sum += m.get(r, c);
            }
        }
    }
    Ok(sum / (k * k - k) as f64)
}

pub fn inter_distance(ps: &PrototypeSet, pt: &PrototypeSet) -> Result<f64, PrototypeError> {
    let cross = mean_offdiagonal(&pairwise_distance_matrix(ps, pt)?)?;
    let source = mean_offdiagonal(&pairwise_distance_matrix(ps, ps)?)?;
    let target = mean_offdiagonal(&pairwise_distance_matrix(pt, pt)?)?;
    Ok(cross * source * target)
}

/// Components of one PDR evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdrParts {
    pub d_intra: f64,
    pub d_inter: f64,
    pub pdr: f64,
}

pub fn pdr_parts(ps: &PrototypeSet, pt: &PrototypeSet) -> Result<PdrParts, PrototypeError> {
    if ps.num_classes < 2 {
        return Err(PrototypeError::SingleClass);
    }
    let d_intra = intra_distance(&pairwise_distance_matrix(ps, pt)?);
    let d_inter = inter_distance(ps, pt)?;
    Ok(PdrParts {
        d_intra,
        d_inter,
        pdr: d_inter / d_intra.max(PDR_EPSILON),
    })
}

pub fn pdr(ps: &PrototypeSet, pt: &PrototypeSet) -> Result<f64, PrototypeError> {
    pdr_parts(ps, pt).map(|p| p.pdr)
}
