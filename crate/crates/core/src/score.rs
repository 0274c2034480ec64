//! Min-max normalization, the Detection Adaptation Score, and checkpoint
//! selection.

use rayon::prelude::*;
use thiserror::Error;

use crate::matching::{fis, MatchingError, DEFAULT_CONF_THRESH};
use crate::model::{CheckpointRecord, RunManifest};
use crate::prototype::{pdr_parts, soft_prototypes_with, PdrParts, PrototypeError, PrototypeOptions};

pub const DEFAULT_LAMBDA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoreError {
    #[error("empty score list")]
    EmptyList,
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("non-finite score value {0}")]
    NonFinite(f64),
    #[error("lambda must be finite and non-negative, got {0}")]
    InvalidLambda(f64),
    #[error(transparent)]
    Matching(#[from] MatchingError),
    #[error("checkpoint {checkpoint}: {source}")]
    Prototype {
        checkpoint: String,
        #[source]
        source: PrototypeError,
    },
}

/// Rescales `values` onto [0, 1]. A constant series maps to 0.5 everywhere.
pub fn min_max_normalize(values: &[f64]) -> Result<Vec<f64>, ScoreError> {
    if values.is_empty() {
        return Err(ScoreError::EmptyList);
    }
    if let Some(&bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(ScoreError::NonFinite(bad));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if range == 0.0 {
        return Ok(vec![0.5; values.len()]);
    }
    Ok(values
        .iter()
        .map(|v| ((v - min) / range).clamp(0.0, 1.0))
        .collect())
}

/// `DAS_t = norm(FIS)_t + λ · norm(PDR)_t`.
pub fn das(fis_raw: &[f64], pdr_raw: &[f64], lambda: f64) -> Result<Vec<f64>, ScoreError> {
    if fis_raw.len() != pdr_raw.len() {
        return Err(ScoreError::LengthMismatch(fis_raw.len(), pdr_raw.len()));
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(ScoreError::InvalidLambda(lambda));
    }
    let f = min_max_normalize(fis_raw)?;
    let p = min_max_normalize(pdr_raw)?;
    Ok(f.iter().zip(&p).map(|(f, p)| f + lambda * p).collect())
}

/// Position of the best checkpoint: highest DAS, then highest raw FIS, then
/// earliest in training order.
pub fn select_best_index(das_values: &[f64], fis_raw: &[f64]) -> Result<usize, ScoreError> {
    if das_values.is_empty() {
        return Err(ScoreError::EmptyList);
    }
    if das_values.len() != fis_raw.len() {
        return Err(ScoreError::LengthMismatch(das_values.len(), fis_raw.len()));
    }
    let mut best = 0;
    for i in 1..das_values.len() {
        let better = das_values[i] > das_values[best]
            || (das_values[i] == das_values[best] && fis_raw[i] > fis_raw[best]);
        if better {
            best = i;
        }
    }
    Ok(best)
}

/// Id of the best checkpoint; `checkpoint_ids` must be in training order.
pub fn select_best<'a>(
    das_values: &[f64],
    fis_raw: &[f64],
    checkpoint_ids: &'a [String],
) -> Result<&'a str, ScoreError> {
    if checkpoint_ids.len() != das_values.len() {
        return Err(ScoreError::LengthMismatch(checkpoint_ids.len(), das_values.len()));
    }
    select_best_index(das_values, fis_raw).map(|i| checkpoint_ids[i].as_str())
}

/// One metric across all checkpoints of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSeries {
    pub metric_name: String,
    pub checkpoint_ids: Vec<String>,
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
}

impl ScoreSeries {
    pub fn new(
        metric_name: impl Into<String>,
        checkpoint_ids: Vec<String>,
        raw: Vec<f64>,
    ) -> Result<Self, ScoreError> {
        if checkpoint_ids.len() != raw.len() {
            return Err(ScoreError::LengthMismatch(checkpoint_ids.len(), raw.len()));
        }
        let normalized = min_max_normalize(&raw)?;
        Ok(Self {
            metric_name: metric_name.into(),
            checkpoint_ids,
            raw,
            normalized,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ScoreOptions {
    pub lambda: f64,
    pub conf_thresh: f64,
    pub prototypes: PrototypeOptions,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            conf_thresh: DEFAULT_CONF_THRESH,
            prototypes: PrototypeOptions::default(),
        }
    }
}

/// Raw label-free scores of one checkpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckpointScore {
    pub fis: f64,
    pub pdr: PdrParts,
}

pub fn score_checkpoint(
    ckpt: &CheckpointRecord,
    num_classes: usize,
    feature_dim: usize,
    opts: &ScoreOptions,
) -> Result<CheckpointScore, ScoreError> {
    let proto_err = |source| ScoreError::Prototype {
        checkpoint: ckpt.id.clone(),
        source,
    };
    let fis = fis(ckpt, opts.conf_thresh)?;
    let source = soft_prototypes_with(&ckpt.source_proposals, num_classes, feature_dim, opts.prototypes)
        .map_err(proto_err)?;
    let target = soft_prototypes_with(ckpt.target_proposals(), num_classes, feature_dim, opts.prototypes)
        .map_err(proto_err)?;
    let pdr = pdr_parts(&source, &target).map_err(proto_err)?;
    Ok(CheckpointScore { fis, pdr })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub checkpoint_id: String,
    pub index: u64,
    pub fis: f64,
    pub pdr: f64,
    pub d_intra: f64,
    pub d_inter: f64,
    pub fis_norm: f64,
    pub pdr_norm: f64,
    pub das: f64,
}

/// DAS scores for every checkpoint of a run, in training order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub run_id: String,
    pub lambda: f64,
    pub conf_thresh: f64,
    pub rows: Vec<ScoreRow>,
    pub selected_checkpoint_id: String,
    pub selected_position: usize,
    /// True when FIS or PDR was constant across checkpoints, so its
    /// normalized column is uniformly 0.5.
    pub degenerate_normalization: bool,
}

impl ScoreReport {
    pub fn from_raw(
        run_id: impl Into<String>,
        ids_and_indices: Vec<(String, u64)>,
        scores: &[CheckpointScore],
        opts: &ScoreOptions,
    ) -> Result<Self, ScoreError> {
        if ids_and_indices.len() != scores.len() {
            return Err(ScoreError::LengthMismatch(ids_and_indices.len(), scores.len()));
        }
        let fis_raw: Vec<f64> = scores.iter().map(|s| s.fis).collect();
        let pdr_raw: Vec<f64> = scores.iter().map(|s| s.pdr.pdr).collect();
        let fis_norm = min_max_normalize(&fis_raw)?;
        let pdr_norm = min_max_normalize(&pdr_raw)?;
        let das_values = das(&fis_raw, &pdr_raw, opts.lambda)?;
        let selected = select_best_index(&das_values, &fis_raw)?;
        let constant = |v: &[f64]| v.iter().all(|x| *x == v[0]);
        let degenerate_normalization = constant(&fis_raw) || constant(&pdr_raw);

        let rows: Vec<ScoreRow> = ids_and_indices
            .into_iter()
            .enumerate()
            .map(|(i, (checkpoint_id, index))| ScoreRow {
                checkpoint_id,
                index,
                fis: fis_raw[i],
                pdr: pdr_raw[i],
                d_intra: scores[i].pdr.d_intra,
                d_inter: scores[i].pdr.d_inter,
                fis_norm: fis_norm[i],
                pdr_norm: pdr_norm[i],
                das: das_values[i],
            })
            .collect();
        Ok(Self {
            run_id: run_id.into(),
            lambda: opts.lambda,
            conf_thresh: opts.conf_thresh,
            selected_checkpoint_id: rows[selected].checkpoint_id.clone(),
            selected_position: selected,
            rows,
            degenerate_normalization,
        })
    }

    pub fn das_values(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.das).collect()
    }
}

/// Scores every checkpoint (in parallel) and assembles the report in
/// training order.
pub fn score_run(run: &RunManifest, opts: &ScoreOptions) -> Result<ScoreReport, ScoreError> {
    let scores = run
        .checkpoints
        .par_iter()
        .map(|c| score_checkpoint(c, run.num_classes, run.feature_dim, opts))
        .collect::<Result<Vec<_>, _>>()?;
    let ids = run
        .checkpoints
        .iter()
        .map(|c| (c.id.clone(), c.index))
        .collect();
    ScoreReport::from_raw(run.run_id.clone(), ids, &scores, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_examples() {
        assert_eq!(min_max_normalize(&[2.0, 4.0, 6.0]).unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(min_max_normalize(&[5.0, 5.0, 5.0]).unwrap(), vec![0.5; 3]);
        assert_eq!(min_max_normalize(&[-1.0, 1.0]).unwrap(), vec![0.0, 1.0]);
        assert_eq!(min_max_normalize(&[]), Err(ScoreError::EmptyList));
        assert!(min_max_normalize(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn das_examples() {
        let d = das(&[2.0, 4.0, 6.0], &[10.0, 30.0, 20.0], 1.0).unwrap();
        assert_eq!(d, vec![0.0, 1.5, 1.5]);

        let d0 = das(&[2.0, 4.0, 6.0], &[10.0, 30.0, 20.0], 0.0).unwrap();
        assert_eq!(d0, min_max_normalize(&[2.0, 4.0, 6.0]).unwrap());

        assert_eq!(das(&[3.0], &[7.0], 2.0).unwrap(), vec![0.5 + 0.5 * 2.0]);
        assert_eq!(das(&[1.0], &[1.0, 2.0], 1.0), Err(ScoreError::LengthMismatch(1, 2)));
        assert!(das(&[1.0], &[1.0], -1.0).is_err());
    }

    #[test]
    fn selection_tie_breaks() {
        let ids: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        assert_eq!(select_best(&[0.0, 1.5, 1.5], &[2.0, 4.0, 6.0], &ids).unwrap(), "c");
        assert_eq!(select_best(&[1.0, 0.0], &[0.0, 0.0], &ids[..2]).unwrap(), "a");
        assert_eq!(select_best(&[0.3; 3], &[1.0; 3], &ids).unwrap(), "a");
        assert_eq!(select_best(&[], &[], &[]), Err(ScoreError::EmptyList));
    }
}
