//! Run-level consistency checks.
//!
//! [`validate_run`] never fails; every problem becomes a [`Finding`]. A run
//! with no [`Severity::Fatal`] finding satisfies the preconditions of every
//! flatness and prototype computation.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::Serialize;

use crate::model::{PassDump, RunManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Fatal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Finding {
    pub severity: Severity,
    /// Short stable description, e.g. `"missing perturbed pass"`.
    pub kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    pub detail: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Warning => "warning",
            Severity::Fatal => "fatal",
        };
        write!(f, "[{sev}] {}", self.kind)?;
        if let Some(c) = &self.checkpoint {
            write!(f, " ({c})")?;
        }
        if !self.detail.is_empty() {
            write!(f, ": {}", self.detail)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ValidateOptions {
    /// Detection confidence threshold that scoring will use.
    pub conf_thresh: f64,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        Self {
            conf_thresh: crate::matching::DEFAULT_CONF_THRESH,
        }
    }
}

pub fn has_fatal(findings: &[Finding]) -> bool {
    findings.iter().any(|f| f.severity == Severity::Fatal)
}

pub fn validate_run(run: &RunManifest, opts: &ValidateOptions) -> Vec<Finding> {
    let mut out = Vec::new();
    let mut push = |severity, kind, checkpoint: Option<&str>, detail: String| {
        out.push(Finding {
            severity,
            kind,
            checkpoint: checkpoint.map(str::to_string),
            detail,
        })
    };

    if run.checkpoints.is_empty() {
        push(Severity::Fatal, "no checkpoints", None, String::new());
    }
    if run.num_classes < 2 {
        push(
            Severity::Fatal,
            "too few classes",
            None,
            format!(
                "prototype distances need at least 2 foreground classes, run has {}",
                run.num_classes
            ),
        );
    }
    for pair in run.checkpoints.windows(2) {
        if pair[1].index <= pair[0].index {
            push(
                Severity::Fatal,
                "checkpoint order",
                Some(&pair[1].id),
                format!(
                    "index {} does not follow {} ({})",
                    pair[1].index, pair[0].index, pair[0].id
                ),
            );
        }
    }

    for ckpt in &run.checkpoints {
        let id = Some(ckpt.id.as_str());
        let original = &ckpt.target_original;
        if original.images.is_empty() {
            push(Severity::Fatal, "empty pass", id, "target original pass has no images".into());
        }
        if ckpt.target_perturbed.is_empty() {
            push(Severity::Fatal, "missing perturbed pass", id, String::new());
        }

        let original_ids: BTreeSet<&str> = original.image_ids().collect();
        for pert in &ckpt.target_perturbed {
            let pert_ids: BTreeSet<&str> = pert.image_ids().collect();
            if pert_ids != original_ids {
                let only_orig: Vec<_> = original_ids.difference(&pert_ids).take(3).collect();
                let only_pert: Vec<_> = pert_ids.difference(&original_ids).take(3).collect();
                push(
                    Severity::Fatal,
                    "pass image mismatch",
                    id,
                    format!(
                        "{}: only in original {only_orig:?}, only in perturbed {only_pert:?}",
                        pert.kind
                    ),
                );
                continue;
            }
            if !has_contributing_image(original, pert, opts.conf_thresh) {
                push(
                    Severity::Fatal,
                    "no contributing images",
                    id,
                    format!(
                        "{}: no image has detections at confidence >= {} in both passes",
                        pert.kind, opts.conf_thresh
                    ),
                );
            }
        }

        for (label, pass) in [("target", original), ("source", &ckpt.source_proposals)] {
            let empty: Vec<&str> = pass
                .images
                .iter()
                .filter(|img| img.proposals.is_empty())
                .map(|img| img.image_id.as_str())
                .collect();
            if pass.images.is_empty() || empty.len() == pass.images.len() {
                push(
                    Severity::Fatal,
                    "no proposals",
                    id,
                    format!("{label} pass carries no proposals"),
                );
            } else if !empty.is_empty() {
                push(
                    Severity::Warning,
                    "image without proposals",
                    id,
                    format!(
                        "{} {label} images have no proposals and are skipped (first: {})",
                        empty.len(),
                        empty[0]
                    ),
                );
            }
        }
    }
    out
}

fn has_contributing_image(original: &PassDump, perturbed: &PassDump, conf_thresh: f64) -> bool {
    let survives = |dets: &[crate::model::Detection]| dets.iter().any(|d| d.confidence() >= conf_thresh);
    let pert: HashMap<&str, _> = perturbed
        .images
        .iter()
        .map(|img| (img.image_id.as_str(), img))
        .collect();
    original.images.iter().any(|img| {
        survives(&img.detections)
            && pert
                .get(img.image_id.as_str())
                .is_some_and(|p| survives(&p.detections))
    })
}
