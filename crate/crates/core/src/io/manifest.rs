//! Run manifests: the JSON document naming every dump of a run.
//!
//! ```json
//! {
//!   "schema": "das.manifest.v1",
//!   "run_id": "demo",
//!   "num_classes": 2, "feature_dim": 8, "gamma": 1.0,
//!   "class_names": ["car", "person"],
//!   "checkpoints": [{
//!     "id": "ckpt-000", "index": 0,
//!     "target_original": {"dump": "ckpt-000/target.jsonl", "features": "ckpt-000/target.f32"},
//!     "target_perturbed": [{"dump": "ckpt-000/target_perturbed_0.jsonl"}],
//!     "source_proposals": {"dump": "ckpt-000/source.jsonl"}
//!   }],
//!   "ground_truth": "ground_truth.jsonl"
//! }
//! ```
//!
//! Paths are resolved relative to the manifest's directory.

use std::fs::{self, File};
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::dump::{parse_pass_dump, write_pass_dump, write_sidecar, DumpDims, DumpError, FeatureSink};
use super::ground_truth::{parse_ground_truth, write_ground_truth};
use crate::model::{CheckpointRecord, Domain, PassDump, PassKind, RunManifest};

pub const MANIFEST_SCHEMA: &str = "das.manifest.v1";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed manifest: {0}")]
    MalformedManifest(String),
    #[error("referenced file does not exist: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("{}: {source}", path.display())]
    InconsistentDims {
        path: PathBuf,
        #[source]
        source: DumpError,
    },
    #[error("{}: {source}", path.display())]
    Dump {
        path: PathBuf,
        #[source]
        source: DumpError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestDoc {
    #[serde(default = "default_schema")]
    pub schema: String,
    pub run_id: String,
    #[serde(alias = "K")]
    pub num_classes: usize,
    #[serde(alias = "d")]
    pub feature_dim: usize,
    pub gamma: f64,
    pub class_names: Vec<String>,
    pub checkpoints: Vec<CheckpointEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<String>,
}

fn default_schema() -> String {
    MANIFEST_SCHEMA.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointEntry {
    pub id: String,
    pub index: u64,
    pub target_original: PassEntry,
    #[serde(default)]
    pub target_perturbed: Vec<PassEntry>,
    pub source_proposals: PassEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PassEntry {
    pub dump: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<String>,
}

impl ManifestDoc {
    fn check(&self) -> Result<(), ManifestError> {
        let bad = |msg: String| Err(ManifestError::MalformedManifest(msg));
        if self.schema != MANIFEST_SCHEMA {
            return bad(format!("unsupported schema {:?}", self.schema));
        }
        if self.run_id.is_empty() {
            return bad("empty run_id".into());
        }
        if self.num_classes == 0 {
            return bad("num_classes must be at least 1".into());
        }
        if self.num_classes != self.class_names.len() {
            return bad(format!(
                "num_classes is {} but {} class names are listed",
                self.num_classes,
                self.class_names.len()
            ));
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be at least 1".into());
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return bad(format!("gamma must be positive, got {}", self.gamma));
        }
        let mut ids = std::collections::HashSet::new();
        for c in &self.checkpoints {
            if c.id.is_empty() || !ids.insert(c.id.as_str()) {
                return bad(format!("checkpoint id {:?} is empty or repeated", c.id));
            }
        }
        Ok(())
    }
}

/// Reads a manifest, resolves and parses every referenced dump, and checks
/// the cross-file dimension contract.
pub fn parse_manifest(path: &Path) -> Result<RunManifest, ManifestError> {
    let text = fs::read_to_string(path).map_err(|source| {
        if source.kind() == io::ErrorKind::NotFound {
            ManifestError::MissingFile(path.to_path_buf())
        } else {
            ManifestError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    })?;
    let doc: ManifestDoc = serde_json::from_str(&text)
        .map_err(|e| ManifestError::MalformedManifest(e.to_string()))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    load_run(&doc, base)
}

pub fn load_run(doc: &ManifestDoc, base: &Path) -> Result<RunManifest, ManifestError> {
    doc.check()?;
    let dims = DumpDims {
        num_classes: doc.num_classes,
        feature_dim: doc.feature_dim,
    };

    // Fail fast on missing files before doing any parsing work.
    let mut referenced = Vec::new();
    for c in &doc.checkpoints {
        for entry in std::iter::once(&c.target_original)
            .chain(&c.target_perturbed)
            .chain(std::iter::once(&c.source_proposals))
        {
            referenced.push(base.join(&entry.dump));
            if let Some(f) = &entry.features {
                referenced.push(base.join(f));
            }
        }
    }
    if let Some(gt) = &doc.ground_truth {
        referenced.push(base.join(gt));
    }
    if let Some(missing) = referenced.into_iter().find(|p| !p.is_file()) {
        return Err(ManifestError::MissingFile(missing));
    }

    let load = |entry: &PassEntry, domain: Domain, kind: PassKind| -> Result<PassDump, ManifestError> {
        let dump_path = base.join(&entry.dump);
        let sidecar = entry.features.as_ref().map(|f| base.join(f));
        parse_pass_dump(&dump_path, sidecar.as_deref(), domain, kind, dims).map_err(|source| {
            match source {
                DumpError::InconsistentDims { .. } => ManifestError::InconsistentDims {
                    path: dump_path,
                    source,
                },
                source => ManifestError::Dump {
                    path: dump_path,
                    source,
                },
            }
        })
    };

    let checkpoints = doc
        .checkpoints
        .par_iter()
        .map(|c| {
            let target_original = load(&c.target_original, Domain::Target, PassKind::Original)?;
            let target_perturbed = c
                .target_perturbed
                .iter()
                .enumerate()
                .map(|(i, e)| load(e, Domain::Target, PassKind::Perturbed(i as u32)))
                .collect::<Result<Vec<_>, _>>()?;
            let source_proposals = load(&c.source_proposals, Domain::Source, PassKind::Original)?;
            Ok(CheckpointRecord {
                id: c.id.clone(),
                index: c.index,
                target_original,
                target_perturbed,
                source_proposals,
            })
        })
        .collect::<Result<Vec<_>, ManifestError>>()?;

    let ground_truth = doc
        .ground_truth
        .as_ref()
        .map(|gt| {
            let p = base.join(gt);
            parse_ground_truth(&p, doc.num_classes).map_err(|source| ManifestError::Dump {
                path: p,
                source,
            })
        })
        .transpose()?;

    Ok(RunManifest {
        run_id: doc.run_id.clone(),
        num_classes: doc.num_classes,
        feature_dim: doc.feature_dim,
        gamma: doc.gamma,
        class_names: doc.class_names.clone(),
        checkpoints,
        ground_truth,
    })
}

/// How proposal features are stored when a run is written to disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeatureStorage {
    Inline,
    #[default]
    Sidecar,
}

/// Writes `run` under `dir` in the layout parsed by [`parse_manifest`] and
/// returns the manifest path.
pub fn write_run(
    dir: &Path,
    run: &RunManifest,
    storage: FeatureStorage,
) -> Result<PathBuf, ManifestError> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ManifestError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;

    let write_pass = |rel_stem: &str, pass: &PassDump| -> Result<PassEntry, ManifestError> {
        let dump_rel = format!("{rel_stem}.jsonl");
        let dump_path = dir.join(&dump_rel);
        if let Some(parent) = dump_path.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        let file = File::create(&dump_path).map_err(io_err(&dump_path))?;
        let has_proposals = pass.proposal_count() > 0;
        let mut sidecar = Vec::new();
        let sink = if storage == FeatureStorage::Sidecar && has_proposals {
            FeatureSink::Sidecar(&mut sidecar)
        } else {
            FeatureSink::Inline
        };
        write_pass_dump(BufWriter::new(file), pass, sink).map_err(io_err(&dump_path))?;
        let features = if storage == FeatureStorage::Sidecar && has_proposals {
            let rel = format!("{rel_stem}.f32");
            let path = dir.join(&rel);
            write_sidecar(&path, &sidecar).map_err(io_err(&path))?;
            Some(rel)
        } else {
            None
        };
        Ok(PassEntry {
            dump: dump_rel,
            features,
        })
    };

    let mut entries = Vec::with_capacity(run.checkpoints.len());
    for c in &run.checkpoints {
        let target_original = write_pass(&format!("{}/target_original", c.id), &c.target_original)?;
        let target_perturbed = c
            .target_perturbed
            .iter()
            .enumerate()
            .map(|(i, p)| write_pass(&format!("{}/target_perturbed_{i}", c.id), p))
            .collect::<Result<Vec<_>, _>>()?;
        let source_proposals =
            write_pass(&format!("{}/source_proposals", c.id), &c.source_proposals)?;
        entries.push(CheckpointEntry {
            id: c.id.clone(),
            index: c.index,
            target_original,
            target_perturbed,
            source_proposals,
        });
    }

    let ground_truth = match &run.ground_truth {
        Some(gt) => {
            let rel = "ground_truth.jsonl".to_string();
            let path = dir.join(&rel);
            let file = File::create(&path).map_err(io_err(&path))?;
            write_ground_truth(BufWriter::new(file), gt).map_err(io_err(&path))?;
            Some(rel)
        }
        None => None,
    };

    let doc = ManifestDoc {
        schema: MANIFEST_SCHEMA.to_string(),
        run_id: run.run_id.clone(),
        num_classes: run.num_classes,
        feature_dim: run.feature_dim,
        gamma: run.gamma,
        class_names: run.class_names.clone(),
        checkpoints: entries,
        ground_truth,
    };
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&doc).expect("manifest serializes");
    text.push('\n');
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(path)
}
