//! Line-delimited pass dumps.
//!
//! One JSON object per line, one line per image:
//!
//! ```text
//! {"image_id":"img-0001","detections":[{"bbox":[x1,y1,x2,y2],"probs":[...]}],
//!  "proposals":[{"feature":[...],"probs":[...]} | {"feature_ref":{"offset":0,"count":128},"probs":[...]}]}
//! ```
//!
//! Proposal features are either inline or stored in a sidecar file of
//! little-endian `f32` values, row-major, addressed by element offset.

use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    BoundingBox, BoxError, Detection, Domain, ImageInference, PassDump, PassKind,
    ProbabilityError, ProbabilityVector, ProposalRecord,
};

#[derive(Debug, Error)]
pub enum DumpError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: malformed record: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("line {line}: {source}")]
    ProbabilityViolation {
        line: usize,
        #[source]
        source: ProbabilityError,
    },
    #[error("line {line}: {source}")]
    BoxViolation {
        line: usize,
        #[source]
        source: BoxError,
    },
    #[error("line {line}: {what} has length {found}, expected {expected}")]
    InconsistentDims {
        line: usize,
        what: &'static str,
        expected: usize,
        found: usize,
    },
}

/// Dimensions a dump is checked against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DumpDims {
    pub num_classes: usize,
    pub feature_dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureRef {
    pub offset: u64,
    pub count: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImageLine {
    image_id: String,
    #[serde(default)]
    detections: Vec<DetectionLine>,
    #[serde(default)]
    proposals: Vec<ProposalLine>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionLine {
    bbox: [f64; 4],
    probs: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProposalLine {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    feature: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    feature_ref: Option<FeatureRef>,
    probs: Vec<f64>,
}

/// Where proposal features go when writing a dump.
pub enum FeatureSink<'a> {
    Inline,
    /// Append features to this buffer and emit `feature_ref`s into it.
    Sidecar(&'a mut Vec<f32>),
}

pub fn parse_pass_dump(
    path: &Path,
    sidecar: Option<&Path>,
    domain: Domain,
    kind: PassKind,
    dims: DumpDims,
) -> Result<PassDump, DumpError> {
    let features = sidecar.map(read_sidecar).transpose()?;
    let reader = BufReader::new(File::open(path)?);
    read_pass_dump(reader, features.as_deref(), domain, kind, dims)
}

pub fn read_pass_dump<R: BufRead>(
    reader: R,
    sidecar: Option<&[f32]>,
    domain: Domain,
    kind: PassKind,
    dims: DumpDims,
) -> Result<PassDump, DumpError> {
    let mut images = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ImageLine =
            serde_json::from_str(&line).map_err(|e| DumpError::MalformedRecord {
                line: line_no,
                reason: e.to_string(),
            })?;
        let image = convert_image(record, line_no, sidecar, dims)?;
        if !seen.insert(image.image_id.clone()) {
            return Err(DumpError::MalformedRecord {
                line: line_no,
                reason: format!("duplicate image_id {:?}", image.image_id),
            });
        }
        images.push(image);
    }
    Ok(PassDump::new(domain, kind, images))
}

fn convert_image(
    record: ImageLine,
    line: usize,
    sidecar: Option<&[f32]>,
    dims: DumpDims,
) -> Result<ImageInference, DumpError> {
    if record.image_id.is_empty() {
        return Err(DumpError::MalformedRecord {
            line,
            reason: "empty image_id".into(),
        });
    }
    let detections = record
        .detections
        .into_iter()
        .map(|d| {
            if d.probs.len() != dims.num_classes {
                return Err(DumpError::InconsistentDims {
                    line,
                    what: "detection probs",
                    expected: dims.num_classes,
                    found: d.probs.len(),
                });
            }
            let bbox = BoundingBox::from_array(d.bbox)
                .map_err(|source| DumpError::BoxViolation { line, source })?;
            let probs = ProbabilityVector::new(d.probs)
                .map_err(|source| DumpError::ProbabilityViolation { line, source })?;
            Ok(Detection::new(bbox, probs))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let proposals = record
        .proposals
        .into_iter()
        .map(|p| convert_proposal(p, line, sidecar, dims))
        .collect::<Result<Vec<_>, _>>()?;

    Ok(ImageInference {
        image_id: record.image_id,
        detections,
        proposals,
    })
}

fn convert_proposal(
    p: ProposalLine,
    line: usize,
    sidecar: Option<&[f32]>,
    dims: DumpDims,
) -> Result<ProposalRecord, DumpError> {
    let feature = match (p.feature, p.feature_ref) {
        (Some(f), None) => f,
        (None, Some(r)) => {
            let data = sidecar.ok_or_else(|| DumpError::MalformedRecord {
                line,
                reason: "feature_ref given but the pass has no feature sidecar".into(),
            })?;
            let start = r.offset as usize;
            let end = start.checked_add(r.count as usize).unwrap_or(usize::MAX);
            let slice = data.get(start..end).ok_or_else(|| DumpError::MalformedRecord {
                line,
                reason: format!(
                    "feature_ref {}+{} outside sidecar of {} values",
                    r.offset,
                    r.count,
                    data.len()
                ),
            })?;
            slice.iter().map(|&v| f64::from(v)).collect()
        }
        (Some(_), Some(_)) => {
            return Err(DumpError::MalformedRecord {
                line,
                reason: "proposal has both feature and feature_ref".into(),
            })
        }
        (None, None) => {
            return Err(DumpError::MalformedRecord {
                line,
                reason: "proposal has neither feature nor feature_ref".into(),
            })
        }
    };
    if feature.len() != dims.feature_dim {
        return Err(DumpError::InconsistentDims {
            line,
            what: "proposal feature",
            expected: dims.feature_dim,
            found: feature.len(),
        });
    }
    if feature.iter().any(|v| !v.is_finite()) {
        return Err(DumpError::MalformedRecord {
            line,
            reason: "non-finite proposal feature".into(),
        });
    }
    if p.probs.len() != dims.num_classes + 1 {
        return Err(DumpError::InconsistentDims {
            line,
            what: "proposal probs",
            expected: dims.num_classes + 1,
            found: p.probs.len(),
        });
    }
    let probs = ProbabilityVector::new(p.probs)
        .map_err(|source| DumpError::ProbabilityViolation { line, source })?;
    Ok(ProposalRecord { feature, probs })
}

pub fn write_pass_dump<W: Write>(
    mut writer: W,
    pass: &PassDump,
    mut features: FeatureSink<'_>,
) -> io::Result<()> {
    for image in &pass.images {
        let proposals = image
            .proposals
            .iter()
            .map(|p| {
                let probs = p.probs.as_slice().to_vec();
                match &mut features {
                    FeatureSink::Inline => ProposalLine {
                        feature: Some(p.feature.clone()),
                        feature_ref: None,
                        probs,
                    },
                    FeatureSink::Sidecar(buf) => {
                        let offset = buf.len() as u64;
                        buf.extend(p.feature.iter().map(|&v| v as f32));
                        ProposalLine {
                            feature: None,
                            feature_ref: Some(FeatureRef {
                                offset,
                                count: p.feature.len() as u64,
                            }),
                            probs,
                        }
                    }
                }
            })
            .collect();
        let record = ImageLine {
            image_id: image.image_id.clone(),
            detections: image
                .detections
                .iter()
                .map(|d| DetectionLine {
                    bbox: d.bbox.to_array(),
                    probs: d.probs().as_slice().to_vec(),
                })
                .collect(),
            proposals,
        };
        serde_json::to_writer(&mut writer, &record)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn read_sidecar(path: &Path) -> io::Result<Vec<f32>> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() % 4 != 0 {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!(
                "{}: sidecar length {} is not a multiple of 4",
                path.display(),
                bytes.len()
            ),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn write_sidecar(path: &Path, values: &[f32]) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()
}
