//! Ground-truth files: one `{"image_id":..., "objects":[{"bbox":[...],"class_id":k}]}`
//! line per image, with one-based class ids.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dump::DumpError;
use crate::model::{BoundingBox, GroundTruthObject, GroundTruthSet};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroundTruthLine {
    image_id: String,
    #[serde(default)]
    objects: Vec<ObjectLine>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectLine {
    bbox: [f64; 4],
    class_id: usize,
}

pub fn parse_ground_truth(path: &Path, num_classes: usize) -> Result<GroundTruthSet, DumpError> {
    read_ground_truth(BufReader::new(File::open(path)?), num_classes)
}

pub fn read_ground_truth<R: BufRead>(
    reader: R,
    num_classes: usize,
) -> Result<GroundTruthSet, DumpError> {
    let mut set = GroundTruthSet::default();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: GroundTruthLine =
            serde_json::from_str(&line).map_err(|e| DumpError::MalformedRecord {
                line: line_no,
                reason: e.to_string(),
            })?;
        let mut objects = Vec::with_capacity(record.objects.len());
        for obj in record.objects {
            if obj.class_id == 0 || obj.class_id > num_classes {
                return Err(DumpError::MalformedRecord {
                    line: line_no,
                    reason: format!("class_id {} outside 1..={num_classes}", obj.class_id),
                });
            }
            let bbox = BoundingBox::from_array(obj.bbox)
                .map_err(|source| DumpError::BoxViolation {
                    line: line_no,
                    source,
                })?;
            objects.push(GroundTruthObject {
                bbox,
                class_id: obj.class_id,
            });
        }
        if set.images.insert(record.image_id.clone(), objects).is_some() {
            return Err(DumpError::MalformedRecord {
                line: line_no,
                reason: format!("duplicate image_id {:?}", record.image_id),
            });
        }
    }
    Ok(set)
}

pub fn write_ground_truth<W: Write>(mut writer: W, gt: &GroundTruthSet) -> io::Result<()> {
    for (image_id, objects) in &gt.images {
        let line = GroundTruthLine {
            image_id: image_id.clone(),
            objects: objects
                .iter()
                .map(|o| ObjectLine {
                    bbox: o.bbox.to_array(),
                    class_id: o.class_id,
                })
                .collect(),
        };
        serde_json::to_writer(&mut writer, &line)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}
