//! On-disk formats: pass dumps, feature sidecars, ground truth and manifests.

mod dump;
mod ground_truth;
mod manifest;

pub use dump::{
    parse_pass_dump, read_pass_dump, read_sidecar, write_pass_dump, write_sidecar, DumpDims,
    DumpError, FeatureRef, FeatureSink,
};
pub use ground_truth::{parse_ground_truth, read_ground_truth, write_ground_truth};
pub use manifest::{
    load_run, parse_manifest, write_run, CheckpointEntry, FeatureStorage, ManifestDoc,
    ManifestError, PassEntry, MANIFEST_FILE, MANIFEST_SCHEMA,
};
