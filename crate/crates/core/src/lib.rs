//! Label-free checkpoint ranking for domain-adaptive object detectors.
//!
//! Each checkpoint is scored from its own inference dumps by two signals:
//! how little its target-domain predictions move under a small random
//! parameter perturbation ([`matching::fis`]) and how well its class
//! prototypes line up across domains relative to how far apart the classes
//! are ([`prototype::pdr`]). The two are min-max normalized over the run and
//! summed into a single score used to pick a checkpoint
//! ([`score::score_run`]).
//!
//! The crate also carries the comparison baselines, a supervised mAP@0.5
//! evaluator for labelled runs, the dump/manifest wire format and a
//! synthetic detector harness.

pub mod assignment;
pub mod baselines;
pub mod eval;
pub mod io;
pub mod matching;
pub mod model;
pub mod prototype;
pub mod score;
pub mod synth;
pub mod validate;

pub use assignment::{hungarian_assign, Assignment, AssignmentError, CostMatrix};
pub use baselines::{
    baseline_atc, baseline_es, baseline_fd, baseline_ps, checkpoint_baselines, BaselineError,
    BaselineOptions, BaselineScores, FdMode,
};
pub use eval::{map50, pearson, selection_report, selection_summary, EvalError, SelectionSummary};
pub use io::{parse_manifest, write_run, FeatureStorage, ManifestError};
pub use matching::{fis, image_flatness_cost, iou, kl_divergence, pair_cost, MatchingError};
pub use model::{
    BoundingBox, CheckpointRecord, Detection, Domain, GroundTruthObject, GroundTruthSet,
    ImageInference, PassDump, PassKind, ProbabilityVector, ProposalRecord, RunManifest,
};
pub use prototype::{pdr, soft_prototypes, PrototypeError, PrototypeSet};
pub use score::{das, min_max_normalize, score_run, select_best, ScoreError, ScoreOptions, ScoreReport};
pub use synth::{generate_trajectory, SyntheticConfig};
pub use validate::{validate_run, Finding, Severity};
