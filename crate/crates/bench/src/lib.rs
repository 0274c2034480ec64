//! Random fixtures sized like real detector dumps, shared by the benches.

use das_core::model::{
    BoundingBox, CheckpointRecord, Detection, Domain, ImageInference, PassDump, PassKind, ProbabilityVector,
    ProposalRecord,
};
use das_core::CostMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy)]
pub struct DumpShape {
    pub images: usize,
    pub detections: usize,
    pub proposals: usize,
    pub feature_dim: usize,
    pub num_classes: usize,
}

impl DumpShape {
    /// 500 images, 100 detections and 100 proposals each, d = 128, K = 20.
    pub fn realistic() -> Self {
        Self {
            images: 500,
            detections: 100,
            proposals: 100,
            feature_dim: 128,
            num_classes: 20,
        }
    }
}

fn simplex(rng: &mut ChaCha8Rng, len: usize, peak: Option<usize>) -> ProbabilityVector {
    let mut v: Vec<f64> = (0..len).map(|_| rng.random_range(0.01..1.0)).collect();
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    if let Some(k) = peak {
        v.iter_mut().for_each(|x| *x *= 0.4);
        v[k] += 0.6;
    }
    ProbabilityVector::new(v).expect("normalized")
}

fn boxed(rng: &mut ChaCha8Rng) -> BoundingBox {
    let (x, y) = (rng.random_range(0.0..800.0), rng.random_range(0.0..600.0));
    let (w, h) = (rng.random_range(8.0..200.0), rng.random_range(8.0..200.0));
    BoundingBox::new(x, y, x + w, y + h).expect("positive extent")
}

fn pass(rng: &mut ChaCha8Rng, s: DumpShape, domain: Domain, kind: PassKind, dets: bool, props: bool) -> PassDump {
    let images = (0..s.images)
        .map(|i| {
            let mut img = ImageInference::new(format!("{i:06}"));
            if dets {
                img.detections = (0..s.detections)
                    .map(|_| {
                        let peak = rng.random_range(0..s.num_classes);
                        Detection::new(boxed(rng), simplex(rng, s.num_classes, Some(peak)))
                    })
                    .collect();
            }
            if props {
                img.proposals = (0..s.proposals)
                    .map(|_| ProposalRecord {
                        feature: (0..s.feature_dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
                        probs: simplex(rng, s.num_classes + 1, None),
                    })
                    .collect();
            }
            img
        })
        .collect();
    PassDump::new(domain, kind, images)
}

/// One checkpoint with a single perturbed pass.
pub fn random_checkpoint(shape: DumpShape, seed: u64) -> CheckpointRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    CheckpointRecord {
        id: format!("bench-{seed}"),
        index: 0,
        target_original: pass(&mut rng, shape, Domain::Target, PassKind::Original, true, true),
        target_perturbed: vec![pass(&mut rng, shape, Domain::Target, PassKind::Perturbed(0), true, false)],
        source_proposals: pass(&mut rng, shape, Domain::Source, PassKind::Original, false, true),
    }
}

pub fn random_cost_matrix(rows: usize, cols: usize, seed: u64) -> CostMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    CostMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0)).expect("finite entries")
}

/// A random symmetric positive-definite matrix.
pub fn random_spd(dim: usize, seed: u64) -> nalgebra::DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = nalgebra::DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + nalgebra::DMatrix::identity(dim, dim) * 0.1
}
