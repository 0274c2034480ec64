//! Synthetic detector trajectories for end-to-end testing without a deep
//! learning stack.
//!
//! Objects carry a latent feature drawn around a class mean; the target
//! domain shifts every class mean along one random direction. A linear
//! "toy detector" with parameters θ = (W, b, g) classifies features through
//! `softmax(κ · (W f + b))` and jitters the true box by `g · σ_b`. A training
//! trajectory is simulated by drifting W toward a class-permuted matrix and
//! raising the logit gain κ, and every checkpoint is re-run under a random
//! parameter perturbation of norm γ.
//!
//! All randomness is keyed by `(seed, purpose, indices)`, so output does not
//! depend on generation order or thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    BoundingBox, CheckpointRecord, Detection, Domain, GroundTruthObject, GroundTruthSet,
    ImageInference, PassDump, PassKind, ProbabilityVector, ProposalRecord, RunManifest,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("parameter vector is empty")]
    EmptyParameters,
    #[error("gamma must be finite and non-negative, got {0}")]
    InvalidGamma(f64),
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
}

/// Deterministic random streams keyed by purpose and indices.
#[derive(Debug, Clone, Copy)]
pub struct KeyedRng {
    seed: u64,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl KeyedRng {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn stream(&self, purpose: &str, indices: &[u64]) -> ChaCha8Rng {
        // FNV-1a over the purpose tag, then fold the indices through splitmix.
        let mut tag = 0xcbf2_9ce4_8422_2325u64;
        for b in purpose.bytes() {
            tag = (tag ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3);
        }
        let mut key = splitmix64(self.seed ^ splitmix64(tag));
        for &i in indices {
            key = splitmix64(key ^ splitmix64(i.wrapping_add(0x632B_E59B_D9B4_E019)));
        }
        let mut seed = [0u8; 32];
        for (i, chunk) in seed.chunks_exact_mut(8).enumerate() {
            chunk.copy_from_slice(&splitmix64(key.wrapping_add(i as u64)).to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}

fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// A random direction of Euclidean length `gamma` drawn from an isotropic
/// Gaussian.
pub fn perturbation_direction(len: usize, gamma: f64, seed: u64) -> Result<Vec<f64>, SynthError> {
    if len == 0 {
        return Err(SynthError::EmptyParameters);
    }
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(SynthError::InvalidGamma(gamma));
    }
    let mut rng = KeyedRng::new(seed).stream("perturbation", &[len as u64]);
    loop {
        let mut delta: Vec<f64> = (0..len).map(|_| normal(&mut rng)).collect();
        let norm = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            let scale = gamma / norm;
            delta.iter_mut().for_each(|v| *v *= scale);
            return Ok(delta);
        }
    }
}

/// `θ + Δ` with `‖Δ‖₂ = gamma`.
pub fn perturb_parameters(theta: &[f64], gamma: f64, seed: u64) -> Result<Vec<f64>, SynthError> {
    let delta = perturbation_direction(theta.len(), gamma, seed)?;
    Ok(theta.iter().zip(&delta).map(|(t, d)| t + d).collect())
}

/// Per-checkpoint schedule value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Schedule {
    /// Linear interpolation from `start` (first checkpoint) to `end` (last).
    Linear { start: f64, end: f64 },
    /// One value per checkpoint.
    Values(Vec<f64>),
}

impl Schedule {
    pub fn constant(v: f64) -> Self {
        Schedule::Linear { start: v, end: v }
    }

    pub fn at(&self, t: usize, len: usize) -> f64 {
        match self {
            Schedule::Linear { start, end } => {
                if len <= 1 {
                    *start
                } else {
                    start + (end - start) * t as f64 / (len - 1) as f64
                }
            }
            Schedule::Values(v) => v[t.min(v.len() - 1)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub images_per_domain: usize,
    /// Inclusive `[min, max]` objects per image.
    pub objects_per_image: [usize; 2],
    pub proposals_per_object: usize,
    pub background_proposals: usize,
    /// Distance between neighbouring class means.
    pub class_separation: f64,
    /// Offset of the target class means from the source ones.
    pub domain_shift: f64,
    /// Per-dimension standard deviation of object latents.
    pub feature_noise: f64,
    /// Proposal feature jitter around the object latent, relative to
    /// `feature_noise`.
    pub proposal_jitter: f64,
    /// Box jitter standard deviation in pixels, scaled by the box gain.
    pub box_noise: f64,
    pub image_size: [f64; 2],
    pub box_size: [f64; 2],
    pub trajectory_length: usize,
    /// Fraction of the way from the aligned to the class-permuted weight
    /// matrix, per checkpoint.
    pub drift: Schedule,
    /// Logit gain κ per checkpoint.
    pub sharpness: Schedule,
    pub gamma: f64,
    pub perturbations: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_classes: 5,
            feature_dim: 32,
            images_per_domain: 200,
            objects_per_image: [2, 4],
            proposals_per_object: 4,
            background_proposals: 4,
            class_separation: 4.0,
            domain_shift: 1.0,
            feature_noise: 1.0,
            proposal_jitter: 0.5,
            box_noise: 2.0,
            image_size: [1024.0, 768.0],
            box_size: [32.0, 160.0],
            trajectory_length: 10,
            drift: Schedule::Linear {
                start: 0.0,
                end: 0.6,
            },
            sharpness: Schedule::Linear {
                start: 1.0,
                end: 3.0,
            },
            gamma: 1.0,
            perturbations: 1,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.to_string()));
        if self.num_classes < 1 || self.feature_dim < 1 {
            return bad("num_classes and feature_dim must be at least 1");
        }
        if self.images_per_domain < 1 {
            return bad("images_per_domain must be at least 1");
        }
        if self.objects_per_image[0] > self.objects_per_image[1] || self.objects_per_image[1] == 0 {
            return bad("objects_per_image must be a non-empty [min, max] range");
        }
        if self.proposals_per_object < 1 {
            return bad("proposals_per_object must be at least 1");
        }
        let positive = [
            self.class_separation,
            self.feature_noise,
            self.image_size[0],
            self.image_size[1],
            self.box_size[0],
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return bad("class_separation, feature_noise, image_size and box_size must be positive");
        }
        let non_negative = [self.domain_shift, self.proposal_jitter, self.box_noise, self.gamma];
        if non_negative.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("domain_shift, proposal_jitter, box_noise and gamma must be non-negative");
        }
        if self.box_size[1] < self.box_size[0]
            || self.box_size[1] >= self.image_size[0].min(self.image_size[1])
        {
            return bad("box_size must be an increasing range smaller than the image");
        }
        if self.trajectory_length < 1 {
            return bad("trajectory_length must be at least 1");
        }
        if self.perturbations < 1 {
            return bad("perturbations must be at least 1");
        }
        for (name, s) in [("drift", &self.drift), ("sharpness", &self.sharpness)] {
            if let Schedule::Values(v) = s {
                if v.len() != self.trajectory_length {
                    return Err(SynthError::InvalidConfig(format!(
                        "{name} lists {} values for {} checkpoints",
                        v.len(),
                        self.trajectory_length
                    )));
                }
            }
        }
        for t in 0..self.trajectory_length {
            let k = self.sharpness.at(t, self.trajectory_length);
            if !(k.is_finite() && k > 0.0) {
                return bad("sharpness must stay positive");
            }
            if !self.drift.at(t, self.trajectory_length).is_finite() {
                return bad("drift must be finite");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    /// Zero-based class.
    pub class: usize,
    pub bbox: BoundingBox,
    pub latent: Vec<f64>,
    /// Feature the detection head sees for this object.
    pub detection_feature: Vec<f64>,
    pub proposal_features: Vec<Vec<f64>>,
    /// Standard-normal box jitter, scaled by `g · σ_b` at inference time.
    pub box_jitter: [f64; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub image_id: String,
    pub domain: Domain,
    pub objects: Vec<SceneObject>,
    pub background_features: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub source: Vec<SyntheticScene>,
    pub target: Vec<SyntheticScene>,
    /// Target-domain annotations.
    pub ground_truth: GroundTruthSet,
    pub source_means: Vec<Vec<f64>>,
    pub target_means: Vec<Vec<f64>>,
}

/// Class means `(s/√2)·e_k`, pairwise `s` apart. When K exceeds d the
/// directions are random unit vectors instead.
fn class_means(cfg: &SyntheticConfig, keys: &KeyedRng) -> Vec<Vec<f64>> {
    let radius = cfg.class_separation / std::f64::consts::SQRT_2;
    (0..cfg.num_classes)
        .map(|k| {
            if cfg.num_classes <= cfg.feature_dim {
                let mut m = vec![0.0; cfg.feature_dim];
                m[k] = radius;
                m
            } else {
                let dir = unit_vector(&mut keys.stream("class-mean", &[k as u64]), cfg.feature_dim);
                dir.into_iter().map(|v| v * radius).collect()
            }
        })
        .collect()
}

fn unit_vector(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| normal(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn gaussian_around(rng: &mut impl Rng, mean: &[f64], sd: f64) -> Vec<f64> {
    mean.iter().map(|m| m + sd * normal(rng)).collect()
}

fn make_scene(
    cfg: &SyntheticConfig,
    keys: &KeyedRng,
    domain: Domain,
    index: usize,
    means: &[Vec<f64>],
    background_mean: &[f64],
) -> SyntheticScene {
    let dom = domain as u64;
    let mut rng = keys.stream("scene", &[dom, index as u64]);
    let count = rng.random_range(cfg.objects_per_image[0]..=cfg.objects_per_image[1]);
    let prop_sd = cfg.feature_noise * cfg.proposal_jitter;
    let objects = (0..count)
        .map(|o| {
            let class = rng.random_range(0..cfg.num_classes);
            let w = rng.random_range(cfg.box_size[0]..=cfg.box_size[1]);
            let h = rng.random_range(cfg.box_size[0]..=cfg.box_size[1]);
            let x1 = rng.random_range(0.0..cfg.image_size[0] - w);
            let y1 = rng.random_range(0.0..cfg.image_size[1] - h);
            let bbox = BoundingBox::new(x1, y1, x1 + w, y1 + h).expect("positive extent");
            let latent = gaussian_around(&mut rng, &means[class], cfg.feature_noise);

            let mut orng = keys.stream("object-noise", &[dom, index as u64, o as u64]);
            let detection_feature = gaussian_around(&mut orng, &latent, prop_sd);
            let proposal_features = (0..cfg.proposals_per_object)
                .map(|_| gaussian_around(&mut orng, &latent, prop_sd))
                .collect();
            let box_jitter = [normal(&mut orng), normal(&mut orng), normal(&mut orng), normal(&mut orng)];
            SceneObject {
                class,
                bbox,
                latent,
                detection_feature,
                proposal_features,
                box_jitter,
            }
        })
        .collect();
    let mut brng = keys.stream("background", &[dom, index as u64]);
    let background_features = (0..cfg.background_proposals)
        .map(|_| gaussian_around(&mut brng, background_mean, cfg.feature_noise))
        .collect();
    let prefix = match domain {
        Domain::Source => "src",
        Domain::Target => "tgt",
    };
    SyntheticScene {
        image_id: format!("{prefix}-{index:05}"),
        domain,
        objects,
        background_features,
    }
}

pub fn generate_scenario(cfg: &SyntheticConfig) -> Result<Scenario, SynthError> {
    cfg.validate()?;
    let keys = KeyedRng::new(cfg.seed);
    let source_means = class_means(cfg, &keys);
    let shift_dir = unit_vector(&mut keys.stream("domain-shift", &[]), cfg.feature_dim);
    let shift: Vec<f64> = shift_dir.iter().map(|v| v * cfg.domain_shift).collect();
    let target_means: Vec<Vec<f64>> = source_means
        .iter()
        .map(|m| m.iter().zip(&shift).map(|(a, b)| a + b).collect())
        .collect();
    let zero = vec![0.0; cfg.feature_dim];

    let scenes = |domain, means: &[Vec<f64>], bg: &[f64]| -> Vec<SyntheticScene> {
        (0..cfg.images_per_domain)
            .into_par_iter()
            .map(|i| make_scene(cfg, &keys, domain, i, means, bg))
            .collect()
    };
    let source = scenes(Domain::Source, &source_means, &zero);
    let target = scenes(Domain::Target, &target_means, &shift);

    let mut ground_truth = GroundTruthSet::default();
    for scene in &target {
        ground_truth.images.insert(
            scene.image_id.clone(),
            scene
                .objects
                .iter()
                .map(|o| GroundTruthObject {
                    bbox: o.bbox,
                    class_id: o.class + 1,
                })
                .collect(),
        );
    }
    Ok(Scenario {
        source,
        target,
        ground_truth,
        source_means,
        target_means,
    })
}

/// Linear classifier over K+1 outputs (background last) plus a box gain.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyDetectorParams {
    pub num_classes: usize,
    pub feature_dim: usize,
    /// (K+1)×d, row-major.
    pub weights: Vec<f64>,
    /// K+1 biases.
    pub bias: Vec<f64>,
    pub box_gain: f64,
    /// Logit gain κ; not part of the perturbed parameter vector.
    pub sharpness: f64,
}

impl ToyDetectorParams {
    /// Weights that map class mean `k` onto output `k`, blended a fraction
    /// `drift` of the way toward the matrix that maps it onto output
    /// `(k + K − 1) mod K`.
    pub fn drifted(means: &[Vec<f64>], drift: f64, sharpness: f64, box_gain: f64) -> Self {
        let num_classes = means.len();
        let feature_dim = means[0].len();
        let unit: Vec<Vec<f64>> = means
            .iter()
            .map(|m| {
                let n = m.iter().map(|v| v * v).sum::<f64>().sqrt();
                m.iter().map(|v| v / n).collect()
            })
            .collect();
        let mut weights = vec![0.0; (num_classes + 1) * feature_dim];
        for k in 0..num_classes {
            let aligned = &unit[k];
            let swapped = &unit[(k + 1) % num_classes];
            for j in 0..feature_dim {
                weights[k * feature_dim + j] = (1.0 - drift) * aligned[j] + drift * swapped[j];
            }
        }
        let radius = means[0].iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut bias = vec![0.0; num_classes + 1];
        bias[num_classes] = 0.5 * radius;
        Self {
            num_classes,
            feature_dim,
            weights,
            bias,
            box_gain,
            sharpness,
        }
    }

    /// θ = (W, b, g) flattened.
    pub fn flatten(&self) -> Vec<f64> {
        let mut theta = Vec::with_capacity(self.weights.len() + self.bias.len() + 1);
        theta.extend_from_slice(&self.weights);
        theta.extend_from_slice(&self.bias);
        theta.push(self.box_gain);
        theta
    }

    pub fn with_flat(&self, theta: &[f64]) -> Result<Self, SynthError> {
        let nw = self.weights.len();
        let nb = self.bias.len();
        if theta.len() != nw + nb + 1 {
            return Err(SynthError::DimMismatch(format!(
                "parameter vector has {} entries, expected {}",
                theta.len(),
                nw + nb + 1
            )));
        }
        Ok(Self {
            weights: theta[..nw].to_vec(),
            bias: theta[nw..nw + nb].to_vec(),
            box_gain: theta[nw + nb],
            ..self.clone()
        })
    }

    /// `softmax(κ · (W f + b))` over K+1 outputs.
    pub fn class_probs(&self, feature: &[f64]) -> Vec<f64> {
        let d = self.feature_dim;
        let logits: Vec<f64> = (0..=self.num_classes)
            .map(|k| {
                let row = &self.weights[k * d..(k + 1) * d];
                let z: f64 = row.iter().zip(feature).map(|(w, f)| w * f).sum();
                self.sharpness * (z + self.bias[k])
            })
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = exp.iter().sum();
        exp.into_iter().map(|e| e / sum).collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PassContent {
    pub detections: bool,
    pub proposals: bool,
}

fn jittered_box(obj: &SceneObject, scale: f64) -> BoundingBox {
    let b = obj.bbox.to_array();
    let mut x1 = b[0] + scale * obj.box_jitter[0];
    let mut y1 = b[1] + scale * obj.box_jitter[1];
    let mut x2 = b[2] + scale * obj.box_jitter[2];
    let mut y2 = b[3] + scale * obj.box_jitter[3];
    if x2 - x1 < 1.0 {
        let c = 0.5 * (x1 + x2);
        (x1, x2) = (c - 0.5, c + 0.5);
    }
    if y2 - y1 < 1.0 {
        let c = 0.5 * (y1 + y2);
        (y1, y2) = (c - 0.5, c + 0.5);
    }
    BoundingBox::new(x1, y1, x2, y2).expect("box kept at least 1px wide")
}

fn probability(values: Vec<f64>) -> ProbabilityVector {
    ProbabilityVector::new(values).expect("softmax output is a distribution")
}

/// Runs the toy detector over `scenes`: one detection per object and, when
/// requested, every object and background proposal.
pub fn run_toy_detector(
    params: &ToyDetectorParams,
    scenes: &[SyntheticScene],
    domain: Domain,
    kind: PassKind,
    content: PassContent,
    box_noise: f64,
) -> Result<PassDump, SynthError> {
    if params.weights.len() != (params.num_classes + 1) * params.feature_dim
        || params.bias.len() != params.num_classes + 1
    {
        return Err(SynthError::DimMismatch("detector parameter shapes".into()));
    }
    if let Some(bad) = scenes
        .iter()
        .flat_map(|s| &s.objects)
        .find(|o| o.latent.len() != params.feature_dim)
    {
        return Err(SynthError::DimMismatch(format!(
            "scene feature length {} vs detector {}",
            bad.latent.len(),
            params.feature_dim
        )));
    }
    let k = params.num_classes;
    let images = scenes
        .par_iter()
        .map(|scene| {
            let mut img = ImageInference::new(scene.image_id.clone());
            if content.detections {
                img.detections = scene
                    .objects
                    .iter()
                    .map(|o| {
                        let full = params.class_probs(&o.detection_feature);
                        let fg: f64 = full[..k].iter().sum();
                        let fg_probs = full[..k].iter().map(|p| p / fg).collect();
                        Detection::new(jittered_box(o, params.box_gain * box_noise), probability(fg_probs))
                    })
                    .collect();
            }
            if content.proposals {
                let features = scene
                    .objects
                    .iter()
                    .flat_map(|o| &o.proposal_features)
                    .chain(&scene.background_features);
                img.proposals = features
                    .map(|f| ProposalRecord {
                        feature: f.clone(),
                        probs: probability(params.class_probs(f)),
                    })
                    .collect();
            }
            img
        })
        .collect();
    Ok(PassDump::new(domain, kind, images))
}

/// Detector parameters of checkpoint `t` on the configured trajectory.
pub fn checkpoint_params(cfg: &SyntheticConfig, scenario: &Scenario, t: usize) -> ToyDetectorParams {
    let len = cfg.trajectory_length;
    ToyDetectorParams::drifted(
        &scenario.source_means,
        cfg.drift.at(t, len),
        cfg.sharpness.at(t, len),
        1.0,
    )
}

/// Seed of the `draw`-th perturbation of checkpoint `t`.
pub fn perturbation_seed(cfg: &SyntheticConfig, t: usize, draw: usize) -> u64 {
    splitmix64(cfg.seed ^ splitmix64(((t as u64) << 32) | draw as u64))
}

pub fn checkpoint_record(
    cfg: &SyntheticConfig,
    scenario: &Scenario,
    params: &ToyDetectorParams,
    t: usize,
) -> Result<CheckpointRecord, SynthError> {
    let full = PassContent {
        detections: true,
        proposals: true,
    };
    let detections_only = PassContent {
        detections: true,
        proposals: false,
    };
    let proposals_only = PassContent {
        detections: false,
        proposals: true,
    };
    let target_original = run_toy_detector(
        params,
        &scenario.target,
        Domain::Target,
        PassKind::Original,
        full,
        cfg.box_noise,
    )?;
    let theta = params.flatten();
    let target_perturbed = (0..cfg.perturbations)
        .map(|draw| {
            let moved = perturb_parameters(&theta, cfg.gamma, perturbation_seed(cfg, t, draw))?;
            run_toy_detector(
                &params.with_flat(&moved)?,
                &scenario.target,
                Domain::Target,
                PassKind::Perturbed(draw as u32),
                detections_only,
                cfg.box_noise,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    let source_proposals = run_toy_detector(
        params,
        &scenario.source,
        Domain::Source,
        PassKind::Original,
        proposals_only,
        cfg.box_noise,
    )?;
    Ok(CheckpointRecord {
        id: format!("ckpt-{t:03}"),
        index: t as u64,
        target_original,
        target_perturbed,
        source_proposals,
    })
}

/// A complete synthetic run: every checkpoint's passes plus target ground
/// truth.
pub fn generate_trajectory(cfg: &SyntheticConfig) -> Result<RunManifest, SynthError> {
    let scenario = generate_scenario(cfg)?;
    let checkpoints = (0..cfg.trajectory_length)
        .map(|t| checkpoint_record(cfg, &scenario, &checkpoint_params(cfg, &scenario, t), t))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RunManifest {
        run_id: format!("synthetic-{}", cfg.seed),
        num_classes: cfg.num_classes,
        feature_dim: cfg.feature_dim,
        gamma: cfg.gamma,
        class_names: (0..cfg.num_classes).map(|k| format!("class{k}")).collect(),
        checkpoints,
        ground_truth: Some(scenario.ground_truth),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn perturbation_has_exact_radius() {
        for len in [1usize, 2, 7, 199, 10_000] {
            let theta: Vec<f64> = (0..len).map(|i| (i as f64 * 0.37).sin()).collect();
            let moved = perturb_parameters(&theta, 1.0, 42).unwrap();
            let delta: Vec<f64> = moved.iter().zip(&theta).map(|(a, b)| a - b).collect();
            assert!((norm(&delta) - 1.0).abs() < 1e-9, "len {len}");
        }
        let d = perturbation_direction(50, 2.5, 3).unwrap();
        assert!((norm(&d) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn perturbation_edge_cases() {
        let theta = vec![1.0, -2.0, 3.0];
        assert_eq!(perturb_parameters(&theta, 0.0, 9).unwrap(), theta);
        assert_eq!(
            perturb_parameters(&theta, 1.0, 5).unwrap(),
            perturb_parameters(&theta, 1.0, 5).unwrap()
        );
        assert_ne!(
            perturb_parameters(&theta, 1.0, 5).unwrap(),
            perturb_parameters(&theta, 1.0, 6).unwrap()
        );
        assert_eq!(perturb_parameters(&[], 1.0, 0), Err(SynthError::EmptyParameters));
        assert!(perturb_parameters(&theta, -1.0, 0).is_err());
    }

    #[test]
    fn keyed_streams_are_independent_of_call_order() {
        let keys = KeyedRng::new(11);
        let a1: u64 = keys.stream("a", &[1, 2]).random();
        let _: u64 = keys.stream("b", &[]).random();
        let a2: u64 = keys.stream("a", &[1, 2]).random();
        assert_eq!(a1, a2);
        let other: u64 = keys.stream("a", &[2, 1]).random();
        assert_ne!(a1, other);
    }

    #[test]
    fn schedule_values() {
        let s = Schedule::Linear { start: 1.0, end: 3.0 };
        assert_eq!(s.at(0, 5), 1.0);
        assert_eq!(s.at(4, 5), 3.0);
        assert_eq!(s.at(2, 5), 2.0);
        assert_eq!(s.at(0, 1), 1.0);
        assert_eq!(Schedule::Values(vec![4.0, 5.0]).at(1, 2), 5.0);
    }

    #[test]
    fn zero_shift_keeps_means() {
        let cfg = SyntheticConfig {
            domain_shift: 0.0,
            images_per_domain: 3,
            ..Default::default()
        };
        let s = generate_scenario(&cfg).unwrap();
        assert_eq!(s.source_means, s.target_means);
    }

    #[test]
    fn zero_gain_gives_uniform_probabilities() {
        let cfg = SyntheticConfig::default();
        let s = generate_scenario(&SyntheticConfig {
            images_per_domain: 2,
            ..cfg
        })
        .unwrap();
        let params = ToyDetectorParams::drifted(&s.source_means, 0.0, 1e-300, 1.0);
        let p = params.class_probs(&s.target[0].objects[0].latent);
        for v in p {
            assert!((v - 1.0 / 6.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sharp_aligned_detector_is_confident_and_correct() {
        let cfg = SyntheticConfig {
            images_per_domain: 20,
            feature_noise: 1e-3,
            class_separation: 10.0,
            ..Default::default()
        };
        let s = generate_scenario(&cfg).unwrap();
        let params = ToyDetectorParams::drifted(&s.source_means, 0.0, 20.0, 1.0);
        let content = PassContent {
            detections: true,
            proposals: false,
        };
        let pass = run_toy_detector(&params, &s.target, Domain::Target, PassKind::Original, content, 0.0).unwrap();
        for (img, scene) in pass.images.iter().zip(&s.target) {
            for (d, o) in img.detections.iter().zip(&scene.objects) {
                assert_eq!(d.class_index(), o.class);
                assert!(d.confidence() > 1.0 - 1e-9);
                assert_eq!(d.bbox, o.bbox);
            }
        }
    }

    #[test]
    fn flatten_round_trip() {
        let s = generate_scenario(&SyntheticConfig {
            images_per_domain: 1,
            ..Default::default()
        })
        .unwrap();
        let p = ToyDetectorParams::drifted(&s.source_means, 0.3, 2.0, 1.0);
        let theta = p.flatten();
        assert_eq!(theta.len(), 6 * 32 + 6 + 1);
        assert_eq!(p.with_flat(&theta).unwrap(), p);
        assert!(p.with_flat(&theta[1..]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SyntheticConfig::default().validate().is_ok());
        let bad = SyntheticConfig {
            drift: Schedule::Values(vec![0.0; 3]),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SyntheticConfig {
            feature_noise: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
