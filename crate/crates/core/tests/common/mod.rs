//! Independent oracles and fixture builders shared by the integration tests.
#![allow(dead_code)]

use das_core::model::*;
use das_core::CostMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn bbox(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox {
    BoundingBox::new(x1, y1, x2, y2).unwrap()
}

pub fn probs(v: &[f64]) -> ProbabilityVector {
    ProbabilityVector::new(v.to_vec()).unwrap()
}

pub fn det(b: [f64; 4], p: &[f64]) -> Detection {
    Detection::new(bbox(b[0], b[1], b[2], b[3]), probs(p))
}

pub fn random_probs(rng: &mut impl Rng, len: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..len).map(|_| rng.random_range(0.01..1.0f64)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

pub fn random_box(rng: &mut impl Rng, extent: f64) -> BoundingBox {
    let x1 = rng.random_range(0.0..extent);
    let y1 = rng.random_range(0.0..extent);
    let w = rng.random_range(1.0..extent);
    let h = rng.random_range(1.0..extent);
    bbox(x1, y1, x1 + w, y1 + h)
}

pub fn random_detection(rng: &mut impl Rng, k: usize) -> Detection {
    Detection::new(random_box(rng, 100.0), probs(&random_probs(rng, k)))
}

/// Minimum total cost over every injection of the smaller side into the
/// larger one, summing the chosen entries in row order.
pub fn brute_force_min_cost(m: &CostMatrix) -> f64 {
    let (r, c) = (m.rows(), m.cols());
    let mut best = f64::INFINITY;
    if r <= c {
        let mut cols: Vec<usize> = (0..c).collect();
        permute_prefix(&mut cols, 0, r, &mut |p| {
            let total: f64 = (0..r).map(|i| m.get(i, p[i])).sum();
            best = best.min(total);
        });
    } else {
        let mut rows: Vec<usize> = (0..r).collect();
        permute_prefix(&mut rows, 0, c, &mut |p| {
            let mut pairs: Vec<(usize, usize)> = (0..c).map(|j| (p[j], j)).collect();
            pairs.sort();
            let total: f64 = pairs.iter().map(|&(i, j)| m.get(i, j)).sum();
            best = best.min(total);
        });
    }
    best
}

/// Visits every ordered selection of `len` items from `items`.
fn permute_prefix(items: &mut Vec<usize>, depth: usize, len: usize, visit: &mut impl FnMut(&[usize])) {
    if depth == len {
        visit(&items[..len]);
        return;
    }
    for i in depth..items.len() {
        items.swap(depth, i);
        permute_prefix(items, depth + 1, len, visit);
        items.swap(depth, i);
    }
}

fn oracle_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let w = (a.x2().min(b.x2()) - a.x1().max(b.x1())).max(0.0);
    let h = (a.y2().min(b.y2()) - a.y1().max(b.y1())).max(0.0);
    let inter = w * h;
    inter / (a.area() + b.area() - inter)
}

/// AP for one class from first principles: rank, label each detection
/// greedily, then for every recall level `m/G` take the best precision
/// reached at or beyond it.
pub fn brute_force_ap(dump: &PassDump, gt: &GroundTruthSet, class: usize) -> Option<f64> {
    let mut ranked: Vec<(f64, &str, usize, &Detection)> = Vec::new();
    for img in &dump.images {
        for (di, d) in img.detections.iter().enumerate() {
            if d.class_index() == class {
                ranked.push((d.confidence(), img.image_id.as_str(), di, d));
            }
        }
    }
    // Insertion sort on the explicit key.
    for i in 1..ranked.len() {
        let mut j = i;
        while j > 0 {
            let (a, b) = (&ranked[j - 1], &ranked[j]);
            let swap = a.0 < b.0 || (a.0 == b.0 && (a.1 > b.1 || (a.1 == b.1 && a.2 > b.2)));
            if !swap {
                break;
            }
            ranked.swap(j - 1, j);
            j -= 1;
        }
    }
    let total_gt: usize = dump
        .images
        .iter()
        .map(|img| gt.objects(&img.image_id).iter().filter(|o| o.class_id == class + 1).count())
        .sum();
    if total_gt == 0 {
        return None;
    }
    let mut used: std::collections::HashSet<(String, usize)> = Default::default();
    let mut tp_so_far = 0usize;
    let mut points: Vec<(usize, f64)> = Vec::new();
    for (rank, (_, id, _, d)) in ranked.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (gi, o) in gt.objects(id).iter().enumerate() {
            if o.class_id != class + 1 || used.contains(&(id.to_string(), gi)) {
                continue;
            }
            let v = oracle_iou(&d.bbox, &o.bbox);
            if v >= 0.5 && best.map_or(true, |(_, b)| v > b) {
                best = Some((gi, v));
            }
        }
        if let Some((gi, _)) = best {
            used.insert((id.to_string(), gi));
            tp_so_far += 1;
        }
        points.push((tp_so_far, tp_so_far as f64 / (rank + 1) as f64));
    }
    let mut area = 0.0;
    for m in 1..=tp_so_far {
        let best = points
            .iter()
            .filter(|(tp, _)| *tp >= m)
            .map(|(_, p)| *p)
            .fold(0.0f64, f64::max);
        area += best;
    }
    Some(area / total_gt as f64)
}

pub fn brute_force_map(dump: &PassDump, gt: &GroundTruthSet, k: usize) -> f64 {
    let aps: Vec<f64> = (0..k).filter_map(|c| brute_force_ap(dump, gt, c)).collect();
    aps.iter().sum::<f64>() / aps.len() as f64
}

/// A small random detection/ground-truth instance with at least one object.
/// Boxes sit on a coarse integer grid so duplicates and exact ties occur.
pub fn micro_instance(rng: &mut impl Rng) -> (PassDump, GroundTruthSet, usize) {
    let k = rng.random_range(1..=3);
    let n_images = rng.random_range(1..=3);
    let n_gt = rng.random_range(1..=5);
    let n_det = rng.random_range(0..=10);
    let mut gt = GroundTruthSet::default();
    let ids: Vec<String> = (0..n_images).map(|i| format!("img{i}")).collect();
    for id in &ids {
        gt.images.insert(id.clone(), Vec::new());
    }
    let grid_box = |rng: &mut dyn rand::RngCore| {
        let x = rng.random_range(0..4) as f64 * 10.0;
        let y = rng.random_range(0..4) as f64 * 10.0;
        let w = rng.random_range(1..4) as f64 * 10.0;
        let h = rng.random_range(1..4) as f64 * 10.0;
        bbox(x, y, x + w, y + h)
    };
    let mut gt_list = Vec::new();
    for _ in 0..n_gt {
        let img = rng.random_range(0..n_images);
        let obj = GroundTruthObject {
            bbox: grid_box(rng),
            class_id: rng.random_range(1..=k),
        };
        gt.images.get_mut(&ids[img]).unwrap().push(obj.clone());
        gt_list.push((img, obj));
    }
    let mut images: Vec<ImageInference> = ids.iter().map(ImageInference::new).collect();
    let levels = [0.2f64, 0.4, 0.6, 0.8];
    for _ in 0..n_det {
        let (img, b) = if rng.random_bool(0.6) {
            let (img, obj) = &gt_list[rng.random_range(0..gt_list.len())];
            let b = obj.bbox.to_array();
            let s = rng.random_range(0..2) as f64 * 5.0;
            (*img, bbox(b[0] + s, b[1], b[2] + s, b[3]))
        } else {
            (rng.random_range(0..n_images), grid_box(rng))
        };
        let top = rng.random_range(0..k);
        let conf = levels[rng.random_range(0..levels.len())].max(1.0 / k as f64);
        let mut p = vec![if k > 1 { (1.0 - conf) / (k - 1) as f64 } else { 0.0 }; k];
        p[top] = if k > 1 { conf } else { 1.0 };
        images[img].detections.push(Detection::new(b, probs(&p)));
    }
    (PassDump::new(Domain::Target, PassKind::Original, images), gt, k)
}

pub struct RunShape {
    pub checkpoints: usize,
    pub images: usize,
    pub detections: usize,
    pub proposals: usize,
    pub num_classes: usize,
    pub feature_dim: usize,
}

impl Default for RunShape {
    fn default() -> Self {
        Self {
            checkpoints: 3,
            images: 4,
            detections: 3,
            proposals: 5,
            num_classes: 3,
            feature_dim: 4,
        }
    }
}

fn confident_detection(rng: &mut impl Rng, k: usize) -> Detection {
    let mut p = random_probs(rng, k);
    let top = rng.random_range(0..k);
    p.iter_mut().for_each(|v| *v *= 0.2);
    p[top] += 0.8;
    Detection::new(random_box(rng, 100.0), probs(&p))
}

fn proposal_pass(rng: &mut impl Rng, domain: Domain, prefix: &str, shape: &RunShape) -> PassDump {
    let images = (0..shape.images)
        .map(|i| {
            let mut img = ImageInference::new(format!("{prefix}{i:03}"));
            img.proposals = (0..shape.proposals)
                .map(|_| ProposalRecord {
                    feature: (0..shape.feature_dim).map(|_| rng.random_range(-3.0..3.0)).collect(),
                    probs: probs(&random_probs(rng, shape.num_classes + 1)),
                })
                .collect();
            img
        })
        .collect();
    PassDump::new(domain, PassKind::Original, images)
}

/// A random, fully scoreable run with ground truth.
pub fn random_run(seed: u64, shape: &RunShape) -> RunManifest {
    let mut rng = rng(seed);
    let k = shape.num_classes;
    let mut gt = GroundTruthSet::default();
    for i in 0..shape.images {
        gt.images.insert(
            format!("t{i:03}"),
            (0..2)
                .map(|_| GroundTruthObject {
                    bbox: random_box(&mut rng, 100.0),
                    class_id: rng.random_range(1..=k),
                })
                .collect(),
        );
    }
    let checkpoints = (0..shape.checkpoints)
        .map(|c| {
            let mut original = proposal_pass(&mut rng, Domain::Target, "t", shape);
            let mut perturbed_images = Vec::new();
            for img in &mut original.images {
                img.detections = (0..shape.detections).map(|_| confident_detection(&mut rng, k)).collect();
                let mut p = ImageInference::new(img.image_id.clone());
                p.detections = (0..shape.detections).map(|_| confident_detection(&mut rng, k)).collect();
                perturbed_images.push(p);
            }
            CheckpointRecord {
                id: format!("c{c}"),
                index: (c as u64 + 1) * 100,
                target_original: original,
                target_perturbed: vec![PassDump::new(Domain::Target, PassKind::Perturbed(0), perturbed_images)],
                source_proposals: proposal_pass(&mut rng, Domain::Source, "s", shape),
            }
        })
        .collect();
    RunManifest {
        run_id: format!("random-{seed}"),
        num_classes: k,
        feature_dim: shape.feature_dim,
        gamma: 1.0,
        class_names: (0..k).map(|i| format!("k{i}")).collect(),
        checkpoints,
        ground_truth: Some(gt),
    }
}

/// Applies `f` to every proposal feature of every pass in the run.
pub fn map_features(run: &mut RunManifest, f: impl Fn(&[f64]) -> Vec<f64>) {
    for c in &mut run.checkpoints {
        for pass in [&mut c.target_original, &mut c.source_proposals] {
            for img in &mut pass.images {
                for p in &mut img.proposals {
                    p.feature = f(&p.feature);
                }
            }
        }
    }
}

/// A random orthogonal matrix from Gram-Schmidt on Gaussian columns.
pub fn random_orthogonal(rng: &mut impl Rng, d: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(d);
    while basis.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    basis
}

pub fn apply(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}
