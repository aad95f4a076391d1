//! Synthetic sequences with ground truth, detections and features.
//!
//! Each identity has a fixed unit appearance vector; every observation's
//! feature is that vector plus Gaussian noise, renormalized. The detector
//! sees each ground-truth box with probability `1 - miss_rate`, jitters it,
//! and adds Poisson false positives with random unit features. Everything
//! is drawn from one seeded ChaCha stream, and boxes are quantized to
//! hundredths of a pixel so that they survive a round trip through text
//! files unchanged.

use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use thiserror::Error;

use crate::episodes::{EpisodeTask, TaskDistribution};
use crate::metrics::{BBox, TrackBox};
use crate::model::{FeatureVector, LabeledSample};
use crate::numkit::dot;
use crate::tracker::Detection;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    Config(&'static str),
    #[error("arena of {arena} px² is too small for {identities} identities of {box_area} px²")]
    ArenaTooSmall { arena: f64, identities: usize, box_area: f64 },
    #[error("could not place {wanted} appearance vectors {angle}° apart in {dim} dimensions")]
    AppearanceSpace { wanted: usize, angle: f64, dim: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scenario {
    /// Constant-velocity walkers bouncing off the arena walls.
    #[default]
    Random,
    /// Pairs of identities on shared horizontal lanes walking towards each
    /// other and swapping sides halfway through the sequence.
    Crossing,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub scenario: Scenario,
    pub sequence: String,
    pub num_identities: usize,
    pub frames: u32,
    pub arena_width: f64,
    pub arena_height: f64,
    pub box_width: f64,
    pub box_height: f64,
    pub feature_dim: usize,
    /// Minimum angle between any two appearance vectors, in degrees.
    pub min_angle_deg: f64,
    /// In the crossing scenario, place each pair's second identity at
    /// exactly this angle from the first, making the pair look alike.
    pub pair_angle_deg: Option<f64>,
    /// Walking speed in pixels per frame.
    pub speed: f64,
    /// Per-frame positional noise around the constant-velocity path.
    pub motion_jitter: f64,
    pub feature_noise: f64,
    /// Number of nuisance directions shared by every identity of the
    /// sequence (think pose or lighting), and the noise level along them.
    pub nuisance_dims: usize,
    pub nuisance_noise: f64,
    pub miss_rate: f64,
    /// Mean number of false positives per frame.
    pub false_positive_rate: f64,
    pub bbox_jitter: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self::random_preset()
    }
}

impl SynthConfig {
    /// Ten walkers over 200 frames with moderate noise.
    pub fn random_preset() -> Self {
        Self {
            scenario: Scenario::Random,
            sequence: String::from("synth-01"),
            num_identities: 10,
            frames: 200,
            arena_width: 640.0,
            arena_height: 480.0,
            box_width: 30.0,
            box_height: 60.0,
            feature_dim: 16,
            min_angle_deg: 30.0,
            pair_angle_deg: None,
            speed: 2.0,
            motion_jitter: 0.5,
            feature_noise: 0.1,
            nuisance_dims: 0,
            nuisance_noise: 0.0,
            miss_rate: 0.03,
            false_positive_rate: 0.2,
            bbox_jitter: 1.0,
            seed: 0,
        }
    }

    /// Two crossing pairs of look-alike identities whose features also vary
    /// along two shared nuisance directions.
    pub fn crossing_preset() -> Self {
        Self {
            scenario: Scenario::Crossing,
            sequence: String::from("crossing-01"),
            num_identities: 4,
            frames: 120,
            arena_width: 400.0,
            arena_height: 240.0,
            box_width: 30.0,
            box_height: 60.0,
            speed: 2.0,
            pair_angle_deg: Some(20.0),
            feature_noise: 0.03,
            nuisance_dims: 2,
            nuisance_noise: 0.3,
            ..Self::random_preset()
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let rate = |r: f64| (0.0..=1.0).contains(&r);
        let sigma = |s: f64| s >= 0.0 && s.is_finite();
        if self.num_identities == 0 || self.frames == 0 || self.feature_dim == 0 {
            return Err(SynthError::Config("identities, frames and feature dimension must be positive"));
        }
        if !rate(self.miss_rate) || !rate(self.false_positive_rate) {
            return Err(SynthError::Config("rates must lie in [0, 1]"));
        }
        let sigmas = [self.motion_jitter, self.feature_noise, self.nuisance_noise, self.bbox_jitter, self.speed];
        if !sigmas.iter().all(|s| sigma(*s)) {
            return Err(SynthError::Config("noise levels and speed must be finite and non-negative"));
        }
        if !(0.0..90.0).contains(&self.min_angle_deg) {
            return Err(SynthError::Config("minimum angle must lie in [0, 90)"));
        }
        if self.nuisance_dims > self.feature_dim {
            return Err(SynthError::Config("more nuisance directions than feature dimensions"));
        }
        if self.pair_angle_deg.is_some_and(|a| !(0.0..=180.0).contains(&a)) {
            return Err(SynthError::Config("pair angle must lie in [0, 180]"));
        }
        let sizes = [self.arena_width, self.arena_height, self.box_width, self.box_height];
        if sizes.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(SynthError::Config("arena and box sizes must be positive"));
        }
        let arena = self.arena_width * self.arena_height;
        let box_area = self.box_width * self.box_height;
        if self.box_width > self.arena_width
            || self.box_height > self.arena_height
            || self.num_identities as f64 * box_area * 4.0 > arena
        {
            return Err(SynthError::ArenaTooSmall { arena, identities: self.num_identities, box_area });
        }
        if self.scenario == Scenario::Crossing {
            let lanes = self.num_identities.div_ceil(2) as f64;
            if lanes * self.box_height * 2.0 > self.arena_height {
                return Err(SynthError::ArenaTooSmall { arena, identities: self.num_identities, box_area });
            }
            if self.speed * f64::from(self.frames) + self.box_width > self.arena_width {
                return Err(SynthError::Config("crossing paths do not fit in the arena width"));
            }
        }
        Ok(())
    }
}

/// One ground-truth box and the feature observed for it.
#[derive(Debug, Clone, PartialEq)]
pub struct GtObservation {
    pub frame: u32,
    pub id: u32,
    pub bbox: BBox,
    pub feature: FeatureVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSequence {
    pub name: String,
    /// Appearance vector of identity `i + 1`.
    pub identities: Vec<FeatureVector>,
    /// Sorted by frame then id.
    pub gt: Vec<GtObservation>,
    /// Sorted by frame; order within a frame is the file order.
    pub detections: Vec<Detection>,
    /// Ground-truth id behind each detection; `None` for false positives.
    pub sources: Vec<Option<u32>>,
}

impl SynthSequence {
    pub fn gt_boxes(&self) -> Vec<TrackBox> {
        self.gt.iter().map(|g| TrackBox { frame: g.frame, id: g.id, bbox: g.bbox }).collect()
    }

    pub fn labeled_samples(&self) -> Vec<LabeledSample> {
        self.gt
            .iter()
            .map(|g| LabeledSample {
                feature: g.feature.clone(),
                identity: 0,
                raw_id: g.id,
                frame: g.frame,
                sequence: self.name.clone(),
            })
            .collect()
    }

    /// Detections grouped by frame, including empty frames, for frames
    /// `1..=frames`.
    pub fn frames(&self, frames: u32) -> Vec<(u32, Vec<Detection>)> {
        let mut out: Vec<(u32, Vec<Detection>)> = (1..=frames).map(|f| (f, Vec::new())).collect();
        for d in &self.detections {
            if d.frame >= 1 && d.frame <= frames {
                out[(d.frame - 1) as usize].1.push(d.clone());
            }
        }
        out
    }
}

fn quantize(v: f64) -> f64 {
    libm::round(v * 100.0) / 100.0
}

fn quantized_box(left: f64, top: f64, width: f64, height: f64) -> BBox {
    let w = quantize(width).max(1.0);
    let h = quantize(height).max(1.0);
    BBox::new(quantize(left), quantize(top), w, h).expect("quantized box is valid")
}

fn unit_vector<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    loop {
        let v: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
        let n = libm::sqrt(dot(&v, &v));
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

// unit vector at `angle` radians from unit `u`, in a random plane through u
fn rotated<R: Rng>(rng: &mut R, u: &[f64], angle: f64) -> Vec<f64> {
    loop {
        let mut w = unit_vector(rng, u.len());
        let along = dot(&w, u);
        w.iter_mut().zip(u).for_each(|(w, u)| *w -= along * u);
        let n = libm::sqrt(dot(&w, &w));
        if n > 1e-6 {
            let (c, s) = (libm::cos(angle), libm::sin(angle));
            return u.iter().zip(&w).map(|(u, w)| c * u + s * w / n).collect();
        }
    }
}

fn appearance_vectors<R: Rng>(rng: &mut R, config: &SynthConfig) -> Result<Vec<Vec<f64>>, SynthError> {
    const ATTEMPTS: usize = 10_000;
    let max_cos = libm::cos(config.min_angle_deg * PI / 180.0);
    let paired = match (config.scenario, config.pair_angle_deg) {
        (Scenario::Crossing, Some(a)) => Some(a * PI / 180.0),
        _ => None,
    };
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(config.num_identities);
    'outer: while out.len() < config.num_identities {
        let i = out.len();
        for _ in 0..ATTEMPTS {
            let (v, others) = match paired {
                Some(angle) if i % 2 == 1 => (rotated(rng, &out[i - 1], angle), &out[..i - 1]),
                _ => (unit_vector(rng, config.feature_dim), &out[..]),
            };
            if others.iter().all(|u| dot(u, &v) <= max_cos) {
                out.push(v);
                continue 'outer;
            }
        }
        return Err(SynthError::AppearanceSpace {
            wanted: config.num_identities,
            angle: config.min_angle_deg,
            dim: config.feature_dim,
        });
    }
    Ok(out)
}

// orthonormal nuisance basis by Gram-Schmidt on random directions
fn nuisance_basis<R: Rng>(rng: &mut R, config: &SynthConfig) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(config.nuisance_dims);
    while basis.len() < config.nuisance_dims {
        let mut v = unit_vector(rng, config.feature_dim);
        for b in &basis {
            let along = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(v, b)| *v -= along * b);
        }
        let n = libm::sqrt(dot(&v, &v));
        if n > 1e-6 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    basis
}

struct FeatureNoise {
    sigma: f64,
    nuisance: Vec<Vec<f64>>,
    nuisance_sigma: f64,
}

fn noisy_feature<R: Rng>(rng: &mut R, base: &[f64], noise: &FeatureNoise) -> FeatureVector {
    let iso = (noise.sigma > 0.0).then(|| Normal::new(0.0, noise.sigma).expect("sigma checked"));
    let shared = (noise.nuisance_sigma > 0.0 && !noise.nuisance.is_empty())
        .then(|| Normal::new(0.0, noise.nuisance_sigma).expect("sigma checked"));
    if iso.is_none() && shared.is_none() {
        return FeatureVector::new(base.to_vec()).expect("finite");
    }
    loop {
        let mut v: Vec<f64> = match iso {
            Some(n) => base.iter().map(|b| b + n.sample(rng)).collect(),
            None => base.to_vec(),
        };
        if let Some(n) = shared {
            for dir in &noise.nuisance {
                let a = n.sample(rng);
                v.iter_mut().zip(dir).for_each(|(v, d)| *v += a * d);
            }
        }
        let n = libm::sqrt(dot(&v, &v));
        if n > 1e-9 {
            return FeatureVector::new(v.into_iter().map(|x| x / n).collect()).expect("finite");
        }
    }
}

// noiseless top-left corners per identity per frame
fn trajectories<R: Rng>(rng: &mut R, config: &SynthConfig) -> Vec<Vec<(f64, f64)>> {
    let max_x = config.arena_width - config.box_width;
    let max_y = config.arena_height - config.box_height;
    let frames = config.frames as usize;
    let mut paths = Vec::with_capacity(config.num_identities);
    match config.scenario {
        Scenario::Random => {
            for _ in 0..config.num_identities {
                let (mut x, mut y) = (rng.random_range(0.0..=max_x), rng.random_range(0.0..=max_y));
                let angle = rng.random_range(0.0..2.0 * PI);
                let speed = config.speed * rng.random_range(0.5..=1.0);
                let (mut vx, mut vy) = (speed * libm::cos(angle), speed * libm::sin(angle));
                let mut path = Vec::with_capacity(frames);
                for _ in 0..frames {
                    path.push((x, y));
                    x += vx;
                    y += vy;
                    if x < 0.0 || x > max_x {
                        vx = -vx;
                        x = x.clamp(0.0, max_x);
                    }
                    if y < 0.0 || y > max_y {
                        vy = -vy;
                        y = y.clamp(0.0, max_y);
                    }
                }
                paths.push(path);
            }
        }
        Scenario::Crossing => {
            let lanes = config.num_identities.div_ceil(2);
            let lane_gap = config.arena_height / lanes as f64;
            let centre = max_x / 2.0;
            let half = config.speed * (frames as f64 - 1.0) / 2.0;
            for i in 0..config.num_identities {
                let lane = i / 2;
                let y = lane_gap * lane as f64 + (lane_gap - config.box_height) / 2.0;
                let dir = if i % 2 == 0 { 1.0 } else { -1.0 };
                let start = centre - dir * half;
                paths.push((0..frames).map(|t| (start + dir * config.speed * t as f64, y)).collect());
            }
        }
    }
    paths
}

/// Generate one sequence. Deterministic in the config (including seed).
pub fn generate(config: &SynthConfig) -> Result<SynthSequence, SynthError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let appearance = appearance_vectors(&mut rng, config)?;
    let noise = FeatureNoise {
        sigma: config.feature_noise,
        nuisance: nuisance_basis(&mut rng, config),
        nuisance_sigma: config.nuisance_noise,
    };
    let paths = trajectories(&mut rng, config);
    let max_x = config.arena_width - config.box_width;
    let max_y = config.arena_height - config.box_height;
    let motion = Normal::new(0.0, config.motion_jitter).expect("checked");
    let jitter = Normal::new(0.0, config.bbox_jitter).expect("checked");
    let fp_count = (config.false_positive_rate > 0.0).then(|| Poisson::new(config.false_positive_rate).expect("positive rate"));

    let mut gt = Vec::new();
    let mut detections = Vec::new();
    let mut sources = Vec::new();
    for f in 0..config.frames as usize {
        let frame = f as u32 + 1;
        let mut frame_dets: Vec<(Detection, Option<u32>)> = Vec::new();
        for (i, path) in paths.iter().enumerate() {
            let id = i as u32 + 1;
            let (px, py) = path[f];
            let x = (px + motion.sample(&mut rng)).clamp(0.0, max_x);
            let y = (py + motion.sample(&mut rng)).clamp(0.0, max_y);
            let bbox = quantized_box(x, y, config.box_width, config.box_height);
            let feature = noisy_feature(&mut rng, &appearance[i], &noise);
            if rng.random::<f64>() >= config.miss_rate {
                let det_box = if config.bbox_jitter > 0.0 {
                    quantized_box(
                        bbox.left + jitter.sample(&mut rng),
                        bbox.top + jitter.sample(&mut rng),
                        bbox.width + jitter.sample(&mut rng),
                        bbox.height + jitter.sample(&mut rng),
                    )
                } else {
                    bbox
                };
                let confidence = quantize(rng.random_range(0.5..=1.0));
                frame_dets.push((Detection { frame, bbox: det_box, confidence, feature: feature.clone() }, Some(id)));
            }
            gt.push(GtObservation { frame, id, bbox, feature });
        }
        let n_fp = fp_count.map_or(0, |p| p.sample(&mut rng) as usize);
        for _ in 0..n_fp {
            let bbox =
                quantized_box(rng.random_range(0.0..=max_x), rng.random_range(0.0..=max_y), config.box_width, config.box_height);
            let feature = FeatureVector::new(unit_vector(&mut rng, config.feature_dim)).expect("finite");
            let confidence = quantize(rng.random_range(0.1..=0.6));
            frame_dets.push((Detection { frame, bbox, confidence, feature }, None));
        }
        if config.miss_rate > 0.0 || config.false_positive_rate > 0.0 || config.bbox_jitter > 0.0 {
            frame_dets.shuffle(&mut rng);
        }
        for (d, s) in frame_dets {
            detections.push(d);
            sources.push(s);
        }
    }
    Ok(SynthSequence {
        name: config.sequence.clone(),
        identities: appearance.into_iter().map(|v| FeatureVector::new(v).expect("finite")).collect(),
        gt,
        detections,
        sources,
    })
}

/// Family of binary classification tasks for exercising meta-learning.
///
/// Every task draws a direction in the plane of the first two feature
/// axes; class 0 is centred at `+separation * direction` and class 1 at
/// `-separation * direction`, with isotropic noise in all dimensions. No
/// fixed head solves every task, but one gradient step from a small head
/// does.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoClassFamily {
    pub tasks: usize,
    pub dim: usize,
    pub support_per_class: usize,
    pub query_per_class: usize,
    pub separation: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for TwoClassFamily {
    fn default() -> Self {
        Self { tasks: 40, dim: 8, support_per_class: 4, query_per_class: 2, separation: 1.0, noise: 0.3, seed: 0 }
    }
}

impl TwoClassFamily {
    pub fn generate(&self) -> Result<TaskDistribution, SynthError> {
        if self.tasks == 0 || self.dim < 2 || self.support_per_class == 0 || self.query_per_class == 0 {
            return Err(SynthError::Config("family needs tasks, dim >= 2 and non-empty splits"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite() && self.separation.is_finite()) {
            return Err(SynthError::Config("noise and separation must be finite"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let noise = (self.noise > 0.0).then(|| Normal::new(0.0, self.noise).expect("checked"));
        let per_class = self.support_per_class + self.query_per_class;
        let mut tasks = Vec::with_capacity(self.tasks);
        for t in 0..self.tasks {
            let angle = rng.random_range(0.0..2.0 * PI);
            let dir = [libm::cos(angle), libm::sin(angle)];
            let sequence = alloc::format!("family-{t:03}");
            let (mut support, mut query) = (Vec::new(), Vec::new());
            for class in 0..2usize {
                let sign = if class == 0 { 1.0 } else { -1.0 };
                for i in 0..per_class {
                    let mut x: Vec<f64> = (0..self.dim).map(|_| noise.map_or(0.0, |n| n.sample(&mut rng))).collect();
                    x[0] += sign * self.separation * dir[0];
                    x[1] += sign * self.separation * dir[1];
                    let sample = LabeledSample {
                        feature: FeatureVector::new(x).expect("finite"),
                        identity: class,
                        raw_id: class as u32 + 1,
                        frame: i as u32 + 1,
                        sequence: sequence.clone(),
                    };
                    if i < self.support_per_class {
                        support.push(sample);
                    } else {
                        query.push(sample);
                    }
                }
            }
            tasks.push(EpisodeTask { task_id: t as u64, support, query, identities: alloc::vec![1, 2], sequence });
        }
        TaskDistribution::from_tasks(tasks, 2, self.seed).map_err(|_| SynthError::Config("family produced invalid tasks"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noiseless(scenario: Scenario) -> SynthConfig {
        SynthConfig {
            scenario,
            motion_jitter: 0.0,
            feature_noise: 0.0,
            nuisance_noise: 0.0,
            miss_rate: 0.0,
            false_positive_rate: 0.0,
            bbox_jitter: 0.0,
            ..if scenario == Scenario::Random { SynthConfig::random_preset() } else { SynthConfig::crossing_preset() }
        }
    }

    #[test]
    fn noiseless_detections_equal_ground_truth() {
        for scenario in [Scenario::Random, Scenario::Crossing] {
            let s = generate(&noiseless(scenario)).unwrap();
            assert_eq!(s.gt.len(), s.detections.len());
            for (g, d) in s.gt.iter().zip(&s.detections) {
                assert_eq!((g.frame, g.bbox), (d.frame, d.bbox));
                assert_eq!(g.feature, s.identities[g.id as usize - 1]);
            }
        }
    }

    #[test]
    fn same_seed_same_sequence() {
        let c = SynthConfig::random_preset();
        assert_eq!(generate(&c).unwrap(), generate(&c).unwrap());
        let other = SynthConfig { seed: 1, ..c.clone() };
        assert_ne!(generate(&c).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn appearance_vectors_respect_min_angle() {
        let s = generate(&SynthConfig::random_preset()).unwrap();
        let max_cos = libm::cos(30.0 * PI / 180.0);
        for (i, a) in s.identities.iter().enumerate() {
            assert!((dot(a.as_slice(), a.as_slice()) - 1.0).abs() < 1e-12);
            for b in &s.identities[i + 1..] {
                assert!(dot(a.as_slice(), b.as_slice()) <= max_cos);
            }
        }
    }

    #[test]
    fn boxes_are_quantized_and_inside_arena() {
        let c = SynthConfig::random_preset();
        let s = generate(&c).unwrap();
        for g in &s.gt {
            let b = g.bbox;
            assert_eq!(quantize(b.left), b.left);
            assert!(b.left >= 0.0 && b.right() <= c.arena_width + 1e-9);
            assert!(b.top >= 0.0 && b.bottom() <= c.arena_height + 1e-9);
        }
        assert_eq!(s.gt.len(), 10 * 200);
    }

    #[test]
    fn crossing_pairs_swap_sides() {
        let c = noiseless(Scenario::Crossing);
        let s = generate(&c).unwrap();
        let at = |frame: u32, id: u32| s.gt.iter().find(|g| g.frame == frame && g.id == id).unwrap().bbox.left;
        assert!(at(1, 1) < at(1, 2));
        assert!(at(c.frames, 1) > at(c.frames, 2));
    }

    #[test]
    fn two_class_family_is_valid_and_seeded() {
        let f = TwoClassFamily::default();
        let d = f.generate().unwrap();
        assert_eq!(d.len(), 40);
        assert_eq!(d.classes(), 2);
        assert_eq!(d.tasks()[0].support.len(), 8);
        assert_eq!(d.tasks()[0].query.len(), 4);
        assert_eq!(d, f.generate().unwrap());
    }

    #[test]
    fn config_errors() {
        let small = SynthConfig { arena_width: 50.0, arena_height: 100.0, ..SynthConfig::random_preset() };
        assert!(matches!(generate(&small), Err(SynthError::ArenaTooSmall { .. })));
        let bad_rate = SynthConfig { miss_rate: 1.5, ..SynthConfig::random_preset() };
        assert!(matches!(generate(&bad_rate), Err(SynthError::Config(_))));
        let crowded = SynthConfig { feature_dim: 2, min_angle_deg: 60.0, ..SynthConfig::random_preset() };
        assert!(matches!(generate(&crowded), Err(SynthError::AppearanceSpace { .. })));
    }
}
