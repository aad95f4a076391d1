use std::collections::BTreeSet;

use metatrack_core::maml::random_head;
use metatrack_core::metrics::{evaluate_sequence, BBox, TrackBox};
use metatrack_core::model::{FeatureVector, HeadParams};
use metatrack_core::synth::{generate, Scenario, SynthConfig, SynthSequence};
use metatrack_core::tracker::{Detection, SessionConfig, Tracker, TrackerParams, TrackingSession};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn noiseless(base: SynthConfig) -> SynthConfig {
    SynthConfig {
        motion_jitter: 0.0,
        feature_noise: 0.0,
        nuisance_noise: 0.0,
        miss_rate: 0.0,
        false_positive_rate: 0.0,
        bbox_jitter: 0.0,
        ..base
    }
}

fn head() -> HeadParams {
    random_head(10, 16, 0.1, &mut ChaCha8Rng::seed_from_u64(4)).unwrap()
}

fn run(seq: &SynthSequence, frames: u32, config: SessionConfig) -> Vec<TrackBox> {
    let mut s = TrackingSession::new(config, head(), &[]).unwrap();
    for (f, dets) in seq.frames(frames) {
        s.step(f, &dets).unwrap();
    }
    s.results().iter().map(|r| r.track_box()).collect()
}

#[test]
fn noiseless_sequence_is_tracked_perfectly() {
    let c = noiseless(SynthConfig::random_preset());
    let seq = generate(&c).unwrap();
    let pred = run(&seq, c.frames, SessionConfig::default());
    let m = evaluate_sequence(&seq.gt_boxes(), &pred, 0.5).unwrap();
    assert_eq!(m.mota(), 1.0);
    assert_eq!(m.idf1(), 1.0);
    assert_eq!(m.clear.id_switches, 0);
    // results reproduce the ground-truth boxes exactly
    let gt: BTreeSet<(u32, u64, u64)> = seq.gt.iter().map(|g| (g.frame, g.bbox.left.to_bits(), g.bbox.top.to_bits())).collect();
    let got: BTreeSet<(u32, u64, u64)> = pred.iter().map(|p| (p.frame, p.bbox.left.to_bits(), p.bbox.top.to_bits())).collect();
    assert_eq!(gt, got);
}

#[test]
fn appearance_keeps_identities_through_crossings() {
    let c = noiseless(SynthConfig { scenario: Scenario::Crossing, ..SynthConfig::crossing_preset() });
    let seq = generate(&c).unwrap();
    let config = SessionConfig { adapt: false, ..SessionConfig::default() };
    let distinct = evaluate_sequence(&seq.gt_boxes(), &run(&seq, c.frames, config), 0.5).unwrap();
    assert_eq!(distinct.clear.id_switches, 0);

    // every identity looks the same: only the assignment's tie-breaking is left
    let mut uniform = seq.clone();
    let same = FeatureVector::new(vec![1.0; 16]).unwrap();
    uniform.detections.iter_mut().for_each(|d| d.feature = same.clone());
    let blind = evaluate_sequence(&seq.gt_boxes(), &run(&uniform, c.frames, config), 0.5).unwrap();
    assert!(blind.clear.id_switches >= distinct.clear.id_switches);
}

fn detections() -> impl Strategy<Value = Vec<Vec<(f64, f64, usize)>>> {
    prop::collection::vec(prop::collection::vec((0.0..60.0f64, 0.0..20.0f64, 0usize..3), 0..5), 1..15)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tracker_invariants(frames in detections()) {
        let features = [vec![1.0, 0.0], vec![0.0, 1.0], vec![0.7, 0.7]];
        let h = HeadParams::new(2, 2, vec![1.0, 0.0, 0.0, 1.0], vec![0.05, 0.05]).unwrap();
        let params = TrackerParams { n_init: 2, max_age: 3, ..TrackerParams::default() };
        let mut a = Tracker::new(params).unwrap();
        let mut b = Tracker::new(params).unwrap();
        for (i, list) in frames.iter().enumerate() {
            let frame = i as u32 + 1;
            let dets: Vec<Detection> = list.iter().map(|&(x, y, f)| Detection {
                frame,
                bbox: BBox::new(x, y, 10.0, 20.0).unwrap(),
                confidence: 1.0,
                feature: FeatureVector::new(features[f].clone()).unwrap(),
            }).collect();
            let out = a.step(frame, &dets, &h).unwrap();
            prop_assert_eq!(&out, &b.step(frame, &dets, &h).unwrap());
            let used: BTreeSet<usize> = out.matches.iter().chain(&out.spawned).map(|m| m.1).collect();
            prop_assert_eq!(used.len(), out.matches.len() + out.spawned.len());
            prop_assert_eq!(used.len(), dets.len());
            let ids: BTreeSet<u32> = out.matches.iter().map(|m| m.0).collect();
            prop_assert_eq!(ids.len(), out.matches.len());
        }
        for t in a.tracks() {
            prop_assert!(t.history.windows(2).all(|w| w[0].frame < w[1].frame));
        }
        let ids: BTreeSet<u32> = a.tracks().iter().map(|t| t.id).collect();
        prop_assert_eq!(ids.len(), a.tracks().len());
    }
}
