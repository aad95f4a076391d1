use metatrack::checkpoint::Checkpoint;
use metatrack::formats::{
    parse_features, parse_mot, parse_results, write_detections, write_features, write_ground_truth, write_results,
};
use metatrack::ingest::ground_truth_boxes;
use metatrack::pipeline::synth_files;
use metatrack_core::episodes::TaskConfig;
use metatrack_core::maml::{MamlConfig, MetaMode, TaskMemoryEntry};
use metatrack_core::metrics::{BBox, TrackBox};
use metatrack_core::model::{FeatureKey, FeatureTable, FeatureVector, HeadParams};
use metatrack_core::synth::{generate, SynthConfig};
use metatrack_core::tracker::{Detection, ResultRow};
use proptest::prelude::*;

// boxes on the 0.01 pixel grid, as every writer in the toolkit produces
fn grid_box() -> impl Strategy<Value = BBox> {
    (0i64..200_000, 0i64..200_000, 1i64..50_000, 1i64..50_000)
        .prop_map(|(l, t, w, h)| BBox::new(l as f64 / 100.0, t as f64 / 100.0, w as f64 / 100.0, h as f64 / 100.0).unwrap())
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![any::<f64>().prop_filter("finite", |v| v.is_finite()), -1.0..1.0f64]
}

proptest! {
    #[test]
    fn ground_truth_round_trips(rows in prop::collection::vec((1u32..500, 1u32..1000, grid_box()), 0..30)) {
        let boxes: Vec<TrackBox> = rows.iter().map(|&(frame, id, bbox)| TrackBox { frame, id, bbox }).collect();
        let text = write_ground_truth(&boxes);
        prop_assert_eq!(ground_truth_boxes(&text).unwrap(), boxes);
    }

    #[test]
    fn results_round_trip(rows in prop::collection::vec((1u32..500, 1u32..1000, grid_box(), 0i64..=100), 0..30)) {
        let out: Vec<ResultRow> = rows
            .iter()
            .map(|&(frame, id, bbox, c)| ResultRow { frame, id, bbox, confidence: c as f64 / 100.0 })
            .collect();
        let text = write_results(&out);
        let back = parse_results(&text).unwrap();
        prop_assert_eq!(back, out.iter().map(|r| r.track_box()).collect::<Vec<_>>());
        let confs: Vec<f64> = parse_mot(&text).unwrap().iter().map(|r| r.conf).collect();
        prop_assert_eq!(confs, out.iter().map(|r| r.confidence).collect::<Vec<_>>());
    }

    #[test]
    fn detections_round_trip(rows in prop::collection::vec((1u32..500, grid_box(), 0i64..=100), 0..30)) {
        let feature = FeatureVector::new(vec![1.0]).unwrap();
        let dets: Vec<Detection> = rows
            .iter()
            .map(|&(frame, bbox, c)| Detection { frame, bbox, confidence: c as f64 / 100.0, feature: feature.clone() })
            .collect();
        let parsed = parse_mot(&write_detections(&dets)).unwrap();
        prop_assert_eq!(parsed.len(), dets.len());
        for (p, d) in parsed.iter().zip(&dets) {
            prop_assert_eq!((p.frame, p.id, p.bbox, p.conf, p.class), (d.frame, -1, d.bbox, d.confidence, Some(-1)));
        }
    }

    #[test]
    fn features_round_trip_bit_exact(
        dim in 1usize..6,
        rows in prop::collection::vec((0usize..3, 1u32..50, -20i64..20, prop::collection::vec(finite(), 6)), 0..20),
    ) {
        let names = ["a", "seq-2", "MOT17-04"];
        let mut table = FeatureTable::new(dim);
        for (s, frame, key, values) in rows {
            let Some(key) = FeatureKey::decode(key) else { continue };
            table.insert(names[s], frame, key, FeatureVector::new(values[..dim].to_vec()).unwrap()).unwrap();
        }
        let text = write_features(&table);
        let back = parse_features(&text).unwrap();
        prop_assert_eq!(write_features(&back), text);
        for ((_, _, _, a), (_, _, _, b)) in table.iter().zip(back.iter()) {
            let bits = |v: &FeatureVector| v.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn checkpoint_round_trips_bit_exact(
        classes in 1usize..4,
        dim in 1usize..5,
        values in prop::collection::vec(finite(), 40),
        entries in 0usize..4,
        k in 1usize..4,
        seed in any::<u64>(),
    ) {
        let n = classes * dim + classes;
        let head = |offset: usize| {
            let flat: Vec<f64> = (0..n).map(|i| values[(i + offset) % values.len()]).collect();
            HeadParams::from_flat(classes, dim, &flat).unwrap()
        };
        let feature = |offset: usize| FeatureVector::new((0..dim).map(|i| values[(i * 7 + offset) % values.len()]).collect()).unwrap();
        let memory: Vec<TaskMemoryEntry> = (0..entries)
            .map(|e| TaskMemoryEntry {
                task_id: e as u64 * 3,
                support_centroid: feature(e),
                adapted: head(e + 1),
                support_features: (0..k).map(|j| feature(e + j + 2)).collect(),
                query_loss: values[e].abs(),
            })
            .collect();
        let ckpt = Checkpoint {
            maml: MamlConfig { seed, mode: MetaMode::FirstOrder, inner_lr: values[0].abs() + 1e-9, ..MamlConfig::default() },
            tasks: TaskConfig { k, q: 2, identities_per_task: 3 },
            head: head(0),
            memory,
        };
        let text = ckpt.to_text();
        let back = Checkpoint::parse(&text).unwrap();
        prop_assert_eq!(back.to_text(), text);
        prop_assert_eq!(back.head.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), ckpt.head.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!(back, ckpt);
    }
}

#[test]
fn synthetic_files_round_trip() {
    let seq = generate(&SynthConfig::random_preset()).unwrap();
    let files = synth_files(&seq).unwrap();
    assert_eq!(ground_truth_boxes(&files.gt).unwrap(), seq.gt_boxes());
    let det = parse_mot(&files.det).unwrap();
    assert_eq!(det.len(), seq.detections.len());
    for (r, d) in det.iter().zip(&seq.detections) {
        assert_eq!((r.frame, r.bbox, r.conf), (d.frame, d.bbox, d.confidence));
    }
    let table = parse_features(&files.features).unwrap();
    for g in &seq.gt {
        assert_eq!(table.get(&seq.name, g.frame, FeatureKey::Identity(g.id)), Some(&g.feature));
    }
    assert_eq!(table.len(), seq.gt.len() + seq.detections.len());
}

#[test]
fn noiseless_detections_equal_ground_truth() {
    let seq = generate(&SynthConfig {
        motion_jitter: 0.0,
        miss_rate: 0.0,
        false_positive_rate: 0.0,
        bbox_jitter: 0.0,
        feature_noise: 0.0,
        ..SynthConfig::random_preset()
    })
    .unwrap();
    let files = synth_files(&seq).unwrap();
    let strip = |text: &str| -> Vec<String> {
        let mut rows: Vec<String> = text
            .lines()
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                format!("{},{}", f[0], f[2..6].join(","))
            })
            .collect();
        rows.sort();
        rows
    };
    assert_eq!(strip(&files.det), strip(&files.gt));
}
