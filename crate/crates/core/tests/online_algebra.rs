use metatrack_core::maml::{random_head, TaskMemoryEntry};
use metatrack_core::model::{embed, CosineTarget, FeatureVector, HeadParams};
use metatrack_core::online::{init_new_task, online_step, weighted_average, InitOptions, OnlineState};
use metatrack_core::synth::{generate, SynthConfig};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_entry(rng: &mut ChaCha8Rng, task_id: u64, classes: usize, dim: usize) -> TaskMemoryEntry {
    let k = rng.random_range(1..=4);
    let support: Vec<FeatureVector> =
        (0..k).map(|_| FeatureVector::new((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()).collect();
    TaskMemoryEntry {
        task_id,
        support_centroid: support[0].clone(),
        adapted: random_head(classes, dim, 1.0, rng).unwrap(),
        support_features: support,
        query_loss: rng.random_range(0.0..3.0),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn init_ignores_memory_order(seed in any::<u64>(), n in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut memory: Vec<TaskMemoryEntry> = (0..n as u64).map(|i| random_entry(&mut rng, i, 3, 4)).collect();
        let x = FeatureVector::new(vec![0.5, 0.2, -0.1, 0.7]).unwrap();
        let meta = HeadParams::zeros(3, 4).unwrap();
        let a = init_new_task(&memory, &x, &meta, &InitOptions::default()).unwrap();
        memory.shuffle(&mut rng);
        let b = init_new_task(&memory, &x, &meta, &InitOptions::default()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn weights_are_scale_free(seed in any::<u64>(), n in 1usize..8, power in -20i32..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let heads: Vec<HeadParams> = (0..n).map(|_| random_head(2, 3, 1.0, &mut rng).unwrap()).collect();
        let gammas: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
        let base: Vec<(u64, f64, &HeadParams)> = (0..n).map(|i| (i as u64, gammas[i], &heads[i])).collect();
        let (h, _) = weighted_average(&base).unwrap();

        // powers of two scale without rounding
        let c = 2f64.powi(power);
        let scaled: Vec<(u64, f64, &HeadParams)> = base.iter().map(|&(id, g, p)| (id, g * c, p)).collect();
        prop_assert_eq!(&weighted_average(&scaled).unwrap().0, &h);

        let c = rng.random_range(0.1..10.0);
        let scaled: Vec<(u64, f64, &HeadParams)> = base.iter().map(|&(id, g, p)| (id, g * c, p)).collect();
        let other = weighted_average(&scaled).unwrap().0.flatten();
        for (a, b) in other.iter().zip(h.flatten()) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn single_entry_is_copied(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entry = random_entry(&mut rng, 7, 3, 4);
        // the summed support has positive similarity with its own entry
        let mut sum = vec![0.0; 4];
        for f in &entry.support_features {
            sum.iter_mut().zip(f.as_slice()).for_each(|(s, v)| *s += v);
        }
        prop_assume!(sum.iter().any(|v| *v != 0.0));
        let x = FeatureVector::new(sum).unwrap();
        let meta = HeadParams::zeros(3, 4).unwrap();
        let s = init_new_task(std::slice::from_ref(&entry), &x, &meta, &InitOptions::default()).unwrap();
        prop_assert!(!s.fell_back);
        prop_assert_eq!(s.head, entry.adapted);
    }
}

#[test]
fn equal_similarities_give_plain_mean_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let support = vec![FeatureVector::new(vec![1.0, 0.0]).unwrap()];
    let memory: Vec<TaskMemoryEntry> = (0..4)
        .map(|i| TaskMemoryEntry {
            task_id: i,
            support_centroid: support[0].clone(),
            adapted: random_head(2, 2, 1.0, &mut rng).unwrap(),
            support_features: support.clone(),
            query_loss: 0.25 * (i as f64 + 1.0),
        })
        .collect();
    let x = FeatureVector::new(vec![0.6, 0.8]).unwrap();
    let s = init_new_task(&memory, &x, &HeadParams::zeros(2, 2).unwrap(), &InitOptions::default()).unwrap();
    let mean = memory.iter().map(|e| e.query_loss).sum::<f64>() / 4.0;
    assert_eq!(s.weighted_loss, mean);
    assert!(s.gammas.iter().all(|(_, g)| *g == s.gammas[0].1));
}

#[test]
fn online_steps_raise_held_out_score() {
    let seq = generate(&SynthConfig::random_preset()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let head = random_head(10, 16, 0.1, &mut rng).unwrap();
    let mut state = OnlineState::from_head(head);
    let crops: Vec<&FeatureVector> = seq.gt.iter().filter(|g| g.id == 3).map(|g| &g.feature).collect();
    let class = 4;
    let held_out = crops[30];
    let score = |s: &OnlineState| embed(&s.head, held_out).unwrap()[class];
    let before = score(&state);
    for c in &crops[..20] {
        let t = [CosineTarget { feature: (*c).clone(), class }];
        state = online_step(&state, &t, 0.2).unwrap();
    }
    assert_eq!(state.frames_seen, 20);
    assert!(score(&state) > before, "{} <= {before}", score(&state));
}
