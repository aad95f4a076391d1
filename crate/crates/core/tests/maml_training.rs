use metatrack_core::episodes::{build_tasks, TaskConfig};
use metatrack_core::maml::{
    adapted_query_accuracy, meta_gradient_with, meta_objective, random_head, train, train_from, MamlConfig, MetaMode,
};
use metatrack_core::model::{CrossEntropyLoss, FeatureVector, HeadParams, LabeledSample};
use metatrack_core::numkit::{Objective, Scalar, Tape, Var};
use metatrack_core::synth::{generate, SynthConfig, TwoClassFamily};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct HalfSquaredNorm(usize);

impl Objective for HalfSquaredNorm {
    fn dim(&self) -> usize {
        self.0
    }

    fn build<T: Scalar>(&self, tape: &mut Tape<T>, theta: Var) -> Var {
        let sq = tape.dot(theta, theta);
        tape.scale(sq, 0.5)
    }
}

fn random_samples(rng: &mut ChaCha8Rng, n: usize, classes: usize, dim: usize) -> Vec<LabeledSample> {
    (0..n)
        .map(|i| LabeledSample {
            feature: FeatureVector::new((0..dim).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap(),
            identity: rng.random_range(0..classes),
            raw_id: 1,
            frame: i as u32 + 1,
            sequence: "s".into(),
        })
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[test]
fn exact_meta_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let dim = rng.random_range(1..=8);
        let classes = rng.random_range(2..=4);
        let k = rng.random_range(1..=5);
        let lr = rng.random_range(0.01..0.5);
        let n_tasks = rng.random_range(1..=3);
        let data: Vec<(Vec<LabeledSample>, Vec<LabeledSample>)> = (0..n_tasks)
            .map(|_| (random_samples(&mut rng, k, classes, dim), random_samples(&mut rng, 2, classes, dim)))
            .collect();
        let objs: Vec<_> = data
            .iter()
            .map(|(s, q)| (CrossEntropyLoss::new(classes, dim, s).unwrap(), CrossEntropyLoss::new(classes, dim, q).unwrap()))
            .collect();
        let theta = random_head(classes, dim, 0.5, &mut rng).unwrap().flatten();
        let g = meta_gradient_with(&theta, &objs, lr, 1, MetaMode::Exact).unwrap().gradient;

        let h = 1e-5;
        let fd: Vec<f64> = (0..theta.len())
            .map(|i| {
                let mut p = theta.clone();
                p[i] += h;
                let up = meta_objective(&p, &objs, lr, 1).unwrap();
                p[i] -= 2.0 * h;
                let down = meta_objective(&p, &objs, lr, 1).unwrap();
                (up - down) / (2.0 * h)
            })
            .collect();
        let diff: Vec<f64> = g.iter().zip(&fd).map(|(a, b)| a - b).collect();
        let rel = norm(&diff) / norm(&fd).max(1e-8);
        assert!(rel < 1e-5, "relative error {rel}");
    }
}

#[test]
fn quadratic_meta_gradient_closed_form() {
    let theta = vec![0.3, -1.2, 2.5, 0.0];
    let tasks = [(HalfSquaredNorm(4), HalfSquaredNorm(4))];
    for lr in [0.0, 0.05, 0.1] {
        let exact = meta_gradient_with(&theta, &tasks, lr, 1, MetaMode::Exact).unwrap();
        let first = meta_gradient_with(&theta, &tasks, lr, 1, MetaMode::FirstOrder).unwrap();
        for ((t, e), f) in theta.iter().zip(&exact.gradient).zip(&first.gradient) {
            assert!((e - (1.0 - lr) * (1.0 - lr) * t).abs() < 1e-10);
            assert!((f - (1.0 - lr) * t).abs() < 1e-10);
        }
    }
}

fn synthetic_distribution() -> metatrack_core::TaskDistribution {
    let seq = generate(&SynthConfig { frames: 30, ..SynthConfig::random_preset() }).unwrap();
    build_tasks(&seq.labeled_samples(), &TaskConfig::default(), 3).unwrap()
}

#[test]
fn training_is_deterministic_and_logs_every_epoch() {
    let dist = synthetic_distribution();
    let config = MamlConfig { epochs: 5, ..MamlConfig::default() };
    let a = train(&dist, &config).unwrap();
    let b = train(&dist, &config).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.log.epochs.len(), 5);
    assert_eq!(a.memory.len(), dist.len());
    let c = train(&dist, &MamlConfig { seed: 9, ..config }).unwrap();
    assert_ne!(a.head, c.head);
}

#[test]
fn zero_epochs_returns_initialization() {
    let dist = synthetic_distribution();
    let config = MamlConfig { epochs: 0, ..MamlConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let init = random_head(dist.classes(), 16, config.init_scale, &mut rng).unwrap();
    assert_eq!(train(&dist, &config).unwrap().head, init);
    let other = HeadParams::zeros(dist.classes(), 16).unwrap();
    let out = train_from(&dist, &config, other.clone()).unwrap();
    assert_eq!(out.head, other);
    assert!(out.log.epochs.is_empty());
}

#[test]
fn full_batch_meta_loss_never_increases() {
    let dist = synthetic_distribution();
    let config = MamlConfig { epochs: 15, batch_size: dist.len(), init_scale: 1.0, ..MamlConfig::default() };
    let out = train(&dist, &config).unwrap();
    let losses: Vec<f64> = out.log.epochs.iter().map(|e| e.meta_loss).collect();
    for w in losses.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-12), "{} then {}", w[0], w[1]);
    }
    assert!(losses.last().unwrap() < losses.first().unwrap());
}

#[test]
fn meta_training_speeds_up_adaptation() {
    let train_family = TwoClassFamily::default().generate().unwrap();
    let eval_family = TwoClassFamily { seed: 1, ..TwoClassFamily::default() }.generate().unwrap();
    let config =
        MamlConfig { inner_lr: 1.0, outer_lr: 0.05, epochs: 60, batch_size: 8, init_scale: 1.0, ..MamlConfig::default() };
    let out = train(&train_family, &config).unwrap();
    let trained = adapted_query_accuracy(&out.head, eval_family.tasks(), config.inner_lr, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut baseline = 0.0;
    for _ in 0..5 {
        let h = random_head(2, 8, 1.0, &mut rng).unwrap();
        baseline += adapted_query_accuracy(&h, eval_family.tasks(), config.inner_lr, 1).unwrap() / 5.0;
    }
    assert!(trained >= baseline + 0.15, "trained {trained} vs random {baseline}");
}
