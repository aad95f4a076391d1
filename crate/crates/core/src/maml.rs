//! Model-agnostic meta-learning of the head initialization.
//!
//! Each outer iteration samples a batch of tasks, adapts a copy of the
//! shared parameters on every task's support set with one gradient step,
//! scores the adapted copy on the query set, and moves the shared
//! parameters down the gradient of the summed query losses.
//!
//! In [`MetaMode::Exact`] the outer gradient differentiates through the
//! inner step: for `θ' = θ − α∇L_S(θ)`,
//!
//! ```text
//! ∇_θ L_Q(θ') = (I − α ∇²L_S(θ)) · ∇L_Q(θ')
//! ```
//!
//! and the Hessian term is an exact Hessian-vector product. In
//! [`MetaMode::FirstOrder`] it is dropped. Exact differentiation is only
//! defined for a single inner step; with `inner_steps > 1` the first-order
//! gradient is used regardless of mode.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::Cell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::episodes::{self, EpisodeError, EpisodeTask, TaskDistribution};
use crate::model::{CrossEntropyLoss, FeatureVector, HeadParams, LabeledSample, ModelError};
use crate::numkit::{self, NumError, Objective};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MamlError {
    #[error("invalid configuration: {0}")]
    Config(&'static str),
    #[error("meta-loss became non-finite at epoch {epoch}")]
    Diverged { epoch: usize, last_good: Box<HeadParams> },
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Episode(#[from] EpisodeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetaMode {
    /// Differentiate through the inner step (Hessian-vector products).
    Exact,
    /// Drop the second-order term.
    FirstOrder,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MamlConfig {
    /// Inner (adaptation) step size α.
    pub inner_lr: f64,
    /// Outer (meta) step size β.
    pub outer_lr: f64,
    pub inner_steps: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub mode: MetaMode,
    pub seed: u64,
    /// Standard deviation of the random initial head weights.
    pub init_scale: f64,
}

impl Default for MamlConfig {
    fn default() -> Self {
        Self {
            inner_lr: 5e-3,
            outer_lr: 1e-4,
            inner_steps: 1,
            epochs: 60,
            batch_size: 12,
            mode: MetaMode::Exact,
            seed: 0,
            init_scale: 0.1,
        }
    }
}

impl MamlConfig {
    pub fn validate(&self) -> Result<(), MamlError> {
        if !(self.inner_lr > 0.0 && self.inner_lr.is_finite()) {
            return Err(MamlError::Config("inner_lr must be positive"));
        }
        if !(self.outer_lr > 0.0 && self.outer_lr.is_finite()) {
            return Err(MamlError::Config("outer_lr must be positive"));
        }
        if self.inner_steps == 0 {
            return Err(MamlError::Config("inner_steps must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(MamlError::Config("batch_size must be at least 1"));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(MamlError::Config("init_scale must be non-negative"));
        }
        Ok(())
    }

    fn effective_mode(&self) -> MetaMode {
        if self.inner_steps > 1 {
            MetaMode::FirstOrder
        } else {
            self.mode
        }
    }
}

/// Per-task record kept after training for online initialization.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskMemoryEntry {
    pub task_id: u64,
    /// Mean of the support features.
    pub support_centroid: FeatureVector,
    /// Parameters adapted to this task's support set.
    pub adapted: HeadParams,
    pub support_features: Vec<FeatureVector>,
    /// Query loss of the adapted parameters.
    pub query_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Sum over the epoch's outer iterations of the batch meta-loss.
    pub meta_loss: f64,
    /// Mean Euclidean norm of the outer gradients.
    pub grad_norm: f64,
    /// Seconds spent in the epoch, as reported by the caller's clock.
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub head: HeadParams,
    pub memory: Vec<TaskMemoryEntry>,
    pub log: TrainLog,
}

/// Adapted parameters that exist only while one task's query loss is
/// evaluated. `live` counts how many are alive at once.
struct Scratch<'a> {
    values: Vec<f64>,
    live: &'a Cell<usize>,
}

impl<'a> Scratch<'a> {
    fn new(values: Vec<f64>, live: &'a Cell<usize>) -> Self {
        live.set(live.get() + 1);
        Self { values, live }
    }
}

impl Drop for Scratch<'_> {
    fn drop(&mut self) {
        self.live.set(self.live.get() - 1);
    }
}

/// `steps` plain gradient steps of size `lr` on `obj`, starting at `theta`.
pub fn inner_adapt<O: Objective + ?Sized>(theta: &[f64], obj: &O, lr: f64, steps: usize) -> Result<Vec<f64>, MamlError> {
    let mut cur = theta.to_vec();
    for _ in 0..steps {
        let g = numkit::gradient(obj, &cur)?;
        numkit::axpy(&mut cur, -lr, &g);
        if cur.iter().any(|v| !v.is_finite()) {
            return Err(NumError::NonFinite { op: "inner_adapt" }.into());
        }
    }
    Ok(cur)
}

/// Head adapted on `support` with softmax cross-entropy.
pub fn adapt_head(head: &HeadParams, support: &[LabeledSample], lr: f64, steps: usize) -> Result<HeadParams, MamlError> {
    let obj = CrossEntropyLoss::new(head.classes(), head.dim(), support)?;
    let flat = inner_adapt(&head.flatten(), &obj, lr, steps)?;
    Ok(HeadParams::from_flat(head.classes(), head.dim(), &flat)?)
}

/// Outer gradient of a batch together with bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaGradient {
    pub gradient: Vec<f64>,
    /// `Σ_i L_Q_i(θ_i')`
    pub meta_loss: f64,
    /// Largest number of adapted parameter copies alive at the same time.
    pub peak_live_adapted: usize,
}

/// Outer gradient for arbitrary `(support, query)` objective pairs.
/// Per-task contributions are summed in slice order.
pub fn meta_gradient_with<S: Objective, Q: Objective>(
    theta: &[f64],
    tasks: &[(S, Q)],
    lr: f64,
    steps: usize,
    mode: MetaMode,
) -> Result<MetaGradient, MamlError> {
    if tasks.is_empty() {
        return Err(MamlError::Config("meta_gradient needs a non-empty batch"));
    }
    let mode = if steps > 1 { MetaMode::FirstOrder } else { mode };
    let live = Cell::new(0usize);
    let mut peak = 0usize;
    let mut total = vec![0.0; theta.len()];
    let mut meta_loss = 0.0;
    for (support, query) in tasks {
        let adapted = Scratch::new(inner_adapt(theta, support, lr, steps)?, &live);
        peak = peak.max(live.get());
        let (lq, gq) = numkit::value_and_gradient(query, &adapted.values)?;
        drop(adapted);
        meta_loss += lq;
        match mode {
            MetaMode::FirstOrder => numkit::axpy(&mut total, 1.0, &gq),
            MetaMode::Exact => {
                let hv = numkit::hessian_vector_product(support, theta, &gq)?;
                for k in 0..total.len() {
                    total[k] += gq[k] - lr * hv[k];
                }
            }
        }
    }
    debug_assert_eq!(live.get(), 0, "adapted parameters outlived their task");
    if !meta_loss.is_finite() || total.iter().any(|v| !v.is_finite()) {
        return Err(NumError::NonFinite { op: "meta_gradient" }.into());
    }
    Ok(MetaGradient { gradient: total, meta_loss, peak_live_adapted: peak })
}

/// `Σ_i L_Q_i(θ − α∇L_S_i(θ))` (iterated `steps` times).
pub fn meta_objective<S: Objective, Q: Objective>(
    theta: &[f64],
    tasks: &[(S, Q)],
    lr: f64,
    steps: usize,
) -> Result<f64, MamlError> {
    let mut total = 0.0;
    for (support, query) in tasks {
        let adapted = inner_adapt(theta, support, lr, steps)?;
        total += numkit::value(query, &adapted)?;
    }
    Ok(total)
}

fn task_objectives<'a>(
    head: &HeadParams,
    tasks: &[&'a EpisodeTask],
) -> Result<Vec<(CrossEntropyLoss<'a>, CrossEntropyLoss<'a>)>, MamlError> {
    tasks
        .iter()
        .map(|t| {
            Ok((
                CrossEntropyLoss::new(head.classes(), head.dim(), &t.support)?,
                CrossEntropyLoss::new(head.classes(), head.dim(), &t.query)?,
            ))
        })
        .collect()
}

/// Outer gradient of the head over a batch of episode tasks.
pub fn meta_gradient(head: &HeadParams, tasks: &[&EpisodeTask], config: &MamlConfig) -> Result<MetaGradient, MamlError> {
    let objs = task_objectives(head, tasks)?;
    meta_gradient_with(&head.flatten(), &objs, config.inner_lr, config.inner_steps, config.effective_mode())
}

/// Batch meta-loss `Σ_i L_Q_i(θ_i')` of the head.
pub fn batch_meta_loss(head: &HeadParams, tasks: &[&EpisodeTask], config: &MamlConfig) -> Result<f64, MamlError> {
    let objs = task_objectives(head, tasks)?;
    meta_objective(&head.flatten(), &objs, config.inner_lr, config.inner_steps)
}

/// Fraction of query samples classified correctly (arg-max logit, lowest
/// index on ties) after adapting the head to each task's support set.
pub fn adapted_query_accuracy(head: &HeadParams, tasks: &[EpisodeTask], lr: f64, steps: usize) -> Result<f64, MamlError> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for t in tasks {
        let adapted = adapt_head(head, &t.support, lr, steps)?;
        for q in &t.query {
            let z = crate::model::head_forward(&adapted, &q.feature)?;
            let mut best = 0;
            for (c, v) in z.iter().enumerate() {
                if *v > z[best] {
                    best = c;
                }
            }
            correct += usize::from(best == q.identity);
            total += 1;
        }
    }
    if total == 0 {
        return Err(MamlError::Config("no query samples"));
    }
    Ok(correct as f64 / total as f64)
}

/// Gaussian weights with standard deviation `scale`, zero bias.
pub fn random_head<R: Rng + ?Sized>(classes: usize, dim: usize, scale: f64, rng: &mut R) -> Result<HeadParams, MamlError> {
    let weights = if scale == 0.0 {
        vec![0.0; classes * dim]
    } else {
        let normal = Normal::new(0.0, scale).map_err(|_| MamlError::Config("init_scale"))?;
        (0..classes * dim).map(|_| normal.sample(rng)).collect()
    };
    Ok(HeadParams::new(classes, dim, weights, vec![0.0; classes])?)
}

fn feature_dim(dist: &TaskDistribution) -> Result<usize, MamlError> {
    dist.tasks()
        .first()
        .and_then(|t| t.support.first())
        .map(|s| s.feature.dim())
        .ok_or(MamlError::Config("task distribution has no samples"))
}

/// Adapt `head` to every task once and record the results.
pub fn build_memory(head: &HeadParams, dist: &TaskDistribution, config: &MamlConfig) -> Result<Vec<TaskMemoryEntry>, MamlError> {
    let mut memory = Vec::with_capacity(dist.len());
    for task in dist.tasks() {
        let adapted = adapt_head(head, &task.support, config.inner_lr, config.inner_steps)?;
        let query_loss = crate::model::task_loss(&adapted, &task.query)?;
        let dim = head.dim();
        let mut centroid = vec![0.0; dim];
        for s in &task.support {
            numkit::axpy(&mut centroid, 1.0, s.feature.as_slice());
        }
        let n = task.support.len() as f64;
        for v in &mut centroid {
            *v /= n;
        }
        memory.push(TaskMemoryEntry {
            task_id: task.task_id,
            support_centroid: FeatureVector::new(centroid)?,
            adapted,
            support_features: task.support.iter().map(|s| s.feature.clone()).collect(),
            query_loss,
        });
    }
    Ok(memory)
}

/// Meta-train from a seeded random initialization.
pub fn train(dist: &TaskDistribution, config: &MamlConfig) -> Result<TrainOutput, MamlError> {
    train_with_clock(dist, config, &|| 0.0)
}

/// As [`train`], timing epochs with `clock` (seconds, monotone).
pub fn train_with_clock(dist: &TaskDistribution, config: &MamlConfig, clock: &dyn Fn() -> f64) -> Result<TrainOutput, MamlError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let init = random_head(dist.classes(), feature_dim(dist)?, config.init_scale, &mut rng)?;
    train_loop(dist, config, init, &mut rng, clock)
}

/// Meta-train starting from a given head.
pub fn train_from(dist: &TaskDistribution, config: &MamlConfig, init: HeadParams) -> Result<TrainOutput, MamlError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    train_loop(dist, config, init, &mut rng, &|| 0.0)
}

fn train_loop(
    dist: &TaskDistribution,
    config: &MamlConfig,
    init: HeadParams,
    rng: &mut ChaCha8Rng,
    clock: &dyn Fn() -> f64,
) -> Result<TrainOutput, MamlError> {
    if init.classes() != dist.classes() {
        return Err(MamlError::Config("head class count differs from the task distribution"));
    }
    let batch = config.batch_size.min(dist.len());
    let iterations = dist.len().div_ceil(batch);
    let mut head = init;
    let mut log = TrainLog::default();

    for epoch in 0..config.epochs {
        let started = clock();
        let mut epoch_loss = 0.0;
        let mut norm_sum = 0.0;
        for _ in 0..iterations {
            let tasks = episodes::sample_batch(dist, batch, rng)?;
            let mg = match meta_gradient(&head, &tasks, config) {
                Ok(mg) => mg,
                Err(MamlError::Num(NumError::NonFinite { .. })) => {
                    return Err(MamlError::Diverged { epoch, last_good: Box::new(head) })
                }
                Err(e) => return Err(e),
            };
            let mut flat = head.flatten();
            numkit::axpy(&mut flat, -config.outer_lr, &mg.gradient);
            if flat.iter().any(|v| !v.is_finite()) {
                return Err(MamlError::Diverged { epoch, last_good: Box::new(head) });
            }
            head = HeadParams::from_flat(head.classes(), head.dim(), &flat)?;
            epoch_loss += mg.meta_loss;
            norm_sum += numkit::norm(&mg.gradient);
        }
        log.epochs.push(EpochRecord {
            epoch,
            meta_loss: epoch_loss,
            grad_norm: norm_sum / iterations as f64,
            wall_time: clock() - started,
        });
    }

    let memory = build_memory(&head, dist, config)?;
    Ok(TrainOutput { head, memory, log })
}
