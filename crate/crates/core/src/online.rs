//! Online initialization and adaptation of the head for tracking.
//!
//! A new task (an identity seen for the first time) is scored against
//! every entry of the task memory bank with
//!
//! ```text
//! γ_i = Σ_j (x · s_ij) / ( sqrt(Σ_j ‖x‖²) · sqrt(Σ_j ‖s_ij‖²) )
//! ```
//!
//! where `x` is the new task's first feature and `s_ij` the `k` support
//! features of entry `i` (equivalently: the cosine between `x` tiled `k`
//! times and the stacked support features). The session head is then the
//! γ-weighted average of the entries' adapted parameters,
//! `θ_new = Σ_i (γ_i / λ) θ_i` with `λ = Σ_i γ_i` over the included
//! entries. Entries with `γ_i ≤ 0` are excluded.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::maml::{inner_adapt, MamlError, TaskMemoryEntry};
use crate::model::{CosineClassLoss, CosineTarget, FeatureVector, HeadParams, ModelError};
use crate::numkit::{self, NumError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OnlineError {
    #[error("task memory is empty")]
    EmptyMemory,
    #[error("memory entry {task_id} has no support features")]
    EmptySupport { task_id: u64 },
    #[error("similarity weights do not sum to a positive value")]
    NonPositiveLambda,
    #[error("memory entries disagree on head shape")]
    MixedShapes,
    #[error("no samples for the online step")]
    NoSamples,
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Maml(#[from] MamlError),
}

/// How a new task is compared against a memory entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SimilarityForm {
    /// Tiled-stack cosine over all support features.
    #[default]
    Tiled,
    /// Cosine to the support centroid.
    Centroid,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitOptions {
    /// Keep only the `top_m` most similar entries (`None` = all).
    pub top_m: Option<usize>,
    pub form: SimilarityForm,
    /// Keep entries with negative similarity in the mixture. Off by default:
    /// a negative weight flips the sign of that entry's parameters.
    pub include_negative: bool,
}

impl Default for InitOptions {
    fn default() -> Self {
        Self { top_m: None, form: SimilarityForm::Tiled, include_negative: false }
    }
}

/// Head of one tracking session together with how it was initialized.
#[derive(Debug, Clone, PartialEq)]
pub struct OnlineState {
    pub head: HeadParams,
    /// Normalizer `Σ γ_i` over included entries.
    pub lambda: f64,
    /// `(task_id, γ_i)` of the included entries, sorted by task id.
    pub gammas: Vec<(u64, f64)>,
    pub frames_seen: usize,
    /// Set when no entry had positive similarity and the meta-learned
    /// initialization was used instead.
    pub fell_back: bool,
    /// `(1/λ) Σ γ_i L_i`: similarity-weighted estimate of the new task's
    /// loss from the entries' query losses.
    pub weighted_loss: f64,
}

impl OnlineState {
    /// Session state that has not been initialized from memory.
    pub fn from_head(head: HeadParams) -> Self {
        Self { head, lambda: 0.0, gammas: Vec::new(), frames_seen: 0, fell_back: false, weighted_loss: 0.0 }
    }
}

/// Literal tiled-stack similarity between a new task's first feature and a
/// memory entry.
pub fn task_similarity(new_feature: &FeatureVector, entry: &TaskMemoryEntry) -> Result<f64, OnlineError> {
    let k = entry.support_features.len();
    if k == 0 {
        return Err(OnlineError::EmptySupport { task_id: entry.task_id });
    }
    let x = new_feature.as_slice();
    let mut num = 0.0;
    let mut support_sq = 0.0;
    for s in &entry.support_features {
        if s.dim() != x.len() {
            return Err(NumError::LengthMismatch { left: x.len(), right: s.dim() }.into());
        }
        num += numkit::dot(x, s.as_slice());
        support_sq += numkit::dot(s.as_slice(), s.as_slice());
    }
    let new_sq = k as f64 * numkit::dot(x, x);
    if new_sq == 0.0 || support_sq == 0.0 {
        return Err(NumError::ZeroNorm { op: "task_similarity" }.into());
    }
    let g = num / libm::sqrt(new_sq * support_sq);
    Ok(g.clamp(-1.0, 1.0))
}

fn similarity(form: SimilarityForm, x: &FeatureVector, entry: &TaskMemoryEntry) -> Result<f64, OnlineError> {
    match form {
        SimilarityForm::Tiled => task_similarity(x, entry),
        SimilarityForm::Centroid => Ok(numkit::cosine_similarity(x.as_slice(), entry.support_centroid.as_slice())?),
    }
}

/// γ-weighted average of adapted parameters. Entries are combined in
/// task-id order with weights `γ_i / λ`, so the result does not depend on
/// the order of `weighted`. Fails when `λ` is not positive.
pub fn weighted_average(weighted: &[(u64, f64, &HeadParams)]) -> Result<(HeadParams, f64), OnlineError> {
    let mut items: Vec<&(u64, f64, &HeadParams)> = weighted.iter().collect();
    if items.is_empty() {
        return Err(OnlineError::EmptyMemory);
    }
    items.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let shape = items[0].2;
    if items.iter().any(|(_, _, h)| !h.same_shape(shape)) {
        return Err(OnlineError::MixedShapes);
    }
    let mut lambda = 0.0;
    for (_, g, _) in &items {
        lambda += *g;
    }
    if !lambda.is_finite() || lambda <= 0.0 {
        return Err(OnlineError::NonPositiveLambda);
    }
    let mut acc = vec![0.0; shape.param_len()];
    for (_, g, h) in &items {
        numkit::axpy(&mut acc, *g / lambda, &h.flatten());
    }
    Ok((HeadParams::from_flat(shape.classes(), shape.dim(), &acc)?, lambda))
}

/// Initialize the session head for a new task from the memory bank.
///
/// Falls back to `meta_init` (with `fell_back` set) when no entry has
/// positive similarity.
pub fn init_new_task(
    memory: &[TaskMemoryEntry],
    new_feature: &FeatureVector,
    meta_init: &HeadParams,
    options: &InitOptions,
) -> Result<OnlineState, OnlineError> {
    if memory.is_empty() {
        return Err(OnlineError::EmptyMemory);
    }
    let mut scored: Vec<(u64, f64, &TaskMemoryEntry)> = Vec::with_capacity(memory.len());
    for e in memory {
        let g = similarity(options.form, new_feature, e)?;
        if g > 0.0 || (options.include_negative && g != 0.0) {
            scored.push((e.task_id, g, e));
        }
    }
    let fallback = || {
        let mut state = OnlineState::from_head(meta_init.clone());
        state.fell_back = true;
        state
    };
    if scored.is_empty() {
        return Ok(fallback());
    }
    // most similar first; task id breaks ties so memory order never matters
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    if let Some(m) = options.top_m {
        scored.truncate(m.max(1));
    }
    scored.sort_by_key(|s| s.0);

    let weighted: Vec<(u64, f64, &HeadParams)> = scored.iter().map(|(id, g, e)| (*id, *g, &e.adapted)).collect();
    let (head, lambda) = match weighted_average(&weighted) {
        Err(OnlineError::NonPositiveLambda) => return Ok(fallback()),
        r => r?,
    };
    let mut weighted_loss = 0.0;
    for (_, g, e) in &scored {
        weighted_loss += (*g / lambda) * e.query_loss;
    }
    Ok(OnlineState {
        head,
        lambda,
        gammas: scored.iter().map(|(id, g, _)| (*id, *g)).collect(),
        frames_seen: 0,
        fell_back: false,
        weighted_loss,
    })
}

/// One gradient step of size `lr` on the cosine classification loss of the
/// frame's pseudo-labelled samples. Only the head changes.
pub fn online_step(state: &OnlineState, samples: &[CosineTarget], lr: f64) -> Result<OnlineState, OnlineError> {
    if samples.is_empty() {
        return Err(OnlineError::NoSamples);
    }
    let head = &state.head;
    let obj = CosineClassLoss::new(head.classes(), head.dim(), samples)?;
    let flat = inner_adapt(&head.flatten(), &obj, lr, 1)?;
    Ok(OnlineState {
        head: HeadParams::from_flat(head.classes(), head.dim(), &flat)?,
        frames_seen: state.frames_seen + 1,
        ..state.clone()
    })
}

/// Loss [`online_step`] descends, at the current head.
pub fn online_loss(state: &OnlineState, samples: &[CosineTarget]) -> Result<f64, OnlineError> {
    let head = &state.head;
    let obj = CosineClassLoss::new(head.classes(), head.dim(), samples)?;
    Ok(numkit::value(&obj, &head.flatten())?)
}
