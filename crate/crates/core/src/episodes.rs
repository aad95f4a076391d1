//! Episodic task construction: ground-truth samples grouped by identity
//! within a sequence and split, in frame order, into support and query
//! sets.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::LabeledSample;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EpisodeError {
    #[error("no identity has enough samples for k + q = {needed} ({skipped} identities skipped)")]
    EmptyDistribution { needed: usize, skipped: usize },
    #[error("invalid task configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("batch of {requested} requested but only {available} tasks exist")]
    BatchTooLarge { requested: usize, available: usize },
    #[error("task {task_id} violates an episode invariant: {reason}")]
    InvalidTask { task_id: u64, reason: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskConfig {
    /// Support samples per identity.
    pub k: usize,
    /// Query samples per identity.
    pub q: usize,
    /// Identities per task. With more than one, the extra identities are
    /// drawn from identities co-occurring with the anchor in its sequence.
    pub identities_per_task: usize,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self { k: 4, q: 1, identities_per_task: 1 }
    }
}

/// One meta-learning task `(support, query)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTask {
    pub task_id: u64,
    pub support: Vec<LabeledSample>,
    pub query: Vec<LabeledSample>,
    /// Raw identity ids, anchor first.
    pub identities: Vec<u32>,
    pub sequence: String,
}

impl EpisodeTask {
    /// Check disjointness, same-sequence and frame-separation invariants.
    pub fn validate(&self) -> Result<(), EpisodeError> {
        let fail = |reason| EpisodeError::InvalidTask { task_id: self.task_id, reason };
        if self.support.is_empty() || self.query.is_empty() {
            return Err(fail("empty support or query"));
        }
        let all = self.support.iter().chain(&self.query);
        if all.clone().any(|s| s.sequence != self.sequence) {
            return Err(fail("sample from another sequence"));
        }
        for q in &self.query {
            if self.support.iter().any(|s| s.raw_id == q.raw_id && s.frame == q.frame) {
                return Err(fail("query frame repeats a same-identity support frame"));
            }
        }
        Ok(())
    }
}

/// Task distribution `P(T)` with a dense class index over every identity
/// that appears in some task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskDistribution {
    tasks: Vec<EpisodeTask>,
    classes: usize,
    seed: u64,
    /// `(sequence, raw_id)` of each class index.
    class_ids: Vec<(String, u32)>,
    skipped_identities: usize,
}

impl TaskDistribution {
    /// Wrap hand-built tasks (labels must already be dense class indices).
    pub fn from_tasks(tasks: Vec<EpisodeTask>, classes: usize, seed: u64) -> Result<Self, EpisodeError> {
        if tasks.is_empty() {
            return Err(EpisodeError::EmptyDistribution { needed: 0, skipped: 0 });
        }
        let mut ids: Vec<u64> = tasks.iter().map(|t| t.task_id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != tasks.len() {
            return Err(EpisodeError::InvalidConfig("duplicate task ids"));
        }
        for t in &tasks {
            t.validate()?;
            if t.support.iter().chain(&t.query).any(|s| s.identity >= classes) {
                return Err(EpisodeError::InvalidTask { task_id: t.task_id, reason: "label outside class range" });
            }
        }
        Ok(Self { tasks, classes, seed, class_ids: Vec::new(), skipped_identities: 0 })
    }

    pub fn tasks(&self) -> &[EpisodeTask] {
        &self.tasks
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn class_ids(&self) -> &[(String, u32)] {
        &self.class_ids
    }

    /// Identities dropped for having fewer than `k + q` samples, or (in
    /// multi-identity mode) too few co-occurring partners.
    pub fn skipped_identities(&self) -> usize {
        self.skipped_identities
    }
}

struct IdentityTrack<'a> {
    samples: Vec<&'a LabeledSample>,
    frames: Vec<u32>,
}

fn co_occur(a: &[u32], b: &[u32]) -> bool {
    // both sorted ascending
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            core::cmp::Ordering::Equal => return true,
            core::cmp::Ordering::Less => i += 1,
            core::cmp::Ordering::Greater => j += 1,
        }
    }
    false
}

/// Build the task distribution. Per identity the `k` earliest-frame samples
/// form the support set and the next `q` the query set. Deterministic for
/// fixed `(samples, config, seed)`.
pub fn build_tasks(samples: &[LabeledSample], config: &TaskConfig, seed: u64) -> Result<TaskDistribution, EpisodeError> {
    if config.k == 0 || config.q == 0 {
        return Err(EpisodeError::InvalidConfig("k and q must be at least 1"));
    }
    if config.identities_per_task == 0 {
        return Err(EpisodeError::InvalidConfig("identities_per_task must be at least 1"));
    }
    let needed = config.k + config.q;

    let mut groups: BTreeMap<(&str, u32), Vec<&LabeledSample>> = BTreeMap::new();
    for s in samples {
        groups.entry((s.sequence.as_str(), s.raw_id)).or_default().push(s);
    }

    let mut skipped = 0usize;
    let mut eligible: BTreeMap<(&str, u32), IdentityTrack<'_>> = BTreeMap::new();
    for (key, mut list) in groups {
        list.sort_by_key(|s| s.frame);
        list.dedup_by_key(|s| s.frame);
        if list.len() < needed {
            skipped += 1;
            continue;
        }
        let frames = list.iter().map(|s| s.frame).collect();
        eligible.insert(key, IdentityTrack { samples: list, frames });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keys: Vec<(&str, u32)> = eligible.keys().copied().collect();
    let mut groups_out: Vec<Vec<(&str, u32)>> = Vec::new();
    for &anchor in &keys {
        if config.identities_per_task == 1 {
            groups_out.push(alloc::vec![anchor]);
            continue;
        }
        let anchor_frames = &eligible[&anchor].frames;
        let partners: Vec<(&str, u32)> = keys
            .iter()
            .copied()
            .filter(|k| k.0 == anchor.0 && *k != anchor)
            .filter(|k| co_occur(anchor_frames, &eligible[k].frames))
            .collect();
        let want = config.identities_per_task - 1;
        if partners.len() < want {
            skipped += 1;
            continue;
        }
        let mut picked: Vec<(&str, u32)> =
            index::sample(&mut rng, partners.len(), want).into_iter().map(|i| partners[i]).collect();
        picked.sort_unstable();
        let mut members = alloc::vec![anchor];
        members.extend(picked);
        groups_out.push(members);
    }

    if groups_out.is_empty() {
        return Err(EpisodeError::EmptyDistribution { needed, skipped });
    }

    let mut used: Vec<(&str, u32)> = groups_out.iter().flatten().copied().collect();
    used.sort_unstable();
    used.dedup();
    let class_of = |key: &(&str, u32)| used.binary_search(key).expect("class index covers every task member");

    let mut tasks = Vec::with_capacity(groups_out.len());
    for (task_id, members) in groups_out.iter().enumerate() {
        let mut support = Vec::new();
        let mut query = Vec::new();
        for key in members {
            let class = class_of(key);
            let track = &eligible[key];
            for (i, s) in track.samples.iter().take(needed).enumerate() {
                let mut s = (*s).clone();
                s.identity = class;
                if i < config.k {
                    support.push(s);
                } else {
                    query.push(s);
                }
            }
        }
        tasks.push(EpisodeTask {
            task_id: task_id as u64,
            support,
            query,
            identities: members.iter().map(|k| k.1).collect(),
            sequence: String::from(members[0].0),
        });
    }

    Ok(TaskDistribution {
        tasks,
        classes: used.len(),
        seed,
        class_ids: used.iter().map(|(s, id)| (String::from(*s), *id)).collect(),
        skipped_identities: skipped,
    })
}

/// Uniformly sample `batch_size` distinct tasks.
pub fn sample_batch<'a, R: Rng + ?Sized>(
    dist: &'a TaskDistribution,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<&'a EpisodeTask>, EpisodeError> {
    if batch_size == 0 {
        return Err(EpisodeError::InvalidConfig("batch_size must be at least 1"));
    }
    if batch_size > dist.len() {
        return Err(EpisodeError::BatchTooLarge { requested: batch_size, available: dist.len() });
    }
    Ok(index::sample(rng, dist.len(), batch_size).into_iter().map(|i| &dist.tasks[i]).collect())
}
