//! Tracking-by-detection with an appearance head that adapts online.
//!
//! [`Tracker`] is the plain association loop: appearance cost from the
//! head's normalized logits, a constant-position IoU gate, a one-to-one
//! assignment per frame and a tentative/confirmed/lost lifecycle.
//! [`TrackingSession`] wraps it with the head's life cycle: every time a new
//! identity is confirmed the head is re-initialized from the task memory,
//! and confidently associated detections are used as pseudo-labels for one
//! online gradient step per frame.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use thiserror::Error;

use crate::maml::TaskMemoryEntry;
use crate::metrics::{iou, BBox, TrackBox};
use crate::model::{embed, head_forward, CosineTarget, FeatureVector, HeadParams, ModelError};
use crate::numkit::{axpy, dot, solve_partial_assignment};
use crate::online::{init_new_task, online_step, InitOptions, OnlineError, OnlineState};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrackerError {
    #[error("frame {frame} arrived after frame {last}")]
    OutOfOrder { frame: u32, last: u32 },
    #[error("detection for frame {found} passed with frame {expected}")]
    WrongFrame { expected: u32, found: u32 },
    #[error("invalid tracker parameters: {0}")]
    Params(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Online(#[from] OnlineError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub frame: u32,
    pub bbox: BBox,
    pub confidence: f64,
    pub feature: FeatureVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackState {
    Tentative,
    Confirmed,
    Lost,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackPoint {
    pub frame: u32,
    pub bbox: BBox,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u32,
    pub state: TrackState,
    pub history: Vec<TrackPoint>,
    /// Unit-norm moving average of matched features.
    pub embedding: FeatureVector,
    /// Feature of the detection that started the track.
    pub first_feature: FeatureVector,
    pub misses: u32,
    pub hits: u32,
}

impl Track {
    pub fn last_box(&self) -> BBox {
        self.history.last().expect("tracks start with one point").bbox
    }

    pub fn is_active(&self) -> bool {
        self.state != TrackState::Lost
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerParams {
    /// Consecutive hits before a track is confirmed.
    pub n_init: u32,
    /// Consecutive misses after which a confirmed track is lost.
    pub max_age: u32,
    /// Largest appearance cost accepted as a match.
    pub match_threshold: f64,
    /// Minimum IoU between a track's last box and a detection; 0 disables.
    pub iou_gate: f64,
    /// Weight of the new feature in the embedding average.
    pub ema: f64,
}

impl Default for TrackerParams {
    fn default() -> Self {
        Self { n_init: 3, max_age: 30, match_threshold: 0.4, iou_gate: 0.1, ema: 0.1 }
    }
}

impl TrackerParams {
    pub fn validate(&self) -> Result<(), TrackerError> {
        if self.max_age == 0 {
            return Err(TrackerError::Params("max_age must be at least 1"));
        }
        if !(0.0..=2.0).contains(&self.match_threshold) {
            return Err(TrackerError::Params("match threshold must lie in [0, 2]"));
        }
        if !(0.0..=1.0).contains(&self.iou_gate) {
            return Err(TrackerError::Params("iou gate must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.ema) {
            return Err(TrackerError::Params("ema weight must lie in [0, 1]"));
        }
        Ok(())
    }
}

fn cosine_of_units(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b).clamp(-1.0, 1.0)
}

/// `1 - cos` between the head embeddings of a track and a detection, in
/// `[0, 2]`. Infinite when the detection falls outside the IoU gate.
pub fn association_cost(track: &Track, detection: &Detection, head: &HeadParams, iou_gate: f64) -> Result<f64, TrackerError> {
    if iou_gate > 0.0 && iou(&track.last_box(), &detection.bbox) < iou_gate {
        return Ok(f64::INFINITY);
    }
    let a = embed(head, &track.embedding)?;
    let b = embed(head, &detection.feature)?;
    Ok(1.0 - cosine_of_units(&a, &b))
}

/// What happened to tracks in one frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepOutcome {
    /// `(track id, detection index)` for existing tracks.
    pub matches: Vec<(u32, usize)>,
    /// `(track id, detection index)` for tracks started this frame.
    pub spawned: Vec<(u32, usize)>,
    pub confirmed: Vec<u32>,
    pub lost: Vec<u32>,
}

/// One output row: a box of a confirmed trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResultRow {
    pub frame: u32,
    pub id: u32,
    pub bbox: BBox,
    pub confidence: f64,
}

impl ResultRow {
    pub fn track_box(&self) -> TrackBox {
        TrackBox { frame: self.frame, id: self.id, bbox: self.bbox }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tracker {
    params: TrackerParams,
    tracks: Vec<Track>,
    next_id: u32,
    last_frame: Option<u32>,
}

impl Tracker {
    pub fn new(params: TrackerParams) -> Result<Self, TrackerError> {
        params.validate()?;
        Ok(Self { params, tracks: Vec::new(), next_id: 1, last_frame: None })
    }

    pub fn params(&self) -> &TrackerParams {
        &self.params
    }

    /// Confirmed and lost tracks plus live tentative ones, in creation order.
    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn track(&self, id: u32) -> Option<&Track> {
        self.tracks.iter().find(|t| t.id == id)
    }

    /// Associate one frame of detections.
    pub fn step(&mut self, frame: u32, detections: &[Detection], head: &HeadParams) -> Result<StepOutcome, TrackerError> {
        if let Some(last) = self.last_frame {
            if frame <= last {
                return Err(TrackerError::OutOfOrder { frame, last });
            }
        }
        if let Some(d) = detections.iter().find(|d| d.frame != frame) {
            return Err(TrackerError::WrongFrame { expected: frame, found: d.frame });
        }
        let p = self.params;

        let active: Vec<usize> = (0..self.tracks.len()).filter(|&i| self.tracks[i].is_active()).collect();
        let track_emb = active.iter().map(|&i| embed(head, &self.tracks[i].embedding)).collect::<Result<Vec<_>, _>>()?;
        let det_emb = detections.iter().map(|d| embed(head, &d.feature)).collect::<Result<Vec<_>, _>>()?;
        let mut costs = Vec::with_capacity(active.len() * detections.len());
        for (r, &ti) in active.iter().enumerate() {
            let last = self.tracks[ti].last_box();
            for (c, d) in detections.iter().enumerate() {
                let gated = p.iou_gate > 0.0 && iou(&last, &d.bbox) < p.iou_gate;
                let cost = 1.0 - cosine_of_units(&track_emb[r], &det_emb[c]);
                costs.push((!gated && cost <= p.match_threshold).then_some(cost));
            }
        }
        let cols = detections.len();
        let pairs = solve_partial_assignment(active.len(), cols, |r, c| costs[r * cols + c]);

        self.last_frame = Some(frame);
        let mut outcome = StepOutcome::default();
        let mut track_hit = alloc::vec![false; active.len()];
        let mut det_used = alloc::vec![false; detections.len()];
        for (r, c) in pairs {
            track_hit[r] = true;
            det_used[c] = true;
            let d = &detections[c];
            let t = &mut self.tracks[active[r]];
            t.history.push(TrackPoint { frame, bbox: d.bbox, confidence: d.confidence });
            t.embedding = blend(&t.embedding, &d.feature, p.ema)?;
            t.hits += 1;
            t.misses = 0;
            if t.state == TrackState::Tentative && t.hits >= p.n_init {
                t.state = TrackState::Confirmed;
                outcome.confirmed.push(t.id);
            }
            outcome.matches.push((t.id, c));
        }

        let mut dropped = Vec::new();
        for (r, &ti) in active.iter().enumerate() {
            if track_hit[r] {
                continue;
            }
            let t = &mut self.tracks[ti];
            t.misses += 1;
            match t.state {
                TrackState::Tentative => dropped.push(ti),
                TrackState::Confirmed if t.misses >= p.max_age => {
                    t.state = TrackState::Lost;
                    outcome.lost.push(t.id);
                }
                _ => {}
            }
        }
        for ti in dropped.into_iter().rev() {
            self.tracks.remove(ti);
        }

        for (c, d) in detections.iter().enumerate() {
            if det_used[c] {
                continue;
            }
            let id = self.next_id;
            self.next_id += 1;
            let confirmed = p.n_init <= 1;
            self.tracks.push(Track {
                id,
                state: if confirmed { TrackState::Confirmed } else { TrackState::Tentative },
                history: alloc::vec![TrackPoint { frame, bbox: d.bbox, confidence: d.confidence }],
                embedding: d.feature.normalized()?,
                first_feature: d.feature.clone(),
                misses: 0,
                hits: 1,
            });
            outcome.spawned.push((id, c));
            if confirmed {
                outcome.confirmed.push(id);
            }
        }
        outcome.matches.sort_unstable();
        Ok(outcome)
    }

    /// Every box of every trajectory that was ever confirmed, sorted by
    /// frame then id.
    pub fn results(&self) -> Vec<ResultRow> {
        let mut rows: Vec<ResultRow> = self
            .tracks
            .iter()
            .filter(|t| t.state != TrackState::Tentative)
            .flat_map(|t| {
                t.history.iter().map(|h| ResultRow { frame: h.frame, id: t.id, bbox: h.bbox, confidence: h.confidence })
            })
            .collect();
        rows.sort_by_key(|r| (r.frame, r.id));
        rows
    }
}

fn blend(ema: &FeatureVector, x: &FeatureVector, eta: f64) -> Result<FeatureVector, ModelError> {
    if ema.dim() != x.dim() {
        return Err(ModelError::DimensionMismatch { expected: ema.dim(), got: x.dim() });
    }
    let mut v: Vec<f64> = ema.as_slice().iter().map(|e| (1.0 - eta) * e).collect();
    let xn = x.normalized()?;
    axpy(&mut v, eta, xn.as_slice());
    FeatureVector::new(v)?.normalized()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionConfig {
    pub tracker: TrackerParams,
    /// Re-initialize from memory on new identities and adapt per frame.
    pub adapt: bool,
    /// Step size of the per-frame online update.
    pub online_lr: f64,
    /// A match becomes a pseudo-label only if its IoU with the track beats
    /// every other track's IoU with the same detection by this much.
    pub label_margin: f64,
    pub init: InitOptions,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self { tracker: TrackerParams::default(), adapt: true, online_lr: 0.2, label_margin: 0.3, init: InitOptions::default() }
    }
}

/// Diagnostic record of one memory-based initialization.
#[derive(Debug, Clone, PartialEq)]
pub struct InitEvent {
    pub frame: u32,
    pub track_id: u32,
    pub fell_back: bool,
    pub lambda: f64,
    pub weighted_loss: f64,
}

/// Tracker plus the per-sequence head it adapts.
#[derive(Debug, Clone)]
pub struct TrackingSession<'m> {
    config: SessionConfig,
    memory: &'m [TaskMemoryEntry],
    meta_init: HeadParams,
    state: OnlineState,
    tracker: Tracker,
    slots: BTreeMap<u32, usize>,
    inits: Vec<InitEvent>,
    online_steps: usize,
}

impl<'m> TrackingSession<'m> {
    pub fn new(config: SessionConfig, meta_init: HeadParams, memory: &'m [TaskMemoryEntry]) -> Result<Self, TrackerError> {
        if !(config.online_lr >= 0.0 && config.online_lr.is_finite()) {
            return Err(TrackerError::Params("online step size must be finite and non-negative"));
        }
        if let Some(e) = memory.iter().find(|e| !e.adapted.same_shape(&meta_init)) {
            return Err(ModelError::DimensionMismatch { expected: meta_init.param_len(), got: e.adapted.param_len() }.into());
        }
        Ok(Self {
            tracker: Tracker::new(config.tracker)?,
            state: OnlineState::from_head(meta_init.clone()),
            config,
            memory,
            meta_init,
            slots: BTreeMap::new(),
            inits: Vec::new(),
            online_steps: 0,
        })
    }

    pub fn head(&self) -> &HeadParams {
        &self.state.head
    }

    pub fn state(&self) -> &OnlineState {
        &self.state
    }

    pub fn tracker(&self) -> &Tracker {
        &self.tracker
    }

    pub fn init_events(&self) -> &[InitEvent] {
        &self.inits
    }

    pub fn online_steps(&self) -> usize {
        self.online_steps
    }

    pub fn step(&mut self, frame: u32, detections: &[Detection]) -> Result<StepOutcome, TrackerError> {
        if let Some(d) = detections.iter().find(|d| d.feature.dim() != self.meta_init.dim()) {
            return Err(ModelError::DimensionMismatch { expected: self.meta_init.dim(), got: d.feature.dim() }.into());
        }
        let before: Vec<(u32, BBox)> =
            self.tracker.tracks().iter().filter(|t| t.is_active()).map(|t| (t.id, t.last_box())).collect();
        let outcome = self.tracker.step(frame, detections, &self.state.head)?;
        for id in &outcome.lost {
            self.slots.remove(id);
        }
        if !self.config.adapt {
            return Ok(outcome);
        }

        let mut confirmed = outcome.confirmed.clone();
        confirmed.sort_unstable();
        for id in confirmed {
            let track = self.tracker.track(id).expect("confirmed track exists");
            if !self.memory.is_empty() {
                self.state = init_new_task(self.memory, &track.first_feature, &self.meta_init, &self.config.init)?;
                self.inits.push(InitEvent {
                    frame,
                    track_id: id,
                    fell_back: self.state.fell_back,
                    lambda: self.state.lambda,
                    weighted_loss: self.state.weighted_loss,
                });
            }
            self.assign_slot(id)?;
        }

        let mut targets = Vec::new();
        for &(id, c) in &outcome.matches {
            let Some(&slot) = self.slots.get(&id) else { continue };
            let det = &detections[c];
            let mut own = 0.0;
            let mut rival: f64 = 0.0;
            for (other, b) in &before {
                let o = iou(b, &det.bbox);
                if *other == id {
                    own = o;
                } else {
                    rival = rival.max(o);
                }
            }
            if own - rival >= self.config.label_margin {
                targets.push(CosineTarget { feature: det.feature.clone(), class: slot });
            }
        }
        if !targets.is_empty() {
            self.state = online_step(&self.state, &targets, self.config.online_lr)?;
            self.online_steps += 1;
        }
        Ok(outcome)
    }

    // free class with the largest logit for the track; none when every
    // class is held by a live track
    fn assign_slot(&mut self, id: u32) -> Result<(), TrackerError> {
        let track = self.tracker.track(id).expect("track exists");
        let logits = head_forward(&self.state.head, &track.embedding)?;
        let mut best: Option<(usize, f64)> = None;
        for (c, &z) in logits.iter().enumerate() {
            if self.slots.values().any(|&s| s == c) {
                continue;
            }
            if best.is_none_or(|(_, bz)| z > bz) {
                best = Some((c, z));
            }
        }
        if let Some((c, _)) = best {
            self.slots.insert(id, c);
        }
        Ok(())
    }

    /// Slot assigned to a track, if any.
    pub fn slot(&self, id: u32) -> Option<usize> {
        self.slots.get(&id).copied()
    }

    pub fn results(&self) -> Vec<ResultRow> {
        self.tracker.results()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn det(frame: u32, left: f64, feature: &[f64]) -> Detection {
        Detection {
            frame,
            bbox: BBox::new(left, 0.0, 10.0, 20.0).unwrap(),
            confidence: 1.0,
            feature: FeatureVector::new(feature.to_vec()).unwrap(),
        }
    }

    fn identity_head() -> HeadParams {
        HeadParams::new(2, 2, vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0]).unwrap()
    }

    #[test]
    fn cost_examples() {
        let head = identity_head();
        let mut tr = Tracker::new(TrackerParams::default()).unwrap();
        tr.step(1, &[det(1, 0.0, &[1.0, 0.0])], &head).unwrap();
        let t = &tr.tracks()[0];
        assert!(association_cost(t, &det(2, 0.0, &[2.0, 0.0]), &head, 0.1).unwrap().abs() < 1e-15);
        assert!((association_cost(t, &det(2, 0.0, &[0.0, 1.0]), &head, 0.1).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(association_cost(t, &det(2, 500.0, &[1.0, 0.0]), &head, 0.1).unwrap(), f64::INFINITY);
    }

    #[test]
    fn gated_pair_is_never_matched() {
        let head = identity_head();
        let mut tr = Tracker::new(TrackerParams::default()).unwrap();
        tr.step(1, &[det(1, 0.0, &[1.0, 0.0])], &head).unwrap();
        let out = tr.step(2, &[det(2, 500.0, &[1.0, 0.0])], &head).unwrap();
        assert!(out.matches.is_empty());
        assert_eq!(out.spawned.len(), 1);
        // the tentative first track died on its miss
        assert_eq!(tr.tracks().len(), 1);
    }

    #[test]
    fn single_match_extends_history() {
        let head = identity_head();
        let mut tr = Tracker::new(TrackerParams::default()).unwrap();
        tr.step(1, &[det(1, 0.0, &[1.0, 0.0])], &head).unwrap();
        let out = tr.step(2, &[det(2, 1.0, &[1.0, 0.0])], &head).unwrap();
        assert_eq!(out.matches, vec![(1, 0)]);
        assert_eq!(tr.tracks()[0].history.len(), 2);
    }

    #[test]
    fn lifecycle() {
        let head = identity_head();
        let params = TrackerParams { max_age: 2, ..TrackerParams::default() };
        let mut tr = Tracker::new(params).unwrap();
        for f in 1..=3 {
            let out = tr.step(f, &[det(f, 0.0, &[1.0, 0.0])], &head).unwrap();
            assert_eq!(out.confirmed.is_empty(), f < 3);
        }
        assert_eq!(tr.tracks()[0].state, TrackState::Confirmed);
        tr.step(4, &[], &head).unwrap();
        assert_eq!(tr.tracks()[0].misses, 1);
        assert_eq!(tr.tracks()[0].state, TrackState::Confirmed);
        let out = tr.step(5, &[], &head).unwrap();
        assert_eq!(out.lost, vec![1]);
        assert_eq!(tr.results().len(), 3);
        assert!(matches!(tr.step(5, &[], &head), Err(TrackerError::OutOfOrder { frame: 5, last: 5 })));
        assert!(matches!(tr.step(7, &[det(6, 0.0, &[1.0, 0.0])], &head), Err(TrackerError::WrongFrame { .. })));
    }

    #[test]
    fn unconfirmed_tracks_are_not_reported() {
        let head = identity_head();
        let mut tr = Tracker::new(TrackerParams::default()).unwrap();
        tr.step(1, &[det(1, 0.0, &[1.0, 0.0])], &head).unwrap();
        tr.step(2, &[det(2, 0.0, &[1.0, 0.0])], &head).unwrap();
        assert!(tr.results().is_empty());
    }

    #[test]
    fn appearance_resolves_overlapping_pair() {
        // two identities at nearly the same place: appearance decides
        let head = identity_head();
        let mut tr = Tracker::new(TrackerParams::default()).unwrap();
        tr.step(1, &[det(1, 0.0, &[1.0, 0.0]), det(1, 2.0, &[0.0, 1.0])], &head).unwrap();
        let out = tr.step(2, &[det(2, 0.0, &[0.0, 1.0]), det(2, 2.0, &[1.0, 0.0])], &head).unwrap();
        assert_eq!(out.matches, vec![(1, 1), (2, 0)]);
    }

    #[test]
    fn session_adapts_with_pseudo_labels() {
        let head = HeadParams::new(2, 2, vec![0.5, 0.5, 0.4, 0.6], vec![0.0, 0.0]).unwrap();
        let entry = TaskMemoryEntry {
            task_id: 0,
            support_centroid: FeatureVector::new(vec![1.0, 0.0]).unwrap(),
            support_features: vec![FeatureVector::new(vec![1.0, 0.0]).unwrap()],
            adapted: head.clone(),
            query_loss: 0.5,
        };
        let memory = [entry];
        let mut s = TrackingSession::new(SessionConfig::default(), head.clone(), &memory).unwrap();
        for f in 1..=6 {
            s.step(f, &[det(f, 0.0, &[1.0, 0.1]), det(f, 100.0, &[0.1, 1.0])]).unwrap();
        }
        assert_eq!(s.init_events().len(), 2);
        assert_eq!(s.slot(1), Some(0));
        assert_eq!(s.slot(2), Some(1));
        assert_eq!(s.online_steps(), 4);
        assert_ne!(s.head(), &head);
        assert_eq!(s.results().len(), 12);
    }

    #[test]
    fn session_without_adaptation_keeps_head() {
        let head = identity_head();
        let config = SessionConfig { adapt: false, ..SessionConfig::default() };
        let mut s = TrackingSession::new(config, head.clone(), &[]).unwrap();
        for f in 1..=4 {
            s.step(f, &[det(f, 0.0, &[1.0, 0.2])]).unwrap();
        }
        assert_eq!(s.head(), &head);
        assert!(s.init_events().is_empty());
        assert!(matches!(
            s.step(5, &[det(5, 0.0, &[1.0, 0.0, 0.0])]),
            Err(TrackerError::Model(ModelError::DimensionMismatch { .. }))
        ));
    }
}
