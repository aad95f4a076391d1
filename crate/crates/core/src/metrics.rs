//! CLEAR MOT and identity metrics.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::numkit::solve_partial_assignment;

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("{side} id {id} appears twice in frame {frame}")]
    DuplicateId { side: &'static str, frame: u32, id: u32 },
    #[error("iou threshold {0} is outside (0, 1]")]
    Threshold(f64),
}

/// Axis-aligned box in pixels: left, top, width, height.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
}

impl BBox {
    pub fn new(left: f64, top: f64, width: f64, height: f64) -> Option<Self> {
        let ok = [left, top, width, height].iter().all(|v| v.is_finite()) && width > 0.0 && height > 0.0;
        ok.then_some(Self { left, top, width, height })
    }

    pub fn right(&self) -> f64 {
        self.left + self.width
    }

    pub fn bottom(&self) -> f64 {
        self.top + self.height
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }
}

/// Intersection over union; 0 for disjoint or degenerate boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let w = a.right().min(b.right()) - a.left.max(b.left);
    let h = a.bottom().min(b.bottom()) - a.top.max(b.top);
    if w <= 0.0 || h <= 0.0 {
        return 0.0;
    }
    let inter = w * h;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// One annotated or predicted box of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackBox {
    pub frame: u32,
    pub id: u32,
    pub bbox: BBox,
}

type Frames<'a> = BTreeMap<u32, Vec<&'a TrackBox>>;

fn by_frame<'a>(boxes: &'a [TrackBox], side: &'static str) -> Result<Frames<'a>, MetricsError> {
    let mut frames: Frames<'a> = BTreeMap::new();
    for b in boxes {
        frames.entry(b.frame).or_default().push(b);
    }
    for (frame, list) in frames.iter_mut() {
        list.sort_by_key(|b| b.id);
        if let Some(w) = list.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(MetricsError::DuplicateId { side, frame: *frame, id: w[0].id });
        }
    }
    Ok(frames)
}

fn check_threshold(t: f64) -> Result<(), MetricsError> {
    if t > 0.0 && t <= 1.0 {
        Ok(())
    } else {
        Err(MetricsError::Threshold(t))
    }
}

/// CLEAR MOT counts for one sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClearCounts {
    pub false_positives: u64,
    pub false_negatives: u64,
    pub id_switches: u64,
    pub matches: u64,
    pub num_gt: u64,
}

impl ClearCounts {
    pub fn mota(&self) -> f64 {
        mota(self.false_negatives, self.false_positives, self.id_switches, self.num_gt)
    }
}

fn mota(fn_: u64, fp: u64, idsw: u64, gt: u64) -> f64 {
    let errors = fn_ + fp + idsw;
    if gt == 0 {
        return if errors == 0 { 1.0 } else { 0.0 };
    }
    1.0 - errors as f64 / gt as f64
}

/// Frame-by-frame CLEAR matching with correspondence persistence.
///
/// A ground-truth object keeps last frame's partner while their IoU stays at
/// or above the threshold. The rest is matched by minimum-cost assignment on
/// `1 - IoU` restricted to pairs above the threshold. An identity switch is
/// counted whenever an object is matched to a prediction other than the one
/// it was last matched to.
pub fn clear_mot(gt: &[TrackBox], pred: &[TrackBox], iou_threshold: f64) -> Result<ClearCounts, MetricsError> {
    check_threshold(iou_threshold)?;
    let gt_frames = by_frame(gt, "ground-truth")?;
    let pred_frames = by_frame(pred, "predicted")?;
    let frames: BTreeSet<u32> = gt_frames.keys().chain(pred_frames.keys()).copied().collect();
    let empty = Vec::new();

    let mut last_match: BTreeMap<u32, u32> = BTreeMap::new();
    let mut counts = ClearCounts::default();
    for frame in frames {
        let gts = gt_frames.get(&frame).unwrap_or(&empty);
        let preds = pred_frames.get(&frame).unwrap_or(&empty);
        counts.num_gt += gts.len() as u64;

        let mut gt_done = vec![false; gts.len()];
        let mut pred_done = vec![false; preds.len()];
        let mut matched = 0u64;

        for (gi, g) in gts.iter().enumerate() {
            let Some(&pid) = last_match.get(&g.id) else { continue };
            let Some(pi) = preds.iter().position(|p| p.id == pid) else { continue };
            if !pred_done[pi] && iou(&g.bbox, &preds[pi].bbox) >= iou_threshold {
                gt_done[gi] = true;
                pred_done[pi] = true;
                matched += 1;
            }
        }

        let open_g: Vec<usize> = (0..gts.len()).filter(|&i| !gt_done[i]).collect();
        let open_p: Vec<usize> = (0..preds.len()).filter(|&i| !pred_done[i]).collect();
        let pairs = solve_partial_assignment(open_g.len(), open_p.len(), |r, c| {
            let o = iou(&gts[open_g[r]].bbox, &preds[open_p[c]].bbox);
            (o >= iou_threshold).then_some(1.0 - o)
        });
        for (r, c) in pairs {
            let (g, p) = (gts[open_g[r]], preds[open_p[c]]);
            if last_match.get(&g.id).is_some_and(|&prev| prev != p.id) {
                counts.id_switches += 1;
            }
            last_match.insert(g.id, p.id);
            matched += 1;
        }

        counts.matches += matched;
        counts.false_negatives += gts.len() as u64 - matched;
        counts.false_positives += preds.len() as u64 - matched;
    }
    Ok(counts)
}

/// Identity-level counts under the best global trajectory pairing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct IdCounts {
    pub idtp: u64,
    pub idfp: u64,
    pub idfn: u64,
}

impl IdCounts {
    pub fn idf1(&self) -> f64 {
        ratio(2 * self.idtp, 2 * self.idtp + self.idfp + self.idfn)
    }

    pub fn idp(&self) -> f64 {
        ratio(self.idtp, self.idtp + self.idfp)
    }

    pub fn idr(&self) -> f64 {
        ratio(self.idtp, self.idtp + self.idfn)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-pair overlap counts between trajectories: `(gt lengths, pred lengths,
/// frames where the pair overlaps at or above the threshold)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairTable {
    pub gt_ids: Vec<u32>,
    pub pred_ids: Vec<u32>,
    pub gt_len: Vec<u64>,
    pub pred_len: Vec<u64>,
    /// Row-major `gt × pred`.
    pub overlap: Vec<u64>,
}

impl PairTable {
    pub fn build(gt: &[TrackBox], pred: &[TrackBox], iou_threshold: f64) -> Result<Self, MetricsError> {
        check_threshold(iou_threshold)?;
        let gt_frames = by_frame(gt, "ground-truth")?;
        let pred_frames = by_frame(pred, "predicted")?;
        let gt_ids: Vec<u32> = gt.iter().map(|b| b.id).collect::<BTreeSet<_>>().into_iter().collect();
        let pred_ids: Vec<u32> = pred.iter().map(|b| b.id).collect::<BTreeSet<_>>().into_iter().collect();
        let gi: BTreeMap<u32, usize> = gt_ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        let pi: BTreeMap<u32, usize> = pred_ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();

        let mut gt_len = vec![0u64; gt_ids.len()];
        let mut pred_len = vec![0u64; pred_ids.len()];
        for b in gt {
            gt_len[gi[&b.id]] += 1;
        }
        for b in pred {
            pred_len[pi[&b.id]] += 1;
        }
        let mut overlap = vec![0u64; gt_ids.len() * pred_ids.len()];
        for (frame, gts) in &gt_frames {
            let Some(preds) = pred_frames.get(frame) else { continue };
            for g in gts {
                for p in preds {
                    if iou(&g.bbox, &p.bbox) >= iou_threshold {
                        overlap[gi[&g.id] * pred_ids.len() + pi[&p.id]] += 1;
                    }
                }
            }
        }
        Ok(Self { gt_ids, pred_ids, gt_len, pred_len, overlap })
    }

    pub fn overlap(&self, g: usize, p: usize) -> u64 {
        self.overlap[g * self.pred_ids.len() + p]
    }

    fn counts_for(&self, idtp: u64) -> IdCounts {
        IdCounts { idtp, idfp: self.pred_len.iter().sum::<u64>() - idtp, idfn: self.gt_len.iter().sum::<u64>() - idtp }
    }
}

/// Global min-cost pairing of gt and predicted trajectories.
///
/// Rows are gt trajectories followed by one "unmatched" row per predicted
/// trajectory; columns are predicted trajectories followed by one
/// "unmatched" column per gt trajectory. Pairing gt `g` with prediction `p`
/// costs the boxes it leaves uncovered on both sides.
pub fn id_metrics(gt: &[TrackBox], pred: &[TrackBox], iou_threshold: f64) -> Result<IdCounts, MetricsError> {
    let table = PairTable::build(gt, pred, iou_threshold)?;
    let (ng, np) = (table.gt_ids.len(), table.pred_ids.len());
    let n = ng + np;
    let pairs = solve_partial_assignment(n, n, |r, c| match (r < ng, c < np) {
        (true, true) => {
            let tp = table.overlap(r, c);
            Some((table.gt_len[r] + table.pred_len[c] - 2 * tp) as f64)
        }
        (true, false) => (c - np == r).then(|| table.gt_len[r] as f64),
        (false, true) => (r - ng == c).then(|| table.pred_len[c] as f64),
        (false, false) => Some(0.0),
    });
    let idtp = pairs.iter().filter(|&&(r, c)| r < ng && c < np).map(|&(r, c)| table.overlap(r, c)).sum();
    Ok(table.counts_for(idtp))
}

/// Exhaustive search over all partial one-to-one trajectory pairings. Only
/// usable for a handful of trajectories.
pub fn id_metrics_exhaustive(gt: &[TrackBox], pred: &[TrackBox], iou_threshold: f64) -> Result<IdCounts, MetricsError> {
    fn best(table: &PairTable, g: usize, used: &mut Vec<bool>) -> u64 {
        if g == table.gt_ids.len() {
            return 0;
        }
        let mut top = best(table, g + 1, used);
        for p in 0..table.pred_ids.len() {
            if !used[p] {
                used[p] = true;
                top = top.max(table.overlap(g, p) + best(table, g + 1, used));
                used[p] = false;
            }
        }
        top
    }
    let table = PairTable::build(gt, pred, iou_threshold)?;
    let mut used = vec![false; table.pred_ids.len()];
    let idtp = best(&table, 0, &mut used);
    Ok(table.counts_for(idtp))
}

/// All counts for one sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MetricCounts {
    pub clear: ClearCounts,
    pub id: IdCounts,
}

impl MetricCounts {
    pub fn mota(&self) -> f64 {
        self.clear.mota()
    }

    pub fn idf1(&self) -> f64 {
        self.id.idf1()
    }

    pub fn idp(&self) -> f64 {
        self.id.idp()
    }

    pub fn idr(&self) -> f64 {
        self.id.idr()
    }

    fn add(&mut self, o: &MetricCounts) {
        self.clear.false_positives += o.clear.false_positives;
        self.clear.false_negatives += o.clear.false_negatives;
        self.clear.id_switches += o.clear.id_switches;
        self.clear.matches += o.clear.matches;
        self.clear.num_gt += o.clear.num_gt;
        self.id.idtp += o.id.idtp;
        self.id.idfp += o.id.idfp;
        self.id.idfn += o.id.idfn;
    }
}

pub fn evaluate_sequence(gt: &[TrackBox], pred: &[TrackBox], iou_threshold: f64) -> Result<MetricCounts, MetricsError> {
    Ok(MetricCounts { clear: clear_mot(gt, pred, iou_threshold)?, id: id_metrics(gt, pred, iou_threshold)? })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceReport {
    pub name: String,
    pub counts: MetricCounts,
}

/// Per-sequence results plus a total that pools raw counts across
/// sequences.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub sequences: Vec<SequenceReport>,
    pub total: MetricCounts,
}

impl EvalReport {
    pub fn from_sequences(mut sequences: Vec<SequenceReport>) -> Self {
        sequences.sort_by(|a, b| a.name.cmp(&b.name));
        let mut total = MetricCounts::default();
        for s in &sequences {
            total.add(&s.counts);
        }
        Self { sequences, total }
    }

    pub fn mota(&self) -> f64 {
        self.total.mota()
    }

    pub fn idf1(&self) -> f64 {
        self.total.idf1()
    }
}
