//! The toolkit's stages as plain functions over text and in-memory values:
//! synthesize, train, track, evaluate. The CLI adds files and manifests on
//! top.

use std::collections::BTreeSet;

use metatrack_core::episodes::{build_tasks, EpisodeError};
use metatrack_core::maml::{train_with_clock, MamlError, TrainLog};
use metatrack_core::metrics::{evaluate_sequence, EvalReport, SequenceReport};
use metatrack_core::model::{Backbone, CropRequest, FeatureKey, FeatureTable, LabeledSample};
use metatrack_core::synth::SynthSequence;
use metatrack_core::tracker::{Detection, ResultRow, TrackerError, TrackingSession};
use rayon::prelude::*;

use crate::checkpoint::Checkpoint;
use crate::config::{TrackSettings, TrainSettings};
use crate::error::CliError;
use crate::formats::{
    group_detections, parse_features, parse_mot, parse_results, write_detections, write_features, write_ground_truth,
};
use crate::ingest::{ground_truth_boxes, ingest_ground_truth};

pub const THREADS_ENV: &str = "METATRACK_THREADS";

/// Thread pool capped by `METATRACK_THREADS` when set.
pub fn thread_pool() -> Result<rayon::ThreadPool, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|n| *n >= 1)
            .ok_or_else(|| CliError::config(format!("{THREADS_ENV} must be a positive integer, found {v:?}")))?;
        builder = builder.num_threads(n);
    }
    builder.build().map_err(CliError::config)
}

/// Contents of the three files describing one synthetic sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthFiles {
    pub gt: String,
    pub det: String,
    pub features: String,
}

pub fn synth_files(seq: &SynthSequence) -> Result<SynthFiles, CliError> {
    let dim = seq.identities.first().map_or(0, |v| v.dim());
    let mut table = FeatureTable::new(dim);
    for g in &seq.gt {
        table.insert(&seq.name, g.frame, FeatureKey::Identity(g.id), g.feature.clone()).map_err(CliError::data)?;
    }
    let mut ordinal = 0;
    let mut frame = 0;
    for d in &seq.detections {
        if d.frame != frame {
            frame = d.frame;
            ordinal = 0;
        }
        ordinal += 1;
        table.insert(&seq.name, d.frame, FeatureKey::Detection(ordinal), d.feature.clone()).map_err(CliError::data)?;
    }
    Ok(SynthFiles {
        gt: write_ground_truth(&seq.gt_boxes()),
        det: write_detections(&seq.detections),
        features: write_features(&table),
    })
}

/// Pick the sequence whose features to use: the requested one, or the only
/// one present.
pub fn pick_sequence(table: &FeatureTable, requested: Option<&str>) -> Result<String, CliError> {
    let names = table.sequences();
    match requested {
        Some(s) if names.contains(&s) => Ok(s.to_string()),
        Some(s) => Err(CliError::data(format!("features file has no sequence {s:?}"))),
        None => match names[..] {
            [one] => Ok(one.to_string()),
            [] => Err(CliError::data("features file is empty")),
            _ => Err(CliError::data(format!("features file holds several sequences ({}); pick one", names.join(", ")))),
        },
    }
}

/// Labeled samples of one sequence from ground-truth and features text.
pub fn training_samples(gt: &str, features: &str, origin: &str) -> Result<Vec<LabeledSample>, CliError> {
    let table = parse_features(features).map_err(|e| CliError::data(format!("{origin} features: {e}")))?;
    let sequence = pick_sequence(&table, None).map_err(|e| CliError::data(format!("{origin}: {e}")))?;
    let out = ingest_ground_truth(gt, &sequence, &table).map_err(|e| CliError::data(format!("{origin} ground truth: {e}")))?;
    Ok(out.samples)
}

pub fn train(
    samples: &[LabeledSample],
    settings: &TrainSettings,
    clock: &dyn Fn() -> f64,
) -> Result<(Checkpoint, TrainLog), CliError> {
    let maml = settings.maml();
    maml.validate().map_err(CliError::config)?;
    let tasks = settings.tasks();
    let dist = build_tasks(samples, &tasks, settings.seed).map_err(|e| match e {
        EpisodeError::InvalidConfig(_) => CliError::config(e),
        _ => CliError::data(e),
    })?;
    let out = train_with_clock(&dist, &maml, clock).map_err(|e| match e {
        MamlError::Config(_) | MamlError::Diverged { .. } => CliError::config(e),
        other => CliError::data(other),
    })?;
    let checkpoint = Checkpoint { maml, tasks, head: out.head, memory: out.memory };
    Ok((checkpoint, out.log))
}

/// Training log as CSV, one row per epoch. Wall time is left out so that
/// reruns produce identical files.
pub fn render_train_log(log: &TrainLog) -> String {
    let mut out = String::from("epoch,meta_loss,grad_norm\n");
    for e in &log.epochs {
        out.push_str(&format!("{},{:e},{:e}\n", e.epoch, e.meta_loss, e.grad_norm));
    }
    out
}

/// Detections grouped by frame for frames `1..=last`, features attached.
pub fn detections(det: &str, table: &FeatureTable, sequence: &str) -> Result<Vec<(u32, Vec<Detection>)>, CliError> {
    let rows = parse_mot(det).map_err(|e| CliError::data(format!("detections: {e}")))?;
    let grouped = group_detections(&rows);
    let last = grouped.keys().next_back().copied().unwrap_or(0);
    let mut frames: Vec<(u32, Vec<Detection>)> = (1..=last).map(|f| (f, Vec::new())).collect();
    for (frame, list) in grouped {
        let slot = &mut frames[frame as usize - 1].1;
        for (i, r) in list.iter().enumerate() {
            let request = CropRequest { sequence, frame, key: FeatureKey::Detection(i as u32 + 1), pixels: None };
            let feature = table.extract(&request).map_err(|e| CliError::data(format!("detections line {}: {e}", r.line)))?;
            slot.push(Detection { frame, bbox: r.bbox, confidence: r.conf, feature });
        }
    }
    Ok(frames)
}

pub fn track(
    frames: &[(u32, Vec<Detection>)],
    checkpoint: &Checkpoint,
    settings: &TrackSettings,
) -> Result<Vec<ResultRow>, CliError> {
    let dim = checkpoint.head.dim();
    if let Some(d) = frames.iter().flat_map(|(_, l)| l).find(|d| d.feature.dim() != dim) {
        return Err(CliError::model(format!(
            "features have dimension {} but the checkpoint head expects {dim}",
            d.feature.dim()
        )));
    }
    let config = settings.session();
    config.tracker.validate().map_err(CliError::config)?;
    let mut session = TrackingSession::new(config, checkpoint.head.clone(), &checkpoint.memory).map_err(|e| match e {
        TrackerError::Params(_) => CliError::config(e),
        other => CliError::model(other),
    })?;
    for (frame, list) in frames {
        session.step(*frame, list).map_err(CliError::model)?;
    }
    Ok(session.results())
}

/// Ground truth and results of one sequence.
#[derive(Debug, Clone)]
pub struct EvalInput {
    pub name: String,
    pub gt: String,
    pub results: String,
}

/// Evaluate every sequence (in parallel) and pool the counts. Also returns
/// warnings about result frames outside the ground truth's frame range.
pub fn evaluate(inputs: &[EvalInput], iou_threshold: f64) -> Result<(EvalReport, Vec<String>), CliError> {
    let pool = thread_pool()?;
    let per_seq: Vec<Result<(SequenceReport, Option<String>), CliError>> = pool.install(|| {
        inputs
            .par_iter()
            .map(|input| {
                let gt =
                    ground_truth_boxes(&input.gt).map_err(|e| CliError::eval(format!("{} ground truth: {e}", input.name)))?;
                let pred = parse_results(&input.results).map_err(|e| CliError::eval(format!("{} results: {e}", input.name)))?;
                let gt_frames: BTreeSet<u32> = gt.iter().map(|g| g.frame).collect();
                let stray = pred.iter().filter(|p| !gt_frames.contains(&p.frame)).count();
                let warning =
                    (stray > 0).then(|| format!("{}: {stray} result rows fall on frames without ground truth", input.name));
                let counts =
                    evaluate_sequence(&gt, &pred, iou_threshold).map_err(|e| CliError::eval(format!("{}: {e}", input.name)))?;
                Ok((SequenceReport { name: input.name.clone(), counts }, warning))
            })
            .collect()
    });
    let mut reports = Vec::with_capacity(per_seq.len());
    let mut warnings = Vec::new();
    for r in per_seq {
        let (report, warning) = r?;
        reports.push(report);
        warnings.extend(warning);
    }
    Ok((EvalReport::from_sequences(reports), warnings))
}
