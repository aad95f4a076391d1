//! Ground-truth ingestion: MOT rows filtered to considered pedestrian boxes,
//! with features resolved through a [`Backbone`].

use metatrack_core::metrics::TrackBox;
use metatrack_core::model::{Backbone, CropRequest, FeatureKey, LabeledSample};

use crate::formats::{parse_mot, MotRow, ParseError};

/// MOT class code of a walking pedestrian.
pub const PEDESTRIAN: i64 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Ingested {
    pub samples: Vec<LabeledSample>,
    /// Rows with the consider flag cleared.
    pub ignored: usize,
    /// Rows of any class other than pedestrian.
    pub other_class: usize,
}

/// Keep rows with a non-zero consider flag and pedestrian class (rows
/// without a class column count as pedestrians). Returns the kept rows and
/// the two skip counts.
pub fn considered_rows(rows: &[MotRow]) -> (Vec<MotRow>, usize, usize) {
    let mut kept = Vec::new();
    let (mut ignored, mut other) = (0, 0);
    for r in rows {
        if r.conf == 0.0 {
            ignored += 1;
        } else if r.class.is_some_and(|c| c != PEDESTRIAN) {
            other += 1;
        } else {
            kept.push(*r);
        }
    }
    (kept, ignored, other)
}

/// Boxes of considered rows, for evaluation.
pub fn ground_truth_boxes(text: &str) -> Result<Vec<TrackBox>, ParseError> {
    let rows = parse_mot(text)?;
    let (kept, _, _) = considered_rows(&rows);
    kept.into_iter()
        .map(|r| {
            let id = u32::try_from(r.id).ok().filter(|v| *v >= 1).ok_or_else(|| ParseError {
                line: r.line,
                message: format!("identity must be a positive integer, found {}", r.id),
            })?;
            Ok(TrackBox { frame: r.frame, id, bbox: r.bbox })
        })
        .collect()
}

/// One sample per considered pedestrian box. A missing feature is an error
/// pointing at the row's line.
pub fn ingest_ground_truth(text: &str, sequence: &str, backbone: &dyn Backbone) -> Result<Ingested, ParseError> {
    let rows = parse_mot(text)?;
    let (kept, ignored, other_class) = considered_rows(&rows);
    let mut samples = Vec::with_capacity(kept.len());
    for r in kept {
        let raw_id = u32::try_from(r.id).ok().filter(|v| *v >= 1).ok_or_else(|| ParseError {
            line: r.line,
            message: format!("identity must be a positive integer, found {}", r.id),
        })?;
        let request = CropRequest { sequence, frame: r.frame, key: FeatureKey::Identity(raw_id), pixels: None };
        let feature = backbone.extract(&request).map_err(|e| ParseError { line: r.line, message: e.to_string() })?;
        samples.push(LabeledSample { feature, identity: 0, raw_id, frame: r.frame, sequence: sequence.to_string() });
    }
    Ok(Ingested { samples, ignored, other_class })
}
