//! MOT Challenge text files and the precomputed-features file.
//!
//! Pixel coordinates and confidences are written with two decimals, which
//! round-trips exactly for values on the 0.01 grid the generator emits.
//! Feature components use the shortest representation that parses back to
//! the same `f64`.

use std::fmt::Write as _;

use metatrack_core::metrics::{BBox, TrackBox};
use metatrack_core::model::{FeatureKey, FeatureTable, FeatureVector};
use metatrack_core::tracker::{Detection, ResultRow};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

fn err(line: usize, message: impl Into<String>) -> ParseError {
    ParseError { line, message: message.into() }
}

/// One row of a MOT ground-truth, detection or results file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotRow {
    /// 1-based line number in the source text.
    pub line: usize,
    pub frame: u32,
    pub id: i64,
    pub bbox: BBox,
    pub conf: f64,
    pub class: Option<i64>,
    pub visibility: Option<f64>,
}

fn int_field(s: &str, what: &str, line: usize) -> Result<i64, ParseError> {
    if let Ok(v) = s.parse::<i64>() {
        return Ok(v);
    }
    // some tools write integer columns as "1.0"
    match s.parse::<f64>() {
        Ok(v) if v.fract() == 0.0 && v.abs() < 1e15 => Ok(v as i64),
        _ => Err(err(line, format!("{what} is not an integer: {s:?}"))),
    }
}

fn real_field(s: &str, what: &str, line: usize) -> Result<f64, ParseError> {
    s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| err(line, format!("{what} is not a finite number: {s:?}")))
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// Parse MOT rows. At least the six leading columns
/// `frame,id,left,top,width,height` are required; `conf` defaults to 1.
pub fn parse_mot(text: &str) -> Result<Vec<MotRow>, ParseError> {
    let mut rows = Vec::new();
    for (line, l) in data_lines(text) {
        let f: Vec<&str> = l.split(',').map(str::trim).collect();
        if f.len() < 6 {
            return Err(err(line, format!("expected at least 6 columns, found {}", f.len())));
        }
        let frame = int_field(f[0], "frame", line)?;
        let frame = u32::try_from(frame)
            .ok()
            .filter(|v| *v >= 1)
            .ok_or_else(|| err(line, format!("frame must be a positive integer, found {frame}")))?;
        let id = int_field(f[1], "id", line)?;
        let [left, top, width, height] = [(f[2], "bb_left"), (f[3], "bb_top"), (f[4], "bb_width"), (f[5], "bb_height")]
            .map(|(s, what)| real_field(s, what, line));
        let bbox = BBox::new(left?, top?, width?, height?).ok_or_else(|| err(line, "box width and height must be positive"))?;
        let conf = f.get(6).map(|s| real_field(s, "conf", line)).transpose()?.unwrap_or(1.0);
        let class = f.get(7).map(|s| int_field(s, "class", line)).transpose()?;
        let visibility = f.get(8).map(|s| real_field(s, "visibility", line)).transpose()?;
        rows.push(MotRow { line, frame, id, bbox, conf, class, visibility });
    }
    Ok(rows)
}

fn push_box(out: &mut String, b: &BBox) {
    let _ = write!(out, "{:.2},{:.2},{:.2},{:.2}", b.left, b.top, b.width, b.height);
}

/// Ground truth as `frame,id,left,top,width,height,1,1,1` (consider flag
/// set, pedestrian class, fully visible).
pub fn write_ground_truth(rows: &[TrackBox]) -> String {
    let mut out = String::new();
    for r in rows {
        let _ = write!(out, "{},{},", r.frame, r.id);
        push_box(&mut out, &r.bbox);
        out.push_str(",1,1,1\n");
    }
    out
}

pub fn write_detections(rows: &[Detection]) -> String {
    let mut out = String::new();
    for d in rows {
        let _ = write!(out, "{},-1,", d.frame);
        push_box(&mut out, &d.bbox);
        let _ = writeln!(out, ",{:.2},-1,-1,-1", d.confidence);
    }
    out
}

pub fn write_results(rows: &[ResultRow]) -> String {
    let mut out = String::new();
    for r in rows {
        let _ = write!(out, "{},{},", r.frame, r.id);
        push_box(&mut out, &r.bbox);
        let _ = writeln!(out, ",{:.2},-1,-1,-1", r.confidence);
    }
    out
}

/// Tracker output rows. Ids must be positive and unique within a frame.
pub fn parse_results(text: &str) -> Result<Vec<TrackBox>, ParseError> {
    parse_mot(text)?
        .into_iter()
        .map(|r| {
            let id = u32::try_from(r.id)
                .ok()
                .filter(|v| *v >= 1)
                .ok_or_else(|| err(r.line, format!("track id must be a positive integer, found {}", r.id)))?;
            Ok(TrackBox { frame: r.frame, id, bbox: r.bbox })
        })
        .collect()
}

/// Detector rows grouped by frame in file order. The position of a row
/// within its frame (from 1) is the key of its feature in the features file.
pub fn group_detections(rows: &[MotRow]) -> std::collections::BTreeMap<u32, Vec<MotRow>> {
    let mut out: std::collections::BTreeMap<u32, Vec<MotRow>> = std::collections::BTreeMap::new();
    for r in rows {
        out.entry(r.frame).or_default().push(*r);
    }
    out
}

/// Features file: a `#dim D` header, then `sequence,frame,key,x1..xD` rows.
/// Keys are identity ids (positive) or detection ordinals (negative).
pub fn write_features(table: &FeatureTable) -> String {
    use metatrack_core::model::Backbone;
    let mut out = format!("#dim {}\n", table.dim());
    for (seq, frame, key, v) in table.iter() {
        let _ = write!(out, "{seq},{frame},{}", key.encode());
        for x in v.as_slice() {
            let _ = write!(out, ",{x}");
        }
        out.push('\n');
    }
    out
}

pub fn parse_features(text: &str) -> Result<FeatureTable, ParseError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
    let (line, header) = lines.next().ok_or_else(|| err(1, "missing `#dim D` header"))?;
    let dim = header
        .strip_prefix("#dim")
        .and_then(|d| d.trim().parse::<usize>().ok())
        .filter(|d| *d > 0)
        .ok_or_else(|| err(line, format!("expected `#dim D` header, found {header:?}")))?;
    let mut table = FeatureTable::new(dim);
    for (line, l) in lines {
        if l.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = l.split(',').map(str::trim).collect();
        if f.len() != dim + 3 {
            return Err(err(line, format!("expected {} columns, found {}", dim + 3, f.len())));
        }
        if f[0].is_empty() {
            return Err(err(line, "empty sequence name"));
        }
        let frame = u32::try_from(int_field(f[1], "frame", line)?)
            .ok()
            .filter(|v| *v >= 1)
            .ok_or_else(|| err(line, "frame must be a positive integer"))?;
        let key = FeatureKey::decode(int_field(f[2], "key", line)?).ok_or_else(|| err(line, "key must be a non-zero integer"))?;
        let values = f[3..].iter().map(|s| real_field(s, "feature component", line)).collect::<Result<Vec<_>, _>>()?;
        let feature = FeatureVector::new(values).map_err(|e| err(line, e.to_string()))?;
        if table.get(f[0], frame, key).is_some() {
            return Err(err(line, format!("duplicate feature for ({}, {frame}, {})", f[0], key.encode())));
        }
        table.insert(f[0], frame, key, feature).map_err(|e| err(line, e.to_string()))?;
    }
    Ok(table)
}
