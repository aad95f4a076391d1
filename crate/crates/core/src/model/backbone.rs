//! Feature extractors ("backbones") that turn a detection into a
//! [`FeatureVector`]. Two providers exist: a hand-crafted raster
//! descriptor and a lookup table of precomputed features.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use super::{FeatureVector, ModelError};

/// Key of a precomputed feature: a ground-truth identity, or the 1-based
/// position of a detection within its frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FeatureKey {
    Identity(u32),
    Detection(u32),
}

impl FeatureKey {
    /// Signed encoding used by the features file: identities are positive,
    /// detection ordinals negative.
    pub fn encode(self) -> i64 {
        match self {
            FeatureKey::Identity(id) => i64::from(id),
            FeatureKey::Detection(ord) => -i64::from(ord),
        }
    }

    pub fn decode(v: i64) -> Option<Self> {
        if v > 0 && v <= i64::from(u32::MAX) {
            Some(FeatureKey::Identity(v as u32))
        } else if v < 0 && -v <= i64::from(u32::MAX) {
            Some(FeatureKey::Detection((-v) as u32))
        } else {
            None
        }
    }
}

/// 8-bit interleaved pixel rectangle.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<u8>) -> Result<Self, ModelError> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(ModelError::EmptyCrop);
        }
        if pixels.len() != width * height * channels {
            return Err(ModelError::Shape("raster pixel buffer does not match width x height x channels"));
        }
        Ok(Self { width, height, channels, pixels })
    }

    pub fn at(&self, x: usize, y: usize, c: usize) -> u8 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    fn gray(&self, x: usize, y: usize) -> f64 {
        let mut s = 0.0;
        for c in 0..self.channels {
            s += f64::from(self.at(x, y, c));
        }
        s / self.channels as f64
    }

    /// Left-right mirror image.
    pub fn mirrored(&self) -> Self {
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for y in 0..self.height {
            for x in (0..self.width).rev() {
                for c in 0..self.channels {
                    pixels.push(self.at(x, y, c));
                }
            }
        }
        Self { pixels, ..self.clone() }
    }
}

/// Layout of the hand-crafted descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DescriptorScheme {
    pub channels: usize,
    pub intensity_bins: usize,
    pub orientation_bins: usize,
    /// Fold gradient orientation about the vertical axis so a crop and its
    /// mirror image yield the same descriptor.
    pub symmetric: bool,
}

impl DescriptorScheme {
    pub fn dim(&self) -> usize {
        self.channels * self.intensity_bins + self.orientation_bins
    }
}

impl Default for DescriptorScheme {
    fn default() -> Self {
        Self { channels: 3, intensity_bins: 8, orientation_bins: 8, symmetric: true }
    }
}

/// Per-channel intensity histograms (fractions of pixels) followed by a
/// magnitude-weighted gradient-orientation histogram (fractions of total
/// gradient magnitude; all zero for a flat crop).
pub fn describe_crop(crop: &Raster, scheme: &DescriptorScheme) -> Result<FeatureVector, ModelError> {
    if crop.width == 0 || crop.height == 0 || crop.pixels.is_empty() {
        return Err(ModelError::EmptyCrop);
    }
    if crop.channels != scheme.channels || scheme.intensity_bins == 0 || scheme.orientation_bins == 0 {
        return Err(ModelError::DimensionMismatch { expected: scheme.channels, got: crop.channels });
    }
    let mut out = vec![0.0; scheme.dim()];
    let npix = (crop.width * crop.height) as f64;
    for c in 0..crop.channels {
        let mut counts = vec![0u64; scheme.intensity_bins];
        for y in 0..crop.height {
            for x in 0..crop.width {
                let v = usize::from(crop.at(x, y, c));
                counts[v * scheme.intensity_bins / 256] += 1;
            }
        }
        for (b, n) in counts.iter().enumerate() {
            out[c * scheme.intensity_bins + b] = *n as f64 / npix;
        }
    }

    let base = crop.channels * scheme.intensity_bins;
    let mut hist = vec![0.0; scheme.orientation_bins];
    let mut total = 0.0;
    if crop.width >= 3 && crop.height >= 3 {
        for y in 1..crop.height - 1 {
            for x in 1..crop.width - 1 {
                let gx = crop.gray(x + 1, y) - crop.gray(x - 1, y);
                let gy = crop.gray(x, y + 1) - crop.gray(x, y - 1);
                let mag = libm::sqrt(gx * gx + gy * gy);
                if mag == 0.0 {
                    continue;
                }
                let (angle, span) = if scheme.symmetric {
                    (libm::atan2(gy.abs(), gx.abs()), core::f64::consts::FRAC_PI_2)
                } else {
                    let mut a = libm::atan2(gy, gx);
                    if a < 0.0 {
                        a += core::f64::consts::PI;
                    }
                    if a >= core::f64::consts::PI {
                        a -= core::f64::consts::PI;
                    }
                    (a, core::f64::consts::PI)
                };
                let bin = ((angle / span * scheme.orientation_bins as f64) as usize).min(scheme.orientation_bins - 1);
                hist[bin] += mag;
                total += mag;
            }
        }
    }
    if total > 0.0 {
        for (b, h) in hist.iter().enumerate() {
            out[base + b] = h / total;
        }
    }
    FeatureVector::new(out)
}

/// Everything a backbone may need to produce a feature for one box.
#[derive(Debug, Clone, Copy)]
pub struct CropRequest<'a> {
    pub sequence: &'a str,
    pub frame: u32,
    pub key: FeatureKey,
    pub pixels: Option<&'a Raster>,
}

/// Fixed feature extractor. Never adapted.
pub trait Backbone {
    fn dim(&self) -> usize;
    fn extract(&self, request: &CropRequest<'_>) -> Result<FeatureVector, ModelError>;
}

/// Backbone computing [`describe_crop`] on the request's pixels.
#[derive(Debug, Clone, Copy, Default)]
pub struct DescriptorBackbone {
    pub scheme: DescriptorScheme,
}

impl Backbone for DescriptorBackbone {
    fn dim(&self) -> usize {
        self.scheme.dim()
    }

    fn extract(&self, request: &CropRequest<'_>) -> Result<FeatureVector, ModelError> {
        let crop = request.pixels.ok_or(ModelError::EmptyCrop)?;
        describe_crop(crop, &self.scheme)
    }
}

/// Backbone backed by precomputed features keyed by
/// `(sequence, frame, key)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureTable {
    dim: usize,
    entries: BTreeMap<(String, u32, FeatureKey), FeatureVector>,
}

impl FeatureTable {
    pub fn new(dim: usize) -> Self {
        Self { dim, entries: BTreeMap::new() }
    }

    pub fn insert(&mut self, sequence: &str, frame: u32, key: FeatureKey, feature: FeatureVector) -> Result<(), ModelError> {
        if feature.dim() != self.dim {
            return Err(ModelError::DimensionMismatch { expected: self.dim, got: feature.dim() });
        }
        self.entries.insert((sequence.to_string(), frame, key), feature);
        Ok(())
    }

    pub fn get(&self, sequence: &str, frame: u32, key: FeatureKey) -> Option<&FeatureVector> {
        self.entries.get(&(sequence.to_string(), frame, key))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in `(sequence, frame, key)` order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, u32, FeatureKey, &FeatureVector)> {
        self.entries.iter().map(|((s, f, k), v)| (s.as_str(), *f, *k, v))
    }

    /// Distinct sequence names in sorted order.
    pub fn sequences(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for (s, _, _) in self.entries.keys() {
            if out.last() != Some(&s.as_str()) {
                out.push(s.as_str());
            }
        }
        out
    }
}

impl Backbone for FeatureTable {
    fn dim(&self) -> usize {
        self.dim
    }

    fn extract(&self, request: &CropRequest<'_>) -> Result<FeatureVector, ModelError> {
        self.get(request.sequence, request.frame, request.key).cloned().ok_or_else(|| ModelError::MissingFeature {
            sequence: request.sequence.to_string(),
            frame: request.frame,
            key: request.key,
        })
    }
}
