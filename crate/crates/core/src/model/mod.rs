//! The Re-ID model: a fixed, pluggable feature extractor and the linear
//! classification head whose parameters are the only thing ever adapted.
//!
//! Offline (meta-)training minimizes mean softmax cross-entropy of the
//! head. At tracking time the head's logits, unit-normalized, serve as the
//! association embedding, and online adaptation minimizes a cosine
//! classification loss `1 − cos(logits, e_class)`.

mod backbone;

pub use backbone::{
    describe_crop, Backbone, CropRequest, DescriptorBackbone, DescriptorScheme, FeatureKey, FeatureTable, Raster,
};

use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::numkit::{self, NumError, Objective, Scalar, Tape, Var};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("degenerate input: zero-norm logits in {0}")]
    Degenerate(&'static str),
    #[error("empty crop")]
    EmptyCrop,
    #[error("no feature for sequence {sequence} frame {frame} key {key:?}")]
    MissingFeature { sequence: String, frame: u32, key: FeatureKey },
    #[error("invalid head shape: {0}")]
    Shape(&'static str),
    #[error(transparent)]
    Num(#[from] NumError),
}

/// Fixed-dimension appearance descriptor of one detection crop.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(numkit::Vector);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self, ModelError> {
        Ok(Self(numkit::Vector::new(values)?))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    /// Unit-norm copy; errors on the zero vector.
    pub fn normalized(&self) -> Result<Self, ModelError> {
        let n = numkit::norm(self.as_slice());
        if n == 0.0 {
            return Err(ModelError::Degenerate("FeatureVector::normalized"));
        }
        Self::new(self.as_slice().iter().map(|v| v / n).collect())
    }
}

/// Linear head `logits = W·x + b` with `W` stored row-major (`classes × dim`).
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    classes: usize,
    dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl HeadParams {
    pub fn new(classes: usize, dim: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self, ModelError> {
        if classes == 0 || dim == 0 {
            return Err(ModelError::Shape("classes and dim must be positive"));
        }
        if weights.len() != classes * dim || bias.len() != classes {
            return Err(ModelError::Shape("weights/bias length does not match classes x dim"));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(NumError::NonFinite { op: "HeadParams::new" }.into());
        }
        Ok(Self { classes, dim, weights, bias })
    }

    pub fn zeros(classes: usize, dim: usize) -> Result<Self, ModelError> {
        Self::new(classes, dim, alloc::vec![0.0; classes * dim], alloc::vec![0.0; classes])
    }

    /// Rebuild from the `[W row-major, b]` layout produced by [`Self::flatten`].
    pub fn from_flat(classes: usize, dim: usize, flat: &[f64]) -> Result<Self, ModelError> {
        if flat.len() != classes * dim + classes {
            return Err(ModelError::DimensionMismatch { expected: classes * dim + classes, got: flat.len() });
        }
        let (w, b) = flat.split_at(classes * dim);
        Self::new(classes, dim, w.to_vec(), b.to_vec())
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_len());
        out.extend_from_slice(&self.weights);
        out.extend_from_slice(&self.bias);
        out
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn param_len(&self) -> usize {
        self.classes * self.dim + self.classes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn same_shape(&self, other: &HeadParams) -> bool {
        self.classes == other.classes && self.dim == other.dim
    }
}

/// One labelled crop. `identity` is the dense class index; `raw_id` is the
/// identity number from the source annotation file.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub feature: FeatureVector,
    pub identity: usize,
    pub raw_id: u32,
    pub frame: u32,
    pub sequence: String,
}

pub fn head_forward(head: &HeadParams, x: &FeatureVector) -> Result<Vec<f64>, ModelError> {
    if x.dim() != head.dim {
        return Err(ModelError::DimensionMismatch { expected: head.dim, got: x.dim() });
    }
    let xs = x.as_slice();
    Ok((0..head.classes).map(|r| numkit::dot(&head.weights[r * head.dim..(r + 1) * head.dim], xs) + head.bias[r]).collect())
}

/// Head logits divided by their Euclidean norm.
pub fn embed(head: &HeadParams, x: &FeatureVector) -> Result<Vec<f64>, ModelError> {
    let mut z = head_forward(head, x)?;
    let n = numkit::norm(&z);
    if n == 0.0 || !n.is_finite() {
        return Err(ModelError::Degenerate("embed"));
    }
    for v in &mut z {
        *v /= n;
    }
    Ok(z)
}

/// Mean softmax cross-entropy of the head over `batch`.
pub fn task_loss(head: &HeadParams, batch: &[LabeledSample]) -> Result<f64, ModelError> {
    let obj = CrossEntropyLoss::new(head.classes, head.dim, batch)?;
    Ok(numkit::value(&obj, &head.flatten())?)
}

fn record_logits<T: Scalar>(tape: &mut Tape<T>, theta: Var, classes: usize, dim: usize, x: &[f64]) -> Var {
    let w = tape.slice(theta, 0, classes * dim);
    let b = tape.slice(theta, classes * dim, classes);
    let xv = tape.constant(x);
    let wx = tape.matvec(w, xv, classes, dim);
    tape.add(wx, b)
}

/// Mean softmax cross-entropy as a differentiable objective over the
/// flattened head parameters.
#[derive(Debug, Clone, Copy)]
pub struct CrossEntropyLoss<'a> {
    classes: usize,
    dim: usize,
    samples: &'a [LabeledSample],
}

impl<'a> CrossEntropyLoss<'a> {
    pub fn new(classes: usize, dim: usize, samples: &'a [LabeledSample]) -> Result<Self, ModelError> {
        if samples.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        for s in samples {
            if s.identity >= classes {
                return Err(ModelError::LabelOutOfRange { label: s.identity, classes });
            }
            if s.feature.dim() != dim {
                return Err(ModelError::DimensionMismatch { expected: dim, got: s.feature.dim() });
            }
        }
        Ok(Self { classes, dim, samples })
    }
}

impl Objective for CrossEntropyLoss<'_> {
    fn dim(&self) -> usize {
        self.classes * self.dim + self.classes
    }

    fn build<T: Scalar>(&self, tape: &mut Tape<T>, theta: Var) -> Var {
        let mut total: Option<Var> = None;
        for s in self.samples {
            let z = record_logits(tape, theta, self.classes, self.dim, s.feature.as_slice());
            let lse = tape.log_sum_exp(z);
            let zy = tape.index(z, s.identity);
            let l = tape.sub(lse, zy);
            total = Some(match total {
                None => l,
                Some(t) => tape.add(t, l),
            });
        }
        let total = total.expect("non-empty batch checked in constructor");
        tape.scale(total, 1.0 / self.samples.len() as f64)
    }
}

/// A feature paired with the class slot it should be pulled toward.
#[derive(Debug, Clone, PartialEq)]
pub struct CosineTarget {
    pub feature: FeatureVector,
    pub class: usize,
}

/// Mean over targets of `1 − cos(W·x + b, e_class)`, the cosine
/// classification loss used for online adaptation. The class centroid in
/// logit space is the basis direction of the class.
#[derive(Debug, Clone, Copy)]
pub struct CosineClassLoss<'a> {
    classes: usize,
    dim: usize,
    targets: &'a [CosineTarget],
}

impl<'a> CosineClassLoss<'a> {
    pub fn new(classes: usize, dim: usize, targets: &'a [CosineTarget]) -> Result<Self, ModelError> {
        if targets.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        for t in targets {
            if t.class >= classes {
                return Err(ModelError::LabelOutOfRange { label: t.class, classes });
            }
            if t.feature.dim() != dim {
                return Err(ModelError::DimensionMismatch { expected: dim, got: t.feature.dim() });
            }
        }
        Ok(Self { classes, dim, targets })
    }
}

impl Objective for CosineClassLoss<'_> {
    fn dim(&self) -> usize {
        self.classes * self.dim + self.classes
    }

    fn build<T: Scalar>(&self, tape: &mut Tape<T>, theta: Var) -> Var {
        let mut total: Option<Var> = None;
        for t in self.targets {
            let z = record_logits(tape, theta, self.classes, self.dim, t.feature.as_slice());
            let n = tape.norm(z);
            let zc = tape.index(z, t.class);
            let cos = tape.div_scalar(zc, n);
            total = Some(match total {
                None => cos,
                Some(acc) => tape.add(acc, cos),
            });
        }
        let total = total.expect("non-empty targets checked in constructor");
        let mean_cos = tape.scale(total, 1.0 / self.targets.len() as f64);
        let one = tape.constant(&[1.0]);
        tape.sub(one, mean_cos)
    }
}
