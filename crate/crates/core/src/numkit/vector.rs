use alloc::vec::Vec;
use core::ops::Deref;

use super::NumError;

/// Non-empty, finite real vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(values: Vec<f64>) -> Result<Self, NumError> {
        if values.is_empty() {
            return Err(NumError::Empty);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(NumError::NonFinite { op: "Vector::new" });
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for Vector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

pub fn norm(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

/// `y += scale * x`
pub fn axpy(y: &mut [f64], scale: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += scale * xi;
    }
}

/// Cosine of the angle between `a` and `b`, clamped to `[-1, 1]`.
///
/// A zero-norm argument is an error rather than a silent zero.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, NumError> {
    if a.len() != b.len() {
        return Err(NumError::LengthMismatch { left: a.len(), right: b.len() });
    }
    if a.is_empty() {
        return Err(NumError::Empty);
    }
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(NumError::ZeroNorm { op: "cosine_similarity" });
    }
    let c = dot(a, b) / (na * nb);
    if !c.is_finite() {
        return Err(NumError::NonFinite { op: "cosine_similarity" });
    }
    Ok(c.clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cosine_similarity(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((c - core::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn cosine_rejects_degenerate_inputs() {
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), Err(NumError::ZeroNorm { op: "cosine_similarity" }));
        assert!(matches!(cosine_similarity(&[1.0], &[1.0, 2.0]), Err(NumError::LengthMismatch { .. })));
    }

    #[test]
    fn vector_rejects_nan_and_empty() {
        assert_eq!(Vector::new(Vec::new()), Err(NumError::Empty));
        assert!(Vector::new(alloc::vec![1.0, f64::NAN]).is_err());
    }

    proptest! {
        #[test]
        fn cosine_symmetric_and_scale_invariant(
            a in proptest::collection::vec(-10.0f64..10.0, 5),
            b in proptest::collection::vec(-10.0f64..10.0, 5),
            c in 0.01f64..100.0,
        ) {
            prop_assume!(norm(&a) > 1e-3 && norm(&b) > 1e-3);
            let ab = cosine_similarity(&a, &b).unwrap();
            let ba = cosine_similarity(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-12);
            let scaled: Vec<f64> = a.iter().map(|v| v * c).collect();
            let sb = cosine_similarity(&scaled, &b).unwrap();
            prop_assert!((ab - sb).abs() <= 1e-12);
        }
    }
}
