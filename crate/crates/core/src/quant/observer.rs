use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Running min/max of every value observed so far.
///
/// Updates and merges are commutative and associative, so partial ranges
/// from any split of the calibration data combine to the same result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibRange {
    alpha: f32,
    beta: f32,
    count: u64,
}

impl Default for CalibRange {
    fn default() -> Self {
        Self::empty()
    }
}

impl CalibRange {
    pub const fn empty() -> Self {
        Self { alpha: f32::INFINITY, beta: f32::NEG_INFINITY, count: 0 }
    }

    /// Rebuilds a range from stored bounds, e.g. a calibration record.
    pub fn from_parts(alpha: f32, beta: f32, count: u64) -> Result<Self> {
        if count == 0 {
            return Ok(Self::empty());
        }
        if !alpha.is_finite() || !beta.is_finite() || alpha > beta {
            return Err(Error::Calibration(format!("invalid range [{alpha}, {beta}]")));
        }
        Ok(Self { alpha, beta, count })
    }

    pub fn alpha(&self) -> f32 {
        self.alpha
    }

    pub fn beta(&self) -> f32 {
        self.beta
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// `max(|alpha|, |beta|)`, the symmetric clipping bound.
    pub fn abs_max(&self) -> f32 {
        self.alpha.abs().max(self.beta.abs())
    }

    pub fn observe(&self, t: &Tensor) -> Result<Self> {
        self.observe_slice(t.data())
    }

    pub fn observe_slice(&self, values: &[f32]) -> Result<Self> {
        let mut next = *self;
        for &v in values {
            if !v.is_finite() {
                return Err(Error::Calibration(format!("non-finite calibration value {v}")));
            }
            next.alpha = next.alpha.min(v);
            next.beta = next.beta.max(v);
        }
        next.count += values.len() as u64;
        Ok(next)
    }

    pub fn merge(&self, other: &CalibRange) -> Self {
        Self {
            alpha: self.alpha.min(other.alpha),
            beta: self.beta.max(other.beta),
            count: self.count + other.count,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(v: &[f32]) -> Tensor {
        Tensor::from_vec(v.to_vec()).unwrap()
    }

    #[test]
    fn running_min_max() {
        let r = CalibRange::empty().observe(&t(&[1.0, -3.0])).unwrap();
        let r = r.observe(&t(&[2.0, 0.5])).unwrap();
        assert_eq!((r.alpha(), r.beta(), r.count()), (-3.0, 2.0, 4));
        assert_eq!(r.abs_max(), 3.0);
    }

    #[test]
    fn repeated_observation_keeps_bounds() {
        let x = t(&[0.25, -7.0, 3.0]);
        let once = CalibRange::empty().observe(&x).unwrap();
        let twice = once.observe(&x).unwrap();
        assert_eq!((once.alpha(), once.beta()), (twice.alpha(), twice.beta()));
    }

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(
            CalibRange::empty().observe(&t(&[1.0, f32::NAN])),
            Err(Error::Calibration(_))
        ));
        assert!(CalibRange::empty().observe(&t(&[f32::INFINITY])).is_err());
    }

    #[test]
    fn from_parts_validates() {
        assert!(CalibRange::from_parts(2.0, 1.0, 3).is_err());
        assert!(CalibRange::from_parts(-1.0, 1.0, 3).is_ok());
        assert!(CalibRange::from_parts(0.0, 0.0, 0).unwrap().is_empty());
    }

    proptest! {
        #[test]
        fn merge_equals_single_pass(
            a in prop::collection::vec(-1e4f32..1e4, 1..64),
            b in prop::collection::vec(-1e4f32..1e4, 1..64),
        ) {
            let ra = CalibRange::empty().observe(&t(&a)).unwrap();
            let rb = CalibRange::empty().observe(&t(&b)).unwrap();
            let merged = ra.merge(&rb);
            let single = ra.observe(&t(&b)).unwrap();
            prop_assert_eq!(merged, single);
            prop_assert_eq!(rb.merge(&ra), merged);
        }

        #[test]
        fn batch_order_is_irrelevant(
            batches in prop::collection::vec(prop::collection::vec(-50f32..50.0, 1..16), 1..8),
            seed in any::<u64>(),
        ) {
            let forward = batches.iter().fold(CalibRange::empty(), |r, b| r.observe(&t(b)).unwrap());
            let mut shuffled = batches.clone();
            let n = shuffled.len();
            for i in (1..n).rev() {
                shuffled.swap(i, (seed.rotate_left(i as u32) as usize) % (i + 1));
            }
            let permuted = shuffled.iter().fold(CalibRange::empty(), |r, b| r.observe(&t(b)).unwrap());
            prop_assert_eq!(forward, permuted);
        }
    }
}
