use super::Tensor;
use crate::error::{Error, Result};

/// Error statistics of a test tensor against a reference.
///
/// `sqnr_db` and `cosine` are `None` when undefined (all-zero reference, or
/// an all-zero test tensor for the cosine). `sqnr_db` is `+inf` when the two
/// tensors are identical.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub mse: f64,
    pub sqnr_db: Option<f64>,
    pub cosine: Option<f64>,
    pub max_abs_err: f64,
}

/// Compares `test` against `reference`. Sums are accumulated in f64.
pub fn metrics(reference: &Tensor, test: &Tensor) -> Result<Metrics> {
    if reference.shape() != test.shape() {
        return Err(Error::Shape(format!(
            "metrics over {:?} vs {:?}",
            reference.shape(),
            test.shape()
        )));
    }
    let (mut signal, mut noise, mut dot, mut test_energy, mut max_abs) = (0.0, 0.0, 0.0, 0.0, 0.0f64);
    for (&a, &b) in reference.data().iter().zip(test.data()) {
        let (a, b) = (a as f64, b as f64);
        let d = a - b;
        signal += a * a;
        noise += d * d;
        dot += a * b;
        test_energy += b * b;
        max_abs = max_abs.max(d.abs());
    }
    let n = reference.len() as f64;
    let sqnr_db = if signal == 0.0 {
        None
    } else if noise == 0.0 {
        Some(f64::INFINITY)
    } else {
        Some(10.0 * (signal / noise).log10())
    };
    let cosine = if signal == 0.0 || test_energy == 0.0 {
        None
    } else {
        Some((dot / (signal.sqrt() * test_energy.sqrt())).clamp(-1.0, 1.0))
    };
    Ok(Metrics { mse: noise / n, sqnr_db, cosine, max_abs_err: max_abs })
}
