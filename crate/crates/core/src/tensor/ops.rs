use rayon::prelude::*;

use super::Tensor;
use crate::error::{Error, Result};
use crate::fp8::round_to_bf16;

pub const DEFAULT_LAYERNORM_EPS: f32 = 1e-5;

/// `a[m×k] · b[k×n] (+ bias[n])` with FP32 accumulation.
///
/// Each output element accumulates its products in ascending `k` starting
/// from `0.0`, then adds the bias. Rows are computed in parallel, which does
/// not change any per-element summation order, so results are bit-identical
/// regardless of thread count.
pub fn gemm(a: &Tensor, b: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (kb, n) = b.dims2()?;
    if k != kb {
        return Err(Error::Shape(format!("gemm inner dims {k} vs {kb}")));
    }
    if let Some(bias) = bias {
        if bias.len() != n {
            return Err(Error::Shape(format!("bias length {} vs {n} columns", bias.len())));
        }
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0f32; m * n];
    out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let a_row = &ad[i * k..(i + 1) * k];
        for (p, &a_ip) in a_row.iter().enumerate() {
            let b_row = &bd[p * n..(p + 1) * n];
            for (o, &b_pj) in row.iter_mut().zip(b_row) {
                *o += a_ip * b_pj;
            }
        }
        if let Some(bias) = bias {
            for (o, &c) in row.iter_mut().zip(bias.data()) {
                *o += c;
            }
        }
    });
    Tensor::new(vec![m, n], out)
}

pub fn transpose2d(t: &Tensor) -> Result<Tensor> {
    let (r, c) = t.dims2()?;
    let d = t.data();
    Tensor::from_fn(vec![c, r], |i| d[(i % r) * c + i / r])
}

/// Softmax along `axis`, max-subtracted, in FP32.
pub fn softmax(t: &Tensor, axis: usize) -> Result<Tensor> {
    let (outer, extent, inner) = t.lanes(axis)?;
    let src = t.data();
    let mut out = vec![0.0f32; t.len()];
    for o in 0..outer {
        for j in 0..inner {
            let idx = |i: usize| (o * extent + i) * inner + j;
            let max = (0..extent).map(|i| src[idx(i)]).fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0.0f32;
            for i in 0..extent {
                let e = (src[idx(i)] - max).exp();
                out[idx(i)] = e;
                sum += e;
            }
            for i in 0..extent {
                out[idx(i)] /= sum;
            }
        }
    }
    Tensor::new(t.shape().to_vec(), out)
}

/// [`softmax`] with inputs and outputs rounded through BF16.
pub fn softmax_bf16(t: &Tensor, axis: usize) -> Result<Tensor> {
    Ok(softmax(&t.map(round_to_bf16), axis)?.map(round_to_bf16))
}

fn gelu_scalar(x: f32) -> f32 {
    0.5 * x * (1.0 + libm::erff(x * std::f32::consts::FRAC_1_SQRT_2))
}

/// Exact (erf) GELU in FP32.
pub fn gelu(t: &Tensor) -> Tensor {
    t.map(gelu_scalar)
}

pub fn gelu_bf16(t: &Tensor) -> Tensor {
    t.map(|x| round_to_bf16(gelu_scalar(round_to_bf16(x))))
}

/// Normalizes each lane along `axis` to zero mean and unit (biased)
/// variance, then applies `gamma * x + beta`.
pub fn layernorm(
    t: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    axis: usize,
    epsilon: f32,
) -> Result<Tensor> {
    let (outer, extent, inner) = t.lanes(axis)?;
    if gamma.len() != extent || beta.len() != extent {
        return Err(Error::Shape(format!(
            "layernorm affine params {}/{} vs extent {extent}",
            gamma.len(),
            beta.len()
        )));
    }
    if !(epsilon > 0.0) {
        return Err(Error::Parameter(format!("layernorm epsilon must be positive, got {epsilon}")));
    }
    let src = t.data();
    let (g, b) = (gamma.data(), beta.data());
    let mut out = vec![0.0f32; t.len()];
    let n = extent as f32;
    for o in 0..outer {
        for j in 0..inner {
            let idx = |i: usize| (o * extent + i) * inner + j;
            let mean = (0..extent).map(|i| src[idx(i)]).sum::<f32>() / n;
            let var = (0..extent).map(|i| (src[idx(i)] - mean).powi(2)).sum::<f32>() / n;
            let inv = 1.0 / (var + epsilon).sqrt();
            for i in 0..extent {
                out[idx(i)] = (src[idx(i)] - mean) * inv * g[i] + b[i];
            }
        }
    }
    Tensor::new(t.shape().to_vec(), out)
}

pub fn layernorm_bf16(
    t: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    axis: usize,
    epsilon: f32,
) -> Result<Tensor> {
    Ok(layernorm(&t.map(round_to_bf16), gamma, beta, axis, epsilon)?.map(round_to_bf16))
}
