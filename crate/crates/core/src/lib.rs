//! Post-training quantization toolkit with software-emulated FP8 and BF16.
//!
//! - [`fp8`] -- bit-exact E4M3/E5M2 codecs, round-to-nearest-even encoding
//!   with saturation, BF16 rounding, and level enumeration.
//! - [`quant`] -- min/max calibration ranges, symmetric scales, FP8 and INT8
//!   quantize/dequantize at per-tensor or per-channel granularity.
//! - [`tensor`] -- a small dense FP32 tensor with deterministic GEMM, the
//!   BF16-simulated nonlinear operators, and error metrics.
//! - [`runtime`] -- the `FPQ1` model container, graph execution in FP32 and
//!   quantization-simulation modes, the PTQ pipeline, and the toy models.
//! - [`data`] -- seeded synthetic dataset generators.

pub mod data;
pub mod error;
pub mod fp8;
pub mod quant;
pub mod runtime;
pub mod tensor;

pub use error::{Error, Result};
pub use fp8::{round_to_bf16, round_to_fp8, Fp8Code, Fp8Format, SpecialConvention, E4M3, E5M2};
pub use quant::{CalibRange, Granularity, QTensor, QuantParams, QuantTarget};
pub use runtime::{LayerSpec, Mode, ModelContainer};
pub use tensor::{Metrics, Tensor};

/// Library version string.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
