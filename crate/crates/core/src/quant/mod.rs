//! Symmetric min/max quantization to FP8 or INT8.
//!
//! A scale `S = max(|alpha|, |beta|) / M` maps the calibrated clipping range
//! onto the target's largest level `M` (the FP8 format's max finite value, or
//! 127 for INT8). Quantization stores `encode(r / S)` for FP8 and
//! `clamp(round(r / S), -127, 127)` for INT8; the zero point is always 0.

mod observer;

pub use observer::CalibRange;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fp8::{Fp8Format, E4M3, E5M2};
use crate::tensor::Tensor;

/// Largest INT8 magnitude used by the symmetric baseline.
pub const INT8_MAX_LEVEL: f32 = 127.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QuantTarget {
    Fp8(Fp8Format),
    Int8,
}

impl QuantTarget {
    pub const E4M3: QuantTarget = QuantTarget::Fp8(E4M3);
    pub const E5M2: QuantTarget = QuantTarget::Fp8(E5M2);

    /// The largest representable level `M` in the scale denominator.
    pub fn max_level(&self) -> f32 {
        match self {
            QuantTarget::Fp8(f) => f.max_finite(),
            QuantTarget::Int8 => INT8_MAX_LEVEL,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            QuantTarget::Fp8(f) => f.name(),
            QuantTarget::Int8 => "int8",
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        if name.eq_ignore_ascii_case("int8") {
            Some(QuantTarget::Int8)
        } else {
            Fp8Format::by_name(name).map(QuantTarget::Fp8)
        }
    }

    /// Quantizes a value already divided by its scale.
    #[inline]
    pub fn encode_scaled(&self, x: f32) -> u8 {
        match self {
            QuantTarget::Fp8(f) => f.encode(x),
            QuantTarget::Int8 => x.round_ties_even().clamp(-INT8_MAX_LEVEL, INT8_MAX_LEVEL) as i8 as u8,
        }
    }

    /// The level a stored code represents, before scaling.
    #[inline]
    pub fn decode_level(&self, code: u8) -> f32 {
        match self {
            QuantTarget::Fp8(f) => f.decode(code),
            QuantTarget::Int8 => code as i8 as f32,
        }
    }
}

impl fmt::Display for QuantTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Granularity {
    PerTensor,
    PerChannel { axis: usize },
}

impl Granularity {
    pub fn name(&self) -> &'static str {
        match self {
            Granularity::PerTensor => "per-tensor",
            Granularity::PerChannel { .. } => "per-channel",
        }
    }
}

/// Static quantization parameters: scale(s), zero point, granularity, target.
///
/// Serializes as `{target, granularity, axis, scale | scales, zero_point}`
/// with every real written as a shortest round-trip decimal string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "QuantParamsRecord", try_from = "QuantParamsRecord")]
pub struct QuantParams {
    scales: Vec<f32>,
    zero_point: f32,
    granularity: Granularity,
    target: QuantTarget,
}

fn check_scales(scales: &[f32]) -> Result<()> {
    if scales.is_empty() {
        return Err(Error::Parameter("empty scale vector".into()));
    }
    if let Some(s) = scales.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
        return Err(Error::Parameter(format!("scale must be positive and finite, got {s}")));
    }
    Ok(())
}

impl QuantParams {
    pub fn per_tensor(scale: f32, target: QuantTarget) -> Result<Self> {
        check_scales(&[scale])?;
        Ok(Self { scales: vec![scale], zero_point: 0.0, granularity: Granularity::PerTensor, target })
    }

    pub fn per_channel(scales: Vec<f32>, axis: usize, target: QuantTarget) -> Result<Self> {
        check_scales(&scales)?;
        Ok(Self { scales, zero_point: 0.0, granularity: Granularity::PerChannel { axis }, target })
    }

    pub fn scales(&self) -> &[f32] {
        &self.scales
    }

    /// The single scale of a per-tensor parameter set.
    pub fn scale(&self) -> Option<f32> {
        match self.granularity {
            Granularity::PerTensor => Some(self.scales[0]),
            Granularity::PerChannel { .. } => None,
        }
    }

    pub fn zero_point(&self) -> f32 {
        self.zero_point
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    pub fn target(&self) -> QuantTarget {
        self.target
    }

    /// Returns `(outer, channels, inner)` strides for a tensor of `shape`,
    /// checking that the scale vector fits it.
    fn layout(&self, shape: &[usize]) -> Result<(usize, usize, usize)> {
        let n: usize = shape.iter().product();
        match self.granularity {
            Granularity::PerTensor => Ok((1, 1, n)),
            Granularity::PerChannel { axis } => {
                if axis >= shape.len() {
                    return Err(Error::Parameter(format!(
                        "channel axis {axis} out of range for shape {shape:?}"
                    )));
                }
                if shape[axis] != self.scales.len() {
                    return Err(Error::Parameter(format!(
                        "{} scales for extent {} along axis {axis}",
                        self.scales.len(),
                        shape[axis]
                    )));
                }
                let outer = shape[..axis].iter().product();
                let inner = shape[axis + 1..].iter().product();
                Ok((outer, shape[axis], inner))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct QuantParamsRecord {
    target: String,
    granularity: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    axis: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scale: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scales: Option<Vec<String>>,
    zero_point: String,
}

impl From<QuantParams> for QuantParamsRecord {
    fn from(p: QuantParams) -> Self {
        let (axis, scale, scales) = match p.granularity {
            Granularity::PerTensor => (None, Some(p.scales[0].to_string()), None),
            Granularity::PerChannel { axis } => {
                (Some(axis), None, Some(p.scales.iter().map(f32::to_string).collect()))
            }
        };
        Self {
            target: p.target.name().to_string(),
            granularity: p.granularity.name().to_string(),
            axis,
            scale,
            scales,
            zero_point: p.zero_point.to_string(),
        }
    }
}

fn parse_decimal(s: &str) -> std::result::Result<f32, String> {
    s.parse::<f32>().map_err(|e| format!("bad decimal `{s}`: {e}"))
}

impl TryFrom<QuantParamsRecord> for QuantParams {
    type Error = String;

    fn try_from(r: QuantParamsRecord) -> std::result::Result<Self, String> {
        let target = QuantTarget::by_name(&r.target)
            .ok_or_else(|| format!("unknown quantization target `{}`", r.target))?;
        if parse_decimal(&r.zero_point)? != 0.0 {
            return Err(format!("only symmetric parameters are supported, zero_point = {}", r.zero_point));
        }
        let params = match (r.granularity.as_str(), r.axis, r.scale, r.scales) {
            ("per-tensor", None, Some(s), None) => Self::per_tensor(parse_decimal(&s)?, target),
            ("per-channel", Some(axis), None, Some(v)) => {
                let scales = v.iter().map(|s| parse_decimal(s)).collect::<std::result::Result<_, _>>()?;
                Self::per_channel(scales, axis, target)
            }
            (g, ..) => return Err(format!("inconsistent `{g}` quantization record")),
        };
        params.map_err(|e| e.to_string())
    }
}

/// Quantized tensor: 8-bit codes plus the parameters to dequantize them.
/// INT8 values are stored as their two's-complement bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct QTensor {
    codes: Vec<u8>,
    shape: Vec<usize>,
    params: QuantParams,
}

impl QTensor {
    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn params(&self) -> &QuantParams {
        &self.params
    }

    /// Stored INT8 values; `None` for FP8 tensors.
    pub fn int8_values(&self) -> Option<Vec<i8>> {
        match self.params.target {
            QuantTarget::Int8 => Some(self.codes.iter().map(|&c| c as i8).collect()),
            QuantTarget::Fp8(_) => None,
        }
    }
}

/// Symmetric scale `max(|alpha|, |beta|) / M` for a calibrated range. An all-zero range
/// gets `S = 1`.
pub fn scale_from_range(range: &CalibRange, target: QuantTarget) -> Result<QuantParams> {
    if range.is_empty() {
        return Err(Error::NoCalibrationData);
    }
    QuantParams::per_tensor(scale_for_abs_max(range.abs_max(), target), target)
}

fn scale_for_abs_max(abs_max: f32, target: QuantTarget) -> f32 {
    if abs_max == 0.0 {
        1.0
    } else {
        abs_max / target.max_level()
    }
}

/// One scale per slice of `w` along `axis`, each from that slice's own range.
pub fn per_channel_params(w: &Tensor, axis: usize, target: QuantTarget) -> Result<QuantParams> {
    if w.is_empty() {
        return Err(Error::NoCalibrationData);
    }
    let (outer, extent, inner) = w.lanes(axis)?;
    let data = w.data();
    let mut ranges = vec![CalibRange::empty(); extent];
    for o in 0..outer {
        for (c, range) in ranges.iter_mut().enumerate() {
            let start = (o * extent + c) * inner;
            *range = range.observe_slice(&data[start..start + inner])?;
        }
    }
    let scales = ranges.iter().map(|r| scale_for_abs_max(r.abs_max(), target)).collect();
    QuantParams::per_channel(scales, axis, target)
}

fn quantize_with(t: &Tensor, params: &QuantParams) -> Result<QTensor> {
    let (_, channels, inner) = params.layout(t.shape())?;
    let target = params.target;
    let codes = t
        .data()
        .iter()
        .enumerate()
        .map(|(i, &r)| target.encode_scaled(r / params.scales[(i / inner) % channels]))
        .collect();
    Ok(QTensor { codes, shape: t.shape().to_vec(), params: params.clone() })
}

/// Stores each element as `encode_nearest(r / S)` in the params' FP8 format.
pub fn quantize_fp8(t: &Tensor, params: &QuantParams) -> Result<QTensor> {
    if !matches!(params.target, QuantTarget::Fp8(_)) {
        return Err(Error::Parameter(format!("quantize_fp8 with target {}", params.target)));
    }
    quantize_with(t, params)
}

/// Stores each element as `clamp(round_ties_even(r / S), -127, 127)`.
pub fn quantize_int8(t: &Tensor, params: &QuantParams) -> Result<QTensor> {
    if params.target != QuantTarget::Int8 {
        return Err(Error::Parameter(format!("quantize_int8 with target {}", params.target)));
    }
    quantize_with(t, params)
}

/// Quantizes to whichever target `params` names.
pub fn quantize(t: &Tensor, params: &QuantParams) -> Result<QTensor> {
    quantize_with(t, params)
}

pub fn dequantize(q: &QTensor) -> Tensor {
    let (_, channels, inner) = q.params.layout(&q.shape).expect("validated at quantization");
    let target = q.params.target;
    let data = q
        .codes
        .iter()
        .enumerate()
        .map(|(i, &c)| target.decode_level(c) * q.params.scales[(i / inner) % channels])
        .collect();
    Tensor::new(q.shape.clone(), data).expect("shape preserved")
}

/// `dequantize(quantize(t, params))`.
pub fn fake_quant(t: &Tensor, params: &QuantParams) -> Result<Tensor> {
    Ok(dequantize(&quantize(t, params)?))
}
