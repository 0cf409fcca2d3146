//! A single seeded transformer encoder block with injected weight outliers.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::graph::{AttentionSpec, GemmSpec, LayerNormSpec, LayerSpec, ModelContainer, Projection};
use crate::data::outlier_count;
use crate::error::{Error, Result};
use crate::tensor::{Tensor, DEFAULT_LAYERNORM_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderDims {
    pub width: usize,
    pub heads: usize,
    pub ffn: usize,
    pub seq_len: usize,
}

impl Default for EncoderDims {
    fn default() -> Self {
        Self { width: 64, heads: 4, ffn: 256, seq_len: 32 }
    }
}

impl EncoderDims {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.heads == 0 || self.ffn == 0 || self.seq_len == 0 {
            return Err(Error::InvalidDims(format!("all dimensions must be positive: {self:?}")));
        }
        if !self.width.is_multiple_of(self.heads) {
            return Err(Error::InvalidDims(format!(
                "{} heads do not divide width {}",
                self.heads, self.width
            )));
        }
        Ok(())
    }
}

/// `ceil(fraction * numel)` entries of each targeted weight are overwritten
/// with `±magnitude`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutlierSpec {
    pub fraction: f64,
    pub magnitude: f32,
    /// Weight tensor names to inject into.
    pub targets: Vec<String>,
}

impl Default for OutlierSpec {
    fn default() -> Self {
        Self { fraction: 0.001, magnitude: 50.0, targets: DEFAULT_OUTLIER_TARGETS.map(String::from).to_vec() }
    }
}

impl OutlierSpec {
    pub fn none() -> Self {
        Self { fraction: 0.0, ..Self::default() }
    }
}

/// The feed-forward weights, whose outlier activations feed the second GEMM
/// and the residual stream.
pub const DEFAULT_OUTLIER_TARGETS: [&str; 2] = ["ffn1.w", "ffn2.w"];

const BIAS_STD: f32 = 0.02;

fn gaussian(rng: &mut ChaCha8Rng, shape: Vec<usize>, std: f32) -> Result<Tensor> {
    let dist = Normal::new(0.0f32, std).map_err(|e| Error::Parameter(e.to_string()))?;
    Tensor::from_fn(shape, |_| dist.sample(rng))
}

fn inject(rng: &mut ChaCha8Rng, t: &mut Tensor, spec: &OutlierSpec) -> usize {
    let n = t.len();
    let k = outlier_count(spec.fraction, n);
    let data = t.data_mut();
    for i in index::sample(rng, n, k) {
        data[i] = if rng.random_bool(0.5) { spec.magnitude } else { -spec.magnitude };
    }
    k
}

/// Builds the encoder block: attention, residual, LayerNorm, GEMM, GELU,
/// GEMM, residual, LayerNorm. Weights are `N(0, 1/fan_in)`.
pub fn build_toy_encoder(seed: u64, dims: EncoderDims, outliers: &OutlierSpec) -> Result<ModelContainer> {
    dims.validate()?;
    if !(0.0..=1.0).contains(&outliers.fraction) {
        return Err(Error::Parameter(format!("outlier fraction {} not in [0, 1]", outliers.fraction)));
    }
    if !outliers.magnitude.is_finite() {
        return Err(Error::Parameter(format!("outlier magnitude {} is not finite", outliers.magnitude)));
    }
    let EncoderDims { width: d, heads, ffn, seq_len } = dims;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tensors = BTreeMap::new();
    let w_std = |fan_in: usize| 1.0 / (fan_in as f32).sqrt();

    let weights: [(&str, usize, usize); 6] = [
        ("attn.q", d, d),
        ("attn.k", d, d),
        ("attn.v", d, d),
        ("attn.o", d, d),
        ("ffn1", d, ffn),
        ("ffn2", ffn, d),
    ];
    for (name, fan_in, fan_out) in weights {
        tensors.insert(format!("{name}.w"), gaussian(&mut rng, vec![fan_in, fan_out], w_std(fan_in))?);
        tensors.insert(format!("{name}.b"), gaussian(&mut rng, vec![fan_out], BIAS_STD)?);
    }
    for ln in ["ln1", "ln2"] {
        tensors.insert(format!("{ln}.gamma"), Tensor::from_fn(vec![d], |_| 1.0)?);
        tensors.insert(format!("{ln}.beta"), Tensor::zeros(vec![d])?);
    }

    let mut injected = 0;
    for target in &outliers.targets {
        let t = tensors.get_mut(target).ok_or_else(|| Error::DanglingTensor(target.clone()))?;
        injected += inject(&mut rng, t, outliers);
    }

    let proj = |name: &str| Projection { weight: format!("{name}.w"), bias: Some(format!("{name}.b")) };
    let gemm = |name: &str| LayerSpec::Gemm(GemmSpec { weight: format!("{name}.w"), bias: Some(format!("{name}.b")), quant: None });
    let ln = |name: &str| {
        LayerSpec::LayerNorm(LayerNormSpec {
            gamma: format!("{name}.gamma"),
            beta: format!("{name}.beta"),
            epsilon: DEFAULT_LAYERNORM_EPS,
        })
    };
    let graph = vec![
        LayerSpec::AttentionBlock(AttentionSpec {
            heads,
            q_proj: proj("attn.q"),
            k_proj: proj("attn.k"),
            v_proj: proj("attn.v"),
            out_proj: proj("attn.o"),
            quant: None,
        }),
        LayerSpec::ResidualAdd { from: 0 },
        ln("ln1"),
        gemm("ffn1"),
        LayerSpec::Gelu,
        gemm("ffn2"),
        LayerSpec::ResidualAdd { from: 3 },
        ln("ln2"),
    ];

    let mut metadata = BTreeMap::new();
    for (k, v) in [
        ("model", "encoder".to_string()),
        ("seed", seed.to_string()),
        ("input_width", d.to_string()),
        ("heads", heads.to_string()),
        ("ffn", ffn.to_string()),
        ("seq_len", seq_len.to_string()),
        ("outlier_frac", outliers.fraction.to_string()),
        ("outlier_mag", outliers.magnitude.to_string()),
        ("outliers", injected.to_string()),
    ] {
        metadata.insert(k.to_string(), v);
    }

    let m = ModelContainer { tensors, graph, metadata };
    m.validate()?;
    Ok(m)
}

/// Seeded standard-normal input of shape `[seq_len, width]`.
pub fn encoder_input(seed: u64, dims: EncoderDims) -> Result<Tensor> {
    dims.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(vec![dims.seq_len, dims.width], |_| StandardNormal.sample(&mut rng))
}
