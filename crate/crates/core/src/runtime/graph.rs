use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quant::QuantParams;
use crate::tensor::Tensor;

/// Static parameters attached to one quantized GEMM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GemmQuant {
    pub weight_params: QuantParams,
    pub activation_params: QuantParams,
}

/// `x · weight (+ bias)`; weights are stored `[in_features, out_features]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GemmSpec {
    pub weight: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quant: Option<GemmQuant>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNormSpec {
    pub gamma: String,
    pub beta: String,
    pub epsilon: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub weight: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<String>,
}

/// Per-tensor parameters for both operands of the two batched matmuls
/// inside attention (`Q·Kᵀ` and `P·V`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InternalQuant {
    pub query: QuantParams,
    pub key: QuantParams,
    pub value: QuantParams,
    pub probs: QuantParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionQuant {
    pub q_proj: GemmQuant,
    pub k_proj: GemmQuant,
    pub v_proj: GemmQuant,
    pub out_proj: GemmQuant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub internal: Option<InternalQuant>,
}

/// Multi-head self-attention: Q/K/V projections, per-head scaled
/// dot-product softmax, concatenation, output projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionSpec {
    pub heads: usize,
    pub q_proj: Projection,
    pub k_proj: Projection,
    pub v_proj: Projection,
    pub out_proj: Projection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quant: Option<AttentionQuant>,
}

/// One node of the single-path layer graph. Activation `0` is the graph
/// input and activation `i + 1` is the output of layer `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum LayerSpec {
    #[serde(rename = "GEMM")]
    Gemm(GemmSpec),
    /// Softmax over the last axis.
    #[serde(rename = "SOFTMAX")]
    Softmax,
    #[serde(rename = "GELU")]
    Gelu,
    /// LayerNorm over the last axis.
    #[serde(rename = "LAYERNORM")]
    LayerNorm(LayerNormSpec),
    /// Adds activation `from` to the current activation.
    #[serde(rename = "RESIDUAL_ADD")]
    ResidualAdd { from: usize },
    #[serde(rename = "ATTENTION_BLOCK")]
    AttentionBlock(AttentionSpec),
}

/// Kind tags accepted in serialized graphs.
pub const LAYER_KINDS: [&str; 6] =
    ["GEMM", "SOFTMAX", "GELU", "LAYERNORM", "RESIDUAL_ADD", "ATTENTION_BLOCK"];

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Gemm(_) => "GEMM",
            LayerSpec::Softmax => "SOFTMAX",
            LayerSpec::Gelu => "GELU",
            LayerSpec::LayerNorm(_) => "LAYERNORM",
            LayerSpec::ResidualAdd { .. } => "RESIDUAL_ADD",
            LayerSpec::AttentionBlock(_) => "ATTENTION_BLOCK",
        }
    }

    pub fn is_quantized(&self) -> bool {
        match self {
            LayerSpec::Gemm(g) => g.quant.is_some(),
            LayerSpec::AttentionBlock(a) => a.quant.is_some(),
            _ => false,
        }
    }

    fn tensor_refs(&self) -> Vec<&str> {
        match self {
            LayerSpec::Gemm(g) => {
                let mut v = vec![g.weight.as_str()];
                v.extend(g.bias.as_deref());
                v
            }
            LayerSpec::LayerNorm(ln) => vec![ln.gamma.as_str(), ln.beta.as_str()],
            LayerSpec::AttentionBlock(a) => [&a.q_proj, &a.k_proj, &a.v_proj, &a.out_proj]
                .into_iter()
                .flat_map(|p| std::iter::once(p.weight.as_str()).chain(p.bias.as_deref()))
                .collect(),
            LayerSpec::Softmax | LayerSpec::Gelu | LayerSpec::ResidualAdd { .. } => Vec::new(),
        }
    }
}

/// Named tensors, a layer graph, and free-form string metadata. Models and
/// datasets share this container.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelContainer {
    pub tensors: BTreeMap<String, Tensor>,
    pub graph: Vec<LayerSpec>,
    pub metadata: BTreeMap<String, String>,
}

impl ModelContainer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors.get(name).ok_or_else(|| Error::DanglingTensor(name.to_string()))
    }

    pub fn is_quantized(&self) -> bool {
        self.graph.iter().any(LayerSpec::is_quantized)
    }

    /// Copy with every quantization annotation removed.
    pub fn without_quant(&self) -> Self {
        let mut m = self.clone();
        for layer in &mut m.graph {
            match layer {
                LayerSpec::Gemm(g) => g.quant = None,
                LayerSpec::AttentionBlock(a) => a.quant = None,
                _ => {}
            }
        }
        m.metadata.retain(|k, _| !k.starts_with("quant."));
        m
    }

    /// Checks tensor references and graph structure.
    pub fn validate(&self) -> Result<()> {
        for (i, layer) in self.graph.iter().enumerate() {
            for name in layer.tensor_refs() {
                self.tensor(name)?;
            }
            match layer {
                LayerSpec::Gemm(g) => {
                    let (_, out) = self.tensor(&g.weight)?.dims2()?;
                    check_bias(self, g.bias.as_deref(), out)?;
                }
                LayerSpec::LayerNorm(ln) => {
                    let n = self.tensor(&ln.gamma)?.len();
                    if self.tensor(&ln.beta)?.len() != n {
                        return Err(Error::Shape(format!("layer {i}: gamma/beta length mismatch")));
                    }
                    if !(ln.epsilon > 0.0) {
                        return Err(Error::Parameter(format!("layer {i}: epsilon must be positive")));
                    }
                }
                LayerSpec::ResidualAdd { from } => {
                    if *from >= i {
                        return Err(Error::Header(format!(
                            "layer {i}: residual source {from} is not an earlier activation"
                        )));
                    }
                }
                LayerSpec::AttentionBlock(a) => {
                    let (width, _) = self.tensor(&a.q_proj.weight)?.dims2()?;
                    for p in [&a.q_proj, &a.k_proj, &a.v_proj, &a.out_proj] {
                        let (r, c) = self.tensor(&p.weight)?.dims2()?;
                        if r != width || c != width {
                            return Err(Error::Shape(format!(
                                "layer {i}: attention projection `{}` is {r}x{c}, expected {width}x{width}",
                                p.weight
                            )));
                        }
                        check_bias(self, p.bias.as_deref(), width)?;
                    }
                    if a.heads == 0 || width % a.heads != 0 {
                        return Err(Error::InvalidDims(format!(
                            "layer {i}: {} heads do not divide width {width}",
                            a.heads
                        )));
                    }
                }
                LayerSpec::Softmax | LayerSpec::Gelu => {}
            }
        }
        Ok(())
    }

    /// Width of the rows the graph consumes, if the first weighted layer
    /// determines it.
    pub fn input_width(&self) -> Option<usize> {
        if let Some(w) = self.metadata.get("input_width").and_then(|s| s.parse().ok()) {
            return Some(w);
        }
        self.graph.iter().find_map(|l| match l {
            LayerSpec::Gemm(g) => self.tensors.get(&g.weight).map(|w| w.shape()[0]),
            LayerSpec::AttentionBlock(a) => self.tensors.get(&a.q_proj.weight).map(|w| w.shape()[0]),
            _ => None,
        })
    }
}

fn check_bias(m: &ModelContainer, bias: Option<&str>, out: usize) -> Result<()> {
    if let Some(b) = bias {
        let len = m.tensor(b)?.len();
        if len != out {
            return Err(Error::Shape(format!("bias `{b}` has {len} entries, expected {out}")));
        }
    }
    Ok(())
}
