use std::fmt;
use std::str::FromStr;

use super::graph::{AttentionSpec, GemmQuant, LayerSpec, ModelContainer};
use crate::error::{Error, Result};
use crate::quant::{fake_quant, QuantParams};
use crate::tensor::{self, gemm, transpose2d, Tensor};

/// Execution mode of [`run`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Plain FP32 forward pass.
    Fp32,
    /// GEMM operands fake-quantized with the attached static parameters,
    /// nonlinear operators through BF16, accumulation in FP32.
    QuantSim,
}

/// Which matmul operand an activation feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Operand {
    /// Activation input of a plain GEMM layer.
    Input,
    QProj,
    KProj,
    VProj,
    OutProj,
    /// Left operand of `Q·Kᵀ`.
    Query,
    /// Right operand of `Q·Kᵀ`.
    Key,
    /// Right operand of `P·V`.
    Value,
    /// Left operand of `P·V` (the softmax output).
    Probs,
}

impl Operand {
    const ALL: [Operand; 9] = [
        Operand::Input,
        Operand::QProj,
        Operand::KProj,
        Operand::VProj,
        Operand::OutProj,
        Operand::Query,
        Operand::Key,
        Operand::Value,
        Operand::Probs,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Operand::Input => "input",
            Operand::QProj => "q_proj",
            Operand::KProj => "k_proj",
            Operand::VProj => "v_proj",
            Operand::OutProj => "out_proj",
            Operand::Query => "query",
            Operand::Key => "key",
            Operand::Value => "value",
            Operand::Probs => "probs",
        }
    }
}

/// A calibration point: one activation operand of one layer. Displays as
/// `"<layer>.<operand>"`, e.g. `"3.input"` or `"0.probs"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Site {
    pub layer: usize,
    pub operand: Operand,
}

impl Site {
    pub fn new(layer: usize, operand: Operand) -> Self {
        Self { layer, operand }
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.layer, self.operand.name())
    }
}

impl FromStr for Site {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parameter(format!("bad calibration site `{s}`"));
        let (layer, op) = s.split_once('.').ok_or_else(bad)?;
        let layer = layer.parse().map_err(|_| bad())?;
        let operand = Operand::ALL.into_iter().find(|o| o.name() == op).ok_or_else(bad)?;
        Ok(Site { layer, operand })
    }
}

/// Runs the graph on a `[rows, width]` input.
pub fn run(m: &ModelContainer, input: &Tensor, mode: Mode) -> Result<Tensor> {
    execute(m, input, mode, &mut |_, _| Ok(()))
}

/// Forward pass that reports every matmul activation operand to `observe`
/// before it is (optionally) fake-quantized.
pub(crate) fn execute(
    m: &ModelContainer,
    input: &Tensor,
    mode: Mode,
    observe: &mut dyn FnMut(Site, &Tensor) -> Result<()>,
) -> Result<Tensor> {
    input.dims2()?;
    let mut acts: Vec<Tensor> = vec![input.clone()];
    for (i, layer) in m.graph.iter().enumerate() {
        let x = &acts[i];
        let y = match layer {
            LayerSpec::Gemm(g) => {
                let quant = match mode {
                    Mode::Fp32 => None,
                    Mode::QuantSim => Some(g.quant.as_ref().ok_or_else(|| missing_quant(i))?),
                };
                observe(Site::new(i, Operand::Input), x)?;
                linear(m, x, &g.weight, g.bias.as_deref(), quant)?
            }
            LayerSpec::Softmax => {
                let axis = x.rank() - 1;
                match mode {
                    Mode::Fp32 => tensor::softmax(x, axis)?,
                    Mode::QuantSim => tensor::softmax_bf16(x, axis)?,
                }
            }
            LayerSpec::Gelu => match mode {
                Mode::Fp32 => tensor::gelu(x),
                Mode::QuantSim => tensor::gelu_bf16(x),
            },
            LayerSpec::LayerNorm(ln) => {
                let (gamma, beta) = (m.tensor(&ln.gamma)?, m.tensor(&ln.beta)?);
                let axis = x.rank() - 1;
                match mode {
                    Mode::Fp32 => tensor::layernorm(x, gamma, beta, axis, ln.epsilon)?,
                    Mode::QuantSim => tensor::layernorm_bf16(x, gamma, beta, axis, ln.epsilon)?,
                }
            }
            LayerSpec::ResidualAdd { from } => {
                let skip = acts.get(*from).filter(|_| *from < i).ok_or_else(|| {
                    Error::Header(format!("layer {i}: residual source {from} is not an earlier activation"))
                })?;
                x.add(skip)?
            }
            LayerSpec::AttentionBlock(a) => attention(m, a, x, mode, i, observe)?,
        };
        acts.push(y);
    }
    Ok(acts.pop().expect("input is always present"))
}

fn missing_quant(layer: usize) -> Error {
    Error::Parameter(format!("layer {layer}: no quantization parameters for QUANT_SIM"))
}

fn fq(t: &Tensor, params: Option<&QuantParams>) -> Result<Tensor> {
    match params {
        Some(p) => fake_quant(t, p),
        None => Ok(t.clone()),
    }
}

fn linear(
    m: &ModelContainer,
    x: &Tensor,
    weight: &str,
    bias: Option<&str>,
    quant: Option<&GemmQuant>,
) -> Result<Tensor> {
    let w = m.tensor(weight)?;
    let b = bias.map(|b| m.tensor(b)).transpose()?;
    match quant {
        None => gemm(x, w, b),
        Some(q) => gemm(&fake_quant(x, &q.activation_params)?, &fake_quant(w, &q.weight_params)?, b),
    }
}

fn attention(
    m: &ModelContainer,
    spec: &AttentionSpec,
    x: &Tensor,
    mode: Mode,
    layer: usize,
    observe: &mut dyn FnMut(Site, &Tensor) -> Result<()>,
) -> Result<Tensor> {
    let quant = match mode {
        Mode::Fp32 => None,
        Mode::QuantSim => Some(spec.quant.as_ref().ok_or_else(|| missing_quant(layer))?),
    };
    let internal = quant.and_then(|q| q.internal.as_ref());

    observe(Site::new(layer, Operand::QProj), x)?;
    observe(Site::new(layer, Operand::KProj), x)?;
    observe(Site::new(layer, Operand::VProj), x)?;
    let q = linear(m, x, &spec.q_proj.weight, spec.q_proj.bias.as_deref(), quant.map(|q| &q.q_proj))?;
    let k = linear(m, x, &spec.k_proj.weight, spec.k_proj.bias.as_deref(), quant.map(|q| &q.k_proj))?;
    let v = linear(m, x, &spec.v_proj.weight, spec.v_proj.bias.as_deref(), quant.map(|q| &q.v_proj))?;

    observe(Site::new(layer, Operand::Query), &q)?;
    observe(Site::new(layer, Operand::Key), &k)?;
    observe(Site::new(layer, Operand::Value), &v)?;
    let q = fq(&q, internal.map(|p| &p.query))?;
    let k = fq(&k, internal.map(|p| &p.key))?;
    let v = fq(&v, internal.map(|p| &p.value))?;

    let (_, width) = q.dims2()?;
    let head_dim = width / spec.heads;
    let score_scale = 1.0 / (head_dim as f32).sqrt();
    let mut contexts = Vec::with_capacity(spec.heads);
    for h in 0..spec.heads {
        let qh = q.columns(h * head_dim, head_dim)?;
        let kh = k.columns(h * head_dim, head_dim)?;
        let vh = v.columns(h * head_dim, head_dim)?;
        let scores = gemm(&qh, &transpose2d(&kh)?, None)?.map(|s| s * score_scale);
        let probs = match mode {
            Mode::Fp32 => tensor::softmax(&scores, 1)?,
            Mode::QuantSim => tensor::softmax_bf16(&scores, 1)?,
        };
        observe(Site::new(layer, Operand::Probs), &probs)?;
        let probs = fq(&probs, internal.map(|p| &p.probs))?;
        contexts.push(gemm(&probs, &vh, None)?);
    }
    let context = Tensor::hconcat(&contexts)?;

    observe(Site::new(layer, Operand::OutProj), &context)?;
    linear(m, &context, &spec.out_proj.weight, spec.out_proj.bias.as_deref(), quant.map(|q| &q.out_proj))
}

/// Splits dataset inputs into the batches the model consumes.
///
/// A rank-1 `x` is viewed as rows of the model's input width. When the
/// metadata carries `seq_len`, rows are grouped into consecutive sequences
/// of that length (the last one may be shorter); otherwise all rows form a
/// single batch.
pub fn sequences(m: &ModelContainer, x: &Tensor) -> Result<Vec<Tensor>> {
    let x = as_rows(m, x)?;
    let Some(seq_len) = m.metadata.get("seq_len").and_then(|s| s.parse::<usize>().ok()).filter(|&s| s > 0)
    else {
        return Ok(vec![x]);
    };
    let (rows, _) = x.dims2()?;
    let mut out = Vec::with_capacity(rows.div_ceil(seq_len));
    let mut start = 0;
    while start < rows {
        let count = seq_len.min(rows - start);
        out.push(x.rows(start, count)?);
        start += count;
    }
    Ok(out)
}

/// Runs every batch from [`sequences`] and stacks the outputs.
pub fn run_rows(m: &ModelContainer, x: &Tensor, mode: Mode) -> Result<Tensor> {
    let outs = sequences(m, x)?
        .iter()
        .map(|batch| run(m, batch, mode))
        .collect::<Result<Vec<_>>>()?;
    Tensor::vconcat(&outs)
}

/// Rank-2 view of dataset inputs, splitting rank-1 data into rows of the
/// model's input width.
pub fn as_rows(m: &ModelContainer, x: &Tensor) -> Result<Tensor> {
    match x.rank() {
        2 => Ok(x.clone()),
        1 => {
            let width = m
                .input_width()
                .ok_or_else(|| Error::Parameter("cannot infer the model input width".into()))?;
            if !x.len().is_multiple_of(width) {
                return Err(Error::Shape(format!(
                    "{} values do not form rows of width {width}",
                    x.len()
                )));
            }
            x.clone().reshape(vec![x.len() / width, width])
        }
        r => Err(Error::Shape(format!("expected rank 1 or 2 data, got rank {r}"))),
    }
}
