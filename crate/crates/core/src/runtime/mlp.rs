//! Two-layer GELU classifier trained by full-batch gradient descent with
//! hand-written backpropagation. Training runs in f64; the exported
//! container holds f32 weights.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::exec::Mode;
use super::graph::{GemmSpec, LayerSpec, ModelContainer};
use super::accuracy;
use crate::data::ClassificationSet;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub hidden: usize,
    /// Fraction of samples, taken from the end of the set, held out.
    pub test_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 1000, lr: 0.5, seed: 0, hidden: 32, test_fraction: 0.2 }
    }
}

/// Row-major parameters: `w1[features × hidden]`, `w2[hidden × classes]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub features: usize,
    pub hidden: usize,
    pub classes: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl MlpParams {
    /// Gaussian weights with std `1/sqrt(fan_in)`, zero biases.
    pub fn init(features: usize, hidden: usize, classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize, fan_in: usize| -> Vec<f64> {
            let std = 1.0 / (fan_in as f64).sqrt();
            (0..n)
                .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                std * z
            }).collect()
        };
        let w1 = draw(features * hidden, features);
        let w2 = draw(hidden * classes, hidden);
        Self { features, hidden, classes, w1, b1: vec![0.0; hidden], w2, b2: vec![0.0; classes] }
    }

    fn zeros_like(&self) -> Self {
        Self {
            w1: vec![0.0; self.w1.len()],
            b1: vec![0.0; self.b1.len()],
            w2: vec![0.0; self.w2.len()],
            b2: vec![0.0; self.b2.len()],
            ..*self
        }
    }

    /// The four parameter buffers in `w1, b1, w2, b2` order.
    pub fn buffers_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn buffers(&self) -> [&Vec<f64>; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn to_container(&self) -> Result<ModelContainer> {
        let f32s = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
        let mut m = ModelContainer::new();
        m.tensors.insert("fc1.w".into(), Tensor::new(vec![self.features, self.hidden], f32s(&self.w1))?);
        m.tensors.insert("fc1.b".into(), Tensor::new(vec![self.hidden], f32s(&self.b1))?);
        m.tensors.insert("fc2.w".into(), Tensor::new(vec![self.hidden, self.classes], f32s(&self.w2))?);
        m.tensors.insert("fc2.b".into(), Tensor::new(vec![self.classes], f32s(&self.b2))?);
        let gemm = |n: &str| {
            LayerSpec::Gemm(GemmSpec { weight: format!("{n}.w"), bias: Some(format!("{n}.b")), quant: None })
        };
        m.graph = vec![gemm("fc1"), LayerSpec::Gelu, gemm("fc2")];
        m.metadata.insert("model".into(), "mlp".into());
        m.metadata.insert("input_width".into(), self.features.to_string());
        Ok(m)
    }
}

fn phi(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

fn cdf(z: f64) -> f64 {
    0.5 * (1.0 + libm::erf(z * FRAC_1_SQRT_2))
}

struct Forward {
    pre: Vec<f64>,
    act: Vec<f64>,
    probs: Vec<f64>,
    loss: f64,
}

fn forward(p: &MlpParams, x: &[f64], labels: &[usize]) -> Forward {
    let n = labels.len();
    let (f, h, c) = (p.features, p.hidden, p.classes);
    let mut pre = vec![0.0; n * h];
    for i in 0..n {
        for j in 0..h {
            let mut s = p.b1[j];
            for k in 0..f {
                s += x[i * f + k] * p.w1[k * h + j];
            }
            pre[i * h + j] = s;
        }
    }
    let act: Vec<f64> = pre.iter().map(|&z| z * cdf(z)).collect();
    let mut probs = vec![0.0; n * c];
    let mut loss = 0.0;
    for i in 0..n {
        let row = &mut probs[i * c..(i + 1) * c];
        for (j, out) in row.iter_mut().enumerate() {
            let mut s = p.b2[j];
            for k in 0..h {
                s += act[i * h + k] * p.w2[k * c + j];
            }
            *out = s;
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&z| (z - max).exp()).sum();
        loss += max + sum.ln() - row[labels[i]];
        for z in row.iter_mut() {
            *z = (*z - max).exp() / sum;
        }
    }
    Forward { pre, act, probs, loss: loss / n as f64 }
}

/// Mean softmax cross-entropy of `p` on row-major inputs `x`.
pub fn loss(p: &MlpParams, x: &[f64], labels: &[usize]) -> f64 {
    forward(p, x, labels).loss
}

/// Mean cross-entropy and its gradient with respect to every parameter.
pub fn loss_and_grad(p: &MlpParams, x: &[f64], labels: &[usize]) -> (f64, MlpParams) {
    let n = labels.len();
    let (f, h, c) = (p.features, p.hidden, p.classes);
    let fw = forward(p, x, labels);
    let mut g = p.zeros_like();

    let mut dz = fw.probs;
    for i in 0..n {
        dz[i * c + labels[i]] -= 1.0;
    }
    dz.iter_mut().for_each(|v| *v /= n as f64);

    let mut dpre = vec![0.0; n * h];
    for i in 0..n {
        for j in 0..c {
            let d = dz[i * c + j];
            g.b2[j] += d;
            for k in 0..h {
                g.w2[k * c + j] += fw.act[i * h + k] * d;
                dpre[i * h + k] += p.w2[k * c + j] * d;
            }
        }
    }
    for (d, &z) in dpre.iter_mut().zip(&fw.pre) {
        *d *= cdf(z) + z * phi(z);
    }
    for i in 0..n {
        for j in 0..h {
            let d = dpre[i * h + j];
            g.b1[j] += d;
            for k in 0..f {
                g.w1[k * h + j] += x[i * f + k] * d;
            }
        }
    }
    (fw.loss, g)
}

/// Trains on the leading `1 - test_fraction` of `set` and records train and
/// test accuracy (FP32 execution of the exported container) in metadata.
pub fn train_toy_mlp(set: &ClassificationSet, config: &TrainConfig) -> Result<ModelContainer> {
    if !(config.lr.is_finite() && config.lr > 0.0) {
        return Err(Error::Parameter(format!("learning rate {} must be positive", config.lr)));
    }
    if config.hidden == 0 {
        return Err(Error::Parameter("hidden width must be positive".into()));
    }
    let mut present = set.labels.clone();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(Error::DegenerateDataset(format!("{} distinct class(es)", present.len())));
    }
    let (train, test) = set.split(config.test_fraction)?;
    let x: Vec<f64> = train.x.data().iter().map(|&v| v as f64).collect();
    let mut p = MlpParams::init(set.features(), config.hidden, set.num_classes(), config.seed);
    for epoch in 0..config.epochs {
        let (l, g) = loss_and_grad(&p, &x, &train.labels);
        if !l.is_finite() {
            return Err(Error::NonFinite(format!("training loss diverged at epoch {epoch}")));
        }
        for (w, dw) in p.buffers_mut().into_iter().zip(g.buffers()) {
            w.iter_mut().zip(dw).for_each(|(w, d)| *w -= config.lr * d);
        }
    }
    let final_loss = loss(&p, &x, &train.labels);
    if !final_loss.is_finite() {
        return Err(Error::NonFinite(format!("training loss {final_loss} after {} epochs", config.epochs)));
    }

    let mut m = p.to_container()?;
    let meta: BTreeMap<&str, String> = [
        ("seed", config.seed.to_string()),
        ("epochs", config.epochs.to_string()),
        ("lr", config.lr.to_string()),
        ("hidden", config.hidden.to_string()),
        ("train_samples", train.len().to_string()),
        ("test_samples", test.len().to_string()),
        ("final_loss", final_loss.to_string()),
        ("train_accuracy", accuracy(&m, &train, Mode::Fp32)?.to_string()),
        ("test_accuracy", accuracy(&m, &test, Mode::Fp32)?.to_string()),
    ]
    .into();
    m.metadata.extend(meta.into_iter().map(|(k, v)| (k.to_string(), v)));
    Ok(m)
}
