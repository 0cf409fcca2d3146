//! Static post-training quantization: observe activation ranges on
//! calibration batches, derive symmetric scales, attach them to the graph.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::exec::{execute, Mode, Operand, Site};
use super::graph::{AttentionQuant, GemmQuant, InternalQuant, LayerSpec, ModelContainer};
use crate::error::{Error, Result};
use crate::quant::{per_channel_params, scale_from_range, CalibRange, QuantParams, QuantTarget};
use crate::tensor::Tensor;

/// Output-feature axis of a `[in, out]` GEMM weight.
pub const WEIGHT_CHANNEL_AXIS: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightGranularity {
    PerChannel,
    PerTensor,
}

impl WeightGranularity {
    pub fn name(&self) -> &'static str {
        match self {
            WeightGranularity::PerChannel => "per-channel",
            WeightGranularity::PerTensor => "per-tensor",
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "per-channel" => Some(WeightGranularity::PerChannel),
            "per-tensor" => Some(WeightGranularity::PerTensor),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PtqConfig {
    pub target: QuantTarget,
    pub weights: WeightGranularity,
    /// Also quantize the operands of `Q·Kᵀ` and `P·V` inside attention.
    pub attention_internals: bool,
}

impl PtqConfig {
    pub fn new(target: QuantTarget) -> Self {
        Self { target, weights: WeightGranularity::PerChannel, attention_internals: true }
    }
}

/// Observed min/max per calibration site, keyed by the site's display form.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub ranges: BTreeMap<String, CalibRange>,
}

impl CalibrationRecord {
    pub fn range(&self, site: Site) -> Result<&CalibRange> {
        self.ranges
            .get(&site.to_string())
            .filter(|r| !r.is_empty())
            .ok_or(Error::NoCalibrationData)
    }

    /// Checks that every stored range is well formed and names a valid site,
    /// e.g. after deserialization.
    pub fn validate(&self) -> Result<()> {
        for (key, r) in &self.ranges {
            key.parse::<Site>()?;
            CalibRange::from_parts(r.alpha(), r.beta(), r.count())?;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &CalibrationRecord) {
        for (k, r) in &other.ranges {
            let merged = self.ranges.get(k).map_or(*r, |cur| cur.merge(r));
            self.ranges.insert(k.clone(), merged);
        }
    }
}

/// Runs every batch through the FP32 graph, recording the range of each
/// matmul activation operand.
pub fn calibrate(m: &ModelContainer, batches: &[Tensor]) -> Result<CalibrationRecord> {
    if batches.is_empty() {
        return Err(Error::NoCalibrationData);
    }
    let mut record = CalibrationRecord::default();
    for batch in batches {
        execute(m, batch, Mode::Fp32, &mut |site, t| {
            let key = site.to_string();
            let cur = record.ranges.get(&key).copied().unwrap_or_else(CalibRange::empty);
            let next = cur.observe(t).map_err(|_| {
                Error::Calibration(format!(
                    "non-finite activation at layer {} ({}, {})",
                    site.layer,
                    m.graph[site.layer].kind(),
                    site.operand.name()
                ))
            })?;
            record.ranges.insert(key, next);
            Ok(())
        })?;
    }
    Ok(record)
}

fn weight_params(m: &ModelContainer, name: &str, config: &PtqConfig) -> Result<QuantParams> {
    let w = m.tensor(name)?;
    match config.weights {
        WeightGranularity::PerChannel => per_channel_params(w, WEIGHT_CHANNEL_AXIS, config.target),
        WeightGranularity::PerTensor => scale_from_range(&CalibRange::empty().observe(w)?, config.target),
    }
}

fn gemm_quant(
    m: &ModelContainer,
    record: &CalibrationRecord,
    config: &PtqConfig,
    weight: &str,
    site: Site,
) -> Result<GemmQuant> {
    Ok(GemmQuant {
        weight_params: weight_params(m, weight, config)?,
        activation_params: scale_from_range(record.range(site)?, config.target)?,
    })
}

/// Returns a copy of `m` with static parameters attached to every GEMM.
/// Tensor payloads are left untouched.
pub fn attach_params(m: &ModelContainer, record: &CalibrationRecord, config: &PtqConfig) -> Result<ModelContainer> {
    let mut out = m.without_quant();
    for (i, layer) in out.graph.iter_mut().enumerate() {
        let site = |operand| Site::new(i, operand);
        match layer {
            LayerSpec::Gemm(g) => {
                g.quant = Some(gemm_quant(m, record, config, &g.weight, site(Operand::Input))?);
            }
            LayerSpec::AttentionBlock(a) => {
                let act = |operand| -> Result<QuantParams> {
                    scale_from_range(record.range(site(operand))?, config.target)
                };
                let internal = if config.attention_internals {
                    Some(InternalQuant {
                        query: act(Operand::Query)?,
                        key: act(Operand::Key)?,
                        value: act(Operand::Value)?,
                        probs: act(Operand::Probs)?,
                    })
                } else {
                    None
                };
                a.quant = Some(AttentionQuant {
                    q_proj: gemm_quant(m, record, config, &a.q_proj.weight, site(Operand::QProj))?,
                    k_proj: gemm_quant(m, record, config, &a.k_proj.weight, site(Operand::KProj))?,
                    v_proj: gemm_quant(m, record, config, &a.v_proj.weight, site(Operand::VProj))?,
                    out_proj: gemm_quant(m, record, config, &a.out_proj.weight, site(Operand::OutProj))?,
                    internal,
                });
            }
            _ => {}
        }
    }
    out.metadata.insert("quant.target".into(), config.target.name().into());
    out.metadata.insert("quant.weights".into(), config.weights.name().into());
    out.metadata.insert("quant.attention_internal".into(), config.attention_internals.to_string());
    Ok(out)
}

/// Calibrate on `batches`, then attach parameters.
pub fn ptq(m: &ModelContainer, batches: &[Tensor], config: &PtqConfig) -> Result<ModelContainer> {
    let record = calibrate(m, batches)?;
    attach_params(m, &record, config)
}
