//! Model container, graph execution, the PTQ pipeline and the toy models.
//!
//! Graphs are single-path: layer `i` consumes activation `i` (activation `0`
//! is the input) and produces activation `i + 1`. Residual adds reach back to
//! an earlier activation by index.

mod container;
mod encoder;
mod exec;
mod graph;
mod mlp;
mod ptq;

pub use container::{from_bytes, load_model, save_model, to_bytes, write_atomic, FORMAT_VERSION, MAGIC};
pub use encoder::{build_toy_encoder, encoder_input, EncoderDims, OutlierSpec, DEFAULT_OUTLIER_TARGETS};
pub use exec::{as_rows, run, run_rows, sequences, Mode, Operand, Site};
pub use graph::{
    AttentionQuant, AttentionSpec, GemmQuant, GemmSpec, InternalQuant, LayerNormSpec, LayerSpec, ModelContainer,
    Projection, LAYER_KINDS,
};
pub use mlp::{loss, loss_and_grad, train_toy_mlp, MlpParams, TrainConfig};
pub use ptq::{attach_params, calibrate, ptq, CalibrationRecord, PtqConfig, WeightGranularity, WEIGHT_CHANNEL_AXIS};

use crate::data::ClassificationSet;
use crate::error::{Error, Result};

/// Fraction of rows whose argmax output matches the label.
pub fn accuracy(m: &ModelContainer, set: &ClassificationSet, mode: Mode) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::DegenerateDataset("no samples".into()));
    }
    let logits = run_rows(m, &set.x, mode)?;
    let (rows, classes) = logits.dims2()?;
    if rows != set.len() {
        return Err(Error::Shape(format!("{rows} outputs for {} labels", set.len())));
    }
    let correct = logits
        .data()
        .chunks_exact(classes)
        .zip(&set.labels)
        .filter(|(row, &label)| argmax(row) == label)
        .count();
    Ok(correct as f64 / rows as f64)
}

/// Index of the first maximum.
fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
