use std::collections::BTreeMap;
use std::path::Path;

use fp8_ptq::data::{self, ClassificationSet, DataKind, GenConfig};
use fp8_ptq::fp8::{bf16_bits, encode_nearest};
use fp8_ptq::runtime::{
    accuracy, attach_params, build_toy_encoder, calibrate as calibrate_model, load_model, run_rows, save_model,
    sequences, train_toy_mlp, write_atomic, CalibrationRecord, EncoderDims, Mode, ModelContainer, OutlierSpec,
    PtqConfig, TrainConfig, WeightGranularity, MAGIC,
};
use fp8_ptq::tensor::metrics;
use fp8_ptq::{round_to_bf16, QuantTarget, Tensor, E4M3, E5M2};
use serde_json::json;

use crate::report::{Provenance, Report, Row};
use crate::{
    BuildEncoderArgs, CalibrateArgs, CastArgs, CastFormat, CliError, CompareArgs, EvalArgs, Format, GenDataArgs, Kind,
    QuantOptions, QuantizeArgs, TrainToyArgs, Weights,
};

type Result<T> = std::result::Result<T, CliError>;

fn target(format: Format) -> Option<QuantTarget> {
    match format {
        Format::Fp32 => None,
        Format::Int8 => Some(QuantTarget::Int8),
        Format::E4m3 => Some(QuantTarget::E4M3),
        Format::E5m2 => Some(QuantTarget::E5M2),
    }
}

fn format_name(format: Format) -> &'static str {
    target(format).map_or("fp32", |t| t.name())
}

fn ptq_config(target: QuantTarget, opts: &QuantOptions) -> PtqConfig {
    PtqConfig {
        target,
        weights: match opts.weights {
            Weights::PerChannel => WeightGranularity::PerChannel,
            Weights::PerTensor => WeightGranularity::PerTensor,
        },
        attention_internals: opts.quant_attn_internal,
    }
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

pub fn gen_data(a: &GenDataArgs) -> Result<()> {
    if a.n == 0 {
        return Err(CliError::Usage("--n must be positive".into()));
    }
    if !(0.0..=1.0).contains(&a.outlier_frac) {
        return Err(CliError::Usage(format!("--outlier-frac {} is not in [0, 1]", a.outlier_frac)));
    }
    let kind = match a.kind {
        Kind::GaussOutliers => DataKind::GaussOutliers,
        Kind::TwoMoons => DataKind::TwoMoons,
        Kind::Clusters => DataKind::Clusters,
    };
    let config = GenConfig { kind, n: a.n, seed: a.seed, outlier_frac: a.outlier_frac, outlier_mag: a.outlier_mag };
    let c = data::generate(&config)?;
    save_model(&c, &a.out)?;
    println!("wrote {} ({} samples of {})", display(&a.out), a.n, kind.name());
    Ok(())
}

fn labeled(c: &ModelContainer, path: &Path) -> Result<ClassificationSet> {
    if !c.tensors.contains_key("y") {
        return Err(CliError::Lib(fp8_ptq::Error::Parameter(format!(
            "{} has no labels; use a two_moons or clusters dataset",
            display(path)
        ))));
    }
    Ok(ClassificationSet::from_container(c)?)
}

pub fn train_toy(a: &TrainToyArgs) -> Result<()> {
    if !(a.lr.is_finite() && a.lr > 0.0) {
        return Err(CliError::Usage(format!("--lr {} must be positive", a.lr)));
    }
    let dataset = load_model(&a.data)?;
    let set = labeled(&dataset, &a.data)?;
    let config = TrainConfig { epochs: a.epochs, lr: a.lr, seed: a.seed, ..TrainConfig::default() };
    let mut m = train_toy_mlp(&set, &config)?;
    if let Some(seed) = dataset.metadata.get("seed") {
        m.metadata.insert("data_seed".into(), seed.clone());
    }
    save_model(&m, &a.out)?;
    println!(
        "wrote {}: train accuracy {}, test accuracy {}",
        display(&a.out),
        m.metadata["train_accuracy"],
        m.metadata["test_accuracy"]
    );
    Ok(())
}

pub fn build_encoder(a: &BuildEncoderArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&a.outlier_frac) {
        return Err(CliError::Usage(format!("--outlier-frac {} is not in [0, 1]", a.outlier_frac)));
    }
    let spec = OutlierSpec { fraction: a.outlier_frac, magnitude: a.outlier_mag, ..OutlierSpec::default() };
    let m = build_toy_encoder(a.seed, EncoderDims::default(), &spec)?;
    save_model(&m, &a.out)?;
    println!("wrote {} ({} injected outliers)", display(&a.out), m.metadata["outliers"]);
    Ok(())
}

/// The FP32 model: quantization annotations, if any, are dropped.
fn load_base(path: &Path) -> Result<ModelContainer> {
    Ok(load_model(path)?.without_quant())
}

fn inputs(data: &ModelContainer) -> Result<&Tensor> {
    Ok(data.tensor("x")?)
}

fn record_from_data(model: &ModelContainer, data: &ModelContainer) -> Result<CalibrationRecord> {
    Ok(calibrate_model(model, &sequences(model, inputs(data)?)?)?)
}

/// Calibration source: a dataset container (detected by its magic bytes)
/// or a JSON range file.
fn load_record(model: &ModelContainer, path: &Path) -> Result<(CalibrationRecord, Option<String>)> {
    let bytes = std::fs::read(path).map_err(fp8_ptq::Error::from)?;
    if bytes.starts_with(MAGIC) {
        let data = fp8_ptq::runtime::from_bytes(&bytes)?;
        let seed = data.metadata.get("seed").cloned();
        return Ok((record_from_data(model, &data)?, seed));
    }
    let record: CalibrationRecord = serde_json::from_slice(&bytes)?;
    record.validate()?;
    Ok((record, None))
}

pub fn calibrate(a: &CalibrateArgs) -> Result<()> {
    let model = load_base(&a.model)?;
    let data = load_model(&a.calib)?;
    let record = record_from_data(&model, &data)?;
    let mut out = serde_json::to_vec_pretty(&record)?;
    out.push(b'\n');
    write_atomic(&a.out, &out)?;
    println!("wrote {} ({} calibration sites)", display(&a.out), record.ranges.len());
    Ok(())
}

pub fn quantize(a: &QuantizeArgs) -> Result<()> {
    let target = target(a.format).ok_or_else(|| CliError::Usage("--format fp32 is not a quantization target".into()))?;
    let model = load_base(&a.model)?;
    let (record, _) = load_record(&model, &a.calib)?;
    let q = attach_params(&model, &record, &ptq_config(target, &a.quant))?;
    save_model(&q, &a.out)?;
    println!("wrote {} ({} {})", display(&a.out), target.name(), a.quant.weights_name());
    Ok(())
}

impl QuantOptions {
    fn weights_name(&self) -> &'static str {
        match self.weights {
            Weights::PerChannel => "per-channel",
            Weights::PerTensor => "per-tensor",
        }
    }
}

/// Labels if the dataset has them.
fn optional_labels(data: &ModelContainer, model: &ModelContainer, x: &Tensor) -> Result<Option<ClassificationSet>> {
    if !data.tensors.contains_key("y") {
        return Ok(None);
    }
    let labels = ClassificationSet::from_container(data)?.labels;
    let rows = fp8_ptq::runtime::as_rows(model, x)?;
    Ok(Some(ClassificationSet::new(rows, labels)?))
}

fn row(
    model: &ModelContainer,
    mode: Mode,
    format: &str,
    granularity: &str,
    x: &Tensor,
    reference: &Tensor,
    labels: Option<&ClassificationSet>,
) -> Result<Row> {
    let out = run_rows(model, x, mode)?;
    if !out.all_finite() {
        return Err(fp8_ptq::Error::NonFinite(format!("{format} output")).into());
    }
    let m = metrics(reference, &out)?;
    let acc = labels.map(|set| accuracy(model, set, mode)).transpose()?;
    let mode_label = match mode {
        Mode::Fp32 => "FP32",
        Mode::QuantSim => "QUANT_SIM",
    };
    Ok(Row::new(mode_label, format, granularity, &m, acc))
}

fn seeds(model: &ModelContainer, data: &ModelContainer) -> BTreeMap<String, String> {
    let mut seeds = BTreeMap::new();
    if let Some(s) = model.metadata.get("seed") {
        seeds.insert("model".into(), s.clone());
    }
    if let Some(s) = data.metadata.get("seed") {
        seeds.insert("data".into(), s.clone());
    }
    seeds
}

fn fp32_reference(base: &ModelContainer, x: &Tensor) -> Result<Tensor> {
    let reference = run_rows(base, x, Mode::Fp32)?;
    if !reference.all_finite() {
        return Err(fp8_ptq::Error::NonFinite("FP32 reference output".into()).into());
    }
    Ok(reference)
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let data = load_model(&a.data)?;
    let x = inputs(&data)?;
    let base = model.without_quant();
    let reference = fp32_reference(&base, x)?;
    let labels = optional_labels(&data, &model, x)?;
    let r = if model.is_quantized() {
        let format = model.metadata.get("quant.target").map_or("unknown", String::as_str).to_string();
        let gran = model.metadata.get("quant.weights").map_or("unknown", String::as_str).to_string();
        row(&model, Mode::QuantSim, &format, &gran, x, &reference, labels.as_ref())?
    } else {
        row(&model, Mode::Fp32, "fp32", "none", x, &reference, labels.as_ref())?
    };
    println!(
        "{} {} {}: mse {} sqnr_db {} cosine {} max_abs_err {} accuracy {}",
        r.mode,
        r.format,
        r.granularity,
        r.mse.text(),
        r.sqnr_db.text(),
        r.cosine.text(),
        r.max_abs_err.text(),
        r.accuracy.text()
    );
    if let Some(path) = &a.report {
        let mut provenance = Provenance::new("eval");
        provenance.seeds = seeds(&model, &data);
        provenance.config.insert("model".into(), json!(display(&a.model)));
        provenance.config.insert("data".into(), json!(display(&a.data)));
        let csv = Report { runs: vec![r], provenance }.write(path)?;
        println!("wrote {} and {}", display(path), display(&csv));
    }
    Ok(())
}

pub fn compare(a: &CompareArgs) -> Result<()> {
    let base = load_base(&a.model)?;
    let data = load_model(&a.data)?;
    let x = inputs(&data)?;
    let reference = fp32_reference(&base, x)?;
    let labels = optional_labels(&data, &base, x)?;
    let needs_calibration = a.formats.iter().any(|&f| f != Format::Fp32);
    let (record, calib_seed) = if needs_calibration {
        let (r, s) = load_record(&base, &a.calib)?;
        (Some(r), s)
    } else {
        (None, None)
    };

    let mut runs = Vec::with_capacity(a.formats.len());
    for &format in &a.formats {
        let r = match (target(format), &record) {
            (Some(t), Some(record)) => {
                let q = attach_params(&base, record, &ptq_config(t, &a.quant))?;
                row(&q, Mode::QuantSim, t.name(), a.quant.weights_name(), x, &reference, labels.as_ref())?
            }
            _ => row(&base, Mode::Fp32, "fp32", "none", x, &reference, labels.as_ref())?,
        };
        println!(
            "{:<9} {:<5} mse {:<24} cosine {:<20} accuracy {}",
            r.mode,
            r.format,
            r.mse.text(),
            r.cosine.text(),
            r.accuracy.text()
        );
        runs.push(r);
    }

    let mut provenance = Provenance::new("compare");
    provenance.seeds = seeds(&base, &data);
    if let Some(s) = calib_seed {
        provenance.seeds.insert("calib".into(), s);
    }
    let formats: Vec<&str> = a.formats.iter().map(|&f| format_name(f)).collect();
    provenance.config.insert("model".into(), json!(display(&a.model)));
    provenance.config.insert("calib".into(), json!(display(&a.calib)));
    provenance.config.insert("data".into(), json!(display(&a.data)));
    provenance.config.insert("formats".into(), json!(formats));
    provenance.config.insert("weights".into(), json!(a.quant.weights_name()));
    provenance.config.insert("quant_attn_internal".into(), json!(a.quant.quant_attn_internal));
    let csv = Report { runs, provenance }.write(&a.report)?;
    println!("wrote {} and {}", display(&a.report), display(&csv));
    Ok(())
}

pub fn cast(a: &CastArgs) -> Result<()> {
    let value: f32 = a
        .value
        .trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("cannot parse `{}` as a number", a.value)))?;
    match a.format {
        CastFormat::E4m3 | CastFormat::E5m2 => {
            let f = if a.format == CastFormat::E4m3 { E4M3 } else { E5M2 };
            let code = encode_nearest(value, f);
            println!("0x{:02X} {:?}", code.bits, code.decode());
        }
        CastFormat::Bf16 => println!("0x{:04X} {:?}", bf16_bits(value), round_to_bf16(value)),
    }
    Ok(())
}
