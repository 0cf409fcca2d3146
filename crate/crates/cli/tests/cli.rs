use std::path::Path;
use std::process::{Command, Output};

use fp8_ptq::runtime::{save_model, GemmSpec, LayerSpec, ModelContainer};
use fp8_ptq::Tensor;

fn fp8ptq(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fp8ptq")).current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = fp8ptq(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    fp8ptq(dir, args).status.code().unwrap()
}

#[test]
fn cast_prints_code_and_value() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        (["1.0", "e4m3"], "0x38 1.0"),
        (["17.0", "e4m3"], "0x58 16.0"),
        (["1000", "e4m3"], "0x7E 448.0"),
        (["0.017", "e4m3"], "0x09 0.017578125"),
        (["-0.0", "e4m3"], "0x80 -0.0"),
        (["-17", "e4m3"], "0xD8 -16.0"),
        (["60000", "e5m2"], "0x7B 57344.0"),
        (["inf", "e5m2"], "0x7C inf"),
        (["inf", "e4m3"], "0x7E 448.0"),
        (["nan", "e4m3"], "0x7F NaN"),
        (["1.001953125", "bf16"], "0x3F80 1.0"),
    ];
    for (args, expected) in cases {
        let stdout = ok(dir.path(), &["cast", args[0], args[1]]);
        assert_eq!(stdout.trim_end(), expected, "{args:?}");
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(d, &[]), 1);
    assert_eq!(code(d, &["--help"]), 0);
    assert_eq!(code(d, &["cast", "abc", "e4m3"]), 1);
    assert_eq!(code(d, &["cast", "1.0", "e3m4"]), 1);
    assert_eq!(code(d, &["gen-data", "--kind", "two_moons", "--out", "x.fpq", "--outlier-frac", "2"]), 1);
    assert_eq!(code(d, &["eval", "--model", "missing.fpq", "--data", "missing.fpq"]), 2);

    std::fs::write(d.join("junk.fpq"), b"JUNKJUNKJUNK").unwrap();
    assert_eq!(code(d, &["eval", "--model", "junk.fpq", "--data", "junk.fpq"]), 2);

    ok(d, &["gen-data", "--kind", "gauss_outliers", "--n", "64", "--out", "g.fpq"]);
    assert_eq!(code(d, &["train-toy", "--data", "g.fpq", "--out", "m.fpq"]), 2);
    ok(d, &["gen-data", "--kind", "clusters", "--n", "64", "--out", "c.fpq"]);
    ok(d, &["train-toy", "--data", "c.fpq", "--epochs", "5", "--out", "m.fpq"]);
    assert_eq!(code(d, &["quantize", "--model", "m.fpq", "--calib", "c.fpq", "--format", "fp32", "--out", "q.fpq"]), 1);

    let mut nan_model = ModelContainer::new();
    nan_model.tensors.insert("w".into(), Tensor::new(vec![2, 2], vec![1.0, f32::NAN, 0.0, 1.0]).unwrap());
    nan_model.graph.push(LayerSpec::Gemm(GemmSpec { weight: "w".into(), bias: None, quant: None }));
    nan_model.graph.push(LayerSpec::Gemm(GemmSpec { weight: "w".into(), bias: None, quant: None }));
    save_model(&nan_model, d.join("nan.fpq")).unwrap();
    assert_eq!(code(d, &["calibrate", "--model", "nan.fpq", "--calib", "c.fpq", "--out", "r.json"]), 3);
    assert_eq!(code(d, &["eval", "--model", "nan.fpq", "--data", "c.fpq"]), 3);
}

/// Runs the whole workflow in `dir` and returns every output file and stdout.
fn workflow(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let steps: [&[&str]; 10] = [
        &["gen-data", "--kind", "gauss_outliers", "--n", "4096", "--seed", "3", "--outlier-frac", "0.001", "--outlier-mag", "50", "--out", "g.fpq"],
        &["gen-data", "--kind", "two_moons", "--n", "300", "--seed", "4", "--out", "moons.fpq"],
        &["gen-data", "--kind", "clusters", "--n", "100", "--seed", "5", "--out", "clusters.fpq"],
        &["train-toy", "--data", "moons.fpq", "--epochs", "100", "--lr", "0.5", "--seed", "6", "--out", "mlp.fpq"],
        &["build-encoder", "--seed", "7", "--out", "enc.fpq"],
        &["calibrate", "--model", "mlp.fpq", "--calib", "moons.fpq", "--out", "ranges.json"],
        &["quantize", "--model", "mlp.fpq", "--calib", "ranges.json", "--format", "e4m3", "--out", "q.fpq"],
        &["eval", "--model", "q.fpq", "--data", "moons.fpq", "--report", "eval.json"],
        &["compare", "--model", "enc.fpq", "--calib", "g.fpq", "--data", "g.fpq", "--format", "fp32,int8", "--format", "e4m3,e5m2", "--report", "enc.json"],
        &["compare", "--model", "mlp.fpq", "--calib", "moons.fpq", "--data", "moons.fpq", "--weights", "per-tensor", "--quant-attn-internal", "false", "--report", "mlp.json"],
    ];
    let mut outputs = Vec::new();
    for (i, args) in steps.iter().enumerate() {
        outputs.push((format!("stdout {i}"), ok(dir, args).into_bytes()));
    }
    let mut files: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    for f in files {
        outputs.push((f.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&f).unwrap()));
    }
    outputs
}

#[test]
fn reruns_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = workflow(a.path());
    let second = workflow(b.path());
    assert_eq!(first.len(), second.len());
    for ((name, x), (_, y)) in first.iter().zip(&second) {
        assert!(x == y, "{name} differs between runs");
    }
    let names: Vec<&str> = first.iter().map(|(n, _)| n.as_str()).collect();
    for expected in ["enc.csv", "enc.json", "eval.csv", "mlp.csv", "q.fpq", "ranges.json"] {
        assert!(names.contains(&expected), "{expected} missing from {names:?}");
    }
}

#[test]
fn compare_reports() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen-data", "--kind", "gauss_outliers", "--n", "4096", "--seed", "1", "--outlier-frac", "0", "--out", "g.fpq"]);
    ok(d, &["build-encoder", "--seed", "0", "--out", "enc.fpq"]);

    ok(d, &["compare", "--model", "enc.fpq", "--calib", "g.fpq", "--data", "g.fpq", "--format", "fp32", "--report", "self.json"]);
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("self.json")).unwrap()).unwrap();
    let runs = report["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 1);
    assert_eq!(runs[0]["mse"], 0.0);
    assert_eq!(runs[0]["cosine"], 1.0);
    assert_eq!(runs[0]["sqnr_db"], "inf");
    assert_eq!(runs[0]["accuracy"], "undefined");

    ok(d, &["compare", "--model", "enc.fpq", "--calib", "g.fpq", "--data", "g.fpq", "--report", "cmp.json"]);
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("cmp.json")).unwrap()).unwrap();
    let runs = report["runs"].as_array().unwrap();
    let formats: Vec<&str> = runs.iter().map(|r| r["format"].as_str().unwrap()).collect();
    assert_eq!(formats, ["fp32", "int8", "e4m3"]);
    let cosine = |i: usize| runs[i]["cosine"].as_f64().unwrap();
    assert!(cosine(2) > cosine(1), "e4m3 {} int8 {}", cosine(2), cosine(1));
    assert_eq!(report["provenance"]["seeds"]["data"], "1");
    assert_eq!(report["provenance"]["seeds"]["model"], "0");
    assert_eq!(report["provenance"]["version"], env!("CARGO_PKG_VERSION"));

    let csv = std::fs::read_to_string(d.join("cmp.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "mode,format,granularity,mse,sqnr_db,cosine,max_abs_err,accuracy");
    for (line, run) in lines.zip(runs) {
        let fields: Vec<&str> = line.split(',').collect();
        for (i, key) in ["mse", "sqnr_db", "cosine", "max_abs_err"].iter().enumerate() {
            let json_text = match &run[key] {
                serde_json::Value::String(s) => s.clone(),
                v => v.to_string(),
            };
            assert_eq!(fields[3 + i], json_text, "{key}");
        }
    }
}

#[test]
fn quantize_accepts_ranges_or_data() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen-data", "--kind", "two_moons", "--n", "200", "--seed", "1", "--out", "moons.fpq"]);
    ok(d, &["train-toy", "--data", "moons.fpq", "--epochs", "20", "--out", "mlp.fpq"]);
    ok(d, &["calibrate", "--model", "mlp.fpq", "--calib", "moons.fpq", "--out", "ranges.json"]);
    ok(d, &["quantize", "--model", "mlp.fpq", "--calib", "ranges.json", "--format", "int8", "--out", "a.fpq"]);
    ok(d, &["quantize", "--model", "mlp.fpq", "--calib", "moons.fpq", "--format", "int8", "--out", "b.fpq"]);
    assert_eq!(std::fs::read(d.join("a.fpq")).unwrap(), std::fs::read(d.join("b.fpq")).unwrap());

    std::fs::write(d.join("bad.json"), br#"{"ranges":{"0.input":{"alpha":3.0,"beta":1.0,"count":2}}}"#).unwrap();
    assert_eq!(code(d, &["quantize", "--model", "mlp.fpq", "--calib", "bad.json", "--out", "c.fpq"]), 3);
    std::fs::write(d.join("partial.json"), br#"{"ranges":{}}"#).unwrap();
    assert_eq!(code(d, &["quantize", "--model", "mlp.fpq", "--calib", "partial.json", "--out", "c.fpq"]), 2);
}
