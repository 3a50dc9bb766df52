use std::fs;
use std::path::{Path, PathBuf};

use nirs_core::dataset::{balance_classes, read_feature_csv, write_feature_csv, LabeledDataset, SplitMode};
use nirs_core::eval::{
    bias_text_report, confusion_csv, evaluate, lookahead_bias_demo, text_report, Protocol, ProtocolParams, SEED_RULE,
};
use nirs_core::exec::Executor;
use nirs_core::features::ConversionSpec;
use nirs_core::ingest::{
    parse_labels, parse_raw_csv, validate_recording, write_labels, write_raw_csv, ChannelLayout, RawCsvOptions,
    ValidationOptions, Violation,
};
use nirs_core::pipeline::{labeled_features, PipelineConfig, PipelineError};
use nirs_core::preprocess::{BaselineWindow, FilterSpec, PreprocessError, Window};
use nirs_core::synth::{gen_subject, scenario_preset, Scenario};
use nirs_core::Scalar;

use crate::error::CliError;
use crate::manifest::{record_inputs, record_outputs, FileRecord, RunManifest, Seeds};
use crate::settings::{parse_config_text, spec_for, Settings};

fn manifest(subcommand: &str, s: &Settings, resolved: serde_json::Value, base_seed: Option<u64>, rule: &str) -> RunManifest {
    RunManifest {
        tool: "nirs".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        subcommand: subcommand.into(),
        config: s.values().clone(),
        resolved,
        seeds: Seeds {
            base_seed,
            rule: rule.into(),
        },
        inputs: Vec::new(),
        outputs: Vec::new(),
    }
}

fn create_out(s: &Settings) -> Result<PathBuf, CliError> {
    let out: PathBuf = s.require::<String>("out")?.into();
    fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    Ok(out)
}

fn write_file(dir: &Path, name: &str, bytes: &[u8], names: &mut Vec<String>) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
    names.push(name.to_string());
    Ok(())
}

fn to_json<T: serde::Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("serializable")
}

pub fn synth(s: &Settings, exec: &Executor) -> Result<RunManifest, CliError> {
    let preset: Scenario = s.require::<String>("preset")?.parse().map_err(CliError::Usage)?;
    let mut cfg = scenario_preset(preset);
    cfg.seed = s.require("seed")?;
    if let Some(n) = s.get("subjects")? {
        cfg.n_subjects = n;
    }
    cfg.protocol.repeats = s.require("repeats")?;
    let optional: [(&str, &mut f64); 8] = [
        ("inter-subject-sigma", &mut cfg.inter_subject_sigma),
        ("white-noise-sigma", &mut cfg.noise.white_noise_sigma),
        ("spontaneous-amp", &mut cfg.noise.spontaneous_amp),
        ("spontaneous-tau-s", &mut cfg.noise.spontaneous_tau_s),
        ("superficial-amp", &mut cfg.superficial_amp),
        ("baseline-s", &mut cfg.protocol.baseline_s),
        ("session-s", &mut cfg.protocol.session_s),
        ("deadband-s", &mut cfg.protocol.deadband_s),
    ];
    for (key, slot) in optional {
        if let Some(v) = s.get::<f64>(key)? {
            *slot = v;
        }
    }
    let scale: f64 = s.require("signature-scale")?;
    cfg.class_signatures = cfg.class_signatures.iter().map(|c| c.scaled(scale)).collect();
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let out = create_out(s)?;

    let subjects = exec.map((0..cfg.n_subjects).collect(), |k| gen_subject(&cfg, k));
    let mut names = Vec::new();
    for subject in subjects {
        let subject = subject.map_err(|e| CliError::Usage(e.to_string()))?;
        let id = subject.recording.subject_id.clone();
        let mut buf = Vec::new();
        write_raw_csv(&subject.recording, &mut buf).expect("in-memory write");
        write_file(&out, &format!("{id}_raw.csv"), &buf, &mut names)?;
        buf.clear();
        write_labels(&subject.labels, &mut buf).expect("in-memory write");
        write_file(&out, &format!("{id}_labels.csv"), &buf, &mut names)?;
        buf.clear();
        subject.truth.write_csv(&mut buf).expect("in-memory write");
        write_file(&out, &format!("{id}_truth.csv"), &buf, &mut names)?;
    }
    let mut m = manifest(
        "synth",
        s,
        to_json(&cfg),
        Some(cfg.seed),
        "subject k: jitter stream 2k+1, noise stream 2k+2 of seed",
    );
    m.outputs = record_outputs(&out, &names)?;
    m.write(&out)?;
    Ok(m)
}

fn layout_from_header(path: &Path) -> Result<ChannelLayout, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let header = text.lines().next().unwrap_or("");
    let count = |prefix: char| {
        header
            .split(',')
            .filter(|c| c.starts_with(prefix) && c.ends_with("_730"))
            .count()
    };
    ChannelLayout::nearest(count('L'), count('R')).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn conversion(s: &Settings) -> Result<ConversionSpec, CliError> {
    match s.require::<String>("mode")?.as_str() {
        "paper_simple" => Ok(ConversionSpec::PaperSimple),
        "mbll" => {
            let path: PathBuf = s
                .get::<String>("mbll-coeffs")?
                .ok_or_else(|| CliError::Usage("--mode mbll needs --mbll-coeffs FILE; there are no default coefficients".into()))?
                .into();
            let text = fs::read_to_string(&path)
                .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
            let map = parse_config_text(&text, &path.display().to_string())?;
            let get = |k: &str| -> Result<f64, CliError> {
                map.get(k)
                    .ok_or_else(|| CliError::Usage(format!("{}: missing `{k}`", path.display())))?
                    .parse()
                    .map_err(|e| CliError::Usage(format!("{}: `{k}`: {e}", path.display())))
            };
            let spec = ConversionSpec::Mbll {
                extinction: [[get("e730_hbo")?, get("e730_hbr")?], [get("e850_hbo")?, get("e850_hbr")?]],
                d730: get("d730")?,
                d850: get("d850")?,
            };
            spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            Ok(spec)
        }
        other => Err(CliError::Usage(format!("unknown mode `{other}`"))),
    }
}

/// `(subject id, raw path, labels path)` in name order.
fn pipeline_inputs(s: &Settings) -> Result<Vec<(String, PathBuf, PathBuf)>, CliError> {
    if let Some(dir) = s.get::<String>("in")? {
        let dir = PathBuf::from(dir);
        let entries = fs::read_dir(&dir).map_err(|e| CliError::io(&dir, e))?;
        let mut raws: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with("_raw.csv")))
            .collect();
        raws.sort();
        if raws.is_empty() {
            return Err(CliError::Data(format!("{}: no *_raw.csv files", dir.display())));
        }
        Ok(raws
            .into_iter()
            .map(|raw| {
                let name = raw.file_name().and_then(|n| n.to_str()).unwrap_or_default();
                let id = name.trim_end_matches("_raw.csv").to_string();
                let labels = raw.with_file_name(format!("{id}_labels.csv"));
                (id, raw, labels)
            })
            .collect())
    } else {
        let raw: PathBuf = s
            .get::<String>("raw")?
            .ok_or_else(|| CliError::Usage("pipeline needs --in DIR or --raw FILE --labels FILE".into()))?
            .into();
        let labels: PathBuf = s.require::<String>("labels")?.into();
        let stem = raw.file_stem().and_then(|n| n.to_str()).unwrap_or("subject");
        let id = stem.trim_end_matches("_raw").to_string();
        Ok(vec![(id, raw, labels)])
    }
}

fn pipeline_error(path: &Path, e: PipelineError) -> CliError {
    match e {
        PipelineError::Preprocess(
            PreprocessError::CutoffAboveNyquist { .. }
            | PreprocessError::NonPositiveCutoff(_)
            | PreprocessError::EvenTapCount(_),
        ) => CliError::Usage(e.to_string()),
        other => CliError::Data(format!("{}: {other}", path.display())),
    }
}

pub fn pipeline(s: &Settings, exec: &Executor) -> Result<RunManifest, CliError> {
    let fs_hz: f64 = s.require("fs")?;
    let cfg = PipelineConfig {
        filter: FilterSpec {
            cutoff_hz: s.require("cutoff-hz")?,
            n_taps: s.require("taps")?,
            window: Window::Hamming,
        },
        sc_coeff: s.require("sc-coeff")?,
        conversion: conversion(s)?,
        baseline: BaselineWindow::new(0.0, s.require("baseline-s")?),
    };
    // reject a bad filter before touching any data
    nirs_core::preprocess::design_lowpass::<f64>(&cfg.filter, fs_hz).map_err(|e| CliError::Usage(e.to_string()))?;
    let inputs = pipeline_inputs(s)?;
    let out = create_out(s)?;

    let results = exec.map(inputs.clone(), |(id, raw, labels)| -> Result<Vec<u8>, CliError> {
        let layout = layout_from_header(&raw)?;
        let opts = RawCsvOptions {
            subject_id: id.clone(),
            sampling_rate_hz: fs_hz,
        };
        let file = fs::File::open(&raw).map_err(|e| CliError::io(&raw, e))?;
        let rec = parse_raw_csv(std::io::BufReader::new(file), &layout, &opts)
            .map_err(|e| CliError::Data(format!("{}: {e}", raw.display())))?;
        let file = fs::File::open(&labels).map_err(|e| CliError::io(&labels, e))?;
        let track = parse_labels(std::io::BufReader::new(file), None)
            .map_err(|e| CliError::Data(format!("{}: {e}", labels.display())))?;
        let report = validate_recording(&rec, &track, &ValidationOptions::default());
        for v in &report.violations {
            if let Violation::TrackExceedsRecording { .. } = v {
                return Err(CliError::Data(format!("{}: {v}", labels.display())));
            }
            eprintln!("warning: {}: {v}", raw.display());
        }
        let ds = labeled_features::<f64>(&rec, &track, &cfg).map_err(|e| pipeline_error(&raw, e))?;
        let mut buf = Vec::new();
        write_feature_csv(&ds, &mut buf).expect("in-memory write");
        Ok(buf)
    });
    let mut names = Vec::new();
    let mut input_paths = Vec::new();
    for ((id, raw, labels), bytes) in inputs.iter().zip(results) {
        write_file(&out, &format!("{id}_features.csv"), &bytes?, &mut names)?;
        input_paths.push(raw.clone());
        input_paths.push(labels.clone());
    }
    let mut m = manifest("pipeline", s, to_json(&cfg), None, "no randomness");
    m.inputs = record_inputs(&input_paths)?;
    m.outputs = record_outputs(&out, &names)?;
    m.write(&out)?;
    Ok(m)
}

fn feature_files(path: &Path) -> Result<Vec<PathBuf>, CliError> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let entries = fs::read_dir(path).map_err(|e| CliError::io(path, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with("_features.csv")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Data(format!("{}: no *_features.csv files", path.display())));
    }
    Ok(files)
}

/// Per-subject balanced datasets, in file then first-appearance order.
fn load_subjects<T: Scalar>(files: &[PathBuf]) -> Result<Vec<LabeledDataset<T>>, CliError> {
    let read = |p: &PathBuf, k: Option<usize>| -> Result<LabeledDataset<T>, CliError> {
        let f = fs::File::open(p).map_err(|e| CliError::io(p, e))?;
        read_feature_csv::<T, _>(std::io::BufReader::new(f), k).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))
    };
    let first: Vec<LabeledDataset<T>> = files.iter().map(|p| read(p, None)).collect::<Result<_, _>>()?;
    let k = first.iter().map(|d| d.n_classes()).max().unwrap_or(0);
    let mut subjects = Vec::new();
    for (p, ds) in files.iter().zip(first) {
        let ds = if ds.n_classes() == k { ds } else { read(p, Some(k))? };
        for s in ds.present_subjects() {
            let idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.subject_index(i) == s).collect();
            let one = balance_classes(&ds.subset(&idx))
                .map_err(|e| CliError::Protocol(format!("{}: subject `{}`: {e}", p.display(), ds.subjects()[s])))?;
            subjects.push(one);
        }
    }
    Ok(subjects)
}

fn protocol_params(s: &Settings, protocol: Protocol, allow_split_mode: bool) -> Result<ProtocolParams, CliError> {
    let mut p = ProtocolParams::for_protocol(protocol);
    if let Some(h) = s.list("hidden")? {
        p.hidden = h;
    }
    if let Some(b) = s.get("batch")? {
        p.batch_size = b;
    }
    if let Some(e) = s.get("epochs")? {
        p.epochs = e;
    }
    if allow_split_mode {
        p.split_mode = s.require::<String>("split-mode")?.parse::<SplitMode>().map_err(CliError::Usage)?;
    }
    p.test_frac = s.require("test-frac")?;
    p.validate()?;
    Ok(p)
}

enum Precision {
    F64,
    F32,
}

fn precision(s: &Settings) -> Result<Precision, CliError> {
    match s.require::<String>("precision")?.as_str() {
        "f64" => Ok(Precision::F64),
        "f32" => Ok(Precision::F32),
        other => Err(CliError::Usage(format!("unknown precision `{other}`"))),
    }
}

struct EvalOutputs {
    files: Vec<(String, Vec<u8>)>,
    resolved: serde_json::Value,
}

fn evaluate_with<T: Scalar>(
    files: &[PathBuf],
    protocol: Protocol,
    reps: usize,
    seed: u64,
    params: &ProtocolParams,
    exec: &Executor,
) -> Result<EvalOutputs, CliError> {
    let subjects = load_subjects::<T>(files)?;
    let report = evaluate(protocol, &subjects, reps, seed, params, exec)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    Ok(EvalOutputs {
        files: vec![
            ("metrics.json".into(), json.into_bytes()),
            ("confusion.csv".into(), confusion_csv(&report.aggregate.confusion).into_bytes()),
            ("report.txt".into(), text_report(&report).into_bytes()),
        ],
        resolved: to_json(params),
    })
}

fn bias_with<T: Scalar>(
    files: &[PathBuf],
    reps: usize,
    seed: u64,
    params: &ProtocolParams,
    exec: &Executor,
) -> Result<EvalOutputs, CliError> {
    let subjects = load_subjects::<T>(files)?;
    let refs: Vec<&LabeledDataset<T>> = subjects.iter().collect();
    let all = LabeledDataset::concat(&refs).map_err(|e| CliError::Data(e.to_string()))?;
    let report = lookahead_bias_demo(&all, reps, seed, params, exec)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    Ok(EvalOutputs {
        files: vec![
            ("bias.json".into(), json.into_bytes()),
            ("report.txt".into(), bias_text_report(&report).into_bytes()),
        ],
        resolved: to_json(params),
    })
}

fn finish_eval(
    subcommand: &str,
    s: &Settings,
    files: &[PathBuf],
    seed: u64,
    outputs: EvalOutputs,
) -> Result<RunManifest, CliError> {
    let out = create_out(s)?;
    let mut names = Vec::new();
    for (name, bytes) in &outputs.files {
        write_file(&out, name, bytes, &mut names)?;
    }
    let mut m = manifest(subcommand, s, outputs.resolved, Some(seed), SEED_RULE);
    m.inputs = record_inputs(files)?;
    m.outputs = record_outputs(&out, &names)?;
    m.write(&out)?;
    Ok(m)
}

pub fn cmd_evaluate(s: &Settings, exec: &Executor) -> Result<RunManifest, CliError> {
    let features: PathBuf = s.require::<String>("features")?.into();
    let protocol: Protocol = s.require::<String>("protocol")?.parse().map_err(CliError::Usage)?;
    let reps: usize = s.require("reps")?;
    let seed: u64 = s.require("seed")?;
    let params = protocol_params(s, protocol, true)?;
    s.require::<String>("out")?;
    let files = feature_files(&features)?;
    let outputs = match precision(s)? {
        Precision::F64 => evaluate_with::<f64>(&files, protocol, reps, seed, &params, exec)?,
        Precision::F32 => evaluate_with::<f32>(&files, protocol, reps, seed, &params, exec)?,
    };
    finish_eval("evaluate", s, &files, seed, outputs)
}

pub fn cmd_bias_demo(s: &Settings, exec: &Executor) -> Result<RunManifest, CliError> {
    let features: PathBuf = s.require::<String>("features")?.into();
    let protocol: Protocol = s.require::<String>("protocol")?.parse().map_err(CliError::Usage)?;
    let reps: usize = s.require("reps")?;
    let seed: u64 = s.require("seed")?;
    let params = protocol_params(s, protocol, false)?;
    s.require::<String>("out")?;
    let files = feature_files(&features)?;
    let outputs = match precision(s)? {
        Precision::F64 => bias_with::<f64>(&files, reps, seed, &params, exec)?,
        Precision::F32 => bias_with::<f32>(&files, reps, seed, &params, exec)?,
    };
    finish_eval("bias-demo", s, &files, seed, outputs)
}

pub fn run(subcommand: &str, s: &Settings, exec: &Executor) -> Result<RunManifest, CliError> {
    match subcommand {
        "synth" => synth(s, exec),
        "pipeline" => pipeline(s, exec),
        "evaluate" => cmd_evaluate(s, exec),
        "bias-demo" => cmd_bias_demo(s, exec),
        other => Err(CliError::Usage(format!("unknown subcommand `{other}`"))),
    }
}

/// Re-executes a manifest and checks every output hash.
pub fn replay(manifest_path: &Path, out: Option<&str>, exec: &Executor) -> Result<RunManifest, CliError> {
    let recorded = RunManifest::read(manifest_path)?;
    let spec = spec_for(&recorded.subcommand)
        .ok_or_else(|| CliError::Usage(format!("manifest names unknown subcommand `{}`", recorded.subcommand)))?;
    let mut settings = Settings::merge(&recorded.subcommand, spec, &[recorded.config.clone()])?;
    if let Some(o) = out {
        settings.set("out", o);
    }
    for input in &recorded.inputs {
        let now = crate::manifest::sha256_file(Path::new(&input.path))?;
        if now != input.sha256 {
            return Err(CliError::Data(format!("{}: input changed since the recorded run", input.path)));
        }
    }
    let fresh = run(&recorded.subcommand, &settings, exec)?;
    let differing: Vec<&FileRecord> = recorded
        .outputs
        .iter()
        .filter(|r| !fresh.outputs.contains(r))
        .collect();
    if !differing.is_empty() || fresh.outputs.len() != recorded.outputs.len() {
        let names: Vec<&str> = differing.iter().map(|r| r.path.as_str()).collect();
        return Err(CliError::ReplayMismatch(format!("outputs differ from the manifest: {}", names.join(", "))));
    }
    Ok(fresh)
}
