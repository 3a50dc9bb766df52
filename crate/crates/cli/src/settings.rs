//! One key-value view of a subcommand's options.
//!
//! Values come from built-in defaults, then an optional config file, then
//! command-line flags, each layer overriding the previous one. Manifests
//! store the merged map, so replay goes through the same parser.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use clap::parser::ValueSource;
use clap::{Arg, ArgMatches, Command};

use crate::error::CliError;

pub struct OptSpec {
    pub key: &'static str,
    pub help: &'static str,
    pub default: Option<&'static str>,
}

const fn opt(key: &'static str, help: &'static str, default: Option<&'static str>) -> OptSpec {
    OptSpec { key, help, default }
}

pub const SYNTH: &[OptSpec] = &[
    opt("preset", "scenario preset: three_state or binary_motor", Some("three_state")),
    opt("subjects", "number of subjects [default: preset]", None),
    opt("seed", "base seed shared by all subjects", Some("0")),
    opt("out", "output directory", None),
    opt("repeats", "sessions per class", Some("1")),
    opt("inter-subject-sigma", "multiplicative signature jitter [default: preset]", None),
    opt("signature-scale", "factor applied to every class signature", Some("1")),
    opt("white-noise-sigma", "per-sample OD noise [default: preset]", None),
    opt("spontaneous-amp", "slow long-channel fluctuation std [default: preset]", None),
    opt("spontaneous-tau-s", "time constant of the slow fluctuation [default: preset]", None),
    opt("superficial-amp", "scalp component std [default: preset]", None),
    opt("baseline-s", "baseline duration [default: preset]", None),
    opt("session-s", "session duration [default: preset]", None),
    opt("deadband-s", "gap after each session [default: preset]", None),
];

pub const PIPELINE: &[OptSpec] = &[
    opt("in", "directory of <id>_raw.csv and <id>_labels.csv files", None),
    opt("raw", "single raw CSV (instead of --in)", None),
    opt("labels", "label CSV for --raw", None),
    opt("out", "output directory", None),
    opt("cutoff-hz", "low-pass cutoff", Some("0.1")),
    opt("taps", "low-pass length (odd)", Some("201")),
    opt("sc-coeff", "short-channel subtraction coefficient", Some("1")),
    opt("mode", "conversion: paper_simple or mbll", Some("paper_simple")),
    opt("mbll-coeffs", "key-value file with e730_hbo, e730_hbr, e850_hbo, e850_hbr, d730, d850", None),
    opt("baseline-s", "baseline window length from the first sample", Some("120")),
    opt("fs", "sampling rate in Hz", Some("4")),
];

pub const EVALUATE: &[OptSpec] = &[
    opt("features", "feature CSV or directory of <id>_features.csv", None),
    opt("protocol", "individual, group or loso", None),
    opt("reps", "repetitions (per fold for loso)", Some("100")),
    opt("seed", "base seed; rep r uses seed + r", Some("0")),
    opt("hidden", "comma-separated hidden widths [default: protocol]", None),
    opt("batch", "mini-batch size [default: protocol]", None),
    opt("epochs", "training epochs [default: protocol]", None),
    opt("split-mode", "contiguous or shuffled-first", Some("contiguous")),
    opt("test-frac", "held-out fraction per subject and class", Some("0.2")),
    opt("precision", "f64 or f32", Some("f64")),
    opt("out", "output directory", None),
];

pub const BIAS_DEMO: &[OptSpec] = &[
    opt("features", "feature CSV or directory of <id>_features.csv", None),
    opt("protocol", "hyperparameter set: individual, group or loso", Some("individual")),
    opt("reps", "paired repetitions", Some("20")),
    opt("seed", "base seed; rep r uses seed + r in both modes", Some("0")),
    opt("hidden", "comma-separated hidden widths [default: protocol]", None),
    opt("batch", "mini-batch size [default: protocol]", None),
    opt("epochs", "training epochs [default: protocol]", None),
    opt("test-frac", "held-out fraction per subject and class", Some("0.2")),
    opt("precision", "f64 or f32", Some("f64")),
    opt("out", "output directory", None),
];

pub fn spec_for(subcommand: &str) -> Option<&'static [OptSpec]> {
    match subcommand {
        "synth" => Some(SYNTH),
        "pipeline" => Some(PIPELINE),
        "evaluate" => Some(EVALUATE),
        "bias-demo" => Some(BIAS_DEMO),
        _ => None,
    }
}

pub fn command(name: &'static str, about: &'static str, spec: &'static [OptSpec]) -> Command {
    let mut cmd = Command::new(name).about(about).arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .help("key = value file; flags override it"),
    );
    for o in spec {
        let mut arg = Arg::new(o.key).long(o.key).value_name("VALUE").help(o.help);
        if let Some(d) = o.default {
            arg = arg.help(format!("{} [default: {d}]", o.help));
        }
        cmd = cmd.arg(arg);
    }
    cmd
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str, origin: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("{origin}:{}: expected `key = value`", n + 1)))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    parse_config_text(&text, &path.display().to_string())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    subcommand: String,
    values: BTreeMap<String, String>,
}

impl Settings {
    /// Defaults, then `overrides` in order, rejecting unknown keys.
    pub fn merge(
        subcommand: &str,
        spec: &[OptSpec],
        overrides: &[BTreeMap<String, String>],
    ) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for o in spec {
            if let Some(d) = o.default {
                values.insert(o.key.to_string(), d.to_string());
            }
        }
        for layer in overrides {
            for (k, v) in layer {
                if !spec.iter().any(|o| o.key == k) {
                    return Err(CliError::Usage(format!("unknown option `{k}` for {subcommand}")));
                }
                values.insert(k.clone(), v.clone());
            }
        }
        Ok(Self {
            subcommand: subcommand.to_string(),
            values,
        })
    }

    pub fn from_matches(subcommand: &str, spec: &[OptSpec], m: &ArgMatches) -> Result<Self, CliError> {
        let file = match m.get_one::<String>("config") {
            Some(p) => read_config_file(Path::new(p))?,
            None => BTreeMap::new(),
        };
        let mut flags = BTreeMap::new();
        for o in spec {
            if m.value_source(o.key) == Some(ValueSource::CommandLine) {
                if let Some(v) = m.get_one::<String>(o.key) {
                    flags.insert(o.key.to_string(), v.clone());
                }
            }
        }
        Self::merge(subcommand, spec, &[file, flags])
    }

    pub fn values(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(key.to_string(), value.into());
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| CliError::Usage(format!("invalid value `{v}` for --{key}: {e}"))),
        }
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        self.get(key)?.ok_or_else(|| {
            CliError::Usage(format!(
                "missing required option --{key}\n\nUsage: nirs {} --{key} <VALUE> [OPTIONS]",
                self.subcommand
            ))
        })
    }

    pub fn list(&self, key: &str) -> Result<Option<Vec<usize>>, CliError> {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|p| p.trim().parse::<usize>())
                .collect::<Result<Vec<_>, _>>()
                .map(Some)
                .map_err(|e| CliError::Usage(format!("invalid list `{v}` for --{key}: {e}"))),
        }
    }
}
