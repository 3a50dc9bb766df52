//! Repeated-run evaluation protocols and their summaries.
//!
//! Every run is a pure function of its dataset, parameters and seed. Rep
//! `r` of a protocol started at `base_seed` uses seed `base_seed + r` for
//! the split, the weight init and the epoch shuffles alike.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{loso_splits, split, DatasetError, LabeledDataset, SplitMode};
use crate::exec::Executor;
use crate::mlp::{train, AdamConfig, Matrix, MlpConfig, MlpError, MlpModel, TrainConfig};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("{truth} true labels but {pred} predictions")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("protocol needs at least 2 subjects, found {0}")]
    TooFewSubjects(usize),
    #[error("dataset for `{0}` is not class-balanced")]
    Unbalanced(String),
    #[error("no runs to aggregate")]
    NoRuns,
    #[error("invalid protocol parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Mlp(#[from] MlpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Individual,
    Group,
    Loso,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Individual => "individual",
            Protocol::Group => "group",
            Protocol::Loso => "loso",
        }
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "individual" => Ok(Protocol::Individual),
            "group" => Ok(Protocol::Group),
            "loso" => Ok(Protocol::Loso),
            other => Err(format!("unknown protocol `{other}`")),
        }
    }
}

/// Model and split settings shared by every run of a protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams {
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub epochs: usize,
    pub test_frac: f64,
    pub split_mode: SplitMode,
    pub adam: AdamConfig,
}

impl ProtocolParams {
    pub fn for_protocol(p: Protocol) -> Self {
        let (hidden, batch_size, epochs) = match p {
            Protocol::Individual => (vec![128, 128], 5, 8),
            Protocol::Group => (vec![256, 256], 40, 5),
            Protocol::Loso => (vec![256, 256], 120, 5),
        };
        Self {
            hidden,
            batch_size,
            epochs,
            test_frac: 0.2,
            split_mode: SplitMode::Contiguous,
            adam: AdamConfig::default(),
        }
    }

    pub fn layer_sizes(&self, n_features: usize, n_classes: usize) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.hidden.len() + 2);
        sizes.push(n_features);
        sizes.extend_from_slice(&self.hidden);
        sizes.push(n_classes);
        sizes
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(EvalError::InvalidParams("hidden layer widths must be positive".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(EvalError::InvalidParams("batch size and epochs must be positive".into()));
        }
        if !(self.test_frac > 0.0 && self.test_frac < 1.0) {
            return Err(EvalError::InvalidParams(format!("test fraction {} outside (0, 1)", self.test_frac)));
        }
        self.adam.validate()?;
        Ok(())
    }
}

pub type Confusion = Vec<Vec<u64>>;

/// Entry `(i, j)` counts samples of true class `i` predicted as `j`.
pub fn confusion_matrix(y_true: &[usize], y_pred: &[usize], k: usize) -> Result<Confusion, EvalError> {
    if y_true.len() != y_pred.len() {
        return Err(EvalError::LengthMismatch {
            truth: y_true.len(),
            pred: y_pred.len(),
        });
    }
    let mut m = vec![vec![0u64; k]; k];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if let Some(label) = [t, p].into_iter().find(|&l| l >= k) {
            return Err(EvalError::LabelOutOfRange { label, n_classes: k });
        }
        m[t][p] += 1;
    }
    Ok(m)
}

pub fn confusion_total(m: &Confusion) -> u64 {
    m.iter().flatten().sum()
}

pub fn confusion_trace(m: &Confusion) -> u64 {
    m.iter().enumerate().map(|(i, row)| row[i]).sum()
}

/// `trace / total`; zero for an empty matrix.
pub fn accuracy_of(m: &Confusion) -> f64 {
    let total = confusion_total(m);
    if total == 0 {
        0.0
    } else {
        confusion_trace(m) as f64 / total as f64
    }
}

fn add_confusion(acc: &mut Confusion, m: &Confusion) {
    for (ra, rm) in acc.iter_mut().zip(m) {
        for (a, b) in ra.iter_mut().zip(rm) {
            *a += b;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub seed: u64,
    /// Subject whose data was tested (the held-out one under LOSO).
    pub subject: Option<String>,
    pub accuracy: f64,
    pub confusion: Confusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub max: f64,
    pub min: f64,
    pub n_runs: usize,
    pub confusion: Confusion,
}

/// Statistics over a list of values, computed on the sorted values so the
/// result does not depend on their order.
fn spread(values: &[f64]) -> (f64, f64, f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    // rounding can push the mean a hair outside the range
    let (min, max) = (v[0], v[v.len() - 1]);
    (mean.clamp(min, max), var.sqrt(), max, min)
}

pub fn aggregate(runs: &[RunMetrics]) -> Result<AggregateMetrics, EvalError> {
    let first = runs.first().ok_or(EvalError::NoRuns)?;
    let k = first.confusion.len();
    let mut confusion = vec![vec![0u64; k]; k];
    for r in runs {
        add_confusion(&mut confusion, &r.confusion);
    }
    let acc: Vec<f64> = runs.iter().map(|r| r.accuracy).collect();
    let (mean, std, max, min) = spread(&acc);
    Ok(AggregateMetrics {
        mean,
        std,
        max,
        min,
        n_runs: runs.len(),
        confusion,
    })
}

/// Mean, std, max and min across per-subject means, with the pooled
/// confusion of all their runs.
pub fn aggregate_of_means(summaries: &[SubjectSummary]) -> Result<AggregateMetrics, EvalError> {
    let first = summaries.first().ok_or(EvalError::NoRuns)?;
    let k = first.aggregate.confusion.len();
    let mut confusion = vec![vec![0u64; k]; k];
    for s in summaries {
        add_confusion(&mut confusion, &s.aggregate.confusion);
    }
    let means: Vec<f64> = summaries.iter().map(|s| s.aggregate.mean).collect();
    let (mean, std, max, min) = spread(&means);
    Ok(AggregateMetrics {
        mean,
        std,
        max,
        min,
        n_runs: summaries.iter().map(|s| s.aggregate.n_runs).sum(),
        confusion,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectSummary {
    pub subject: String,
    pub aggregate: AggregateMetrics,
}

/// Trains a fresh model on `train_set` and scores it on `test_set`.
pub fn train_and_score<T: Scalar>(
    train_set: &LabeledDataset<T>,
    test_set: &LabeledDataset<T>,
    params: &ProtocolParams,
    seed: u64,
    subject: Option<String>,
) -> Result<RunMetrics, EvalError> {
    let k = train_set.n_classes();
    let mcfg = MlpConfig::new(params.layer_sizes(train_set.n_features(), k), seed);
    let mut model = MlpModel::<T>::init(&mcfg)?;
    let tcfg = TrainConfig::new(params.batch_size, params.epochs, seed);
    train(&mut model, train_set.x(), train_set.labels(), &tcfg, &params.adam)?;
    let x = Matrix::new(test_set.len(), test_set.n_features(), test_set.x().to_vec());
    let pred = model.predict(&x)?;
    let confusion = confusion_matrix(test_set.labels(), &pred, k)?;
    Ok(RunMetrics {
        seed,
        subject,
        accuracy: accuracy_of(&confusion),
        confusion,
    })
}

fn split_run<T: Scalar>(
    ds: &LabeledDataset<T>,
    params: &ProtocolParams,
    seed: u64,
    subject: Option<String>,
) -> Result<RunMetrics, EvalError> {
    let s = split(ds, params.split_mode, params.test_frac, seed)?;
    train_and_score(&ds.subset(&s.train_idx), &ds.subset(&s.test_idx), params, seed, subject)
}

fn repeated<T: Scalar>(
    ds: &LabeledDataset<T>,
    n_reps: usize,
    base_seed: u64,
    params: &ProtocolParams,
    subject: Option<String>,
    exec: &Executor,
) -> Result<ProtocolRun, EvalError> {
    params.validate()?;
    if n_reps == 0 {
        return Err(EvalError::NoRuns);
    }
    let seeds: Vec<u64> = (0..n_reps as u64).map(|r| base_seed.wrapping_add(r)).collect();
    let runs = exec
        .map(seeds, |seed| split_run(ds, params, seed, subject.clone()))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let aggregate = aggregate(&runs)?;
    Ok(ProtocolRun { runs, aggregate })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolRun {
    pub runs: Vec<RunMetrics>,
    pub aggregate: AggregateMetrics,
}

fn require_balanced<T: Scalar>(ds: &LabeledDataset<T>) -> Result<(), EvalError> {
    for s in ds.present_subjects() {
        let idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.subject_index(i) == s).collect();
        if !ds.subset(&idx).is_balanced() {
            return Err(EvalError::Unbalanced(ds.subjects()[s].clone()));
        }
    }
    Ok(())
}

/// Within-subject protocol on one subject's balanced, time-ordered data.
pub fn run_individual_protocol<T: Scalar>(
    ds: &LabeledDataset<T>,
    n_reps: usize,
    base_seed: u64,
    params: &ProtocolParams,
    exec: &Executor,
) -> Result<ProtocolRun, EvalError> {
    require_balanced(ds)?;
    let subject = ds.present_subjects().first().map(|&s| ds.subjects()[s].clone());
    repeated(ds, n_reps, base_seed, params, subject, exec)
}

/// One model over all subjects' data; test blocks are drawn per subject
/// and class.
pub fn run_group_protocol<T: Scalar>(
    group: &LabeledDataset<T>,
    n_reps: usize,
    base_seed: u64,
    params: &ProtocolParams,
    exec: &Executor,
) -> Result<ProtocolRun, EvalError> {
    let n_subjects = group.present_subjects().len();
    if n_subjects < 2 {
        return Err(EvalError::TooFewSubjects(n_subjects));
    }
    require_balanced(group)?;
    repeated(group, n_reps, base_seed, params, None, exec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LosoReport {
    pub runs: Vec<RunMetrics>,
    pub per_subject: Vec<SubjectSummary>,
    /// Statistics across the per-subject means.
    pub overall: AggregateMetrics,
}

/// Leave-one-subject-out: fold `k` trains on every other subject and tests
/// on all of subject `k`. Repetitions vary only the training seed.
pub fn run_loso_protocol<T: Scalar>(
    group: &[LabeledDataset<T>],
    reps_per_fold: usize,
    base_seed: u64,
    params: &ProtocolParams,
    exec: &Executor,
) -> Result<LosoReport, EvalError> {
    params.validate()?;
    if group.len() < 2 {
        return Err(EvalError::TooFewSubjects(group.len()));
    }
    if reps_per_fold == 0 {
        return Err(EvalError::NoRuns);
    }
    for ds in group {
        require_balanced(ds)?;
    }
    let folds = loso_splits(group)?;
    let materialized = folds
        .iter()
        .map(|f| f.materialize(group))
        .collect::<Result<Vec<_>, _>>()?;
    let names: Vec<String> = group
        .iter()
        .map(|ds| ds.present_subjects().first().map(|&s| ds.subjects()[s].clone()).unwrap_or_default())
        .collect();
    let jobs: Vec<(usize, u64)> = (0..folds.len())
        .flat_map(|f| (0..reps_per_fold as u64).map(move |r| (f, base_seed.wrapping_add(r))))
        .collect();
    let runs = exec
        .map(jobs, |(f, seed)| {
            let (train_set, test_set) = &materialized[f];
            train_and_score(train_set, test_set, params, seed, Some(names[f].clone()))
        })
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let per_subject = runs
        .chunks(reps_per_fold)
        .zip(&names)
        .map(|(chunk, name)| {
            Ok(SubjectSummary {
                subject: name.clone(),
                aggregate: aggregate(chunk)?,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    let overall = aggregate_of_means(&per_subject)?;
    Ok(LosoReport {
        runs,
        per_subject,
        overall,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasDemoReport {
    pub contiguous: ProtocolRun,
    pub shuffled_first: ProtocolRun,
    /// Shuffled-first mean minus contiguous mean, as a fraction.
    pub gap: f64,
}

/// Same data, seeds and model settings under both split modes.
pub fn lookahead_bias_demo<T: Scalar>(
    ds: &LabeledDataset<T>,
    n_reps: usize,
    base_seed: u64,
    params: &ProtocolParams,
    exec: &Executor,
) -> Result<BiasDemoReport, EvalError> {
    let with_mode = |mode| ProtocolParams {
        split_mode: mode,
        ..params.clone()
    };
    let contiguous = repeated(ds, n_reps, base_seed, &with_mode(SplitMode::Contiguous), None, exec)?;
    let shuffled_first = repeated(ds, n_reps, base_seed, &with_mode(SplitMode::ShuffledFirst), None, exec)?;
    let gap = shuffled_first.aggregate.mean - contiguous.aggregate.mean;
    Ok(BiasDemoReport {
        contiguous,
        shuffled_first,
        gap,
    })
}

/// Everything one `evaluate` invocation reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub protocol: Protocol,
    pub config: EvalConfigEcho,
    pub per_run: Vec<RunMetrics>,
    pub per_subject: Vec<SubjectSummary>,
    /// Across-run statistics (group) or across-subject-mean statistics
    /// (individual, LOSO).
    pub aggregate: AggregateMetrics,
    /// `trace / total` of the pooled confusion.
    pub pooled_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfigEcho {
    pub params: ProtocolParams,
    pub reps: usize,
    pub base_seed: u64,
    pub seed_rule: String,
    pub n_classes: usize,
    pub n_features: usize,
    pub subjects: Vec<String>,
}

pub const SEED_RULE: &str = "seed(rep r) = base_seed + r";

impl MetricsReport {
    fn echo<T: Scalar>(ds: &[&LabeledDataset<T>], params: &ProtocolParams, reps: usize, base_seed: u64) -> EvalConfigEcho {
        let mut subjects = Vec::new();
        for d in ds {
            for s in d.present_subjects() {
                subjects.push(d.subjects()[s].clone());
            }
        }
        EvalConfigEcho {
            params: params.clone(),
            reps,
            base_seed,
            seed_rule: SEED_RULE.into(),
            n_classes: ds.first().map(|d| d.n_classes()).unwrap_or(0),
            n_features: ds.first().map(|d| d.n_features()).unwrap_or(0),
            subjects,
        }
    }
}

/// Runs `protocol` over per-subject datasets and collects the report.
pub fn evaluate<T: Scalar>(
    protocol: Protocol,
    subjects: &[LabeledDataset<T>],
    reps: usize,
    base_seed: u64,
    params: &ProtocolParams,
    exec: &Executor,
) -> Result<MetricsReport, EvalError> {
    let refs: Vec<&LabeledDataset<T>> = subjects.iter().collect();
    let config = MetricsReport::echo(&refs, params, reps, base_seed);
    let (per_run, per_subject, aggregate) = match protocol {
        Protocol::Individual => {
            let mut per_run = Vec::new();
            let mut per_subject = Vec::new();
            for ds in subjects {
                let run = run_individual_protocol(ds, reps, base_seed, params, exec)?;
                per_subject.push(SubjectSummary {
                    subject: run.runs[0].subject.clone().unwrap_or_default(),
                    aggregate: run.aggregate,
                });
                per_run.extend(run.runs);
            }
            let overall = aggregate_of_means(&per_subject)?;
            (per_run, per_subject, overall)
        }
        Protocol::Group => {
            if subjects.len() < 2 {
                return Err(EvalError::TooFewSubjects(subjects.len()));
            }
            let group = LabeledDataset::concat(&refs)?;
            let run = run_group_protocol(&group, reps, base_seed, params, exec)?;
            (run.runs, Vec::new(), run.aggregate)
        }
        Protocol::Loso => {
            let r = run_loso_protocol(subjects, reps, base_seed, params, exec)?;
            (r.runs, r.per_subject, r.overall)
        }
    };
    let pooled_accuracy = accuracy_of(&aggregate.confusion);
    Ok(MetricsReport {
        protocol,
        config,
        per_run,
        per_subject,
        aggregate,
        pooled_accuracy,
    })
}

/// Confusion counts as CSV: K rows of K integers, no header.
pub fn confusion_csv(m: &Confusion) -> String {
    let mut out = String::new();
    for row in m {
        let cells: Vec<String> = row.iter().map(u64::to_string).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

fn pct(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

fn table_row(out: &mut String, name: &str, a: &AggregateMetrics) {
    let _ = writeln!(
        out,
        "{:<14}{:>10}{:>10}{:>10}{:>10}",
        name,
        pct(a.mean),
        pct(a.std),
        pct(a.max),
        pct(a.min)
    );
}

/// Plain-text table with Mean, Std., Max and Min columns.
pub fn text_report(report: &MetricsReport) -> String {
    let mut out = String::new();
    let title = match report.protocol {
        Protocol::Individual => "Individual model accuracy",
        Protocol::Group => "Group model accuracy",
        Protocol::Loso => "Leave-one-subject-out accuracy",
    };
    let _ = writeln!(out, "{title} ({} reps, base seed {})", report.config.reps, report.config.base_seed);
    let _ = writeln!(out, "{:<14}{:>10}{:>10}{:>10}{:>10}", "", "Mean", "Std.", "Max", "Min");
    for s in &report.per_subject {
        table_row(&mut out, &s.subject, &s.aggregate);
    }
    let label = if report.per_subject.is_empty() { "Group" } else { "Overall" };
    table_row(&mut out, label, &report.aggregate);
    let _ = writeln!(out, "Pooled accuracy: {}", pct(report.pooled_accuracy));
    let _ = writeln!(out, "Confusion (rows true, columns predicted):");
    for row in &report.aggregate.confusion {
        let cells: Vec<String> = row.iter().map(|c| format!("{c:>8}")).collect();
        let _ = writeln!(out, "{}", cells.join(""));
    }
    out
}

pub fn bias_text_report(report: &BiasDemoReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Look-ahead bias ({} paired reps)", report.contiguous.aggregate.n_runs);
    let _ = writeln!(out, "{:<14}{:>10}{:>10}{:>10}{:>10}", "", "Mean", "Std.", "Max", "Min");
    table_row(&mut out, "contiguous", &report.contiguous.aggregate);
    table_row(&mut out, "shuffled", &report.shuffled_first.aggregate);
    let _ = writeln!(out, "Gap: {:+.2} points", 100.0 * report.gap);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(acc: f64, seed: u64) -> RunMetrics {
        RunMetrics {
            seed,
            subject: None,
            accuracy: acc,
            confusion: vec![vec![1, 0], vec![0, 1]],
        }
    }

    #[test]
    fn confusion_examples() {
        assert_eq!(
            confusion_matrix(&[0, 1, 2], &[0, 1, 2], 3).unwrap(),
            vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1]]
        );
        let m = confusion_matrix(&[0, 1, 2], &[1, 1, 2], 3).unwrap();
        assert_eq!(m[0][1], 1);
        assert_eq!(m[1][1], 1);
        assert_eq!(m[2][2], 1);
        assert_eq!(m[0][0], 0);
        assert_eq!(confusion_matrix(&[], &[], 3).unwrap(), vec![vec![0; 3]; 3]);
        assert!(matches!(
            confusion_matrix(&[0, 3], &[0, 0], 3),
            Err(EvalError::LabelOutOfRange { label: 3, .. })
        ));
        assert!(matches!(confusion_matrix(&[0], &[], 3), Err(EvalError::LengthMismatch { .. })));
    }

    #[test]
    fn single_run_aggregate() {
        let a = aggregate(&[run(0.75, 1)]).unwrap();
        assert_eq!((a.mean, a.max, a.min, a.std), (0.75, 0.75, 0.75, 0.0));
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn aggregate_uses_population_std() {
        let a = aggregate(&[run(0.5, 0), run(1.0, 1)]).unwrap();
        assert_eq!(a.mean, 0.75);
        assert_eq!(a.std, 0.25);
        assert_eq!(a.confusion, vec![vec![2, 0], vec![0, 2]]);
    }

    #[test]
    fn aggregate_is_order_invariant() {
        let accs = [0.1, 0.7, 0.30000000000000004, 0.9, 0.2, 0.6];
        let runs: Vec<RunMetrics> = accs.iter().enumerate().map(|(i, &a)| run(a, i as u64)).collect();
        let mut rev = runs.clone();
        rev.reverse();
        let (a, b) = (aggregate(&runs).unwrap(), aggregate(&rev).unwrap());
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert_eq!(a.std.to_bits(), b.std.to_bits());
    }

    #[test]
    fn protocol_defaults() {
        let i = ProtocolParams::for_protocol(Protocol::Individual);
        assert_eq!(i.layer_sizes(64, 3), vec![64, 128, 128, 3]);
        assert_eq!((i.batch_size, i.epochs), (5, 8));
        let g = ProtocolParams::for_protocol(Protocol::Group);
        assert_eq!(g.layer_sizes(64, 3), vec![64, 256, 256, 3]);
        assert_eq!((g.batch_size, g.epochs), (40, 5));
        let l = ProtocolParams::for_protocol(Protocol::Loso);
        assert_eq!((l.batch_size, l.epochs), (120, 5));
        assert_eq!("loso".parse::<Protocol>().unwrap(), Protocol::Loso);
    }

    #[test]
    fn confusion_csv_layout() {
        assert_eq!(confusion_csv(&vec![vec![3, 1], vec![0, 4]]), "3,1\n0,4\n");
    }
}
