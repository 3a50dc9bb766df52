//! Labeled sample sets and the three split regimes.
//!
//! `contiguous_split` holds out one contiguous time block per (subject,
//! class) and only shuffles afterwards, so no test sample has an adjacent
//! training neighbour from the same session. `shuffled_split` is the
//! shuffle-first variant that leaks temporal neighbours across the split;
//! it exists to measure that leakage.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::HemoSeries;
use crate::ingest::LabelTrack;
use crate::preprocess::BaselineWindow;
use crate::scalar::Scalar;

pub const DEFAULT_TEST_FRAC: f64 = 0.2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("no samples fall inside a labeled interval")]
    NoLabeledSamples,
    #[error("class {0} has no samples")]
    MissingClass(usize),
    #[error("test block for subject `{subject}` class {class} is empty ({count} samples)")]
    BlockTooSmall { subject: String, class: usize, count: usize },
    #[error("test fraction must lie in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("need at least 2 subjects, got {0}")]
    TooFewSubjects(usize),
    #[error("dataset is not time ordered")]
    NotTimeOrdered,
    #[error("inconsistent dataset: {0}")]
    Inconsistent(String),
    #[error("feature csv row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("csv: {0}")]
    Csv(String),
}

impl From<csv::Error> for DatasetError {
    fn from(e: csv::Error) -> Self {
        DatasetError::Csv(e.to_string())
    }
}

/// Sample-major feature matrix with labels, subject identity and time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset<T> {
    x: Vec<T>,
    n_features: usize,
    y: Vec<usize>,
    n_classes: usize,
    subjects: Vec<String>,
    subject_of: Vec<usize>,
    sample_time: Vec<f64>,
    time_ordered: bool,
}

impl<T: Scalar> LabeledDataset<T> {
    pub fn new(
        x: Vec<T>,
        n_features: usize,
        y: Vec<usize>,
        n_classes: usize,
        subjects: Vec<String>,
        subject_of: Vec<usize>,
        sample_time: Vec<f64>,
    ) -> Result<Self, DatasetError> {
        let n = y.len();
        if n_features == 0 || x.len() != n * n_features {
            return Err(DatasetError::Inconsistent(format!(
                "{} values for {n} samples of {n_features} features",
                x.len()
            )));
        }
        if subject_of.len() != n || sample_time.len() != n {
            return Err(DatasetError::Inconsistent("per-sample columns differ in length".into()));
        }
        if let Some(&bad) = y.iter().find(|&&l| l >= n_classes) {
            return Err(DatasetError::Inconsistent(format!("label {bad} >= {n_classes} classes")));
        }
        if subject_of.iter().any(|&s| s >= subjects.len()) {
            return Err(DatasetError::Inconsistent("subject index out of range".into()));
        }
        let mut ds = Self {
            x,
            n_features,
            y,
            n_classes,
            subjects,
            subject_of,
            sample_time,
            time_ordered: false,
        };
        ds.time_ordered = ds.compute_time_ordered();
        Ok(ds)
    }

    fn compute_time_ordered(&self) -> bool {
        let mut last: Vec<f64> = vec![f64::NEG_INFINITY; self.subjects.len()];
        for (&s, &t) in self.subject_of.iter().zip(&self.sample_time) {
            if t < last[s] {
                return false;
            }
            last[s] = t;
        }
        true
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn x(&self) -> &[T] {
        &self.x
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.x[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn labels(&self) -> &[usize] {
        &self.y
    }

    pub fn subjects(&self) -> &[String] {
        &self.subjects
    }

    pub fn subject_index(&self, i: usize) -> usize {
        self.subject_of[i]
    }

    pub fn subject_of(&self, i: usize) -> &str {
        &self.subjects[self.subject_of[i]]
    }

    pub fn sample_times(&self) -> &[f64] {
        &self.sample_time
    }

    pub fn time_ordered(&self) -> bool {
        self.time_ordered
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in &self.y {
            counts[l] += 1;
        }
        counts
    }

    pub fn is_balanced(&self) -> bool {
        let counts = self.class_counts();
        counts.windows(2).all(|w| w[0] == w[1])
    }

    /// Rows `indices` in the given order; subject table is kept.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut x = Vec::with_capacity(indices.len() * self.n_features);
        for &i in indices {
            x.extend_from_slice(self.row(i));
        }
        let mut ds = Self {
            x,
            n_features: self.n_features,
            y: indices.iter().map(|&i| self.y[i]).collect(),
            n_classes: self.n_classes,
            subjects: self.subjects.clone(),
            subject_of: indices.iter().map(|&i| self.subject_of[i]).collect(),
            sample_time: indices.iter().map(|&i| self.sample_time[i]).collect(),
            time_ordered: false,
        };
        ds.time_ordered = ds.compute_time_ordered();
        ds
    }

    /// Concatenates datasets, merging subject tables by name.
    pub fn concat(parts: &[&Self]) -> Result<Self, DatasetError> {
        let first = parts
            .first()
            .ok_or_else(|| DatasetError::Inconsistent("nothing to concatenate".into()))?;
        let n_features = first.n_features;
        let n_classes = parts.iter().map(|p| p.n_classes).max().unwrap_or(0);
        let mut subjects: Vec<String> = Vec::new();
        let mut out_x = Vec::new();
        let mut y = Vec::new();
        let mut subject_of = Vec::new();
        let mut sample_time = Vec::new();
        for p in parts {
            if p.n_features != n_features {
                return Err(DatasetError::Inconsistent("feature counts differ".into()));
            }
            let remap: Vec<usize> = p
                .subjects
                .iter()
                .map(|name| match subjects.iter().position(|s| s == name) {
                    Some(i) => i,
                    None => {
                        subjects.push(name.clone());
                        subjects.len() - 1
                    }
                })
                .collect();
            out_x.extend_from_slice(&p.x);
            y.extend_from_slice(&p.y);
            subject_of.extend(p.subject_of.iter().map(|&s| remap[s]));
            sample_time.extend_from_slice(&p.sample_time);
        }
        Self::new(out_x, n_features, y, n_classes, subjects, subject_of, sample_time)
    }

    /// Subjects that actually own samples, in first-appearance order.
    pub fn present_subjects(&self) -> Vec<usize> {
        let mut seen = vec![false; self.subjects.len()];
        let mut out = Vec::new();
        for &s in &self.subject_of {
            if !seen[s] {
                seen[s] = true;
                out.push(s);
            }
        }
        out
    }
}

/// Keeps samples inside labeled intervals, outside the baseline window and
/// clear of filter warm-up. Time order is preserved.
pub fn label_samples<T: Scalar>(
    features: &HemoSeries<T>,
    track: &LabelTrack,
    warmup: &[bool],
    baseline: Option<BaselineWindow>,
    subject_id: &str,
) -> Result<LabeledDataset<T>, DatasetError> {
    if warmup.len() != features.n_samples() {
        return Err(DatasetError::Inconsistent("warm-up flags do not match series length".into()));
    }
    let n_features = features.n_features();
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut times = Vec::new();
    for (k, &t) in features.times.iter().enumerate() {
        if warmup[k] || baseline.is_some_and(|b| b.contains(t)) {
            continue;
        }
        if let Some(label) = track.label_at(t) {
            features.extend_feature_row(k, &mut x);
            y.push(label);
            times.push(t);
        }
    }
    if y.is_empty() {
        return Err(DatasetError::NoLabeledSamples);
    }
    let n = y.len();
    LabeledDataset::new(
        x,
        n_features,
        y,
        track.n_classes(),
        vec![subject_id.to_string()],
        vec![0; n],
        times,
    )
}

/// Truncates every class to the smallest class count by dropping each
/// class's trailing samples.
pub fn balance_classes<T: Scalar>(ds: &LabeledDataset<T>) -> Result<LabeledDataset<T>, DatasetError> {
    let counts = ds.class_counts();
    if let Some(missing) = counts.iter().position(|&c| c == 0) {
        return Err(DatasetError::MissingClass(missing));
    }
    let keep = *counts.iter().min().expect("at least one class");
    if counts.iter().all(|&c| c == keep) {
        return Ok(ds.clone());
    }
    let mut taken = vec![0; ds.n_classes()];
    let indices: Vec<usize> = (0..ds.len())
        .filter(|&i| {
            let l = ds.labels()[i];
            taken[l] += 1;
            taken[l] <= keep
        })
        .collect();
    Ok(ds.subset(&indices))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    #[default]
    Contiguous,
    ShuffledFirst,
}

impl std::str::FromStr for SplitMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "contiguous" => Ok(SplitMode::Contiguous),
            "shuffled-first" | "shuffled" => Ok(SplitMode::ShuffledFirst),
            other => Err(format!("unknown split mode `{other}`")),
        }
    }
}

/// Position of one held-out block inside a (subject, class) sample list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestBlock {
    pub subject: String,
    pub class: usize,
    /// Offset of the block within the group's time-ordered samples.
    pub start: usize,
    pub len: usize,
    /// Samples in the group.
    pub group_len: usize,
}

/// Split manifest: enough to reproduce a partition exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub mode: SplitMode,
    pub seed: u64,
    pub test_frac: f64,
    pub blocks: Vec<TestBlock>,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

fn block_len(count: usize, test_frac: f64) -> usize {
    // guard against 0.29 * 100 = 28.999...
    (count as f64 * test_frac + 1e-9).floor() as usize
}

fn check_fraction(test_frac: f64) -> Result<(), DatasetError> {
    if test_frac > 0.0 && test_frac < 1.0 {
        Ok(())
    } else {
        Err(DatasetError::InvalidFraction(test_frac))
    }
}

/// Indices grouped by (subject, class), each list in dataset order.
fn groups<T: Scalar>(ds: &LabeledDataset<T>) -> BTreeMap<(usize, usize), Vec<usize>> {
    let mut map: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for i in 0..ds.len() {
        map.entry((ds.subject_index(i), ds.labels()[i])).or_default().push(i);
    }
    map
}

/// One uniformly placed contiguous test block of `floor(n * test_frac)`
/// samples per (subject, class); both sides are shuffled afterwards.
pub fn contiguous_split<T: Scalar>(
    ds: &LabeledDataset<T>,
    test_frac: f64,
    seed: u64,
) -> Result<SplitResult, DatasetError> {
    check_fraction(test_frac)?;
    if !ds.time_ordered() {
        return Err(DatasetError::NotTimeOrdered);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_idx = Vec::with_capacity(ds.len());
    let mut test_idx = Vec::new();
    let mut blocks = Vec::new();
    for ((subject, class), members) in groups(ds) {
        let len = block_len(members.len(), test_frac);
        if len == 0 {
            return Err(DatasetError::BlockTooSmall {
                subject: ds.subjects()[subject].clone(),
                class,
                count: members.len(),
            });
        }
        let start = rng.random_range(0..=members.len() - len);
        test_idx.extend_from_slice(&members[start..start + len]);
        train_idx.extend_from_slice(&members[..start]);
        train_idx.extend_from_slice(&members[start + len..]);
        blocks.push(TestBlock {
            subject: ds.subjects()[subject].clone(),
            class,
            start,
            len,
            group_len: members.len(),
        });
    }
    train_idx.shuffle(&mut rng);
    test_idx.shuffle(&mut rng);
    Ok(SplitResult {
        mode: SplitMode::Contiguous,
        seed,
        test_frac,
        blocks,
        train_idx,
        test_idx,
    })
}

/// Shuffles everything, then takes the first `floor(n_c * test_frac)`
/// samples of each class as test.
pub fn shuffled_split<T: Scalar>(
    ds: &LabeledDataset<T>,
    test_frac: f64,
    seed: u64,
) -> Result<SplitResult, DatasetError> {
    check_fraction(test_frac)?;
    let counts = ds.class_counts();
    let quota: Vec<usize> = counts.iter().map(|&c| block_len(c, test_frac)).collect();
    for (class, (&q, &c)) in quota.iter().zip(&counts).enumerate() {
        if q == 0 && c > 0 {
            return Err(DatasetError::BlockTooSmall {
                subject: "*".into(),
                class,
                count: c,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut rng);
    let mut taken = vec![0; ds.n_classes()];
    let mut train_idx = Vec::with_capacity(ds.len());
    let mut test_idx = Vec::new();
    for i in order {
        let l = ds.labels()[i];
        if taken[l] < quota[l] {
            taken[l] += 1;
            test_idx.push(i);
        } else {
            train_idx.push(i);
        }
    }
    Ok(SplitResult {
        mode: SplitMode::ShuffledFirst,
        seed,
        test_frac,
        blocks: Vec::new(),
        train_idx,
        test_idx,
    })
}

pub fn split<T: Scalar>(
    ds: &LabeledDataset<T>,
    mode: SplitMode,
    test_frac: f64,
    seed: u64,
) -> Result<SplitResult, DatasetError> {
    match mode {
        SplitMode::Contiguous => contiguous_split(ds, test_frac, seed),
        SplitMode::ShuffledFirst => shuffled_split(ds, test_frac, seed),
    }
}

/// One leave-one-subject-out fold over a list of per-subject datasets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LosoFold {
    pub test_subject: usize,
    pub train_subjects: Vec<usize>,
}

impl LosoFold {
    /// Builds `(train, test)` from the group the fold was derived from.
    pub fn materialize<T: Scalar>(
        &self,
        group: &[LabeledDataset<T>],
    ) -> Result<(LabeledDataset<T>, LabeledDataset<T>), DatasetError> {
        let parts: Vec<&LabeledDataset<T>> = self.train_subjects.iter().map(|&s| &group[s]).collect();
        Ok((LabeledDataset::concat(&parts)?, group[self.test_subject].clone()))
    }
}

/// One fold per subject; fold `k` holds out subject `k`.
pub fn loso_splits<T: Scalar>(group: &[LabeledDataset<T>]) -> Result<Vec<LosoFold>, DatasetError> {
    if group.len() < 2 {
        return Err(DatasetError::TooFewSubjects(group.len()));
    }
    Ok((0..group.len())
        .map(|k| LosoFold {
            test_subject: k,
            train_subjects: (0..group.len()).filter(|&j| j != k).collect(),
        })
        .collect())
}

/// Writes `t_s,subject,label,f0..` rows with round-trip float text.
pub fn write_feature_csv<T: Scalar, W: Write>(ds: &LabeledDataset<T>, writer: W) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(writer);
    let mut header = String::from("t_s,subject,label");
    for f in 0..ds.n_features() {
        header.push_str(&format!(",f{f}"));
    }
    writeln!(w, "{header}")?;
    let mut line = String::new();
    for i in 0..ds.len() {
        line.clear();
        line.push_str(&format!("{},{},{}", ds.sample_times()[i], ds.subject_of(i), ds.labels()[i]));
        for v in ds.row(i) {
            line.push_str(&format!(",{}", v));
        }
        line.push('\n');
        w.write_all(line.as_bytes())?;
    }
    w.flush()
}

/// Reads a feature CSV. Class count is `max(label) + 1` unless given.
pub fn read_feature_csv<T: Scalar, R: Read>(
    reader: R,
    n_classes: Option<usize>,
) -> Result<LabeledDataset<T>, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.len() < 4 || header[..3] != ["t_s", "subject", "label"] {
        return Err(DatasetError::MalformedRow {
            row: 0,
            reason: "header must start with t_s,subject,label followed by features".into(),
        });
    }
    for (j, name) in header[3..].iter().enumerate() {
        if *name != format!("f{j}") {
            return Err(DatasetError::MalformedRow {
                row: 0,
                reason: format!("unexpected column `{name}`"),
            });
        }
    }
    let n_features = header.len() - 3;
    let mut subjects: Vec<String> = Vec::new();
    let (mut x, mut y, mut subject_of, mut times) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != header.len() {
            return Err(DatasetError::MalformedRow {
                row,
                reason: format!("expected {} columns, found {}", header.len(), record.len()),
            });
        }
        let bad = |what: &str| DatasetError::MalformedRow {
            row,
            reason: format!("bad {what}"),
        };
        times.push(record[0].parse::<f64>().map_err(|_| bad("t_s"))?);
        let name = &record[1];
        let s = match subjects.iter().position(|s| s == name) {
            Some(s) => s,
            None => {
                subjects.push(name.to_string());
                subjects.len() - 1
            }
        };
        subject_of.push(s);
        y.push(record[2].parse::<usize>().map_err(|_| bad("label"))?);
        for field in record.iter().skip(3) {
            let v: f64 = field.parse().map_err(|_| bad("feature value"))?;
            x.push(T::lit(v));
        }
    }
    let k = n_classes.unwrap_or_else(|| y.iter().map(|&l| l + 1).max().unwrap_or(0));
    LabeledDataset::new(x, n_features, y, k, subjects, subject_of, times)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::compose_features;
    use crate::ingest::LabelInterval;
    use std::collections::HashSet;

    /// One subject, `counts[c]` consecutive samples of class `c`.
    fn blocks_dataset(counts: &[usize]) -> LabeledDataset<f64> {
        let mut y = Vec::new();
        for (c, &n) in counts.iter().enumerate() {
            y.extend(std::iter::repeat(c).take(n));
        }
        let n = y.len();
        LabeledDataset::new(
            (0..n).map(|i| i as f64).collect(),
            1,
            y,
            counts.len(),
            vec!["s".into()],
            vec![0; n],
            (0..n).map(|i| i as f64 * 0.25).collect(),
        )
        .unwrap()
    }

    fn hemo(n: usize) -> HemoSeries<f64> {
        let times: Vec<f64> = (0..n).map(|k| k as f64 / 4.0).collect();
        compose_features(times, vec![vec![1.0; n]], vec![vec![0.5; n]]).unwrap()
    }

    #[test]
    fn four_minute_interval_yields_960_samples() {
        let h = hemo(4 * 700);
        let track = LabelTrack::new(
            vec![LabelInterval::new(120.0, 360.0, 0), LabelInterval::new(420.0, 660.0, 1)],
            2,
        )
        .unwrap();
        let warm = vec![false; h.n_samples()];
        let ds = label_samples(&h, &track, &warm, Some(BaselineWindow::default()), "s").unwrap();
        assert_eq!(ds.class_counts(), vec![960, 960]);
        assert_eq!(ds.n_features(), 4);
        assert!(ds.time_ordered());
        // dead band 360..420 excluded
        assert!(ds.sample_times().iter().all(|&t| !(360.0..420.0).contains(&t)));
    }

    #[test]
    fn warmup_and_baseline_dropped() {
        let h = hemo(40);
        let track = LabelTrack::new(vec![LabelInterval::new(0.0, 10.0, 0)], 1).unwrap();
        let mut warm = vec![false; 40];
        warm[39] = true;
        let base = BaselineWindow::new(0.0, 1.0);
        let ds = label_samples(&h, &track, &warm, Some(base), "s").unwrap();
        assert_eq!(ds.len(), 35);
        assert_eq!(ds.sample_times()[0], 1.0);
    }

    #[test]
    fn empty_track_has_no_samples() {
        let h = hemo(40);
        let track = LabelTrack::new(vec![], 3).unwrap();
        let err = label_samples(&h, &track, &[false; 40], None, "s").unwrap_err();
        assert_eq!(err, DatasetError::NoLabeledSamples);
    }

    #[test]
    fn balancing_truncates_to_minimum() {
        let ds = blocks_dataset(&[960, 960, 950]);
        let b = balance_classes(&ds).unwrap();
        assert_eq!(b.class_counts(), vec![950, 950, 950]);
        // trailing samples of classes 0 and 1 dropped
        assert_eq!(b.row(949)[0], 949.0);
        assert_eq!(b.row(950)[0], 960.0);
        assert!(b.time_ordered());
        let again = balance_classes(&b).unwrap();
        assert_eq!(again, b);
        let missing = blocks_dataset(&[5, 0, 5]);
        assert_eq!(balance_classes(&missing).unwrap_err(), DatasetError::MissingClass(1));
    }

    #[test]
    fn contiguous_split_sizes() {
        let ds = blocks_dataset(&[950, 950, 950]);
        let s = contiguous_split(&ds, 0.2, 11).unwrap();
        assert_eq!(s.test_idx.len(), 570);
        assert_eq!(s.train_idx.len(), 2280);
        let test: HashSet<_> = s.test_idx.iter().collect();
        assert!(s.train_idx.iter().all(|i| !test.contains(i)));
        assert_eq!(s.blocks.len(), 3);
        assert!(s.blocks.iter().all(|b| b.len == 190 && b.start + b.len <= 950));
    }

    #[test]
    fn block_too_small_boundary() {
        let ds = blocks_dataset(&[3, 3, 3]);
        assert!(matches!(
            contiguous_split(&ds, 0.2, 0),
            Err(DatasetError::BlockTooSmall { count: 3, .. })
        ));
        let ds = blocks_dataset(&[5, 5, 5]);
        assert_eq!(contiguous_split(&ds, 0.2, 0).unwrap().test_idx.len(), 3);
    }

    #[test]
    fn split_is_deterministic() {
        let ds = blocks_dataset(&[100, 100]);
        assert_eq!(contiguous_split(&ds, 0.2, 5).unwrap(), contiguous_split(&ds, 0.2, 5).unwrap());
        assert_eq!(shuffled_split(&ds, 0.2, 5).unwrap(), shuffled_split(&ds, 0.2, 5).unwrap());
    }

    #[test]
    fn shuffled_split_matches_sizes_and_varies_with_seed() {
        let ds = blocks_dataset(&[50, 50]);
        let a = shuffled_split(&ds, 0.2, 1).unwrap();
        let b = shuffled_split(&ds, 0.2, 2).unwrap();
        let c = contiguous_split(&ds, 0.2, 1).unwrap();
        assert_eq!(a.test_idx.len(), c.test_idx.len());
        assert_eq!(a.train_idx.len(), c.train_idx.len());
        let sa: HashSet<_> = a.test_idx.iter().collect();
        let sb: HashSet<_> = b.test_idx.iter().collect();
        assert_ne!(sa, sb);
        assert!(a.train_idx.iter().all(|i| !sa.contains(i)));
    }

    #[test]
    fn invalid_fraction() {
        let ds = blocks_dataset(&[10]);
        assert_eq!(contiguous_split(&ds, 1.0, 0).unwrap_err(), DatasetError::InvalidFraction(1.0));
        assert_eq!(shuffled_split(&ds, 0.0, 0).unwrap_err(), DatasetError::InvalidFraction(0.0));
    }

    fn subject(name: &str, n: usize) -> LabeledDataset<f64> {
        LabeledDataset::new(
            vec![0.0; n],
            1,
            (0..n).map(|i| i % 2).collect(),
            2,
            vec![name.into()],
            vec![0; n],
            (0..n).map(|i| i as f64).collect(),
        )
        .unwrap()
    }

    #[test]
    fn loso_one_fold_per_subject() {
        let group: Vec<_> = (0..9).map(|k| subject(&format!("S{k}"), 4)).collect();
        let folds = loso_splits(&group).unwrap();
        assert_eq!(folds.len(), 9);
        for (k, f) in folds.iter().enumerate() {
            assert_eq!(f.test_subject, k);
            assert_eq!(f.train_subjects.len(), 8);
            assert!(!f.train_subjects.contains(&k));
            let (train, test) = f.materialize(&group).unwrap();
            assert_eq!(train.len(), 32);
            assert_eq!(test.subject_of(0), format!("S{k}"));
            assert!((0..train.len()).all(|i| train.subject_of(i) != format!("S{k}")));
        }
        assert_eq!(loso_splits(&group[..1]).unwrap_err(), DatasetError::TooFewSubjects(1));
    }

    #[test]
    fn concat_merges_subject_tables() {
        let a = subject("A", 4);
        let b = subject("B", 2);
        let ab = LabeledDataset::concat(&[&a, &b, &a]).unwrap();
        assert_eq!(ab.subjects(), &["A".to_string(), "B".to_string()]);
        assert_eq!(ab.len(), 10);
        assert_eq!(ab.present_subjects(), vec![0, 1]);
        // A's times restart, so the repeated block breaks time order
        assert!(!ab.time_ordered());
    }

    #[test]
    fn feature_csv_round_trip() {
        let ds = blocks_dataset(&[3, 2]);
        let mut buf = Vec::new();
        write_feature_csv(&ds, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t_s,subject,label,f0\n"));
        let back: LabeledDataset<f64> = read_feature_csv(buf.as_slice(), None).unwrap();
        assert_eq!(back, ds);
    }
}
