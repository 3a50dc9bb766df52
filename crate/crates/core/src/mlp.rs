//! Dense feed-forward classifier: relu hidden layers, softmax output,
//! sparse categorical cross-entropy and Adam.
//!
//! All parameters live in one flat buffer, layer by layer, weights before
//! biases. A weight block is row-major `[n_in][n_out]`, so a forward pass
//! is `z = a · W + b` with `a` holding one sample per row.

use rand::distr::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

/// Floor on the true-class probability inside the log.
pub const PROB_FLOOR: f64 = 1e-12;
pub const MODEL_FORMAT: &str = "nirs-mlp";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MlpError {
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: expected {expected} columns, got {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("invalid model file: {0}")]
    InvalidModelFile(String),
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![T::zero(); rows * cols])
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(rows.len(), cols, data)
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpConfig {
    /// Input, hidden..., output.
    pub layer_sizes: Vec<usize>,
    pub seed: u64,
}

impl MlpConfig {
    pub fn new(layer_sizes: Vec<usize>, seed: u64) -> Self {
        Self { layer_sizes, seed }
    }

    pub fn validate(&self) -> Result<(), MlpError> {
        if self.layer_sizes.len() < 3 {
            return Err(MlpError::InvalidConfig(
                "need input, at least one hidden and an output layer".into(),
            ));
        }
        if self.layer_sizes.contains(&0) {
            return Err(MlpError::InvalidConfig("layer sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn n_inputs(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn n_classes(&self) -> usize {
        *self.layer_sizes.last().expect("validated config")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            alpha: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<(), MlpError> {
        let ok = (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.alpha > 0.0
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(MlpError::InvalidConfig(format!("bad Adam constants {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub shuffle_each_epoch: bool,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(batch_size: usize, epochs: usize, seed: u64) -> Self {
        Self {
            batch_size,
            epochs,
            shuffle_each_epoch: true,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), MlpError> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(MlpError::InvalidConfig("batch size and epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// Offsets of one dense layer inside the flat parameter buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerSpan {
    n_in: usize,
    n_out: usize,
    w: usize,
    b: usize,
}

impl LayerSpan {
    fn weights<'a, T>(&self, buf: &'a [T]) -> &'a [T] {
        &buf[self.w..self.w + self.n_in * self.n_out]
    }

    fn bias<'a, T>(&self, buf: &'a [T]) -> &'a [T] {
        &buf[self.b..self.b + self.n_out]
    }
}

fn spans(sizes: &[usize]) -> Vec<LayerSpan> {
    let mut offset = 0;
    sizes
        .windows(2)
        .map(|w| {
            let span = LayerSpan {
                n_in: w[0],
                n_out: w[1],
                w: offset,
                b: offset + w[0] * w[1],
            };
            offset = span.b + w[1];
            span
        })
        .collect()
}

/// Gradients in the same flat layout as the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub values: Vec<T>,
    spans: Vec<LayerSpan>,
}

impl<T: Scalar> Gradients<T> {
    pub fn weights(&self, layer: usize) -> &[T] {
        self.spans[layer].weights(&self.values)
    }

    pub fn bias(&self, layer: usize) -> &[T] {
        self.spans[layer].bias(&self.values)
    }

    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |m, g| m.max(g.abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel<T> {
    config: MlpConfig,
    spans: Vec<LayerSpan>,
    params: Vec<T>,
    m: Vec<T>,
    v: Vec<T>,
    step: u64,
}

impl<T: Scalar> MlpModel<T> {
    /// Glorot-uniform weights, zero biases, zeroed optimizer state.
    pub fn init(cfg: &MlpConfig) -> Result<Self, MlpError> {
        cfg.validate()?;
        let spans = spans(&cfg.layer_sizes);
        let n_params = spans.last().map_or(0, |s| s.b + s.n_out);
        let mut params = vec![T::zero(); n_params];
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for s in &spans {
            let limit = (6.0 / (s.n_in + s.n_out) as f64).sqrt();
            let dist = Uniform::new(-limit, limit).expect("finite Glorot bound");
            for w in &mut params[s.w..s.b] {
                *w = T::lit(dist.sample(&mut rng));
            }
        }
        Ok(Self::from_parts(cfg.clone(), spans, params))
    }

    /// Model with explicit parameters in the flat layout.
    pub fn from_parameters(cfg: &MlpConfig, params: Vec<T>) -> Result<Self, MlpError> {
        cfg.validate()?;
        let spans = spans(&cfg.layer_sizes);
        let n_params = spans.last().map_or(0, |s| s.b + s.n_out);
        if params.len() != n_params {
            return Err(MlpError::InvalidConfig(format!(
                "expected {n_params} parameters, got {}",
                params.len()
            )));
        }
        Ok(Self::from_parts(cfg.clone(), spans, params))
    }

    fn from_parts(config: MlpConfig, spans: Vec<LayerSpan>, params: Vec<T>) -> Self {
        let n = params.len();
        Self {
            config,
            spans,
            params,
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            step: 0,
        }
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn n_layers(&self) -> usize {
        self.spans.len()
    }

    pub fn n_classes(&self) -> usize {
        self.config.n_classes()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn weights(&self, layer: usize) -> &[T] {
        self.spans[layer].weights(&self.params)
    }

    pub fn bias(&self, layer: usize) -> &[T] {
        self.spans[layer].bias(&self.params)
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[T], &[T]) {
        (&self.m, &self.v)
    }

    fn check_input(&self, cols: usize) -> Result<(), MlpError> {
        let expected = self.config.n_inputs();
        if cols != expected {
            return Err(MlpError::ShapeMismatch { expected, found: cols });
        }
        Ok(())
    }

    /// Activations of every layer; the last entry holds probabilities.
    fn forward_all(&self, batch: &Matrix<T>) -> Vec<Matrix<T>> {
        let mut acts: Vec<Matrix<T>> = Vec::with_capacity(self.spans.len());
        let last = self.spans.len() - 1;
        for (l, s) in self.spans.iter().enumerate() {
            let input = if l == 0 { batch } else { &acts[l - 1] };
            let mut z = affine(input, s.weights(&self.params), s.bias(&self.params), s.n_out);
            if l == last {
                softmax_rows(&mut z);
            } else {
                for v in &mut z.data {
                    if *v < T::zero() {
                        *v = T::zero();
                    }
                }
            }
            acts.push(z);
        }
        acts
    }

    /// Class probabilities, one row per sample.
    pub fn forward(&self, batch: &Matrix<T>) -> Result<Matrix<T>, MlpError> {
        self.check_input(batch.cols)?;
        Ok(self.forward_all(batch).pop().expect("at least one layer"))
    }

    /// Gradients of the mean cross-entropy over `batch`.
    pub fn backward(&self, batch: &Matrix<T>, labels: &[usize]) -> Result<Gradients<T>, MlpError> {
        self.loss_and_gradients(batch, labels).map(|(_, g)| g)
    }

    /// Batch loss (before any update) together with its gradients.
    pub fn loss_and_gradients(&self, batch: &Matrix<T>, labels: &[usize]) -> Result<(T, Gradients<T>), MlpError> {
        self.check_input(batch.cols)?;
        if labels.len() != batch.rows {
            return Err(MlpError::ShapeMismatch {
                expected: batch.rows,
                found: labels.len(),
            });
        }
        let acts = self.forward_all(batch);
        let probs = acts.last().expect("output layer");
        let loss_value = loss(probs, labels)?;

        let n = batch.rows;
        let k = self.n_classes();
        let inv_n = T::one() / T::lit(n as f64);
        // dL/dlogits = (p - onehot) / n
        let mut delta = probs.clone();
        for (i, &y) in labels.iter().enumerate() {
            delta.data[i * k + y] -= T::one();
        }
        for d in &mut delta.data {
            *d *= inv_n;
        }

        let mut grads = vec![T::zero(); self.params.len()];
        for l in (0..self.spans.len()).rev() {
            let s = self.spans[l];
            let input = if l == 0 { batch } else { &acts[l - 1] };
            {
                let (gw, gb) = grads[s.w..s.b + s.n_out].split_at_mut(s.n_in * s.n_out);
                for i in 0..n {
                    let drow = delta.row(i);
                    for (b, &d) in gb.iter_mut().zip(drow) {
                        *b += d;
                    }
                    let arow = input.row(i);
                    for (kk, &a) in arow.iter().enumerate() {
                        if a == T::zero() {
                            continue;
                        }
                        let gwk = &mut gw[kk * s.n_out..(kk + 1) * s.n_out];
                        for (g, &d) in gwk.iter_mut().zip(drow) {
                            *g += a * d;
                        }
                    }
                }
            }
            if l > 0 {
                let w = s.weights(&self.params);
                let mut prev = Matrix::zeros(n, s.n_in);
                for i in 0..n {
                    let drow = delta.row(i);
                    let arow = input.row(i);
                    let out = &mut prev.data[i * s.n_in..(i + 1) * s.n_in];
                    for (kk, o) in out.iter_mut().enumerate() {
                        // relu'(z) = 1 for z > 0, and 0 at z = 0
                        if arow[kk] > T::zero() {
                            let wk = &w[kk * s.n_out..(kk + 1) * s.n_out];
                            *o = wk.iter().zip(drow).fold(T::zero(), |acc, (&wv, &d)| acc + wv * d);
                        }
                    }
                }
                delta = prev;
            }
        }
        Ok((
            loss_value,
            Gradients {
                values: grads,
                spans: self.spans.clone(),
            },
        ))
    }

    /// One Adam update of every parameter.
    pub fn adam_step(&mut self, grads: &Gradients<T>, cfg: &AdamConfig) {
        self.step += 1;
        adam_update(&mut self.params, &grads.values, &mut self.m, &mut self.v, self.step, cfg);
    }

    /// Argmax class per row; ties go to the lowest index.
    pub fn predict(&self, x: &Matrix<T>) -> Result<Vec<usize>, MlpError> {
        let probs = self.forward(x)?;
        Ok((0..probs.rows).map(|i| argmax(probs.row(i))).collect())
    }

    pub fn to_file(&self) -> ModelFile<T> {
        ModelFile {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            layer_sizes: self.config.layer_sizes.clone(),
            seed: self.config.seed,
            layers: self
                .spans
                .iter()
                .map(|s| LayerFile {
                    weights: s.weights(&self.params).chunks(s.n_out).map(<[T]>::to_vec).collect(),
                    bias: s.bias(&self.params).to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_file(file: &ModelFile<T>) -> Result<Self, MlpError> {
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(MlpError::InvalidModelFile(format!(
                "unsupported format {} v{}",
                file.format, file.version
            )));
        }
        let cfg = MlpConfig::new(file.layer_sizes.clone(), file.seed);
        cfg.validate()?;
        let spans = spans(&cfg.layer_sizes);
        if file.layers.len() != spans.len() {
            return Err(MlpError::InvalidModelFile("layer count mismatch".into()));
        }
        let mut params = Vec::new();
        for (s, layer) in spans.iter().zip(&file.layers) {
            if layer.weights.len() != s.n_in
                || layer.weights.iter().any(|r| r.len() != s.n_out)
                || layer.bias.len() != s.n_out
            {
                return Err(MlpError::InvalidModelFile("layer shape mismatch".into()));
            }
            params.extend(layer.weights.iter().flatten().copied());
            params.extend_from_slice(&layer.bias);
        }
        Self::from_parameters(&cfg, params)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_file()).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, MlpError> {
        let file: ModelFile<T> =
            serde_json::from_str(text).map_err(|e| MlpError::InvalidModelFile(e.to_string()))?;
        Self::from_file(&file)
    }
}

/// Versioned on-disk model: row-major `[n_in][n_out]` weights per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct ModelFile<T> {
    pub format: String,
    pub version: u32,
    pub layer_sizes: Vec<usize>,
    pub seed: u64,
    pub layers: Vec<LayerFile<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct LayerFile<T> {
    pub weights: Vec<Vec<T>>,
    pub bias: Vec<T>,
}

fn affine<T: Scalar>(input: &Matrix<T>, w: &[T], b: &[T], n_out: usize) -> Matrix<T> {
    let n_in = input.cols;
    let mut z = Matrix::zeros(input.rows, n_out);
    for i in 0..input.rows {
        let zi = &mut z.data[i * n_out..(i + 1) * n_out];
        zi.copy_from_slice(b);
        for (k, &a) in input.row(i).iter().enumerate() {
            if a == T::zero() {
                continue;
            }
            let wk = &w[k * n_out..(k + 1) * n_out];
            for (zj, &wv) in zi.iter_mut().zip(wk) {
                *zj += a * wv;
            }
        }
    }
    debug_assert_eq!(w.len(), n_in * n_out);
    z
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Scalar>(z: &mut Matrix<T>) {
    let k = z.cols;
    for row in z.data.chunks_mut(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Mean of `-ln p[y]` with `p` floored at [`PROB_FLOOR`].
pub fn loss<T: Scalar>(probs: &Matrix<T>, labels: &[usize]) -> Result<T, MlpError> {
    if labels.len() != probs.rows {
        return Err(MlpError::ShapeMismatch {
            expected: probs.rows,
            found: labels.len(),
        });
    }
    let floor = T::lit(PROB_FLOOR);
    let mut total = T::zero();
    for (i, &y) in labels.iter().enumerate() {
        if y >= probs.cols {
            return Err(MlpError::LabelOutOfRange {
                label: y,
                n_classes: probs.cols,
            });
        }
        total += -probs.row(i)[y].max(floor).ln();
    }
    Ok(total / T::lit(labels.len().max(1) as f64))
}

/// First index of the maximum.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Adam on flat slices; `t` is the step count after incrementing.
pub fn adam_update<T: Scalar>(params: &mut [T], grads: &[T], m: &mut [T], v: &mut [T], t: u64, cfg: &AdamConfig) {
    let b1 = T::lit(cfg.beta1);
    let b2 = T::lit(cfg.beta2);
    let alpha = T::lit(cfg.alpha);
    let eps = T::lit(cfg.epsilon);
    let one = T::one();
    let t = i32::try_from(t).unwrap_or(i32::MAX);
    let bc1 = one - b1.powi(t);
    let bc2 = one - b2.powi(t);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= alpha * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Copies rows `indices` of the sample-major `x` into a batch matrix.
pub fn gather_rows<T: Scalar>(x: &[T], n_features: usize, indices: &[usize]) -> Matrix<T> {
    let mut data = Vec::with_capacity(indices.len() * n_features);
    for &i in indices {
        data.extend_from_slice(&x[i * n_features..(i + 1) * n_features]);
    }
    Matrix::new(indices.len(), n_features, data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport<T> {
    /// Sample-weighted mean batch loss of each epoch.
    pub loss_history: Vec<T>,
    pub steps: u64,
}

/// Mini-batch training. The last partial batch of an epoch is kept at its
/// natural size, so each epoch takes `ceil(n / batch_size)` steps.
pub fn train<T: Scalar>(
    model: &mut MlpModel<T>,
    x: &[T],
    y: &[usize],
    tcfg: &TrainConfig,
    acfg: &AdamConfig,
) -> Result<TrainReport<T>, MlpError> {
    tcfg.validate()?;
    acfg.validate()?;
    let n = y.len();
    if n == 0 {
        return Err(MlpError::EmptyTrainingSet);
    }
    let d = model.config.n_inputs();
    if x.len() != n * d {
        return Err(MlpError::ShapeMismatch {
            expected: n * d,
            found: x.len(),
        });
    }
    if let Some(&label) = y.iter().find(|&&l| l >= model.n_classes()) {
        return Err(MlpError::LabelOutOfRange {
            label,
            n_classes: model.n_classes(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(tcfg.epochs);
    let mut steps = 0;
    for _ in 0..tcfg.epochs {
        if tcfg.shuffle_each_epoch {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = T::zero();
        for chunk in order.chunks(tcfg.batch_size) {
            let batch = gather_rows(x, d, chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| y[i]).collect();
            let (l, g) = model.loss_and_gradients(&batch, &labels)?;
            epoch_loss += l * T::lit(chunk.len() as f64);
            model.adam_step(&g, acfg);
            steps += 1;
        }
        history.push(epoch_loss / T::lit(n as f64));
    }
    Ok(TrainReport {
        loss_history: history,
        steps,
    })
}
