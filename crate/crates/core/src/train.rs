//! Transductive training: one full-graph step per epoch, loss on training
//! rows, early stopping on validation, a single test evaluation at the end.

use std::cell::Cell;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ProcessedDataset, Split, Target, Task, STD_FLOOR};
use crate::embed::{splitmix64, EmbeddingMatrix};
use crate::gnnhead::{
    backward, forward, init_params, save_checkpoint, GradientSet, GraphHeadConfig, GraphHeadParams, HeadError,
    HeadTask, MessageGraph,
};
use crate::graph::BipartiteGraph;
use crate::scalar::{Precision, Scalar};
use crate::tensor::{Linear, Matrix};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error("loss mask selects no rows")]
    EmptyMask,
    #[error("metric needs at least one prediction")]
    EmptyInput,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("dataset has no {0:?} rows")]
    EmptySplit(Split),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_epochs: 300,
            patience: 20,
            seed: 0,
            precision: Precision::F32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.patience == 0 {
            return Err(TrainError::InvalidConfig("patience must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(TrainError::InvalidConfig("adam betas must lie in [0, 1)".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(TrainError::InvalidConfig("epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Targets seen by the loss: one entry per row, only masked rows are read.
#[derive(Debug, Clone, Copy)]
pub enum LossTargets<'a> {
    Classes(&'a [usize]),
    Values(&'a [f64]),
}

/// Mean cross-entropy (classification) or mean squared error (regression)
/// over the rows selected by `mask`, and its gradient with respect to
/// `predictions` (zero on unselected rows).
pub fn loss<T: Scalar>(predictions: &Matrix<T>, targets: LossTargets<'_>, mask: &[bool]) -> Result<(T, Matrix<T>)> {
    let n = predictions.rows();
    if mask.len() != n {
        return Err(TrainError::ShapeMismatch(format!("mask has {} rows, predictions {n}", mask.len())));
    }
    let m = mask.iter().filter(|&&b| b).count();
    if m == 0 {
        return Err(TrainError::EmptyMask);
    }
    let inv_m = T::one() / T::lit(m as f64);
    let mut grad = predictions.zeros_like();
    let mut total = T::zero();
    match targets {
        LossTargets::Classes(labels) => {
            if labels.len() != n {
                return Err(TrainError::ShapeMismatch("label count differs from prediction rows".into()));
            }
            let c = predictions.cols();
            for i in (0..n).filter(|&i| mask[i]) {
                let row = predictions.row(i);
                let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
                let log_z = max + sum.ln();
                let y = labels[i];
                if y >= c {
                    return Err(TrainError::ShapeMismatch(format!("label {y} with {c} outputs")));
                }
                total += log_z - row[y];
                let g = grad.row_mut(i);
                for (k, gk) in g.iter_mut().enumerate() {
                    let p = (row[k] - log_z).exp();
                    *gk = (p - if k == y { T::one() } else { T::zero() }) * inv_m;
                }
            }
        }
        LossTargets::Values(values) => {
            if values.len() != n || predictions.cols() != 1 {
                return Err(TrainError::ShapeMismatch("regression needs one output per row".into()));
            }
            let two = T::lit(2.0);
            for i in (0..n).filter(|&i| mask[i]) {
                let diff = predictions.get(i, 0) - T::lit(values[i]);
                total += diff * diff;
                grad.set(i, 0, two * diff * inv_m);
            }
        }
    }
    Ok((total * inv_m, grad))
}

/// Unweighted mean of per-class F1 over `0..num_classes`. Precision, recall
/// and F1 are 0 whenever their denominator is 0, so a class absent from both
/// predictions and truth contributes 0.
pub fn macro_f1(predicted: &[usize], truth: &[usize], num_classes: usize) -> Result<f64> {
    if predicted.is_empty() || num_classes == 0 {
        return Err(TrainError::EmptyInput);
    }
    if predicted.len() != truth.len() {
        return Err(TrainError::ShapeMismatch("prediction and target lengths differ".into()));
    }
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fneg = vec![0usize; num_classes];
    for (&p, &t) in predicted.iter().zip(truth) {
        if p == t {
            tp[t] += 1;
        } else {
            fp[p] += 1;
            fneg[t] += 1;
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let total: f64 = (0..num_classes)
        .map(|c| {
            let precision = ratio(tp[c], tp[c] + fp[c]);
            let recall = ratio(tp[c], tp[c] + fneg[c]);
            if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            }
        })
        .sum();
    Ok(total / num_classes as f64)
}

pub fn rmse(predicted: &[f64], truth: &[f64]) -> Result<f64> {
    if predicted.is_empty() {
        return Err(TrainError::EmptyInput);
    }
    if predicted.len() != truth.len() {
        return Err(TrainError::ShapeMismatch("prediction and target lengths differ".into()));
    }
    let mse = predicted.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / predicted.len() as f64;
    Ok(mse.sqrt())
}

/// Train-fitted standardization of regression targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetScaler {
    pub mean: f64,
    pub std: f64,
}

impl TargetScaler {
    pub fn fit(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Self { mean: 0.0, std: 1.0 };
        }
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64;
        Self { mean, std: var.sqrt().max(STD_FLOOR) }
    }

    pub fn standardize(&self, y: f64) -> f64 {
        (y - self.mean) / self.std
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// What the model outputs mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MetricTask {
    Classification { num_classes: usize },
    /// Outputs are standardized with this scaler.
    Regression(TargetScaler),
}

/// Macro-F1 of argmax predictions, or RMSE on the original target scale.
pub fn evaluate_metrics<T: Scalar>(predictions: &Matrix<T>, targets: LossTargets<'_>, task: MetricTask) -> Result<f64> {
    match (task, targets) {
        (MetricTask::Classification { num_classes }, LossTargets::Classes(labels)) => {
            if predictions.rows() != labels.len() {
                return Err(TrainError::ShapeMismatch("prediction and target lengths differ".into()));
            }
            let predicted: Vec<usize> = (0..predictions.rows()).map(|i| argmax(predictions.row(i))).collect();
            macro_f1(&predicted, labels, num_classes)
        }
        (MetricTask::Regression(scaler), LossTargets::Values(values)) => {
            let predicted: Vec<f64> = (0..predictions.rows()).map(|i| scaler.invert(predictions.get(i, 0).as_f64())).collect();
            rmse(&predicted, values)
        }
        _ => Err(TrainError::ShapeMismatch("targets do not match the task".into())),
    }
}

/// First index of the maximum.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (k, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = k;
        }
    }
    best
}

/// Adam moments for a list of tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub first: Vec<Vec<T>>,
    pub second: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(shapes: &[usize]) -> Self {
        Self {
            step: 0,
            first: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            second: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn for_params(params: &GraphHeadParams<T>) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        Self::new(&shapes)
    }
}

/// One bias-corrected Adam update of every tensor.
pub fn adam_update<T: Scalar>(
    params: &mut [&mut [T]],
    grads: &[&[T]],
    state: &mut AdamState<T>,
    config: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(TrainError::ShapeMismatch(format!(
            "{} parameter tensors, {} gradients, {} moment buffers",
            params.len(),
            grads.len(),
            state.first.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.first[i].len() {
            return Err(TrainError::ShapeMismatch(format!("tensor {i} has mismatched lengths")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let b1 = T::lit(config.beta1);
    let b2 = T::lit(config.beta2);
    let one = T::one();
    let correction1 = one - T::lit(config.beta1.powi(t));
    let correction2 = one - T::lit(config.beta2.powi(t));
    let lr = T::lit(config.learning_rate);
    let eps = T::lit(config.epsilon);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = &mut state.first[i];
        let v = &mut state.second[i];
        for k in 0..p.len() {
            m[k] = b1 * m[k] + (one - b1) * g[k];
            v[k] = b2 * v[k] + (one - b2) * g[k] * g[k];
            let m_hat = m[k] / correction1;
            let v_hat = v[k] / correction2;
            p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Adam step on the head parameters. Embedding gradients are ignored.
pub fn adam_step<T: Scalar>(
    params: &mut GraphHeadParams<T>,
    grads: &GradientSet<T>,
    state: &mut AdamState<T>,
    config: &TrainConfig,
) -> Result<()> {
    let g = grads.params.tensors();
    let mut p = params.tensors_mut();
    adam_update(&mut p, &g, state, config)?;
    params.bump_generation();
    Ok(())
}

/// Owns the labels and counts every read of a test label.
pub struct LabelStore<'a> {
    target: &'a Target,
    split: &'a [Split],
    test_reads: Cell<usize>,
}

/// Labels of one split; rows outside the split hold placeholders.
#[derive(Debug, Clone, PartialEq)]
pub enum SplitLabels {
    Classes(Vec<usize>),
    Values(Vec<f64>),
}

impl SplitLabels {
    pub fn as_targets(&self) -> LossTargets<'_> {
        match self {
            SplitLabels::Classes(c) => LossTargets::Classes(c),
            SplitLabels::Values(v) => LossTargets::Values(v),
        }
    }
}

impl<'a> LabelStore<'a> {
    pub fn new(target: &'a Target, split: &'a [Split]) -> Self {
        Self { target, split, test_reads: Cell::new(0) }
    }

    pub fn test_reads(&self) -> usize {
        self.test_reads.get()
    }

    /// Labels of rows in `which`, optionally mapped through `f` (regression).
    pub fn labels(&self, which: Split, f: impl Fn(f64) -> f64) -> SplitLabels {
        let rows = self.split.iter().filter(|&&s| s == which).count();
        if which == Split::Test {
            self.test_reads.set(self.test_reads.get() + rows);
        }
        match self.target {
            Target::Classes { labels, .. } => SplitLabels::Classes(
                labels.iter().zip(self.split).map(|(&l, &s)| if s == which { l } else { 0 }).collect(),
            ),
            Target::Values(values) => SplitLabels::Values(
                values.iter().zip(self.split).map(|(&v, &s)| if s == which { f(v) } else { 0.0 }).collect(),
            ),
        }
    }
}

/// One line of a results file. External baselines only need the first five
/// fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub dataset: String,
    pub method: String,
    pub seed: u64,
    pub task: Task,
    pub metric_value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    /// Wall-clock time; not reproducible.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seconds: Option<f64>,
}

/// Outcome of one seeded training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub metric_name: String,
    pub best_val_metric: f64,
    pub test_metric: f64,
    pub epochs: usize,
    pub best_epoch: usize,
    pub seconds: f64,
    /// Test labels read before the final evaluation; always 0.
    pub test_label_reads_before_final: usize,
    pub val_history: Vec<f64>,
}

/// Metric over `rows` only.
fn split_metric<T: Scalar>(
    predictions: &Matrix<T>,
    labels: &SplitLabels,
    rows: &[usize],
    task: MetricTask,
) -> Result<f64> {
    let sub = Matrix::from_fn(rows.len(), predictions.cols(), |r, c| predictions.get(rows[r], c));
    match labels {
        SplitLabels::Classes(l) => {
            let picked: Vec<usize> = rows.iter().map(|&r| l[r]).collect();
            evaluate_metrics(&sub, LossTargets::Classes(&picked), task)
        }
        SplitLabels::Values(v) => {
            let picked: Vec<f64> = rows.iter().map(|&r| v[r]).collect();
            evaluate_metrics(&sub, LossTargets::Values(&picked), task)
        }
    }
}

fn improves(task: Task, candidate: f64, best: Option<f64>) -> bool {
    if candidate.is_nan() {
        return false;
    }
    match best {
        None => true,
        Some(b) if task.higher_is_better() => candidate > b,
        Some(b) => candidate < b,
    }
}

/// What the loop should do after scoring an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// New best: keep these parameters.
    Improved,
    Continue,
    Stop,
}

/// Patience counter over validation scores; only strict improvements reset it.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    task: Task,
    patience: usize,
    best: Option<f64>,
    best_epoch: usize,
    since_best: usize,
    epochs: usize,
    history: Vec<f64>,
}

impl EarlyStopping {
    pub fn new(task: Task, patience: usize) -> Self {
        Self { task, patience, best: None, best_epoch: 0, since_best: 0, epochs: 0, history: Vec::new() }
    }

    pub fn observe(&mut self, metric: f64) -> Verdict {
        self.epochs += 1;
        self.history.push(metric);
        if improves(self.task, metric, self.best) {
            self.best = Some(metric);
            self.best_epoch = self.epochs;
            self.since_best = 0;
            Verdict::Improved
        } else {
            self.since_best += 1;
            if self.since_best >= self.patience {
                Verdict::Stop
            } else {
                Verdict::Continue
            }
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn epochs(&self) -> usize {
        self.epochs
    }
}

fn run_result(seed: u64, task: Task, stopper: &EarlyStopping, test_metric: f64, started: Instant, reads: usize) -> RunResult {
    RunResult {
        seed,
        metric_name: task.metric_name().to_string(),
        best_val_metric: stopper.best().unwrap_or(f64::NAN),
        test_metric,
        epochs: stopper.epochs(),
        best_epoch: stopper.best_epoch(),
        seconds: started.elapsed().as_secs_f64(),
        test_label_reads_before_final: reads,
        val_history: stopper.history.clone(),
    }
}

pub fn head_task(dataset: &ProcessedDataset) -> HeadTask {
    match dataset.target.num_classes() {
        Some(num_classes) => HeadTask::Classification { num_classes },
        None => HeadTask::Regression,
    }
}

/// A finished run together with the best-validation parameters.
#[derive(Debug, Clone)]
pub struct TrainedModel<T> {
    pub result: RunResult,
    pub params: GraphHeadParams<T>,
}

/// Full-graph training with early stopping.
///
/// Every epoch runs one training-mode forward/backward pass and one Adam step,
/// then scores validation rows in evaluation mode. Training stops after
/// `patience` epochs without a strict improvement, or at `max_epochs`. The
/// test metric is computed once, from the best-validation parameters.
pub fn train_run<T: Scalar>(
    dataset: &ProcessedDataset,
    graph: &BipartiteGraph,
    embeddings: &EmbeddingMatrix,
    head_config: &GraphHeadConfig,
    train_config: &TrainConfig,
) -> Result<TrainedModel<T>> {
    let started = Instant::now();
    train_config.validate()?;
    head_config.validate()?;
    if head_config.task != head_task(dataset) {
        return Err(TrainError::InvalidConfig("head task does not match the dataset target".into()));
    }
    let train_rows = dataset.rows_in(Split::Train);
    let val_rows = dataset.rows_in(Split::Val);
    let test_rows = dataset.rows_in(Split::Test);
    for (rows, which) in [(&train_rows, Split::Train), (&val_rows, Split::Val), (&test_rows, Split::Test)] {
        if rows.is_empty() {
            return Err(TrainError::EmptySplit(which));
        }
    }
    let store = LabelStore::new(&dataset.target, &dataset.split);
    let (metric_task, scaler) = match &dataset.target {
        Target::Classes { classes, .. } => (MetricTask::Classification { num_classes: classes.len() }, None),
        Target::Values(values) => {
            let scaler = TargetScaler::fit(train_rows.iter().map(|&r| values[r]));
            (MetricTask::Regression(scaler), Some(scaler))
        }
    };
    let standardize = |y: f64| scaler.map_or(y, |s| s.standardize(y));
    let train_labels = store.labels(Split::Train, standardize);
    let val_labels = store.labels(Split::Val, |y| y);
    let train_mask = dataset.mask(Split::Train);

    let mg = MessageGraph::new(graph);
    let mut params = init_params::<T>(head_config, graph, embeddings.d(), train_config.seed)?;
    let mut adam = AdamState::for_params(&params);
    let mut stopper = EarlyStopping::new(dataset.task, train_config.patience);
    let mut best_params = params.clone();
    for epoch in 0..train_config.max_epochs {
        let dropout_seed = splitmix64(train_config.seed ^ splitmix64(epoch as u64));
        let (pred, cache) = forward(&params, &mg, embeddings, head_config, true, dropout_seed)?;
        let (_, grad) = loss(&pred, train_labels.as_targets(), &train_mask)?;
        let grads = backward(&params, &mg, embeddings, head_config, &cache, &grad)?;
        adam_step(&mut params, &grads, &mut adam, train_config)?;

        let (eval, _) = forward(&params, &mg, embeddings, head_config, false, 0)?;
        let val = split_metric(&eval, &val_labels, &val_rows, metric_task)?;
        match stopper.observe(val) {
            Verdict::Improved => best_params = params.clone(),
            Verdict::Continue => {}
            Verdict::Stop => break,
        }
    }

    let reads_before_final = store.test_reads();
    let (final_pred, _) = forward(&best_params, &mg, embeddings, head_config, false, 0)?;
    let test_labels = store.labels(Split::Test, |y| y);
    let test_metric = split_metric(&final_pred, &test_labels, &test_rows, metric_task)?;
    let result = run_result(train_config.seed, dataset.task, &stopper, test_metric, started, reads_before_final);
    Ok(TrainedModel { result, params: best_params })
}

/// Best parameters of a run in whichever precision it used.
#[derive(Debug, Clone)]
pub enum TrainedParams {
    F32(GraphHeadParams<f32>),
    F64(GraphHeadParams<f64>),
}

impl TrainedParams {
    pub fn save(&self, path: impl AsRef<std::path::Path>, config: &GraphHeadConfig) -> Result<()> {
        match self {
            TrainedParams::F32(p) => save_checkpoint(path, p, config)?,
            TrainedParams::F64(p) => save_checkpoint(path, p, config)?,
        }
        Ok(())
    }
}

/// [`train_run`] in the precision selected by `train_config.precision`.
pub fn train_with_precision(
    dataset: &ProcessedDataset,
    graph: &BipartiteGraph,
    embeddings: &EmbeddingMatrix,
    head_config: &GraphHeadConfig,
    train_config: &TrainConfig,
) -> Result<(RunResult, TrainedParams)> {
    Ok(match train_config.precision {
        Precision::F32 => {
            let m = train_run::<f32>(dataset, graph, embeddings, head_config, train_config)?;
            (m.result, TrainedParams::F32(m.params))
        }
        Precision::F64 => {
            let m = train_run::<f64>(dataset, graph, embeddings, head_config, train_config)?;
            (m.result, TrainedParams::F64(m.params))
        }
    })
}

/// Embedding-only baseline: a linear (softmax or least-squares) model on the
/// frozen embeddings, trained and early-stopped like the graph head.
pub fn linear_probe(dataset: &ProcessedDataset, embeddings: &EmbeddingMatrix, config: &TrainConfig) -> Result<RunResult> {
    let started = Instant::now();
    config.validate()?;
    if embeddings.n() != dataset.num_rows() {
        return Err(TrainError::ShapeMismatch("embedding rows differ from dataset rows".into()));
    }
    let val_rows = dataset.rows_in(Split::Val);
    let test_rows = dataset.rows_in(Split::Test);
    let train_rows = dataset.rows_in(Split::Train);
    if train_rows.is_empty() || val_rows.is_empty() || test_rows.is_empty() {
        return Err(TrainError::EmptySplit(Split::Train));
    }
    let store = LabelStore::new(&dataset.target, &dataset.split);
    let (metric_task, scaler, out_dim) = match &dataset.target {
        Target::Classes { classes, .. } => (MetricTask::Classification { num_classes: classes.len() }, None, classes.len()),
        Target::Values(values) => {
            let s = TargetScaler::fit(train_rows.iter().map(|&r| values[r]));
            (MetricTask::Regression(s), Some(s), 1)
        }
    };
    let train_labels = store.labels(Split::Train, |y| scaler.map_or(y, |s| s.standardize(y)));
    let val_labels = store.labels(Split::Val, |y| y);
    let mask = dataset.mask(Split::Train);
    let x = Matrix::from_fn(embeddings.n(), embeddings.d(), |r, c| embeddings.row(r)[c] as f64);
    let mut model = Linear::<f64>::zeros(embeddings.d(), out_dim);
    let mut adam = AdamState::new(&[model.weight.as_slice().len(), model.bias.len()]);
    let mut stopper = EarlyStopping::new(dataset.task, config.patience);
    let mut best_model = model.clone();
    for _ in 0..config.max_epochs {
        let pred = model.forward(&x);
        let (_, grad) = loss(&pred, train_labels.as_targets(), &mask)?;
        let mut g = Linear::zeros(embeddings.d(), out_dim);
        model.backward(&x, &grad, &mut g, None);
        {
            let Linear { weight, bias } = &mut model;
            let mut params: Vec<&mut [f64]> = vec![weight.as_mut_slice(), bias.as_mut_slice()];
            adam_update(&mut params, &[g.weight.as_slice(), &g.bias], &mut adam, config)?;
        }
        let val = split_metric(&model.forward(&x), &val_labels, &val_rows, metric_task)?;
        match stopper.observe(val) {
            Verdict::Improved => best_model = model.clone(),
            Verdict::Continue => {}
            Verdict::Stop => break,
        }
    }
    let reads = store.test_reads();
    let test_labels = store.labels(Split::Test, |y| y);
    let test_metric = split_metric(&best_model.forward(&x), &test_labels, &test_rows, metric_task)?;
    Ok(run_result(config.seed, dataset.task, &stopper, test_metric, started, reads))
}
