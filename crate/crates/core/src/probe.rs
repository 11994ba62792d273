//! Linear probing on frozen embeddings.
//!
//! One linear layer K -> C trained with softmax cross-entropy and
//! Nesterov SGD under a cosine schedule. Validation balanced accuracy is
//! checked once per epoch; training stops after `patience` epochs without
//! strict improvement and the best checkpoint is kept.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::metrics::{EmbeddingMatrix, MetricsError};
use crate::rng::CounterRng;

#[derive(Debug, thiserror::Error)]
pub enum ProbeError {
    #[error("invalid probe config: {0}")]
    InvalidConfig(String),
    #[error("invalid probe data: {0}")]
    InvalidData(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub base_batch_size: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub total_steps: u64,
    pub momentum: f64,
    pub nesterov: bool,
    pub weight_decay: f64,
    pub runs: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            base_batch_size: 4096,
            batch_size: 4096,
            base_lr: 0.01,
            total_steps: 12_500,
            momentum: 0.9,
            nesterov: true,
            weight_decay: 0.0,
            runs: 5,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<(), ProbeError> {
        let bad = |m: &str| Err(ProbeError::InvalidConfig(m.into()));
        if self.batch_size == 0 || self.base_batch_size == 0 {
            return bad("batch sizes must be >= 1");
        }
        if self.batch_size > self.base_batch_size {
            return bad("batch_size must not exceed base_batch_size");
        }
        if self.total_steps == 0 {
            return bad("total_steps must be >= 1");
        }
        if !(self.base_lr.is_finite() && self.base_lr >= 0.0) {
            return bad("base_lr must be >= 0");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay must be >= 0");
        }
        if self.runs == 0 {
            return bad("runs must be >= 1");
        }
        Ok(())
    }

    /// Peak learning rate, scaled linearly with batch size.
    pub fn peak_lr(&self) -> f64 {
        self.base_lr * self.batch_size as f64 / self.base_batch_size as f64
    }

    pub fn steps_per_epoch(&self, n_train: usize) -> u64 {
        n_train.div_ceil(self.batch_size).max(1) as u64
    }

    pub fn max_epochs(&self, n_train: usize) -> u64 {
        self.total_steps.div_ceil(self.steps_per_epoch(n_train))
    }

    pub fn patience(&self, n_train: usize) -> u64 {
        (self.max_epochs(n_train) / 20).max(1)
    }
}

/// Cosine decay from the peak rate to 0 over `total_steps`, no warmup.
pub fn lr_at_step(config: &ProbeConfig, step: u64) -> f64 {
    let t = step.min(config.total_steps) as f64 / config.total_steps as f64;
    config.peak_lr() * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Mean per-class recall over the classes present in `y_true`.
pub fn balanced_accuracy(y_true: &[usize], y_pred: &[usize]) -> Result<f64, ProbeError> {
    if y_true.len() != y_pred.len() {
        return Err(ProbeError::InvalidData(format!(
            "{} labels but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.is_empty() {
        return Err(ProbeError::InvalidData("no samples".into()));
    }
    let mut per: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (&t, &p) in y_true.iter().zip(y_pred) {
        let e = per.entry(t).or_default();
        e.1 += 1;
        if t == p {
            e.0 += 1;
        }
    }
    let sum: f64 = per.values().map(|&(hit, n)| hit as f64 / n as f64).sum();
    Ok(sum / per.len() as f64)
}

/// Embeddings with integer class labels.
#[derive(Debug, Clone)]
pub struct LabeledSet {
    pub x: EmbeddingMatrix,
    pub y: Vec<usize>,
}

impl LabeledSet {
    pub fn new(x: EmbeddingMatrix, y: Vec<usize>) -> Result<Self, ProbeError> {
        if x.n_samples() != y.len() {
            return Err(ProbeError::InvalidData(format!(
                "{} rows but {} labels",
                x.n_samples(),
                y.len()
            )));
        }
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Result<Self, ProbeError> {
        Ok(Self {
            x: self.x.select_rows(idx)?,
            y: idx.iter().map(|&i| self.y[i]).collect(),
        })
    }
}

/// Map string labels to dense ids in sorted label order.
pub fn encode_labels(labels: &[String]) -> (Vec<usize>, Vec<String>) {
    let classes: Vec<String> = labels.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let ids = labels
        .iter()
        .map(|l| classes.binary_search(l).expect("label is in its own class set"))
        .collect();
    (ids, classes)
}

/// `C x K` weights (row-major) and `C` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    pub n_classes: usize,
    pub n_dims: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearHead {
    /// Weights uniform in `±1/sqrt(K)`, zero bias.
    pub fn init(n_classes: usize, n_dims: usize, rng: &mut CounterRng) -> Self {
        let bound = 1.0 / (n_dims as f64).sqrt();
        Self {
            n_classes,
            n_dims,
            weights: (0..n_classes * n_dims).map(|_| rng.uniform(-bound, bound)).collect(),
            bias: vec![0.0; n_classes],
        }
    }

    fn logits(&self, x: &[f64], out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            let w = &self.weights[c * self.n_dims..(c + 1) * self.n_dims];
            *o = self.bias[c] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// Argmax class per row; ties go to the lower class id.
    pub fn predict(&self, x: &EmbeddingMatrix) -> Vec<usize> {
        let mut z = vec![0.0; self.n_classes];
        (0..x.n_samples())
            .map(|i| {
                self.logits(x.row(i), &mut z);
                let mut best = 0;
                for c in 1..self.n_classes {
                    if z[c] > z[best] {
                        best = c;
                    }
                }
                best
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    /// Best validation balanced accuracy.
    pub val_balanced_accuracy: f64,
    /// Test balanced accuracy of the best checkpoint, when a test set is given.
    pub test_balanced_accuracy: Option<f64>,
    pub steps: u64,
    pub epochs: u64,
    pub best_epoch: u64,
    pub early_stopped: bool,
}

impl RunResult {
    /// The accuracy a run reports: test if available, else validation.
    pub fn balanced_accuracy(&self) -> f64 {
        self.test_balanced_accuracy.unwrap_or(self.val_balanced_accuracy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub runs: Vec<RunResult>,
    pub mean: f64,
    /// Sample standard deviation (n - 1); 0 for a single run.
    pub std: f64,
    pub config_echo: ProbeConfig,
}

pub struct FitOutput {
    pub head: LinearHead,
    pub result: RunResult,
}

fn check_inputs(train: &LabeledSet, val: &LabeledSet) -> Result<usize, ProbeError> {
    if train.is_empty() || val.is_empty() {
        return Err(ProbeError::InvalidData("train and validation sets must be non-empty".into()));
    }
    if train.x.n_dims() != val.x.n_dims() {
        return Err(ProbeError::InvalidData(format!(
            "train has K = {} but validation has K = {}",
            train.x.n_dims(),
            val.x.n_dims()
        )));
    }
    let classes: BTreeSet<usize> = train.y.iter().copied().collect();
    if classes.len() < 2 {
        return Err(ProbeError::InvalidData("training set has a single class".into()));
    }
    let max = train.y.iter().chain(&val.y).copied().max().unwrap_or(0);
    Ok(max + 1)
}

/// Train one head. `score` maps a head and the validation set to the
/// early-stopping metric; [`train_probe`] uses balanced accuracy.
pub fn fit_with_scorer(
    train: &LabeledSet,
    val: &LabeledSet,
    config: &ProbeConfig,
    seed: u64,
    score: &mut dyn FnMut(&LinearHead, &LabeledSet) -> f64,
) -> Result<FitOutput, ProbeError> {
    config.validate()?;
    let n_classes = check_inputs(train, val)?;
    let k = train.x.n_dims();
    let n = train.len();
    let root = CounterRng::new(seed);
    let mut init_rng = root.substream("probe-init");
    let mut batch_rng = root.substream("probe-batches");

    let mut head = LinearHead::init(n_classes, k, &mut init_rng);
    let mut buf_w = vec![0.0; head.weights.len()];
    let mut buf_b = vec![0.0; n_classes];
    let mut grad_w = vec![0.0; head.weights.len()];
    let mut grad_b = vec![0.0; n_classes];
    let mut z = vec![0.0; n_classes];

    let steps_per_epoch = config.steps_per_epoch(n);
    let patience = config.patience(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut best = (f64::NEG_INFINITY, head.clone(), 0u64);
    let mut stagnant = 0;
    let mut step = 0u64;
    let mut epoch = 0u64;
    let mut early_stopped = false;

    while step < config.total_steps {
        batch_rng.shuffle(&mut order);
        for batch in order.chunks(config.batch_size).take(steps_per_epoch as usize) {
            if step >= config.total_steps {
                break;
            }
            grad_w.iter_mut().for_each(|g| *g = 0.0);
            grad_b.iter_mut().for_each(|g| *g = 0.0);
            let inv_b = 1.0 / batch.len() as f64;
            for &i in batch {
                let x = train.x.row(i);
                head.logits(x, &mut z);
                let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                for v in z.iter_mut() {
                    *v = (*v - m).exp();
                    s += *v;
                }
                for (c, p) in z.iter().enumerate() {
                    let d = (p / s - f64::from(u8::from(c == train.y[i]))) * inv_b;
                    grad_b[c] += d;
                    for (g, xv) in grad_w[c * k..(c + 1) * k].iter_mut().zip(x) {
                        *g += d * xv;
                    }
                }
            }
            let lr = lr_at_step(config, step);
            sgd_update(&mut head.weights, &grad_w, &mut buf_w, lr, config);
            sgd_update(&mut head.bias, &grad_b, &mut buf_b, lr, config);
            step += 1;
        }
        epoch += 1;
        let s = score(&head, val);
        if s > best.0 {
            best = (s, head.clone(), epoch);
            stagnant = 0;
        } else {
            stagnant += 1;
            if stagnant >= patience {
                early_stopped = true;
                break;
            }
        }
    }
    let (val_score, best_head, best_epoch) = best;
    Ok(FitOutput {
        head: best_head,
        result: RunResult {
            seed,
            val_balanced_accuracy: val_score,
            test_balanced_accuracy: None,
            steps: step,
            epochs: epoch,
            best_epoch,
            early_stopped,
        },
    })
}

/// PyTorch-style SGD: `buf = mu*buf + g`, step along `g + mu*buf` (Nesterov)
/// or `buf`.
fn sgd_update(params: &mut [f64], grad: &[f64], buf: &mut [f64], lr: f64, config: &ProbeConfig) {
    for ((p, &g), b) in params.iter_mut().zip(grad).zip(buf.iter_mut()) {
        let g = g + config.weight_decay * *p;
        *b = config.momentum * *b + g;
        let d = if config.nesterov { g + config.momentum * *b } else { *b };
        *p -= lr * d;
    }
}

/// One seeded probe run, scored by validation balanced accuracy. With a
/// test set, the best checkpoint is also scored on it.
pub fn train_probe(
    train: &LabeledSet,
    val: &LabeledSet,
    test: Option<&LabeledSet>,
    config: &ProbeConfig,
    seed: u64,
) -> Result<RunResult, ProbeError> {
    let mut scorer = |head: &LinearHead, set: &LabeledSet| {
        balanced_accuracy(&set.y, &head.predict(&set.x)).expect("validation set is non-empty")
    };
    let mut out = fit_with_scorer(train, val, config, seed, &mut scorer)?;
    if let Some(test) = test {
        if test.x.n_dims() != train.x.n_dims() {
            return Err(ProbeError::InvalidData("test set K differs from train".into()));
        }
        out.result.test_balanced_accuracy = Some(balanced_accuracy(&test.y, &out.head.predict(&test.x))?);
    }
    Ok(out.result)
}

/// `config.runs` runs with seeds `seed, seed+1, ...` on a fixed split.
pub fn run_probe(
    train: &LabeledSet,
    val: &LabeledSet,
    test: Option<&LabeledSet>,
    config: &ProbeConfig,
    seed: u64,
) -> Result<ProbeResult, ProbeError> {
    config.validate()?;
    let runs = (0..config.runs as u64)
        .map(|r| train_probe(train, val, test, config, seed.wrapping_add(r)))
        .collect::<Result<Vec<_>, _>>()?;
    let accs: Vec<f64> = runs.iter().map(RunResult::balanced_accuracy).collect();
    let (mean, std) = mean_std(&accs);
    Ok(ProbeResult {
        runs,
        mean,
        std,
        config_echo: config.clone(),
    })
}

/// Mean and sample standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitAssignment {
    /// Split index per sample.
    pub assignment: Vec<usize>,
    pub warnings: Vec<String>,
}

impl SplitAssignment {
    pub fn indices(&self, split: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == split).collect()
    }
}

/// Assign whole groups to splits so each split approaches its fraction of
/// every class. Groups are placed largest first (ties in seeded random
/// order), each into the split that minimises the summed squared relative
/// deficit over all splits and classes.
pub fn split_stratified_grouped(
    labels: &[usize],
    groups: &[String],
    fractions: &[f64],
    seed: u64,
) -> Result<SplitAssignment, ProbeError> {
    if labels.len() != groups.len() {
        return Err(ProbeError::InvalidData("labels and groups differ in length".into()));
    }
    if labels.is_empty() {
        return Err(ProbeError::InvalidData("nothing to split".into()));
    }
    if fractions.is_empty() || fractions.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
        return Err(ProbeError::InvalidConfig("fractions must be non-negative".into()));
    }
    if (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(ProbeError::InvalidConfig("fractions must sum to 1".into()));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut by_group: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, g) in groups.iter().enumerate() {
        by_group.entry(g.as_str()).or_default().push(i);
    }
    let mut members: Vec<Vec<usize>> = by_group.into_values().collect();
    CounterRng::new(seed).substream("split").shuffle(&mut members);
    members.sort_by_key(|m| std::cmp::Reverse(m.len()));

    let mut totals = vec![0.0; n_classes];
    for &l in labels {
        totals[l] += 1.0;
    }
    let targets: Vec<Vec<f64>> = fractions.iter().map(|f| totals.iter().map(|t| f * t).collect()).collect();
    let mut have = vec![vec![0.0; n_classes]; fractions.len()];
    let mut assignment = vec![0; labels.len()];

    let cost = |have: &[Vec<f64>]| -> f64 {
        have.iter()
            .zip(&targets)
            .map(|(h, t)| {
                h.iter()
                    .zip(t)
                    .zip(&totals)
                    .filter(|(_, &tot)| tot > 0.0)
                    .map(|((h, t), tot)| ((h - t) / tot).powi(2))
                    .sum::<f64>()
            })
            .sum()
    };
    for m in &members {
        let mut counts = vec![0.0; n_classes];
        for &i in m {
            counts[labels[i]] += 1.0;
        }
        let mut best = (f64::INFINITY, 0);
        for s in 0..fractions.len() {
            for c in 0..n_classes {
                have[s][c] += counts[c];
            }
            let v = cost(&have);
            for c in 0..n_classes {
                have[s][c] -= counts[c];
            }
            if v < best.0 {
                best = (v, s);
            }
        }
        for c in 0..n_classes {
            have[best.1][c] += counts[c];
        }
        for &i in m {
            assignment[i] = best.1;
        }
    }

    let mut warnings = Vec::new();
    let n = labels.len() as f64;
    for (s, h) in have.iter().enumerate() {
        let size: f64 = h.iter().sum();
        if fractions[s] > 0.0 && size == 0.0 {
            warnings.push(format!("split {s} is empty; groups are too coarse for the requested fractions"));
            continue;
        }
        for c in 0..n_classes {
            if totals[c] == 0.0 || size == 0.0 {
                continue;
            }
            let global = totals[c] / n;
            let local = h[c] / size;
            if ((local - global) / global).abs() > 0.10 {
                warnings.push(format!(
                    "split {s}: class {c} proportion {local:.3} deviates from global {global:.3} by more than 10%"
                ));
            }
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(SplitAssignment { assignment, warnings })
}
