//! Adam training with linear warm-up, and finite-difference gradient checks.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::Dropout;
use super::model::{NvFormerConfig, NvFormerModel};
use super::tape::{Tape, Var};
use crate::error::{NpcError, Result};
use crate::tensor::Matrix;

/// One normalized example.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    pub samples: Vec<Matrix>,
    pub history: Matrix,
    pub future_known: Matrix,
    pub target: Matrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub warmup_epochs: usize,
    pub max_epochs: usize,
    /// Hard cap on optimizer steps across all epochs.
    pub max_steps: Option<usize>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-5,
            batch_size: 256,
            warmup_epochs: 10,
            max_epochs: 100,
            max_steps: None,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(NpcError::Config(format!("train: {msg}")));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be positive");
        }
        if self.warmup_epochs > self.max_epochs {
            return bad("warmup_epochs exceeds max_epochs");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return bad("Adam hyperparameters out of range");
        }
        Ok(())
    }

    /// Effective learning rate at a 1-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.warmup_epochs == 0 {
            return self.learning_rate;
        }
        self.learning_rate * (epoch as f64 / self.warmup_epochs as f64).min(1.0)
    }
}

pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(params: &[Matrix], cfg: &TrainConfig) -> Self {
        let zeros: Vec<Matrix> = params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        Adam {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn update(&mut self, params: &mut [Matrix], grads: &[Option<Matrix>], lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let p = params[i].as_mut_slice();
            let m = self.m[i].as_mut_slice();
            let v = self.v[i].as_mut_slice();
            for j in 0..p.len() {
                let gj = g.as_slice()[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                p[j] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

fn example_loss(model: &NvFormerModel, t: &mut Tape, ex: &TrainingExample, drop: &mut Dropout) -> Var {
    let memory = model.encode(t, &ex.samples, &ex.history, drop);
    let pred = model.decode(t, memory, &ex.future_known, drop);
    t.mse(pred, ex.target.clone())
}

pub fn check_example(model: &NvFormerModel, ex: &TrainingExample) -> Result<()> {
    model.check_inputs(&ex.samples, &ex.history)?;
    model.check_future(&ex.future_known)?;
    let want = (model.config().l_f, model.config().m_r);
    if ex.target.shape() != want {
        return Err(NpcError::Shape(format!("target {:?}, expected {want:?}", ex.target.shape())));
    }
    if !ex.target.is_finite() {
        return Err(NpcError::Data("target contains non-finite values".into()));
    }
    Ok(())
}

/// Mean loss and summed gradients over a batch.
fn batch_gradients(
    model: &NvFormerModel,
    batch: &[&TrainingExample],
    mut drop_rng: Option<&mut ChaCha8Rng>,
) -> (f64, Vec<Option<Matrix>>) {
    let mut total: Vec<Option<Matrix>> = vec![None; model.params().len()];
    let mut loss = 0.0;
    for ex in batch {
        let mut t = Tape::new(model.params().values());
        let mut drop = match drop_rng.as_deref_mut() {
            Some(rng) => Dropout::new(model.config().dropout, rng),
            None => Dropout::off(),
        };
        let l = example_loss(model, &mut t, ex, &mut drop);
        loss += t.value(l).get(0, 0);
        for (acc, g) in total.iter_mut().zip(t.backward(l)) {
            match (acc.as_mut(), g) {
                (Some(a), Some(g)) => a.add_assign(&g),
                (None, Some(g)) => *acc = Some(g),
                _ => {}
            }
        }
    }
    let k = 1.0 / batch.len() as f64;
    for g in total.iter_mut().flatten() {
        g.scale_assign(k);
    }
    (loss * k, total)
}

/// Mean loss without dropout.
pub fn evaluate_loss(model: &NvFormerModel, examples: &[TrainingExample]) -> f64 {
    if examples.is_empty() {
        return f64::NAN;
    }
    examples
        .iter()
        .map(|ex| {
            let mut t = Tape::new(model.params().values());
            let l = example_loss(model, &mut t, ex, &mut Dropout::off());
            t.value(l).get(0, 0)
        })
        .sum::<f64>()
        / examples.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Checkpoint with the lowest validation loss.
    pub model: NvFormerModel,
    pub history: Vec<EpochRecord>,
    pub initial_val_loss: f64,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub steps: usize,
    /// Training stopped on a non-finite loss.
    pub diverged: bool,
}

/// Contiguous 7 : 1.5 : 1.5 split (no shuffling, so neighbouring windows
/// of the same trip stay together).
pub fn split_dataset<T: Clone>(items: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
    let n = items.len();
    let train = (n as f64 * 0.7).round() as usize;
    let val = ((n as f64 * 0.85).round() as usize).max(train);
    (
        items[..train].to_vec(),
        items[train..val].to_vec(),
        items[val..].to_vec(),
    )
}

/// Trains `model` on `train`. Validation falls back to the training set
/// when `val` is empty.
pub fn train(
    model: NvFormerModel,
    train: &[TrainingExample],
    val: &[TrainingExample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(NpcError::Data("empty training set".into()));
    }
    for ex in train.iter().chain(val) {
        check_example(&model, ex)?;
    }
    let val = if val.is_empty() { train } else { val };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut drop_rng = ChaCha8Rng::seed_from_u64(rng.gen());
    let use_dropout = model.config().dropout > 0.0;

    let initial_val_loss = evaluate_loss(&model, val);
    let mut best = model.clone();
    let mut best_val_loss = initial_val_loss;
    let mut best_epoch = 0;
    let mut model = model;
    let mut adam = Adam::new(model.params().values(), cfg);
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut steps = 0;
    let mut diverged = false;

    'epochs: for epoch in 1..=cfg.max_epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| steps >= m) {
                break;
            }
            let batch: Vec<&TrainingExample> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, grads) =
                batch_gradients(&model, &batch, use_dropout.then_some(&mut drop_rng));
            if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                diverged = true;
                break 'epochs;
            }
            adam.update(model.params_mut().values_mut(), &grads, lr);
            steps += 1;
            epoch_loss += loss;
            batches += 1;
        }
        if batches == 0 {
            break;
        }
        if !model.params().is_finite() {
            diverged = true;
            break;
        }
        let val_loss = evaluate_loss(&model, val);
        if !val_loss.is_finite() {
            diverged = true;
            break;
        }
        history.push(EpochRecord {
            epoch,
            learning_rate: lr,
            train_loss: epoch_loss / batches as f64,
            val_loss,
        });
        if val_loss < best_val_loss {
            best_val_loss = val_loss;
            best_epoch = epoch;
            best = model.clone();
        }
    }

    Ok(TrainOutcome {
        model: best,
        history,
        initial_val_loss,
        best_val_loss,
        best_epoch,
        steps,
        diverged,
    })
}

/// Example with every input and target uniform in `[0, 1)`.
pub fn random_example(cfg: &NvFormerConfig, seed: u64) -> TrainingExample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut random = |rows: usize, cols: usize| {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen::<f64>()).collect())
    };
    TrainingExample {
        samples: (0..cfg.p).map(|_| random(cfg.l_h, cfg.m)).collect(),
        history: random(cfg.l_h, cfg.m),
        future_known: random(cfg.l_f, cfg.m_f),
        target: random(cfg.l_f, cfg.m_r),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_relative_error: f64,
    /// `(param index, element index)` of the worst coordinate.
    pub worst: (usize, usize),
}

/// `|a - n| / max(|a|, |n|, floor)`; the floor keeps coordinates whose
/// gradient is at round-off level from dominating.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    const FLOOR: f64 = 1e-7;
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Central-difference check of an arbitrary scalar loss built on a tape.
pub fn grad_check_fn(
    params: &[Matrix],
    loss: impl Fn(&mut Tape) -> Var,
    coords: &[(usize, usize)],
    h: f64,
) -> GradCheckReport {
    let grads = {
        let mut t = Tape::new(params);
        let l = loss(&mut t);
        t.backward(l)
    };
    let mut work = params.to_vec();
    let eval = |pi: usize, e: usize, delta: f64, work: &mut Vec<Matrix>| {
        let orig = work[pi].as_slice()[e];
        work[pi].as_mut_slice()[e] = orig + delta;
        let mut t = Tape::new(work);
        let l = loss(&mut t);
        let v = t.value(l).get(0, 0);
        work[pi].as_mut_slice()[e] = orig;
        v
    };
    let mut report = GradCheckReport {
        checked: 0,
        max_relative_error: 0.0,
        worst: (0, 0),
    };
    for &(pi, e) in coords {
        let plus = eval(pi, e, h, &mut work);
        let minus = eval(pi, e, -h, &mut work);
        let numeric = (plus - minus) / (2.0 * h);
        let analytic = grads[pi].as_ref().map_or(0.0, |g| g.as_slice()[e]);
        let err = relative_error(analytic, numeric);
        report.checked += 1;
        if err > report.max_relative_error {
            report.max_relative_error = err;
            report.worst = (pi, e);
        }
    }
    report
}

/// At least `count` coordinates, at least one from every tensor, the rest
/// spread proportionally to tensor size.
pub fn sample_coordinates(params: &[Matrix], count: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total: usize = params.iter().map(Matrix::len).sum();
    let mut coords = Vec::new();
    for (pi, p) in params.iter().enumerate() {
        if p.is_empty() {
            continue;
        }
        let share = ((count * p.len()) as f64 / total as f64).ceil() as usize;
        let n = share.clamp(1, p.len());
        let mut idx: Vec<usize> = (0..p.len()).collect();
        idx.shuffle(&mut rng);
        coords.extend(idx[..n].iter().map(|&e| (pi, e)));
    }
    coords
}

/// Checks the model's loss gradient on one example (dropout off).
pub fn grad_check(
    model: &NvFormerModel,
    example: &TrainingExample,
    coords: &[(usize, usize)],
    h: f64,
) -> Result<GradCheckReport> {
    check_example(model, example)?;
    // the tape reads parameters from the slice it is given, so the model's
    // own copy stays untouched while coordinates are perturbed
    let report = grad_check_fn(
        model.params().values(),
        |t| example_loss(model, t, example, &mut Dropout::off()),
        coords,
        h,
    );
    Ok(report)
}
