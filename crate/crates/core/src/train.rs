//! Adam, the step-decay schedule, the per-fold training loop and
//! cross-validation.
//!
//! Each epoch reshuffles the training graphs and re-encodes every one of them
//! from a fresh random root. One iteration is one minibatch.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rand::seq::SliceRandom;

use crate::autodiff::Tensor;
use crate::eval::{evaluate, EvalError, Evaluation, Frozen, VoteConfig};
use crate::graphio::{stratified_folds, Dataset, FoldPlan, GraphIoError};
use crate::model::{ModelError, Noise, Vrgc, VrgcConfig};
use crate::nn::ModelParams;
use crate::ordering::sample_encoding;
use crate::seeds::SeedBundle;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Data(#[from] GraphIoError),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("non-finite gradient for {0}")]
    NonFiniteGradient(String),
    #[error("training diverged: {0} consecutive non-finite batches, last at iteration {1}")]
    Diverged(usize, usize),
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros = params.zeros_like().tensors;
        AdamState { m: zeros.clone(), v: zeros, t: 0, beta1: ADAM_BETA1, beta2: ADAM_BETA2, eps: ADAM_EPS }
    }
}

/// One bias-corrected Adam update. Gradients are checked for finiteness
/// before anything is modified, so a rejected step leaves params and state intact.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
    lr: f64,
) -> Result<(), TrainError> {
    for (name, p) in &params.tensors {
        let g = grads.get(name).ok_or_else(|| TrainError::Argument(format!("no gradient for {name}")))?;
        if g.shape() != p.shape() {
            return Err(TrainError::Argument(format!("gradient for {name} has shape {:?}, expected {:?}", g.shape(), p.shape())));
        }
        if !g.is_finite() {
            return Err(TrainError::NonFiniteGradient(name.clone()));
        }
    }
    state.t += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powf(state.t as f64);
    let c2 = 1.0 - b2.powf(state.t as f64);
    for (name, p) in params.tensors.iter_mut() {
        let g = grads[name].data();
        let m = state.m.get_mut(name).expect("state built from params").data_mut();
        let v = state.v.get_mut(name).expect("state built from params").data_mut();
        for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            *pi -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
        }
    }
    Ok(())
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Tensor>, max_norm: f64) -> f64 {
    let norm = grads.values().flat_map(|t| t.data()).map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grads.values_mut().for_each(|t| t.data_mut().iter_mut().for_each(|g| *g *= s));
    }
    norm
}

#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub base_lr: f64,
    pub milestones: Vec<usize>,
    pub factor: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule { base_lr: 1e-3, milestones: vec![400, 1000], factor: 0.3 }
    }
}

impl Schedule {
    /// `base_lr · factor^{#milestones ≤ t}` for zero-based iteration `t`.
    pub fn lr(&self, t: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| m <= t).count();
        self.base_lr * self.factor.powi(passed as i32)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub schedule: Schedule,
    /// Optional global-norm gradient clip.
    pub clip_norm: Option<f64>,
    /// Consecutive non-finite batches tolerated before giving up.
    pub max_nonfinite: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { iterations: 1400, batch_size: 64, schedule: Schedule::default(), clip_norm: None, max_nonfinite: 5 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Argument("batch size must be positive".into()));
        }
        if !(self.schedule.base_lr > 0.0 && self.schedule.base_lr.is_finite()) {
            return Err(TrainError::Argument(format!("learning rate must be positive, got {}", self.schedule.base_lr)));
        }
        if !(self.schedule.factor > 0.0 && self.schedule.factor.is_finite()) {
            return Err(TrainError::Argument(format!("decay factor must be positive, got {}", self.schedule.factor)));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(TrainError::Argument(format!("clip norm must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterRecord {
    pub iteration: usize,
    pub loss_classif: f64,
    pub loss_pred: f64,
    pub loss_total: f64,
    pub lr: f64,
    /// True when the batch was dropped for a non-finite loss or gradient.
    pub skipped: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunRecord {
    pub fold: usize,
    pub seed: u64,
    pub iterations: Vec<IterRecord>,
    pub test_accuracy: Option<f64>,
    pub wall_seconds: f64,
}

impl RunRecord {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,loss_classif,loss_pred,loss_total,lr,skipped\n");
        for r in &self.iterations {
            let _ = writeln!(out, "{},{},{},{},{},{}", r.iteration, r.loss_classif, r.loss_pred, r.loss_total, r.lr, r.skipped as u8);
        }
        out
    }

    /// Mean total loss over the last `n` non-skipped iterations.
    pub fn tail_loss(&self, n: usize) -> Option<f64> {
        let tail: Vec<f64> = self.iterations.iter().rev().filter(|r| !r.skipped).take(n).map(|r| r.loss_total).collect();
        (!tail.is_empty()).then(|| tail.iter().sum::<f64>() / tail.len() as f64)
    }
}

/// Trains a fresh model on `ds.graphs[train_idx]`. Randomness comes from the
/// `fold`-indexed streams of `seeds`. `on_iter` sees every iteration record.
pub fn train_fold(
    model: &Vrgc,
    ds: &Dataset,
    train_idx: &[usize],
    cfg: &TrainConfig,
    seeds: &SeedBundle,
    fold: usize,
    on_iter: &mut dyn FnMut(&IterRecord),
) -> Result<(ModelParams, RunRecord), TrainError> {
    cfg.validate()?;
    if train_idx.is_empty() {
        return Err(TrainError::Argument("empty training set".into()));
    }
    if let Some(&i) = train_idx.iter().find(|&&i| i >= ds.len()) {
        return Err(TrainError::Argument(format!("training index {i} out of range")));
    }
    let start = Instant::now();
    let f = fold as u64;
    let mut params = model.init_params(&mut seeds.stream("init", f))?;
    let mut adam = AdamState::new(&params);
    let mut shuffle = seeds.stream("shuffle", f);
    let mut roots = seeds.stream("roots", f);
    let mut noise = Noise { dropout: seeds.stream("dropout", f), eps: seeds.stream("eps", f) };
    let (d_n, n_g) = (model.cfg.d_n, model.cfg.n_g);

    let mut record = RunRecord { fold, seed: seeds.master, ..Default::default() };
    let mut order = train_idx.to_vec();
    let mut t = 0;
    let mut bad_streak = 0;
    'epochs: while t < cfg.iterations {
        order.shuffle(&mut shuffle);
        let encoded = order
            .iter()
            .map(|&i| sample_encoding(&ds.graphs[i], d_n, n_g, &mut roots))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| TrainError::Argument(e.to_string()))?;
        for (chunk, idx) in encoded.chunks(cfg.batch_size).zip(order.chunks(cfg.batch_size)) {
            if t >= cfg.iterations {
                break 'epochs;
            }
            let labels: Vec<usize> = idx.iter().map(|&i| ds.graphs[i].label()).collect();
            let lr = cfg.schedule.lr(t);
            let pass = model.forward(&params, chunk, Some(&labels), true, &mut noise)?;
            let out = &pass.out;
            let mut rec = IterRecord {
                iteration: t,
                loss_classif: out.loss_classif,
                loss_pred: out.loss_pred,
                loss_total: out.loss_total,
                lr,
                skipped: false,
            };
            let applied = if out.loss_total.is_finite() {
                let mut grads = pass.gradients()?;
                if let Some(c) = cfg.clip_norm {
                    clip_global_norm(&mut grads, c);
                }
                match adam_step(&mut params, &grads, &mut adam, lr) {
                    Ok(()) => true,
                    Err(TrainError::NonFiniteGradient(_)) => false,
                    Err(e) => return Err(e),
                }
            } else {
                false
            };
            if applied {
                bad_streak = 0;
            } else {
                rec.skipped = true;
                bad_streak += 1;
                if bad_streak >= cfg.max_nonfinite {
                    return Err(TrainError::Diverged(bad_streak, t));
                }
            }
            on_iter(&rec);
            record.iterations.push(rec);
            t += 1;
        }
    }
    record.wall_seconds = start.elapsed().as_secs_f64();
    Ok((params, record))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub accuracy: f64,
    pub record: RunRecord,
    pub params: ModelParams,
    pub evaluation: Evaluation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvSummary {
    pub dataset: String,
    pub folds: Vec<FoldResult>,
    pub plan: FoldPlan,
    pub mean: f64,
    /// Population standard deviation over folds.
    pub std: f64,
    /// Accuracy of always predicting the most frequent class.
    pub majority_baseline: f64,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvConfig {
    pub model: VrgcConfig,
    pub train: TrainConfig,
    pub vote: VoteConfig,
    pub folds: usize,
    /// Restrict to these folds (all when empty).
    pub only_folds: Vec<usize>,
    pub jobs: usize,
}

/// Stratified k-fold cross-validation. Folds run on up to `jobs` threads; each
/// fold owns its model state and random streams, so results do not depend on
/// the thread count.
pub fn cross_validate(
    ds: &Dataset,
    cfg: &CvConfig,
    seeds: &SeedBundle,
    on_iter: &(dyn Fn(usize, &IterRecord) + Sync),
) -> Result<CvSummary, TrainError> {
    cfg.train.validate()?;
    cfg.vote.validate()?;
    let plan = stratified_folds(ds, cfg.folds, seeds.seed_for("folds", 0))?;
    let todo: Vec<usize> = if cfg.only_folds.is_empty() { (0..cfg.folds).collect() } else { cfg.only_folds.clone() };
    if let Some(&f) = todo.iter().find(|&&f| f >= cfg.folds) {
        return Err(TrainError::Argument(format!("fold {f} out of range for {} folds", cfg.folds)));
    }
    let model = Vrgc::new(cfg.model.clone())?;
    let run_one = |fold: usize| -> Result<FoldResult, TrainError> {
        let train_idx = plan.train_indices(fold);
        let test_idx = plan.test_indices(fold);
        let (params, mut record) = train_fold(&model, ds, &train_idx, &cfg.train, seeds, fold, &mut |r| on_iter(fold, r))?;
        let frozen = Frozen { model: &model, params: &params };
        let test: Vec<_> = test_idx.iter().map(|&i| (i, &ds.graphs[i])).collect();
        let vote = VoteConfig { seed: seeds.seed_for("eval", fold as u64), ..cfg.vote };
        let evaluation = evaluate(&frozen, &test, &vote)?;
        record.test_accuracy = Some(evaluation.accuracy);
        Ok(FoldResult { fold, accuracy: evaluation.accuracy, record, params, evaluation })
    };

    let jobs = cfg.jobs.clamp(1, todo.len().max(1));
    let mut results: Vec<FoldResult> = if jobs == 1 {
        todo.iter().map(|&f| run_one(f)).collect::<Result<_, _>>()?
    } else {
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Result<FoldResult, TrainError>>> = Mutex::new(Vec::new());
        std::thread::scope(|s| {
            for _ in 0..jobs {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(&fold) = todo.get(i) else { break };
                    let r = run_one(fold);
                    slots.lock().expect("no panics while holding the lock").push(r);
                });
            }
        });
        slots.into_inner().expect("threads joined").into_iter().collect::<Result<_, _>>()?
    };
    results.sort_by_key(|r| r.fold);
    let accs: Vec<f64> = results.iter().map(|r| r.accuracy).collect();
    let (mean, std) = mean_std(&accs);
    let majority_baseline = crate::graphio::compute_stats(ds).bias;
    Ok(CvSummary { dataset: ds.name.clone(), folds: results, plan, mean, std, majority_baseline })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_steps_at_milestones() {
        let s = Schedule::default();
        assert_eq!(s.lr(0), 1e-3);
        assert_eq!(s.lr(399), 1e-3);
        assert!((s.lr(400) - 3e-4).abs() < 1e-18);
        assert!((s.lr(999) - 3e-4).abs() < 1e-18);
        assert!((s.lr(1000) - 9e-5).abs() < 1e-18);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = ModelParams { version: 1, tensors: BTreeMap::from([("w".to_string(), Tensor::scalar(0.5))]) };
        let mut st = AdamState::new(&p);
        let g = BTreeMap::from([("w".to_string(), Tensor::scalar(1.0))]);
        adam_step(&mut p, &g, &mut st, 1e-3).unwrap();
        assert!((p.get("w").unwrap().item() - (0.5 - 1e-3)).abs() < 1e-6);
    }

    #[test]
    fn adam_rejects_non_finite_without_side_effects() {
        let mut p = ModelParams { version: 1, tensors: BTreeMap::from([("w".to_string(), Tensor::scalar(0.5))]) };
        let mut st = AdamState::new(&p);
        let g = BTreeMap::from([("w".to_string(), Tensor::scalar(f64::NAN))]);
        assert!(matches!(adam_step(&mut p, &g, &mut st, 1e-3), Err(TrainError::NonFiniteGradient(_))));
        assert_eq!(st.t, 0);
        assert_eq!(p.get("w").unwrap().item(), 0.5);
    }

    #[test]
    fn clip_scales_to_max_norm() {
        let mut g = BTreeMap::from([("a".to_string(), Tensor::vector(vec![3.0, 4.0]))]);
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g["a"].data()[0] - 0.6).abs() < 1e-15);
    }
}
