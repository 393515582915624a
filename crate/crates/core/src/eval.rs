//! Test-time aggregation over random BFS roots.
//!
//! A soft vote averages the class probabilities of `N` encodings of one graph,
//! each rooted at a node drawn uniformly with replacement. `K` soft votes are
//! collected and the hard vote picks the class holding the single largest
//! probability among them.

use std::fmt::Write as _;

use rand::Rng;

use crate::graphio::Graph;
use crate::model::{ModelError, Vrgc};
use crate::nn::ModelParams;
use crate::ordering::{encode_from_root, EncodedGraph};
use crate::seeds::SeedBundle;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid argument: {0}")]
    Argument(String),
}

/// Anything that maps rooted encodings to class-probability vectors.
pub trait Classifier {
    fn d_n(&self) -> usize;
    fn n_g(&self) -> usize;
    fn predict_batch(&self, batch: &[EncodedGraph]) -> Result<Vec<Vec<f64>>, ModelError>;
}

/// A model with fixed parameters, in evaluation mode.
pub struct Frozen<'a> {
    pub model: &'a Vrgc,
    pub params: &'a ModelParams,
}

impl Classifier for Frozen<'_> {
    fn d_n(&self) -> usize {
        self.model.cfg.d_n
    }

    fn n_g(&self) -> usize {
        self.model.cfg.n_g
    }

    fn predict_batch(&self, batch: &[EncodedGraph]) -> Result<Vec<Vec<f64>>, ModelError> {
        self.model.predict_batch(self.params, batch)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VoteConfig {
    /// Roots per soft vote.
    pub n: usize,
    /// Soft votes per graph.
    pub k: usize,
    pub seed: u64,
}

impl VoteConfig {
    pub fn new(seed: u64) -> Self {
        VoteConfig { n: 16, k: 8, seed }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.n == 0 || self.k == 0 {
            return Err(EvalError::Argument(format!("N and K must be at least 1 (got N={}, K={})", self.n, self.k)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VoteResult {
    /// `K × C` soft votes.
    pub soft_votes: Vec<Vec<f64>>,
    pub predicted: usize,
    pub confidence: f64,
}

/// Elementwise mean of probability vectors, correctly rounded per entry.
pub fn mean_vote(preds: &[Vec<f64>]) -> Result<Vec<f64>, EvalError> {
    let first = preds.first().ok_or_else(|| EvalError::Argument("no predictions to average".into()))?;
    if preds.iter().any(|p| p.len() != first.len()) {
        return Err(EvalError::Argument("predictions have different lengths".into()));
    }
    Ok((0..first.len()).map(|c| rounded_mean(preds.iter().map(|p| p[c]), preds.len())).collect())
}

/// Mean of `n` values, rounded once: the sum is carried as an unevaluated
/// `hi + lo` pair (two-sum) and the division is corrected with an FMA residual.
fn rounded_mean(xs: impl Iterator<Item = f64>, n: usize) -> f64 {
    let (mut hi, mut lo) = (0.0f64, 0.0f64);
    for x in xs {
        let s = hi + x;
        let b = s - hi;
        lo += (hi - (s - b)) + (x - b);
        hi = s;
    }
    let n = n as f64;
    let q = hi / n;
    let r = (-q).mul_add(n, hi);
    q + (r + lo) / n
}

fn encodings<C: Classifier + ?Sized, R: Rng + ?Sized>(
    model: &C,
    g: &Graph,
    count: usize,
    rng: &mut R,
) -> Result<Vec<EncodedGraph>, EvalError> {
    (0..count)
        .map(|_| {
            let root = rng.random_range(0..g.num_nodes());
            encode_from_root(g, root, model.d_n(), model.n_g()).map_err(|e| EvalError::Argument(e.to_string()))
        })
        .collect()
}

/// `p̄`: mean prediction over `n` random-root encodings of `g`.
pub fn soft_vote<C: Classifier + ?Sized, R: Rng + ?Sized>(model: &C, g: &Graph, n: usize, rng: &mut R) -> Result<Vec<f64>, EvalError> {
    if n == 0 {
        return Err(EvalError::Argument("N must be at least 1".into()));
    }
    let batch = encodings(model, g, n, rng)?;
    mean_vote(&model.predict_batch(&batch)?)
}

/// `ĉ = argmax_c max_k soft_votes[k][c]`, lowest class on ties. Returns `(ĉ, confidence)`.
pub fn hard_vote(soft_votes: &[Vec<f64>]) -> Result<(usize, f64), EvalError> {
    let c = soft_votes.first().map(Vec::len).unwrap_or(0);
    if c == 0 || soft_votes.iter().any(|r| r.len() != c) {
        return Err(EvalError::Argument("hard vote needs at least one non-empty row, all of equal length".into()));
    }
    let mut best = (0, f64::NEG_INFINITY);
    for class in 0..c {
        let m = soft_votes.iter().map(|r| r[class]).fold(f64::NEG_INFINITY, f64::max);
        if m > best.1 {
            best = (class, m);
        }
    }
    Ok(best)
}

/// `K` soft votes of `N` roots each, then the hard vote. All `N·K`
/// encodings go through the model as one batch.
pub fn vote<C: Classifier + ?Sized, R: Rng + ?Sized>(model: &C, g: &Graph, cfg: &VoteConfig, rng: &mut R) -> Result<VoteResult, EvalError> {
    cfg.validate()?;
    let batch = encodings(model, g, cfg.n * cfg.k, rng)?;
    let preds = model.predict_batch(&batch)?;
    let soft_votes = preds.chunks(cfg.n).map(mean_vote).collect::<Result<Vec<_>, _>>()?;
    let (predicted, confidence) = hard_vote(&soft_votes)?;
    Ok(VoteResult { soft_votes, predicted, confidence })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphVote {
    pub graph_id: usize,
    pub label: usize,
    pub result: VoteResult,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub votes: Vec<GraphVote>,
}

/// Votes on every `(graph_id, graph)`. Each graph draws its roots from its own
/// stream keyed by its id, so results do not depend on evaluation order.
pub fn evaluate<C: Classifier + ?Sized>(model: &C, graphs: &[(usize, &Graph)], cfg: &VoteConfig) -> Result<Evaluation, EvalError> {
    cfg.validate()?;
    let seeds = SeedBundle::new(cfg.seed);
    let mut votes = Vec::with_capacity(graphs.len());
    for &(id, g) in graphs {
        let mut rng = seeds.stream("eval", id as u64);
        votes.push(GraphVote { graph_id: id, label: g.label(), result: vote(model, g, cfg, &mut rng)? });
    }
    let correct = votes.iter().filter(|v| v.result.predicted == v.label).count();
    let accuracy = if votes.is_empty() { 0.0 } else { correct as f64 / votes.len() as f64 };
    Ok(Evaluation { accuracy, votes })
}

/// One line per graph: id, label, prediction, confidence, then the flattened soft votes.
pub fn votes_csv(votes: &[GraphVote]) -> String {
    let k = votes.first().map(|v| v.result.soft_votes.len()).unwrap_or(0);
    let c = votes.first().and_then(|v| v.result.soft_votes.first()).map(Vec::len).unwrap_or(0);
    let mut out = String::from("graph_id,label,predicted,confidence");
    for i in 0..k {
        for j in 0..c {
            let _ = write!(out, ",p_{i}_{j}");
        }
    }
    out.push('\n');
    for v in votes {
        let _ = write!(out, "{},{},{},{}", v.graph_id, v.label, v.result.predicted, v.result.confidence);
        for x in v.result.soft_votes.iter().flatten() {
            let _ = write!(out, ",{x}");
        }
        out.push('\n');
    }
    out
}
