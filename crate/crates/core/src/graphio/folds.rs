use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Dataset, GraphIoError};

/// Assignment of every graph to one of `k` cross-validation folds.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldPlan {
    pub fold_of: Vec<usize>,
    pub k: usize,
    pub seed: u64,
}

impl FoldPlan {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] == fold).collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] != fold).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.fold_of {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Stratified k-fold split: each class is shuffled and dealt round-robin, with
/// the deal continuing across classes so fold sizes also stay within one.
pub fn stratified_folds(ds: &Dataset, k: usize, seed: u64) -> Result<FoldPlan, GraphIoError> {
    if k < 2 {
        return Err(GraphIoError::Argument(format!("need at least 2 folds, got {k}")));
    }
    if k > ds.len() {
        return Err(GraphIoError::Argument(format!("{k} folds for {} graphs", ds.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![0; ds.len()];
    let mut slot = 0;
    for class in 0..ds.num_classes {
        let mut members: Vec<usize> = (0..ds.len()).filter(|&i| ds.graphs[i].label() == class).collect();
        members.shuffle(&mut rng);
        for i in members {
            fold_of[i] = slot % k;
            slot += 1;
        }
    }
    Ok(FoldPlan { fold_of, k, seed })
}

/// Indices of a stratified random subsample keeping `ceil(fraction · n_c)`
/// graphs of each class `c`, in ascending order.
pub fn stratified_subsample(ds: &Dataset, fraction: f64, seed: u64) -> Result<Vec<usize>, GraphIoError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(GraphIoError::Argument(format!("subsample fraction must be in (0, 1], got {fraction}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::new();
    for class in 0..ds.num_classes {
        let mut members: Vec<usize> = (0..ds.len()).filter(|&i| ds.graphs[i].label() == class).collect();
        let take = (fraction * members.len() as f64).ceil() as usize;
        members.shuffle(&mut rng);
        keep.extend_from_slice(&members[..take.min(members.len())]);
    }
    keep.sort_unstable();
    Ok(keep)
}
