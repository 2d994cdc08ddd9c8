use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ChoiceDataset;
use crate::error::{Error, Result};

/// Partition person indices into `k` folds of near-equal size. Persons are
/// shuffled with `seed` and dealt round-robin, so the first `N mod k` folds
/// hold one extra person. Each fold is returned sorted.
pub fn split_folds(ds: &ChoiceDataset, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    split_indices(ds.n_persons(), k, seed)
}

pub(crate) fn split_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || k > n {
        return Err(Error::InvalidArgument(format!(
            "fold count {k} must satisfy 2 <= k <= N = {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut folds = vec![Vec::with_capacity(n / k + 1); k];
    for (pos, idx) in order.into_iter().enumerate() {
        folds[pos % k].push(idx);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}
