use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{CohortDataset, DataError};
use crate::rng::rng_for;

/// One client's shard, already split into local train and validation rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SitePartition {
    pub name: String,
    pub train: CohortDataset,
    pub valid: CohortDataset,
}

/// Row indices of each class, negatives first, each shuffled by `seed`.
fn shuffled_by_class(ds: &CohortDataset, seed: u64) -> [Vec<usize>; 2] {
    let mut classes = [Vec::new(), Vec::new()];
    for (i, r) in ds.rows().iter().enumerate() {
        classes[r.label as usize].push(i);
    }
    for (c, idx) in classes.iter_mut().enumerate() {
        idx.shuffle(&mut rng_for(seed, &[c as u64]));
    }
    classes
}

/// Stratified train/validation index split. Each class keeps
/// `round(train_frac * n_class)` rows for training; both sides must end up
/// with at least one row of each class. Index lists are sorted ascending.
pub fn split_indices(
    ds: &CohortDataset,
    train_frac: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), DataError> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(DataError::Split(format!("train_frac must be in (0, 1), got {train_frac}")));
    }
    let mut train = Vec::new();
    let mut valid = Vec::new();
    for (class, idx) in shuffled_by_class(ds, seed).iter().enumerate() {
        if idx.len() < 2 {
            return Err(DataError::Split(format!("class {class} has {} rows, need at least 2", idx.len())));
        }
        let n_train = (train_frac * idx.len() as f64).round() as usize;
        if n_train == 0 || n_train == idx.len() {
            return Err(DataError::Split(format!(
                "train_frac {train_frac} leaves class {class} ({} rows) without a train or validation row",
                idx.len()
            )));
        }
        train.extend_from_slice(&idx[..n_train]);
        valid.extend_from_slice(&idx[n_train..]);
    }
    train.sort_unstable();
    valid.sort_unstable();
    Ok((train, valid))
}

pub fn split_train_valid(
    ds: &CohortDataset,
    train_frac: f64,
    seed: u64,
) -> Result<(CohortDataset, CohortDataset), DataError> {
    let (t, v) = split_indices(ds, train_frac, seed)?;
    Ok((ds.select(&t), ds.select(&v)))
}

/// Stratified k-fold test-fold indices: within each class, shuffled rows are
/// dealt round-robin across folds.
pub fn kfold_indices(ds: &CohortDataset, k: usize, seed: u64) -> Result<Vec<Vec<usize>>, DataError> {
    if k < 2 {
        return Err(DataError::Split(format!("k must be at least 2, got {k}")));
    }
    let mut folds = vec![Vec::new(); k];
    for (class, idx) in shuffled_by_class(ds, seed).iter().enumerate() {
        if idx.len() < k {
            return Err(DataError::Split(format!("class {class} has {} rows, fewer than k = {k}", idx.len())));
        }
        for (j, &i) in idx.iter().enumerate() {
            folds[j % k].push(i);
        }
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(folds)
}

/// `(train, test)` pairs, one per fold.
pub fn kfold_split(
    ds: &CohortDataset,
    k: usize,
    seed: u64,
) -> Result<Vec<(CohortDataset, CohortDataset)>, DataError> {
    let folds = kfold_indices(ds, k, seed)?;
    let mut fold_of = vec![0usize; ds.len()];
    for (f, idx) in folds.iter().enumerate() {
        for &i in idx {
            fold_of[i] = f;
        }
    }
    Ok(folds
        .iter()
        .enumerate()
        .map(|(f, test)| {
            let train: Vec<usize> = (0..ds.len()).filter(|&i| fold_of[i] != f).collect();
            (ds.select(&train), ds.select(test))
        })
        .collect())
}

/// Splits every site with a site-specific seed.
pub fn partition_sites(
    sites: &[(String, CohortDataset)],
    train_frac: f64,
    seed: u64,
) -> Result<Vec<SitePartition>, DataError> {
    sites
        .iter()
        .enumerate()
        .map(|(i, (name, ds))| {
            let (train, valid) = split_train_valid(ds, train_frac, crate::rng::derive_seed(seed, &[i as u64]))
                .map_err(|e| DataError::Split(format!("site `{name}`: {e}")))?;
            Ok(SitePartition {
                name: name.clone(),
                train,
                valid,
            })
        })
        .collect()
}

/// Concatenates datasets in order.
pub fn pool<'a>(parts: impl IntoIterator<Item = &'a CohortDataset>) -> CohortDataset {
    let mut rows = Vec::new();
    let mut names = None;
    for p in parts {
        names.get_or_insert_with(|| p.feature_names().to_vec());
        rows.extend_from_slice(p.rows());
    }
    match names {
        Some(n) => CohortDataset::with_names(n, rows).expect("rows already validated"),
        None => CohortDataset::default(),
    }
}
