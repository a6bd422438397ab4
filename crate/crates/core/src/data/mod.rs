//! Synthetic phantom pairs, dataset splits, and file formats.

mod files;
mod phantom;

pub use files::{
    case_dir, load_case_pair, load_dataset, load_ddf, load_landmarks, load_volume, save_case_pair, save_dataset,
    save_ddf, save_landmarks, save_volume,
};
pub use phantom::{gen_phantom_pair, gen_phantom_pair_with_spacing, CasePair, PhantomCase, Provenance, CONTROL_POINTS};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seeds::{derive_seed, rng, Stream};

/// Seed of the `id`-th case in a dataset generated from `seed`.
pub fn case_seed(seed: u64, id: usize) -> u64 {
    derive_seed(seed, Stream::Case, id as u64)
}

/// Generates `count` pairs; case `i` uses [`case_seed`]`(seed, i)`.
pub fn gen_dataset(seed: u64, count: usize, extent: [usize; 3], deform_magnitude: f64) -> Result<Vec<CasePair>> {
    (0..count)
        .map(|i| gen_phantom_pair(case_seed(seed, i), extent, deform_magnitude))
        .collect()
}

/// Shuffles `0..n` with `seed` and cuts it at `round(n · train_fraction)`.
/// Each side is returned in ascending order.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!("train fraction must be in (0, 1), got {train_fraction}")));
    }
    let n_train = (n as f64 * train_fraction).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::invalid(format!(
            "splitting {n} cases at {train_fraction} leaves one side empty"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng(seed, Stream::Split, 0));
    let mut train = order[..n_train].to_vec();
    let mut test = order[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Splits items by patient into disjoint train and test sets.
pub fn split_dataset<T: Clone>(cases: &[T], train_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    let (train, test) = split_indices(cases.len(), train_fraction, seed)?;
    Ok((
        train.iter().map(|&i| cases[i].clone()).collect(),
        test.iter().map(|&i| cases[i].clone()).collect(),
    ))
}
