use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{cell_rng, DatasetManifest, Split};
use crate::error::{Error, Result};

use super::{score, train_features, FeatureBank, LocalizerConfig};

pub const DEFAULT_BETA_GRID: [f64; 5] = [0.0, 1.0, 10.0, 100.0, 1000.0];
pub const CV_FOLDS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaSelection {
    pub beta: f64,
    /// `(beta, mean cross-validated distance error)` in grid order.
    pub scores: Vec<(f64, f64)>,
}

/// Stratified `k`-fold assignment of each cell's pooled train+validation
/// packets: `folds[c][k]` lists the packets held out in fold `k`.
fn stratified_folds(picks: &[Vec<usize>], cells: &[u32], seed: u64) -> Result<Vec<Vec<Vec<usize>>>> {
    cells
        .iter()
        .zip(picks)
        .map(|(&c, p)| {
            if p.len() < CV_FOLDS {
                return Err(Error::InsufficientSamples(format!(
                    "cell {c} has {} samples, {CV_FOLDS}-fold cross validation needs {CV_FOLDS}",
                    p.len()
                )));
            }
            let mut order = p.clone();
            order.shuffle(&mut cell_rng(seed ^ 0x5eed_f01d, c));
            let mut folds = vec![Vec::new(); CV_FOLDS];
            for (k, idx) in order.into_iter().enumerate() {
                folds[k % CV_FOLDS].push(idx);
            }
            for f in &mut folds {
                f.sort_unstable();
            }
            Ok(folds)
        })
        .collect()
}

/// Picks `beta` from `grid` by stratified 5-fold cross validation on the
/// train and validation splits, scoring single-packet estimates by mean
/// distance error. Ties go to the smaller `beta`.
pub fn select_beta(
    bank: &FeatureBank,
    manifest: &DatasetManifest,
    config: &LocalizerConfig,
    grid: &[f64],
    seed: u64,
) -> Result<BetaSelection> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("beta grid is empty".into()));
    }
    if grid.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
        return Err(Error::InvalidParameter(format!("beta grid {grid:?} must be finite and >= 0")));
    }
    let views = config.view_ids(bank.n_aps())?;
    let pool = bank.split_picks(manifest, &[Split::Train, Split::Validation])?;
    let folds = stratified_folds(&pool, bank.cells(), seed)?;

    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|b| (0..CV_FOLDS).map(move |k| (b, k)))
        .collect();
    let results: Vec<(f64, usize)> = jobs
        .par_iter()
        .map(|&(b, k)| {
            let held: Vec<Vec<usize>> = folds.iter().map(|f| f[k].clone()).collect();
            let kept: Vec<Vec<usize>> = folds
                .iter()
                .map(|f| {
                    let mut v: Vec<usize> = (0..CV_FOLDS).filter(|&j| j != k).flat_map(|j| f[j].iter().copied()).collect();
                    v.sort_unstable();
                    v
                })
                .collect();
            let cfg = LocalizerConfig {
                beta: grid[b],
                views: views.clone(),
                ..config.clone()
            };
            let train = bank.gather(&kept, &views)?;
            let model = train_features(&train, &manifest.grid, bank.shape(), &cfg)?;
            let test = bank.batches(&held, &views, 1)?;
            let mut truth = Vec::with_capacity(test.len());
            let mut predicted = Vec::with_capacity(test.len());
            for batch in &test {
                truth.push(batch.cell.expect("bank batches are labeled"));
                predicted.push(model.classify_images(&batch.amplitude, &batch.phase)?);
            }
            let s = score(&truth, &predicted, &manifest.grid)?;
            Ok((s.distance_errors.iter().sum::<f64>(), s.n_estimates))
        })
        .collect::<Result<_>>()?;

    let scores: Vec<(f64, f64)> = grid
        .iter()
        .enumerate()
        .map(|(b, &beta)| {
            let (sum, n) = results[b * CV_FOLDS..(b + 1) * CV_FOLDS]
                .iter()
                .fold((0.0, 0usize), |acc, r| (acc.0 + r.0, acc.1 + r.1));
            (beta, sum / n as f64)
        })
        .collect();
    let mut best = scores[0];
    for &s in &scores[1..] {
        if s.1 < best.1 || (s.1 == best.1 && s.0 < best.0) {
            best = s;
        }
    }
    Ok(BetaSelection {
        beta: best.0,
        scores,
    })
}
