use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{fit_forest, predict_forest, ForestConfig, MaxFeatures};
use crate::error::{Error, Result};
use crate::numkernel::DenseMatrix;

/// `1 − Σ(y − ŷ)² / Σ(y − ȳ)²`.
pub fn r2_score(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check_pair(y_true, y_pred)?;
    let m = y_true.iter().sum::<f64>() / y_true.len() as f64;
    let tss: f64 = y_true.iter().map(|v| (v - m).powi(2)).sum();
    if tss == 0.0 {
        return Err(Error::Degenerate("R² is undefined for a constant target".into()));
    }
    let rss: f64 = y_true.iter().zip(y_pred).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(1.0 - rss / tss)
}

pub fn rmse(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    if y_true.len() != y_pred.len() || y_true.is_empty() {
        return Err(Error::Dimension(format!(
            "need equal non-empty lengths, got {} and {}",
            y_true.len(),
            y_pred.len()
        )));
    }
    let mse = y_true
        .iter()
        .zip(y_pred)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / y_true.len() as f64;
    Ok(mse.sqrt())
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Dimension(format!(
            "need equal lengths of at least 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Shuffles `0..n` once with `seed` and deals it into `k` contiguous folds
/// whose sizes differ by at most one.
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::Domain(format!("k-fold needs k >= 2, got {k}")));
    }
    if k > n {
        return Err(Error::Domain(format!("k = {k} exceeds the {n} available rows")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        folds.push(order[start..start + size].to_vec());
        start += size;
    }
    Ok(folds)
}

/// Random train/test partition; the test side gets `round(n·fraction)` rows,
/// at least one and leaving at least one for training.
pub fn train_test_split(n: usize, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    if n < 2 {
        return Err(Error::Domain("need at least 2 rows to split".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
    let mut test = order[..n_test].to_vec();
    let mut train = order[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    /// Held-out row indices of each fold.
    pub folds: Vec<Vec<usize>>,
    /// `None` where R² is undefined for the fold (see `fold_errors`).
    pub per_fold_r2: Vec<Option<f64>>,
    pub per_fold_rmse: Vec<f64>,
    pub fold_errors: Vec<Option<String>>,
    /// Mean over folds with a defined R².
    pub mean_r2: f64,
    /// Population standard deviation over the same folds.
    pub std_r2: f64,
    pub mean_rmse: f64,
    /// Out-of-fold prediction for every row.
    pub oof_predictions: Vec<f64>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    (m, var.sqrt())
}

impl CvResult {
    pub fn valid_r2(&self) -> Vec<f64> {
        self.per_fold_r2.iter().flatten().copied().collect()
    }

    fn from_folds(folds: Vec<Vec<usize>>, outcomes: Vec<(Result<f64>, f64)>, oof: Vec<f64>) -> Self {
        let mut per_fold_r2 = Vec::with_capacity(outcomes.len());
        let mut fold_errors = Vec::with_capacity(outcomes.len());
        let mut per_fold_rmse = Vec::with_capacity(outcomes.len());
        for (r2, e) in outcomes {
            match r2 {
                Ok(v) => {
                    per_fold_r2.push(Some(v));
                    fold_errors.push(None);
                }
                Err(err) => {
                    per_fold_r2.push(None);
                    fold_errors.push(Some(err.to_string()));
                }
            }
            per_fold_rmse.push(e);
        }
        let valid: Vec<f64> = per_fold_r2.iter().flatten().copied().collect();
        let (mean_r2, std_r2) = mean_std(&valid);
        let mean_rmse = mean_std(&per_fold_rmse).0;
        CvResult {
            folds,
            per_fold_r2,
            per_fold_rmse,
            fold_errors,
            mean_r2,
            std_r2,
            mean_rmse,
            oof_predictions: oof,
        }
    }
}

fn cv_with_folds(
    x: &DenseMatrix,
    y: &[f64],
    config: &ForestConfig,
    folds: &[Vec<usize>],
) -> Result<CvResult> {
    let n = x.rows();
    let mut oof = vec![f64::NAN; n];
    let mut outcomes = Vec::with_capacity(folds.len());
    let mut in_test = vec![false; n];
    for fold in folds {
        in_test.iter_mut().for_each(|b| *b = false);
        for &i in fold {
            in_test[i] = true;
        }
        let train: Vec<usize> = (0..n).filter(|&i| !in_test[i]).collect();
        let x_train = x.select_rows(&train);
        let y_train: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let model = fit_forest(&x_train, &y_train, config)?;
        let pred = predict_forest(&model, &x.select_rows(fold))?;
        let truth: Vec<f64> = fold.iter().map(|&i| y[i]).collect();
        for (&i, p) in fold.iter().zip(&pred) {
            oof[i] = *p;
        }
        outcomes.push((r2_score(&truth, &pred), rmse(&truth, &pred)?));
    }
    Ok(CvResult::from_folds(folds.to_vec(), outcomes, oof))
}

/// k-fold cross-validation of a forest configuration.
pub fn kfold_cv(
    x: &DenseMatrix,
    y: &[f64],
    config: &ForestConfig,
    k: usize,
    seed: u64,
) -> Result<CvResult> {
    if x.rows() != y.len() {
        return Err(Error::Dimension("feature rows and targets differ".into()));
    }
    let folds = kfold_indices(x.rows(), k, seed)?;
    cv_with_folds(x, y, config, &folds)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSearchResult {
    pub grid: Vec<ForestConfig>,
    pub per_config_cv: Vec<CvResult>,
    pub best_index: usize,
}

impl GridSearchResult {
    pub fn best(&self) -> &ForestConfig {
        &self.grid[self.best_index]
    }
}

fn complexity(c: &ForestConfig) -> (usize, usize) {
    (c.n_trees, c.max_depth.unwrap_or(usize::MAX))
}

/// Index of the highest mean R²; ties go to fewer trees, then shallower
/// trees, then the earlier grid entry.
pub fn best_config_index(grid: &[ForestConfig], results: &[CvResult]) -> usize {
    let score = |i: usize| {
        let m = results[i].mean_r2;
        if m.is_nan() {
            f64::NEG_INFINITY
        } else {
            m
        }
    };
    (0..grid.len())
        .min_by(|&a, &b| {
            score(b)
                .partial_cmp(&score(a))
                .unwrap_or(Ordering::Equal)
                .then_with(|| complexity(&grid[a]).cmp(&complexity(&grid[b])))
                .then_with(|| a.cmp(&b))
        })
        .unwrap_or(0)
}

/// Cross-validates every configuration on one shared fold assignment.
pub fn grid_search(
    x: &DenseMatrix,
    y: &[f64],
    grid: &[ForestConfig],
    k: usize,
    seed: u64,
) -> Result<GridSearchResult> {
    if grid.is_empty() {
        return Err(Error::Config("grid search needs at least one configuration".into()));
    }
    if x.rows() != y.len() {
        return Err(Error::Dimension("feature rows and targets differ".into()));
    }
    let folds = kfold_indices(x.rows(), k, seed)?;
    let per_config_cv = grid
        .par_iter()
        .map(|c| cv_with_folds(x, y, c, &folds))
        .collect::<Result<Vec<_>>>()?;
    let best_index = best_config_index(grid, &per_config_cv);
    Ok(GridSearchResult {
        grid: grid.to_vec(),
        per_config_cv,
        best_index,
    })
}

/// Trees {100, 200, 400} × depth {4, 8, 16, unlimited} × leaf {1, 5} ×
/// split {2, 5} × features {sqrt, all}.
pub fn default_grid(seed: u64) -> Vec<ForestConfig> {
    let mut grid = Vec::new();
    for n_trees in [100, 200, 400] {
        for max_depth in [Some(4), Some(8), Some(16), None] {
            for min_samples_leaf in [1, 5] {
                for min_samples_split in [2, 5] {
                    for max_features in [MaxFeatures::Sqrt, MaxFeatures::All] {
                        grid.push(ForestConfig {
                            n_trees,
                            max_depth,
                            max_features,
                            min_samples_leaf,
                            min_samples_split,
                            bootstrap: true,
                            seed,
                        });
                    }
                }
            }
        }
    }
    grid
}
