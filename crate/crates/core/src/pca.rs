//! Principal component analysis of the standardized indicator table.
//!
//! Components are numbered from 1, as in the published loading tables.

use std::cmp::Ordering;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::IndicatorTable;
use crate::numkernel::{symmetric_eigen, DenseMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub indicator_names: Vec<String>,
    /// Indicators × components; each column is a unit eigenvector.
    pub loadings: DenseMatrix,
    pub eigenvalues: Vec<f64>,
    pub explained_ratio: Vec<f64>,
    pub col_means: Vec<f64>,
    pub col_stds: Vec<f64>,
    /// Numerical rank of the correlation matrix.
    pub rank: usize,
    pub warnings: Vec<String>,
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn cumulative_ratio(&self) -> Vec<f64> {
        self.explained_ratio
            .iter()
            .scan(0.0, |acc, r| {
                *acc += r;
                Some(*acc)
            })
            .collect()
    }
}

/// Flips each column so that its largest-magnitude entry is positive.
/// The first such entry wins exact magnitude ties.
pub fn apply_sign_convention(loadings: &mut DenseMatrix) {
    for j in 0..loadings.cols() {
        let mut best = 0;
        for i in 1..loadings.rows() {
            if loadings[(i, j)].abs() > loadings[(best, j)].abs() {
                best = i;
            }
        }
        if loadings[(best, j)] < 0.0 {
            for i in 0..loadings.rows() {
                loadings[(i, j)] = -loadings[(i, j)];
            }
        }
    }
}

/// Eigendecomposition of the sample correlation matrix of a standardized
/// table.
pub fn fit_pca(table: &IndicatorTable) -> Result<PcaModel> {
    if !table.standardized {
        return Err(Error::State("PCA expects a standardized indicator table".into()));
    }
    let (n, p) = table.values.shape();
    if n < p || n < 2 {
        return Err(Error::Dimension(format!(
            "PCA needs at least as many rows as indicators, got {n} rows for {p} indicators"
        )));
    }
    let mut corr = table.values.gram();
    for i in 0..p {
        for j in 0..p {
            corr[(i, j)] /= (n - 1) as f64;
        }
    }
    let eig = symmetric_eigen(&corr)?;
    let mut loadings = eig.eigenvectors;
    apply_sign_convention(&mut loadings);
    // round-off can leave tiny negative eigenvalues on singular tables
    let eigenvalues: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
    let total: f64 = eigenvalues.iter().sum();
    let explained_ratio = eigenvalues.iter().map(|l| l / total).collect();
    let top = eigenvalues[0];
    let rank = eigenvalues.iter().filter(|&&l| l > 1e-10 * top).count();
    let mut warnings = Vec::new();
    if rank < p {
        let msg = format!("correlation matrix is singular: rank {rank} of {p}");
        warn!("{msg}");
        warnings.push(msg);
    }
    Ok(PcaModel {
        indicator_names: table.indicator_names.clone(),
        loadings,
        eigenvalues,
        explained_ratio,
        col_means: table.col_means.clone(),
        col_stds: table.col_stds.clone(),
        rank,
        warnings,
    })
}

/// Component scores for a set of neighborhoods.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub neighborhood_ids: Vec<String>,
    /// 1-based component numbers, one per score column.
    pub components: Vec<usize>,
    pub scores: DenseMatrix,
}

impl ScoreTable {
    pub fn len(&self) -> usize {
        self.neighborhood_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighborhood_ids.is_empty()
    }

    /// Restricts to the given 1-based components, in the order given.
    pub fn select(&self, components: &[usize]) -> Result<ScoreTable> {
        let cols = components
            .iter()
            .map(|c| {
                self.components.iter().position(|k| k == c).ok_or_else(|| {
                    Error::Range(format!("component {c} not present in score table"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ScoreTable {
            neighborhood_ids: self.neighborhood_ids.clone(),
            components: components.to_vec(),
            scores: self.scores.select_columns(&cols)?,
        })
    }

    /// Rows reordered to follow `ids`; every id must be present.
    pub fn align_to(&self, ids: &[String]) -> Result<ScoreTable> {
        let index: std::collections::HashMap<&str, usize> = self
            .neighborhood_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let rows = ids
            .iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::Join(format!("no scores for neighborhood `{id}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ScoreTable {
            neighborhood_ids: ids.to_vec(),
            components: self.components.clone(),
            scores: self.scores.select_rows(&rows),
        })
    }
}

/// Projects standardized rows onto every component: `scores = Z · loadings`.
pub fn transform(model: &PcaModel, table: &IndicatorTable) -> Result<ScoreTable> {
    if table.indicator_names != model.indicator_names {
        return Err(Error::Schema(format!(
            "expected indicators {:?}, got {:?}",
            model.indicator_names, table.indicator_names
        )));
    }
    if !table.standardized {
        return Err(Error::State("transform expects a standardized table".into()));
    }
    Ok(ScoreTable {
        neighborhood_ids: table.neighborhood_ids.clone(),
        components: (1..=model.n_components()).collect(),
        scores: table.values.matmul(&model.loadings)?,
    })
}

/// Maps scores back to standardized indicator space: `Z ≈ scores · loadingsᵀ`.
pub fn reconstruct(model: &PcaModel, scores: &ScoreTable) -> Result<DenseMatrix> {
    let cols: Vec<usize> = scores.components.iter().map(|c| c - 1).collect();
    let sub = model.loadings.select_columns(&cols)?;
    scores.scores.matmul(&sub.transpose())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ComponentSelection {
    Explicit(Vec<usize>),
    Threshold(f64),
}

impl Default for ComponentSelection {
    fn default() -> Self {
        ComponentSelection::Explicit(vec![1, 2, 4, 5, 6])
    }
}

impl ComponentSelection {
    /// Checks the selection against a model with `n_components` components
    /// without needing the fitted eigenvalues.
    pub fn validate(&self, n_components: usize) -> Result<()> {
        match self {
            ComponentSelection::Explicit(list) => {
                if list.is_empty() {
                    return Err(Error::Config("component selection is empty".into()));
                }
                if let Some(bad) = list.iter().find(|&&c| c == 0 || c > n_components) {
                    return Err(Error::Config(format!(
                        "component {bad} does not exist (valid: 1..={n_components})"
                    )));
                }
                let mut seen = list.clone();
                seen.sort_unstable();
                seen.dedup();
                if seen.len() != list.len() {
                    return Err(Error::Config(format!("duplicate components in {list:?}")));
                }
                Ok(())
            }
            ComponentSelection::Threshold(t) => {
                if *t > 0.0 && *t <= 1.0 {
                    Ok(())
                } else {
                    Err(Error::Config(format!(
                        "variance threshold must lie in (0, 1], got {t}"
                    )))
                }
            }
        }
    }
}

/// Resolves a selection to 1-based component numbers.
///
/// Explicit lists pass through verbatim. A threshold keeps the shortest
/// prefix whose cumulative explained ratio reaches it.
pub fn select_components(model: &PcaModel, selection: &ComponentSelection) -> Result<Vec<usize>> {
    selection.validate(model.n_components())?;
    match selection {
        ComponentSelection::Explicit(list) => Ok(list.clone()),
        ComponentSelection::Threshold(t) => {
            let cum = model.cumulative_ratio();
            let k = cum
                .iter()
                .position(|&c| c >= t - 1e-12)
                .map_or(model.n_components(), |i| i + 1);
            Ok((1..=k).collect())
        }
    }
}

/// The `k` neighborhoods with the highest scores on a 1-based component.
/// Equal scores are broken by ascending id.
pub fn top_k_neighborhoods(scores: &ScoreTable, component: usize, k: usize) -> Result<Vec<String>> {
    let col = scores
        .components
        .iter()
        .position(|&c| c == component)
        .ok_or_else(|| Error::Range(format!("component {component} not in score table")))?;
    let n = scores.len();
    if k == 0 || k > n {
        return Err(Error::Domain(format!("k must lie in 1..={n}, got {k}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        scores.scores[(b, col)]
            .partial_cmp(&scores.scores[(a, col)])
            .unwrap_or(Ordering::Equal)
            .then_with(|| scores.neighborhood_ids[a].cmp(&scores.neighborhood_ids[b]))
    });
    Ok(order
        .into_iter()
        .take(k)
        .map(|i| scores.neighborhood_ids[i].clone())
        .collect())
}
