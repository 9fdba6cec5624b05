//! Random forest regression: bootstrap-aggregated CART trees with per-node
//! feature subsampling, plus k-fold cross-validation and grid search.
//!
//! Every tree draws from its own ChaCha stream selected by tree index, so
//! training trees serially or in parallel gives bit-identical forests.

mod cv;
mod tree;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use cv::{
    default_grid, grid_search, kfold_cv, kfold_indices, r2_score, rmse, train_test_split,
    CvResult, GridSearchResult,
};
pub use tree::{Node, RegressionTree};

use crate::error::{Error, Result};
use crate::numkernel::DenseMatrix;
use tree::TreeParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaxFeatures {
    All,
    /// `floor(sqrt(p))`, at least 1.
    Sqrt,
    #[serde(untagged)]
    Count(usize),
}

impl MaxFeatures {
    pub fn resolve(self, n_features: usize) -> usize {
        let k = match self {
            MaxFeatures::All => n_features,
            MaxFeatures::Sqrt => (n_features as f64).sqrt().floor() as usize,
            MaxFeatures::Count(k) => k,
        };
        k.clamp(1, n_features.max(1))
    }

    pub fn label(self) -> String {
        match self {
            MaxFeatures::All => "all".into(),
            MaxFeatures::Sqrt => "sqrt".into(),
            MaxFeatures::Count(k) => k.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// `None` grows until the leaf/split limits stop it.
    pub max_depth: Option<usize>,
    pub max_features: MaxFeatures,
    pub min_samples_leaf: usize,
    pub min_samples_split: usize,
    /// Draw a bootstrap sample per tree; off trains every tree on all rows.
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: None,
            max_features: MaxFeatures::Sqrt,
            min_samples_leaf: 1,
            min_samples_split: 2,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestConfig {
    /// 200 trees of depth 8, √p features per node, at least 5 rows per leaf
    /// and per split.
    pub fn tuned_reference(seed: u64) -> Self {
        Self {
            n_trees: 200,
            max_depth: Some(8),
            max_features: MaxFeatures::Sqrt,
            min_samples_leaf: 5,
            min_samples_split: 5,
            bootstrap: true,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Config("n_trees must be at least 1".into()));
        }
        if self.min_samples_split < 2 {
            return Err(Error::Config("min_samples_split must be at least 2".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::Config("min_samples_leaf must be at least 1".into()));
        }
        if self.max_features == MaxFeatures::Count(0) {
            return Err(Error::Config("max_features must be at least 1".into()));
        }
        Ok(())
    }

    pub fn depth_label(&self) -> String {
        self.max_depth.map_or("unlimited".into(), |d| d.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub trees: Vec<RegressionTree>,
    pub n_features: usize,
    pub config: ForestConfig,
}

/// The random stream for one tree: the master seed picks the key, the tree
/// index picks the stream.
pub fn tree_rng(seed: u64, tree_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree_index as u64);
    rng
}

fn fit_tree(x: &DenseMatrix, y: &[f64], config: &ForestConfig, index: usize) -> RegressionTree {
    let n = x.rows();
    let mut rng = tree_rng(config.seed, index);
    let sample: Vec<usize> = if config.bootstrap {
        (0..n).map(|_| rng.random_range(0..n)).collect()
    } else {
        (0..n).collect()
    };
    let params = TreeParams {
        max_depth: config.max_depth,
        min_samples_leaf: config.min_samples_leaf,
        min_samples_split: config.min_samples_split,
        max_features: config.max_features.resolve(x.cols()),
    };
    RegressionTree::grow(x, y, sample, params, &mut rng)
}

pub fn fit_forest(x: &DenseMatrix, y: &[f64], config: &ForestConfig) -> Result<ForestModel> {
    config.validate()?;
    if x.rows() == 0 || x.cols() == 0 {
        return Err(Error::Domain("cannot fit a forest on empty data".into()));
    }
    if x.rows() != y.len() {
        return Err(Error::Dimension(format!(
            "{} feature rows but {} targets",
            x.rows(),
            y.len()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("targets must be finite".into()));
    }
    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|t| fit_tree(x, y, config, t))
        .collect();
    Ok(ForestModel {
        trees,
        n_features: x.cols(),
        config: *config,
    })
}

/// Serial variant of [`fit_forest`]; produces the identical model.
pub fn fit_forest_serial(x: &DenseMatrix, y: &[f64], config: &ForestConfig) -> Result<ForestModel> {
    config.validate()?;
    if x.rows() == 0 || x.cols() == 0 {
        return Err(Error::Domain("cannot fit a forest on empty data".into()));
    }
    if x.rows() != y.len() {
        return Err(Error::Dimension("feature rows and targets differ".into()));
    }
    let trees = (0..config.n_trees).map(|t| fit_tree(x, y, config, t)).collect();
    Ok(ForestModel {
        trees,
        n_features: x.cols(),
        config: *config,
    })
}

/// Mean of the per-tree predictions.
pub fn predict_forest(model: &ForestModel, x: &DenseMatrix) -> Result<Vec<f64>> {
    if x.cols() != model.n_features {
        return Err(Error::Schema(format!(
            "forest was trained on {} features, got {}",
            model.n_features,
            x.cols()
        )));
    }
    let k = model.trees.len() as f64;
    Ok((0..x.rows())
        .map(|i| {
            let row = x.row(i);
            model.trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / k
        })
        .collect())
}
