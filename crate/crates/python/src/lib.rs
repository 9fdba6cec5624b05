//! Python bindings. Matrices cross the boundary as lists of rows.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use urbanrisk::config::RunConfig;
use urbanrisk::diagnostics::{self, BreuschPaganVariant};
use urbanrisk::forest::{self, ForestConfig, ForestModel, MaxFeatures};
use urbanrisk::ingest::IndicatorTable;
use urbanrisk::numkernel::DenseMatrix;
use urbanrisk::pca::{self, PcaModel, ScoreTable};
use urbanrisk::ranking::{self, AgreementReport};
use urbanrisk::regression::{self, HuberConfig, RegressionFit};
use urbanrisk::series::NeighborhoodSeries;
use urbanrisk::synth::{self, SynthConfig};
use urbanrisk::tables::summary_table;
use urbanrisk::{Error, ErrorClass};

create_exception!(urbanrisk_py, UrbanRiskError, PyException);
create_exception!(urbanrisk_py, ConfigError, UrbanRiskError);
create_exception!(urbanrisk_py, DataError, UrbanRiskError);
create_exception!(urbanrisk_py, NumericalError, UrbanRiskError);

fn py_err(e: Error) -> PyErr {
    let msg = e.to_string();
    match e.class() {
        ErrorClass::Config => ConfigError::new_err(msg),
        ErrorClass::Data => DataError::new_err(msg),
        ErrorClass::Numerical => NumericalError::new_err(msg),
    }
}

trait OrRaise<T> {
    fn or_raise(self) -> PyResult<T>;
}

impl<T> OrRaise<T> for urbanrisk::Result<T> {
    fn or_raise(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DenseMatrix> {
    DenseMatrix::from_rows(rows).or_raise()
}

fn default_ids(ids: Option<Vec<String>>, n: usize) -> Vec<String> {
    ids.unwrap_or_else(|| (0..n).map(synth::neighborhood_name).collect())
}

fn score_table(rows: &[Vec<f64>], components: Option<Vec<usize>>, ids: Option<Vec<String>>) -> PyResult<ScoreTable> {
    let scores = matrix(rows)?;
    let components = components.unwrap_or_else(|| (1..=scores.cols()).collect());
    Ok(ScoreTable {
        neighborhood_ids: default_ids(ids, scores.rows()),
        components,
        scores,
    })
}

#[pyclass(name = "PcaModel", module = "urbanrisk_py", frozen)]
struct PyPcaModel {
    inner: PcaModel,
    scores: ScoreTable,
}

#[pymethods]
impl PyPcaModel {
    #[getter]
    fn indicator_names(&self) -> Vec<String> {
        self.inner.indicator_names.clone()
    }

    #[getter]
    fn eigenvalues(&self) -> Vec<f64> {
        self.inner.eigenvalues.clone()
    }

    #[getter]
    fn explained_ratio(&self) -> Vec<f64> {
        self.inner.explained_ratio.clone()
    }

    #[getter]
    fn cumulative_ratio(&self) -> Vec<f64> {
        self.inner.cumulative_ratio()
    }

    /// Indicators × components.
    #[getter]
    fn loadings(&self) -> Vec<Vec<f64>> {
        self.inner.loadings.row_vecs()
    }

    #[getter]
    fn rank(&self) -> usize {
        self.inner.rank
    }

    /// Scores of the rows the model was fitted on.
    #[getter]
    fn scores(&self) -> Vec<Vec<f64>> {
        self.scores.scores.row_vecs()
    }

    #[getter]
    fn neighborhood_ids(&self) -> Vec<String> {
        self.scores.neighborhood_ids.clone()
    }

    /// Projects raw indicator rows using the fitted means and deviations.
    #[pyo3(signature = (rows, ids=None))]
    fn transform(&self, rows: Vec<Vec<f64>>, ids: Option<Vec<String>>) -> PyResult<Vec<Vec<f64>>> {
        let mut values = matrix(&rows)?;
        let n = values.rows();
        if values.cols() != self.inner.col_means.len() {
            return Err(py_err(Error::Dimension(format!(
                "expected {} indicators per row, got {}",
                self.inner.col_means.len(),
                values.cols()
            ))));
        }
        for i in 0..n {
            for j in 0..values.cols() {
                values[(i, j)] = (values[(i, j)] - self.inner.col_means[j]) / self.inner.col_stds[j];
            }
        }
        let table = IndicatorTable {
            neighborhood_ids: default_ids(ids, n),
            indicator_names: self.inner.indicator_names.clone(),
            values,
            standardized: true,
            col_means: self.inner.col_means.clone(),
            col_stds: self.inner.col_stds.clone(),
        };
        Ok(pca::transform(&self.inner, &table).or_raise()?.scores.row_vecs())
    }

    /// Back to standardized indicator space from full score rows.
    fn reconstruct(&self, scores: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let t = score_table(&scores, None, None)?;
        Ok(pca::reconstruct(&self.inner, &t).or_raise()?.row_vecs())
    }

    /// 1-based components whose cumulative explained ratio first reaches `threshold`.
    fn components_for_threshold(&self, threshold: f64) -> PyResult<Vec<usize>> {
        pca::select_components(&self.inner, &pca::ComponentSelection::Threshold(threshold)).or_raise()
    }

    fn __repr__(&self) -> String {
        format!("PcaModel(eigenvalues={:?})", self.inner.eigenvalues)
    }
}

/// Standardizes raw indicator rows (six columns) and fits PCA on them.
#[pyfunction]
#[pyo3(signature = (rows, ids=None))]
fn fit_pca(rows: Vec<Vec<f64>>, ids: Option<Vec<String>>) -> PyResult<PyPcaModel> {
    let values = matrix(&rows)?;
    let ids = default_ids(ids, values.rows());
    let z = IndicatorTable::new(ids, values).or_raise()?.standardize().or_raise()?;
    let inner = pca::fit_pca(&z).or_raise()?;
    let scores = pca::transform(&inner, &z).or_raise()?;
    Ok(PyPcaModel { inner, scores })
}

#[pyclass(name = "RegressionFit", module = "urbanrisk_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyRegressionFit {
    inner: RegressionFit,
}

#[pymethods]
impl PyRegressionFit {
    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind.label()
    }

    #[getter]
    fn variable_names(&self) -> Vec<String> {
        self.inner.variable_names()
    }

    #[getter]
    fn coefficients(&self) -> Vec<f64> {
        self.inner.coefficients.clone()
    }

    #[getter]
    fn std_errors(&self) -> Vec<f64> {
        self.inner.std_errors.clone()
    }

    #[getter]
    fn test_stats(&self) -> Vec<f64> {
        self.inner.test_stats.clone()
    }

    #[getter]
    fn p_values(&self) -> Vec<f64> {
        self.inner.p_values.clone()
    }

    #[getter]
    fn conf_intervals(&self) -> Vec<(f64, f64)> {
        self.inner.conf_intervals.clone()
    }

    #[getter]
    fn residuals(&self) -> Vec<f64> {
        self.inner.residuals.clone()
    }

    #[getter]
    fn fitted(&self) -> Vec<f64> {
        self.inner.fitted.clone()
    }

    #[getter]
    fn weights(&self) -> Option<Vec<f64>> {
        self.inner.weights.clone()
    }

    #[getter]
    fn scale(&self) -> f64 {
        self.inner.scale
    }

    #[getter]
    fn r_squared(&self) -> Option<f64> {
        self.inner.r_squared
    }

    #[getter]
    fn adj_r_squared(&self) -> Option<f64> {
        self.inner.adj_r_squared
    }

    #[getter]
    fn pseudo_r_squared(&self) -> Option<f64> {
        self.inner.pseudo_r_squared
    }

    #[getter]
    fn iterations(&self) -> Option<usize> {
        self.inner.iterations
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }

    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.inner.warnings.clone()
    }

    /// Predictions for score rows carrying the fitted components.
    fn predict(&self, scores: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let t = score_table(&scores, Some(self.inner.components.clone()), None)?;
        regression::predict(&self.inner, &t).or_raise()
    }

    /// Coefficient table as CSV text.
    fn summary(&self) -> PyResult<String> {
        summary_table(&self.inner).to_csv().or_raise()
    }

    fn __repr__(&self) -> String {
        format!("RegressionFit(kind={:?}, coefficients={:?})", self.inner.kind.label(), self.inner.coefficients)
    }
}

/// OLS of `y` on score columns plus an intercept.
#[pyfunction]
#[pyo3(signature = (scores, y, components=None, ids=None))]
fn fit_ols(
    scores: Vec<Vec<f64>>,
    y: Vec<f64>,
    components: Option<Vec<usize>>,
    ids: Option<Vec<String>>,
) -> PyResult<PyRegressionFit> {
    let t = score_table(&scores, components, ids)?;
    let y = NeighborhoodSeries::new(t.neighborhood_ids.clone(), y).or_raise()?;
    Ok(PyRegressionFit {
        inner: regression::fit_ols(&t, &y).or_raise()?,
    })
}

/// Huber M-estimation by IRLS.
#[pyfunction]
#[pyo3(signature = (scores, y, components=None, ids=None, tuning_constant=1.345, max_iterations=50, tolerance=1e-8))]
fn fit_huber(
    scores: Vec<Vec<f64>>,
    y: Vec<f64>,
    components: Option<Vec<usize>>,
    ids: Option<Vec<String>>,
    tuning_constant: f64,
    max_iterations: usize,
    tolerance: f64,
) -> PyResult<PyRegressionFit> {
    let t = score_table(&scores, components, ids)?;
    let y = NeighborhoodSeries::new(t.neighborhood_ids.clone(), y).or_raise()?;
    let config = HuberConfig {
        tuning_constant,
        max_iterations,
        tolerance,
    };
    Ok(PyRegressionFit {
        inner: regression::fit_huber(&t, &y, &config).or_raise()?,
    })
}

/// `(W, p)`.
#[pyfunction]
fn shapiro_wilk(sample: Vec<f64>) -> PyResult<(f64, f64)> {
    diagnostics::shapiro_wilk(&sample).or_raise()
}

/// `(LM, p)`; an intercept column is added to `regressors`.
#[pyfunction]
#[pyo3(signature = (residuals, regressors, studentized=true))]
fn breusch_pagan(residuals: Vec<f64>, regressors: Vec<Vec<f64>>, studentized: bool) -> PyResult<(f64, f64)> {
    let variant = if studentized {
        BreuschPaganVariant::Studentized
    } else {
        BreuschPaganVariant::Classic
    };
    diagnostics::breusch_pagan(&residuals, &matrix(&regressors)?.with_intercept(), variant).or_raise()
}

#[pyfunction]
fn durbin_watson(residuals: Vec<f64>) -> PyResult<f64> {
    diagnostics::durbin_watson(&residuals).or_raise()
}

#[pyfunction]
fn vif(regressors: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    diagnostics::vif(&matrix(&regressors)?).or_raise()
}

fn parse_max_features(v: &Bound<'_, PyAny>) -> PyResult<MaxFeatures> {
    if let Ok(k) = v.extract::<usize>() {
        return Ok(MaxFeatures::Count(k));
    }
    match v.extract::<String>()?.as_str() {
        "sqrt" => Ok(MaxFeatures::Sqrt),
        "all" => Ok(MaxFeatures::All),
        other => Err(ConfigError::new_err(format!("max_features must be \"sqrt\", \"all\" or an integer, got {other:?}"))),
    }
}

#[pyclass(name = "ForestConfig", module = "urbanrisk_py", frozen, from_py_object)]
#[derive(Clone)]
struct PyForestConfig {
    inner: ForestConfig,
}

#[pymethods]
impl PyForestConfig {
    #[new]
    #[pyo3(signature = (n_trees=100, max_depth=None, max_features=None, min_samples_leaf=1, min_samples_split=2, bootstrap=true, seed=0))]
    fn new(
        n_trees: usize,
        max_depth: Option<usize>,
        max_features: Option<&Bound<'_, PyAny>>,
        min_samples_leaf: usize,
        min_samples_split: usize,
        bootstrap: bool,
        seed: u64,
    ) -> PyResult<Self> {
        let inner = ForestConfig {
            n_trees,
            max_depth,
            max_features: max_features.map(parse_max_features).transpose()?.unwrap_or(MaxFeatures::Sqrt),
            min_samples_leaf,
            min_samples_split,
            bootstrap,
            seed,
        };
        inner.validate().or_raise()?;
        Ok(Self { inner })
    }

    /// 200 trees of depth 8, √p features, at least 5 rows per leaf and split.
    #[staticmethod]
    #[pyo3(signature = (seed=0))]
    fn tuned_reference(seed: u64) -> Self {
        Self {
            inner: ForestConfig::tuned_reference(seed),
        }
    }

    #[getter]
    fn n_trees(&self) -> usize {
        self.inner.n_trees
    }

    #[getter]
    fn max_depth(&self) -> Option<usize> {
        self.inner.max_depth
    }

    #[getter]
    fn max_features(&self) -> String {
        self.inner.max_features.label()
    }

    #[getter]
    fn min_samples_leaf(&self) -> usize {
        self.inner.min_samples_leaf
    }

    #[getter]
    fn min_samples_split(&self) -> usize {
        self.inner.min_samples_split
    }

    #[getter]
    fn bootstrap(&self) -> bool {
        self.inner.bootstrap
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

#[pyclass(name = "RandomForest", module = "urbanrisk_py", frozen)]
struct PyRandomForest {
    inner: ForestModel,
    config: ForestConfig,
}

#[pymethods]
impl PyRandomForest {
    fn predict(&self, py: Python<'_>, x: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let x = matrix(&x)?;
        py.detach(|| forest::predict_forest(&self.inner, &x)).or_raise()
    }

    #[getter]
    fn n_trees(&self) -> usize {
        self.inner.trees.len()
    }

    #[getter]
    fn config(&self) -> PyForestConfig {
        PyForestConfig { inner: self.config }
    }
}

#[pyfunction]
#[pyo3(signature = (x, y, config=None))]
fn fit_forest(py: Python<'_>, x: Vec<Vec<f64>>, y: Vec<f64>, config: Option<PyForestConfig>) -> PyResult<PyRandomForest> {
    let config = config.map(|c| c.inner).unwrap_or_default();
    let x = matrix(&x)?;
    let inner = py.detach(|| forest::fit_forest(&x, &y, &config)).or_raise()?;
    Ok(PyRandomForest { inner, config })
}

/// `(per-fold R², mean R², std R²)`; a fold without a defined R² reports `None`.
#[pyfunction]
#[pyo3(signature = (x, y, config=None, k=5, seed=0))]
fn cross_validate(
    py: Python<'_>,
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    config: Option<PyForestConfig>,
    k: usize,
    seed: u64,
) -> PyResult<(Vec<Option<f64>>, f64, f64)> {
    let config = config.map(|c| c.inner).unwrap_or_default();
    let x = matrix(&x)?;
    let cv = py.detach(|| forest::kfold_cv(&x, &y, &config, k, seed)).or_raise()?;
    Ok((cv.per_fold_r2, cv.mean_r2, cv.std_r2))
}

#[pyfunction]
fn r2_score(y_true: Vec<f64>, y_pred: Vec<f64>) -> PyResult<f64> {
    forest::r2_score(&y_true, &y_pred).or_raise()
}

/// `(neighborhood_id, raw_prediction, normalized_score, rank)` sorted by rank.
#[pyfunction]
fn rank(ids: Vec<String>, predictions: Vec<f64>) -> PyResult<Vec<(String, f64, f64, usize)>> {
    let s = NeighborhoodSeries::new(ids, predictions).or_raise()?;
    let r = ranking::build_ranking(&s).or_raise()?;
    Ok(r.entries
        .into_iter()
        .map(|e| (e.neighborhood_id, e.raw_prediction, e.normalized_score, e.rank))
        .collect())
}

#[pyclass(name = "Agreement", module = "urbanrisk_py", frozen, get_all)]
struct PyAgreement {
    n: usize,
    spearman_rho: f64,
    concordant_pairs: usize,
    discordant_pairs: usize,
    concordant_pair_pct: f64,
    top_k_overlap: Vec<(usize, f64)>,
}

impl From<AgreementReport> for PyAgreement {
    fn from(a: AgreementReport) -> Self {
        Self {
            n: a.n,
            spearman_rho: a.spearman_rho,
            concordant_pairs: a.concordant_pairs,
            discordant_pairs: a.discordant_pairs,
            concordant_pair_pct: a.concordant_pair_pct,
            top_k_overlap: a.top_k_overlap,
        }
    }
}

#[pymethods]
impl PyAgreement {
    fn __repr__(&self) -> String {
        format!(
            "Agreement(n={}, spearman_rho={:.4}, concordant_pair_pct={:.1})",
            self.n, self.spearman_rho, self.concordant_pair_pct
        )
    }
}

#[pyfunction]
fn rank_agreement(ids: Vec<String>, predicted: Vec<f64>, observed: Vec<f64>) -> PyResult<PyAgreement> {
    Ok(ranking::agreement_from_values(&ids, &predicted, &observed).or_raise()?.into())
}

/// Writes a synthetic city into `directory` and returns its run configuration path.
#[pyfunction]
#[pyo3(signature = (directory, n_neighborhoods=60, seed=2024))]
fn synth_city(directory: PathBuf, n_neighborhoods: usize, seed: u64) -> PyResult<PathBuf> {
    let config = SynthConfig {
        n_neighborhoods,
        seed,
        ..SynthConfig::default()
    };
    let city = synth::generate(&config).or_raise()?;
    synth::write_city(&city, &config, &directory).or_raise()
}

#[pyclass(name = "PipelineResult", module = "urbanrisk_py", frozen)]
struct PyPipelineResult {
    #[pyo3(get)]
    output_dir: PathBuf,
    #[pyo3(get)]
    artifacts: Vec<String>,
    #[pyo3(get)]
    ols: PyRegressionFit,
    #[pyo3(get)]
    rlm: PyRegressionFit,
    #[pyo3(get)]
    forest_test_r2: f64,
    rankings: Vec<(String, Vec<(String, f64, f64, usize)>)>,
    agreements: Vec<(String, f64, f64)>,
    #[pyo3(get)]
    report_markdown: String,
}

#[pymethods]
impl PyPipelineResult {
    /// Ranking entries for "ols", "rlm" or "forest".
    fn ranking(&self, model: &str) -> PyResult<Vec<(String, f64, f64, usize)>> {
        self.rankings
            .iter()
            .find(|(m, _)| m == model)
            .map(|(_, r)| r.clone())
            .ok_or_else(|| ConfigError::new_err(format!("no ranking for model {model:?}")))
    }

    /// `(model, spearman_rho, concordant_pair_pct)` against the validation year.
    #[getter]
    fn agreements(&self) -> Vec<(String, f64, f64)> {
        self.agreements.clone()
    }
}

/// Runs every stage for a TOML run configuration; `overrides` take `key=value` form.
#[pyfunction]
#[pyo3(signature = (config_path, overrides=None))]
fn run_pipeline(py: Python<'_>, config_path: PathBuf, overrides: Option<Vec<String>>) -> PyResult<PyPipelineResult> {
    let config = RunConfig::load(&config_path, &overrides.unwrap_or_default()).or_raise()?;
    let out = py.detach(|| urbanrisk::pipeline::run_pipeline(&config)).or_raise()?;
    Ok(PyPipelineResult {
        output_dir: out.output_dir,
        artifacts: out.artifacts,
        ols: PyRegressionFit { inner: out.ols },
        rlm: PyRegressionFit { inner: out.rlm },
        forest_test_r2: out.forest.test_r2,
        rankings: out
            .rankings
            .into_iter()
            .map(|(m, r)| {
                let entries = r
                    .entries
                    .into_iter()
                    .map(|e| (e.neighborhood_id, e.raw_prediction, e.normalized_score, e.rank))
                    .collect();
                (m, entries)
            })
            .collect(),
        agreements: out
            .agreements
            .into_iter()
            .map(|(m, a)| (m, a.spearman_rho, a.concordant_pair_pct))
            .collect(),
        report_markdown: out.report_markdown,
    })
}

#[pymodule]
fn urbanrisk_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("UrbanRiskError", py.get_type::<UrbanRiskError>())?;
    m.add("ConfigError", py.get_type::<ConfigError>())?;
    m.add("DataError", py.get_type::<DataError>())?;
    m.add("NumericalError", py.get_type::<NumericalError>())?;
    m.add("INDICATOR_NAMES", urbanrisk::ingest::INDICATOR_NAMES.to_vec())?;
    m.add_class::<PyPcaModel>()?;
    m.add_class::<PyRegressionFit>()?;
    m.add_class::<PyForestConfig>()?;
    m.add_class::<PyRandomForest>()?;
    m.add_class::<PyAgreement>()?;
    m.add_class::<PyPipelineResult>()?;
    m.add_function(wrap_pyfunction!(fit_pca, m)?)?;
    m.add_function(wrap_pyfunction!(fit_ols, m)?)?;
    m.add_function(wrap_pyfunction!(fit_huber, m)?)?;
    m.add_function(wrap_pyfunction!(shapiro_wilk, m)?)?;
    m.add_function(wrap_pyfunction!(breusch_pagan, m)?)?;
    m.add_function(wrap_pyfunction!(durbin_watson, m)?)?;
    m.add_function(wrap_pyfunction!(vif, m)?)?;
    m.add_function(wrap_pyfunction!(fit_forest, m)?)?;
    m.add_function(wrap_pyfunction!(cross_validate, m)?)?;
    m.add_function(wrap_pyfunction!(r2_score, m)?)?;
    m.add_function(wrap_pyfunction!(rank, m)?)?;
    m.add_function(wrap_pyfunction!(rank_agreement, m)?)?;
    m.add_function(wrap_pyfunction!(synth_city, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
