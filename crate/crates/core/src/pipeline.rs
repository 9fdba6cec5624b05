//! End-to-end run: ingest, PCA, OLS with diagnostics, Huber, random forest,
//! rankings, agreement and choropleths. Every intermediate table is written
//! to the output directory and listed with its SHA-256 in a MANIFEST.

use std::path::{Path, PathBuf};

use log::info;
use sha2::{Digest, Sha256};

use crate::config::{ForestFeatures, IngestConfig, RunConfig, FOREST_INDICATORS};
use crate::diagnostics::{diagnose, DiagnosticsReport};
use crate::error::{Error, Result};
use crate::forest::{
    fit_forest, grid_search, predict_forest, r2_score, rmse, train_test_split, CvResult,
    ForestConfig, GridSearchResult,
};
use crate::geojson::emit_choropleth;
use crate::ingest::{
    aggregate_cases, area_map, derive_indicators, parse_cases, parse_census, total_density,
    CaseAggregation, CensusTractRaw, DerivationReject, IndicatorTable, YearRange,
};
use crate::numkernel::DenseMatrix;
use crate::pca::{fit_pca, select_components, transform, ComponentSelection, PcaModel, ScoreTable};
use crate::ranking::{build_ranking, rank_agreement, AgreementReport, RiskRanking};
use crate::regression::{fit_huber, fit_ols, RegressionFit};
use crate::report::{files, PipelineReport};
use crate::series::NeighborhoodSeries;
use crate::tables::{self, num, Table};

/// Writes files into the output directory and remembers their names.
#[derive(Debug)]
pub struct ArtifactWriter {
    pub dir: PathBuf,
    pub written: Vec<String>,
}

impl ArtifactWriter {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self {
            dir,
            written: Vec::new(),
        })
    }

    pub fn text(&mut self, name: &str, text: &str) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        if !self.written.iter().any(|w| w == name) {
            self.written.push(name.to_string());
        }
        Ok(())
    }

    pub fn table(&mut self, name: &str, table: &Table) -> Result<()> {
        self.text(name, &table.to_csv()?)
    }

    /// Writes the MANIFEST: a status line, then `sha256  name` per artifact
    /// in name order.
    pub fn manifest(&self, failure: Option<&Error>) -> Result<()> {
        let mut names = self.written.clone();
        names.sort();
        let mut out = match failure {
            None => "# status: complete\n".to_string(),
            Some(e) => format!("# status: incomplete; {e}\n"),
        };
        for name in names {
            let path = self.dir.join(&name);
            let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let digest = Sha256::digest(&bytes);
            let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
            out.push_str(&format!("{hex}  {name}\n"));
        }
        let path = self.dir.join(files::MANIFEST);
        std::fs::write(&path, out).map_err(|e| Error::io(&path, e))
    }
}

fn stage<T>(name: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    info!("stage {name}");
    f().map_err(|e| match e {
        Error::Stage { .. } => e,
        other => Error::Stage {
            stage: name,
            source: Box::new(other),
        },
    })
}

#[derive(Debug, Clone)]
pub struct IngestOutput {
    pub census: Vec<CensusTractRaw>,
    pub indicators: IndicatorTable,
    pub derivation_rejects: Vec<DerivationReject>,
    pub training: CaseAggregation,
    pub validation: CaseAggregation,
    /// Total density over the training years, per indicator-table row.
    pub target: NeighborhoodSeries,
    /// Density in the validation year, per indicator-table row.
    pub observed: NeighborhoodSeries,
}

pub fn run_ingest(
    census_path: &Path,
    cases_path: &Path,
    config: &IngestConfig,
    validation_year: i32,
) -> Result<IngestOutput> {
    let census = parse_census(census_path)?;
    let (indicators, derivation_rejects) = derive_indicators(&census, config.zero_denominator)?;
    let areas = area_map(&census);
    let records = parse_cases(cases_path, config.day_first)?;
    let training = aggregate_cases(&records, &areas, Some(config.years()))?;
    let validation = aggregate_cases(&records, &areas, Some(YearRange::single(validation_year)))?;
    let ids = indicators.neighborhood_ids.clone();
    let target = NeighborhoodSeries::new(
        ids.clone(),
        total_density(&training.densities, &areas, &ids)?,
    )?;
    let observed = NeighborhoodSeries::new(
        ids.clone(),
        total_density(&validation.densities, &areas, &ids)?,
    )?;
    Ok(IngestOutput {
        census,
        indicators,
        derivation_rejects,
        training,
        validation,
        target,
        observed,
    })
}

pub fn target_table(target: &NeighborhoodSeries, observed: &NeighborhoodSeries) -> Table {
    let mut t = Table::new(&["neighborhood_id", "training_density", "validation_density"]);
    for (i, id) in target.ids.iter().enumerate() {
        t.push(vec![
            id.clone(),
            num(target.values[i]),
            observed.get(id).map(num).unwrap_or_default(),
        ]);
    }
    t
}

pub fn write_ingest(out: &IngestOutput, w: &mut ArtifactWriter) -> Result<()> {
    w.table(files::INDICATORS_RAW, &tables::indicator_table(&out.indicators))?;
    w.table(
        files::DERIVATION_REJECTS,
        &tables::derivation_rejects_table(&out.derivation_rejects),
    )?;
    w.table(files::CASE_DENSITY, &tables::density_table(&out.training.densities))?;
    w.table(files::CASE_REJECTS, &tables::row_rejects_table(&out.training.rejects))?;
    w.table(files::TARGET, &target_table(&out.target, &out.observed))
}

#[derive(Debug, Clone)]
pub struct PcaOutput {
    pub standardized: IndicatorTable,
    pub model: PcaModel,
    pub scores: ScoreTable,
    pub selected: Vec<usize>,
}

pub fn run_pca(indicators: &IndicatorTable, selection: &ComponentSelection) -> Result<PcaOutput> {
    let standardized = indicators.standardize()?;
    let model = fit_pca(&standardized)?;
    let scores = transform(&model, &standardized)?;
    let selected = select_components(&model, selection)?;
    Ok(PcaOutput {
        standardized,
        model,
        scores,
        selected,
    })
}

pub fn write_pca(out: &PcaOutput, w: &mut ArtifactWriter) -> Result<()> {
    w.table(files::INDICATORS_STANDARDIZED, &tables::indicator_table(&out.standardized))?;
    w.table(files::LOADINGS, &tables::loadings_table(&out.model))?;
    w.table(files::EXPLAINED_VARIANCE, &tables::explained_variance_table(&out.model))?;
    w.table(files::SCORES, &tables::scores_table(&out.scores))
}

#[derive(Debug, Clone)]
pub struct ForestOutput {
    pub feature_names: Vec<String>,
    pub grid: GridSearchResult,
    pub best: ForestConfig,
    pub n_train: usize,
    pub n_test: usize,
    pub test_r2: f64,
    pub test_rmse: f64,
    /// Predictions of the best configuration refit on all rows.
    pub predictions: Vec<f64>,
}

impl ForestOutput {
    pub fn best_cv(&self) -> &CvResult {
        &self.grid.per_config_cv[self.grid.best_index]
    }
}

/// Forest design matrix: selected component scores, or the four raw
/// census indicators.
pub fn forest_features(
    kind: ForestFeatures,
    selected_scores: &ScoreTable,
    indicators: &IndicatorTable,
) -> Result<(DenseMatrix, Vec<String>)> {
    match kind {
        ForestFeatures::Components => Ok((
            selected_scores.scores.clone(),
            selected_scores.components.iter().map(|k| format!("PC{k}")).collect(),
        )),
        ForestFeatures::Indicators => {
            let cols = FOREST_INDICATORS
                .iter()
                .map(|name| {
                    indicators
                        .indicator_names
                        .iter()
                        .position(|n| n == name)
                        .ok_or_else(|| Error::Schema((*name).to_string()))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((
                indicators.values.select_columns(&cols)?,
                FOREST_INDICATORS.iter().map(|s| s.to_string()).collect(),
            ))
        }
    }
}

pub fn run_forest(
    x: &DenseMatrix,
    y: &[f64],
    feature_names: Vec<String>,
    grid: &[ForestConfig],
    folds: usize,
    test_fraction: f64,
    seed: u64,
) -> Result<ForestOutput> {
    let search = grid_search(x, y, grid, folds, seed)?;
    let best = *search.best();
    let (train, test) = train_test_split(x.rows(), test_fraction, seed)?;
    let train_y: Vec<f64> = train.iter().map(|&i| y[i]).collect();
    let test_y: Vec<f64> = test.iter().map(|&i| y[i]).collect();
    let model = fit_forest(&x.select_rows(&train), &train_y, &best)?;
    let test_pred = predict_forest(&model, &x.select_rows(&test))?;
    let test_r2 = r2_score(&test_y, &test_pred)?;
    let test_rmse = rmse(&test_y, &test_pred)?;
    let full = fit_forest(x, y, &best)?;
    let predictions = predict_forest(&full, x)?;
    Ok(ForestOutput {
        feature_names,
        grid: search,
        best,
        n_train: train.len(),
        n_test: test.len(),
        test_r2,
        test_rmse,
        predictions,
    })
}

pub fn forest_test_table(f: &ForestOutput) -> Table {
    let mut t = Table::new(&["statistic", "value"]);
    let mut add = |k: &str, v: String| t.push(vec![k.to_string(), v]);
    add("features", f.feature_names.join(" "));
    add("n_train", f.n_train.to_string());
    add("n_test", f.n_test.to_string());
    add("test_r2", num(f.test_r2));
    add("test_rmse", num(f.test_rmse));
    add("cv_mean_r2", num(f.best_cv().mean_r2));
    add("cv_std_r2", num(f.best_cv().std_r2));
    t
}

pub fn write_forest(f: &ForestOutput, ids: &[String], w: &mut ArtifactWriter) -> Result<()> {
    w.table(files::GRID, &tables::grid_table(&f.grid))?;
    w.table(files::FOREST_CV, &tables::cv_table(f.best_cv()))?;
    w.table(files::FOREST_TEST, &forest_test_table(f))?;
    let preds = NeighborhoodSeries::new(ids.to_vec(), f.predictions.clone())?;
    w.table(files::FOREST_PREDICTIONS, &tables::series_table(&preds, "prediction"))
}

pub fn write_regression(
    fit: &RegressionFit,
    names: (&str, &str, &str),
    w: &mut ArtifactWriter,
) -> Result<()> {
    w.table(names.0, &tables::summary_table(fit))?;
    w.table(names.1, &tables::fit_stats_table(fit))?;
    w.table(names.2, &tables::fit_rows_table(fit))
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub output_dir: PathBuf,
    pub artifacts: Vec<String>,
    pub ingest: IngestOutput,
    pub pca: PcaOutput,
    pub ols: RegressionFit,
    pub diagnostics: DiagnosticsReport,
    pub rlm: RegressionFit,
    pub forest: ForestOutput,
    pub rankings: Vec<(String, RiskRanking)>,
    pub agreements: Vec<(String, AgreementReport)>,
    pub report: PipelineReport,
    pub report_markdown: String,
}

/// Runs every stage. On failure the artifacts written so far are kept and
/// the MANIFEST is marked incomplete.
pub fn run_pipeline(config: &RunConfig) -> Result<PipelineOutcome> {
    config.validate()?;
    let mut w = ArtifactWriter::new(&config.paths.output_dir)?;
    match run_stages(config, &mut w) {
        Ok(mut outcome) => {
            w.manifest(None)?;
            let mut names = w.written.clone();
            names.push(files::MANIFEST.to_string());
            names.sort();
            outcome.artifacts = names;
            Ok(outcome)
        }
        Err(e) => {
            w.manifest(Some(&e))?;
            Err(e)
        }
    }
}

fn run_stages(config: &RunConfig, w: &mut ArtifactWriter) -> Result<PipelineOutcome> {
    w.text(files::CONFIG, &config.to_toml()?)?;

    let ingest = stage("ingest", || {
        let out = run_ingest(
            &config.paths.census,
            &config.paths.cases,
            &config.ingest,
            config.validation.year,
        )?;
        write_ingest(&out, w)?;
        Ok(out)
    })?;

    let pca = stage("pca", || {
        let out = run_pca(&ingest.indicators, &config.pca.selection)?;
        write_pca(&out, w)?;
        Ok(out)
    })?;
    let selected_scores = pca.scores.select(&pca.selected)?;

    let (ols, diagnostics) = stage("ols", || {
        let fit = fit_ols(&selected_scores, &ingest.target)?;
        let diag = diagnose(&fit, &selected_scores.scores, config.diagnostics.breusch_pagan)?;
        write_regression(&fit, (files::OLS_SUMMARY, files::OLS_FIT, files::OLS_FITTED), w)?;
        w.table(files::DIAGNOSTICS, &tables::diagnostics_table(&diag))?;
        Ok((fit, diag))
    })?;

    let rlm = stage("rlm", || {
        let fit = fit_huber(&selected_scores, &ingest.target, &config.huber)?;
        write_regression(&fit, (files::RLM_SUMMARY, files::RLM_FIT, files::RLM_FITTED), w)?;
        Ok(fit)
    })?;

    let forest = stage("forest", || {
        let (x, names) = forest_features(config.forest.features, &selected_scores, &ingest.indicators)?;
        let y = ingest.target.aligned_to(&selected_scores.neighborhood_ids)?;
        let out = run_forest(
            &x,
            &y,
            names,
            &config.forest_grid(),
            config.forest.cv_folds,
            config.forest.test_fraction,
            config.seed,
        )?;
        write_forest(&out, &selected_scores.neighborhood_ids, w)?;
        Ok(out)
    })?;

    let (rankings, agreements) = stage("ranking", || {
        let ids = &selected_scores.neighborhood_ids;
        let predictions = [
            ("ols", ols.fitted.clone()),
            ("rlm", rlm.fitted.clone()),
            ("forest", forest.predictions.clone()),
        ];
        let mut rankings = Vec::new();
        let mut agreements = Vec::new();
        for (model, values) in predictions {
            let ranking = build_ranking(&NeighborhoodSeries::new(ids.clone(), values)?)?;
            w.table(&files::ranking(model), &tables::ranking_table(&ranking))?;
            agreements.push((model.to_string(), rank_agreement(&ranking, &ingest.observed)?));
            rankings.push((model.to_string(), ranking));
        }
        w.table(files::AGREEMENT, &tables::agreement_table(&agreements))?;
        Ok((rankings, agreements))
    })?;

    if let Some(geo_path) = &config.paths.geojson {
        stage("choropleth", || {
            let text = std::fs::read_to_string(geo_path).map_err(|e| Error::io(geo_path, e))?;
            let mut rejects = Table::new(&["model", "feature_index", "neighborhood_id", "reason"]);
            for (model, ranking) in &rankings {
                let c = emit_choropleth(ranking, &text, &config.paths.geojson_id_property)?;
                w.text(&files::choropleth(model), &serde_json::to_string(&c.collection)?)?;
                for u in c.unmatched {
                    rejects.push(vec![
                        model.clone(),
                        u.index.to_string(),
                        u.neighborhood_id.unwrap_or_default(),
                        u.reason,
                    ]);
                }
            }
            w.table(files::CHOROPLETH_REJECTS, &rejects)
        })?;
    }

    let (report, report_markdown) = stage("report", || {
        let report = PipelineReport::load(&w.dir)?;
        let md = report.to_markdown()?;
        w.text(files::REPORT, &md)?;
        Ok((report, md))
    })?;

    Ok(PipelineOutcome {
        output_dir: w.dir.clone(),
        artifacts: Vec::new(),
        ingest,
        pca,
        ols,
        diagnostics,
        rlm,
        forest,
        rankings,
        agreements,
        report,
        report_markdown,
    })
}
