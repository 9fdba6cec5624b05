use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use urbanrisk::config::{parse_grid_toml, IngestConfig, RunConfig};
use urbanrisk::diagnostics::{diagnose, BreuschPaganVariant};
use urbanrisk::forest::{
    default_grid, ForestConfig, MaxFeatures,
};
use urbanrisk::geojson::{emit_choropleth, DEFAULT_ID_PROPERTY};
use urbanrisk::ingest::ZeroDenominatorPolicy;
use urbanrisk::pca::ComponentSelection;
use urbanrisk::pipeline::{
    forest_test_table, run_forest, run_ingest, run_pca, write_forest, write_ingest, write_pca,
    write_regression, ArtifactWriter,
};
use urbanrisk::ranking::{build_ranking, rank_agreement};
use urbanrisk::regression::{fit_huber, fit_ols, HuberConfig};
use urbanrisk::report::files;
use urbanrisk::series::NeighborhoodSeries;
use urbanrisk::synth::{generate, write_city, SynthConfig};
use urbanrisk::tables::{self, Table};
use urbanrisk::{Error, Result};

#[derive(Parser)]
#[command(name = "urbanrisk", version, about = "Neighborhood dengue-risk modeling from census and case data")]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse census and case files; write indicators, densities and rejects.
    Ingest(IngestArgs),
    /// Standardize indicators and fit the principal components.
    Pca(PcaArgs),
    /// Ordinary least squares on component scores, with diagnostics.
    FitOls(OlsArgs),
    /// Huber robust regression on component scores.
    FitRlm(RlmArgs),
    /// Random forest: k-fold CV, held-out test score, full-data predictions.
    FitRf(RfArgs),
    /// Cross-validated grid search over forest configurations.
    GridSearch(GridArgs),
    /// Turn per-neighborhood predictions into a normalized risk ranking.
    Rank(RankArgs),
    /// Ordinal agreement between a ranking and observed densities.
    Validate(ValidateArgs),
    /// Inject risk scores into a GeoJSON FeatureCollection.
    Choropleth(ChoroplethArgs),
    /// Run the whole pipeline from a configuration file.
    Run(RunArgs),
    /// Generate a synthetic city with a planted linear signal.
    Synth(SynthArgs),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    census: PathBuf,
    #[arg(long)]
    cases: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2015)]
    first_year: i32,
    #[arg(long, default_value_t = 2024)]
    last_year: i32,
    #[arg(long, default_value_t = 2024)]
    validation_year: i32,
    /// Accept DD/MM/YYYY dates.
    #[arg(long)]
    day_first: bool,
    /// Fail instead of dropping records with zero denominators.
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct PcaArgs {
    /// Unstandardized indicator table (indicators_raw.csv).
    #[arg(long)]
    indicators: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TargetArgs {
    /// Component score table (pca_scores.csv).
    #[arg(long)]
    scores: PathBuf,
    /// Table holding the response (target.csv).
    #[arg(long)]
    target: PathBuf,
    #[arg(long, default_value = "training_density")]
    column: String,
    /// Components to regress on.
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 4, 5, 6])]
    components: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OlsArgs {
    #[command(flatten)]
    data: TargetArgs,
    /// Use the original Breusch-Pagan statistic instead of Koenker's.
    #[arg(long)]
    classic_bp: bool,
}

#[derive(Args)]
struct RlmArgs {
    #[command(flatten)]
    data: TargetArgs,
    #[arg(long, default_value_t = 1.345)]
    tuning_constant: f64,
    #[arg(long, default_value_t = 50)]
    max_iterations: usize,
    #[arg(long, default_value_t = 1e-8)]
    tolerance: f64,
}

#[derive(Args)]
struct FeatureArgs {
    /// Feature table whose first column is neighborhood_id.
    #[arg(long)]
    features: PathBuf,
    /// Feature columns to use; all when omitted.
    #[arg(long, value_delimiter = ',')]
    columns: Vec<String>,
    #[arg(long)]
    target: PathBuf,
    #[arg(long, default_value = "training_density")]
    column: String,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RfArgs {
    #[command(flatten)]
    data: FeatureArgs,
    #[arg(long, default_value_t = 200)]
    n_trees: usize,
    /// Omit for unlimited depth.
    #[arg(long)]
    max_depth: Option<usize>,
    /// `sqrt`, `all`, or a count.
    #[arg(long, default_value = "sqrt")]
    max_features: String,
    #[arg(long, default_value_t = 5)]
    min_samples_leaf: usize,
    #[arg(long, default_value_t = 5)]
    min_samples_split: usize,
    #[arg(long, default_value_t = 0.25)]
    test_fraction: f64,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    data: FeatureArgs,
    /// TOML file with `[[grid]]` entries; the built-in grid when omitted.
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long, default_value_t = 0.25)]
    test_fraction: f64,
}

#[derive(Args)]
struct RankArgs {
    /// Table with neighborhood_id and a prediction column.
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long, default_value = "prediction")]
    column: String,
    /// Output ranking file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    ranking: PathBuf,
    #[arg(long)]
    observed: PathBuf,
    #[arg(long, default_value = "validation_density")]
    column: String,
    /// Write the agreement table here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ChoroplethArgs {
    #[arg(long)]
    ranking: PathBuf,
    #[arg(long)]
    geojson: PathBuf,
    #[arg(long, default_value = DEFAULT_ID_PROPERTY)]
    id_property: String,
    #[arg(long)]
    out: PathBuf,
    /// Where to list features without a ranking entry; next to the output
    /// by default.
    #[arg(long)]
    rejects: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Dotted overrides such as `--forest.cv_folds=5`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 60)]
    n: usize,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
}

fn read_target(path: &Path, column: &str) -> Result<NeighborhoodSeries> {
    tables::read_series(&Table::read(path)?, column)
}

fn cmd_ingest(a: IngestArgs) -> Result<()> {
    let config = IngestConfig {
        zero_denominator: if a.strict {
            ZeroDenominatorPolicy::Fail
        } else {
            ZeroDenominatorPolicy::Drop
        },
        day_first: a.day_first,
        first_year: a.first_year,
        last_year: a.last_year,
    };
    if a.first_year > a.last_year {
        return Err(Error::Config("--first-year is after --last-year".into()));
    }
    let out = run_ingest(&a.census, &a.cases, &config, a.validation_year)?;
    let mut w = ArtifactWriter::new(&a.out)?;
    write_ingest(&out, &mut w)?;
    w.manifest(None)?;
    println!(
        "{} neighborhoods, {} derivation rejects, {} case rejects",
        out.indicators.len(),
        out.derivation_rejects.len(),
        out.training.rejects.len()
    );
    Ok(())
}

fn cmd_pca(a: PcaArgs) -> Result<()> {
    let indicators = tables::read_indicator_table(&Table::read(&a.indicators)?)?;
    let all = ComponentSelection::Explicit((1..=indicators.indicator_names.len()).collect());
    let out = run_pca(&indicators, &all)?;
    let mut w = ArtifactWriter::new(&a.out)?;
    write_pca(&out, &mut w)?;
    w.manifest(None)?;
    for (k, (ev, r)) in out.model.eigenvalues.iter().zip(&out.model.explained_ratio).enumerate() {
        println!("PC{}: eigenvalue {ev:.4}, explained {:.2}%", k + 1, 100.0 * r);
    }
    Ok(())
}

fn load_scores(d: &TargetArgs) -> Result<(urbanrisk::pca::ScoreTable, NeighborhoodSeries)> {
    let scores = tables::read_scores_table(&Table::read(&d.scores)?)?;
    let max = scores.components.iter().copied().max().unwrap_or(0);
    ComponentSelection::Explicit(d.components.clone()).validate(max)?;
    let scores = scores.select(&d.components)?;
    Ok((scores, read_target(&d.target, &d.column)?))
}

fn print_summary(t: &Table) {
    println!("{}", t.headers.join("\t"));
    for r in &t.rows {
        println!("{}", r.join("\t"));
    }
}

fn cmd_fit_ols(a: OlsArgs) -> Result<()> {
    let (scores, y) = load_scores(&a.data)?;
    let fit = fit_ols(&scores, &y)?;
    let variant = if a.classic_bp {
        BreuschPaganVariant::Classic
    } else {
        BreuschPaganVariant::Studentized
    };
    let diag = diagnose(&fit, &scores.scores, variant)?;
    let mut w = ArtifactWriter::new(&a.data.out)?;
    write_regression(&fit, (files::OLS_SUMMARY, files::OLS_FIT, files::OLS_FITTED), &mut w)?;
    w.table(files::DIAGNOSTICS, &tables::diagnostics_table(&diag))?;
    w.table(
        "ols_predictions.csv",
        &tables::series_table(&NeighborhoodSeries::new(fit.neighborhood_ids.clone(), fit.fitted.clone())?, "prediction"),
    )?;
    w.manifest(None)?;
    print_summary(&tables::summary_table(&fit));
    print_summary(&tables::diagnostics_table(&diag));
    Ok(())
}

fn cmd_fit_rlm(a: RlmArgs) -> Result<()> {
    let (scores, y) = load_scores(&a.data)?;
    let config = HuberConfig {
        tuning_constant: a.tuning_constant,
        max_iterations: a.max_iterations,
        tolerance: a.tolerance,
    };
    let fit = fit_huber(&scores, &y, &config)?;
    let mut w = ArtifactWriter::new(&a.data.out)?;
    write_regression(&fit, (files::RLM_SUMMARY, files::RLM_FIT, files::RLM_FITTED), &mut w)?;
    w.table(
        "rlm_predictions.csv",
        &tables::series_table(&NeighborhoodSeries::new(fit.neighborhood_ids.clone(), fit.fitted.clone())?, "prediction"),
    )?;
    w.manifest(None)?;
    print_summary(&tables::summary_table(&fit));
    Ok(())
}

fn parse_max_features(s: &str) -> Result<MaxFeatures> {
    match s {
        "sqrt" => Ok(MaxFeatures::Sqrt),
        "all" => Ok(MaxFeatures::All),
        n => n
            .parse()
            .map(MaxFeatures::Count)
            .map_err(|_| Error::Config(format!("max features must be sqrt, all or a count, got {n:?}"))),
    }
}

struct FeatureData {
    ids: Vec<String>,
    names: Vec<String>,
    x: urbanrisk::numkernel::DenseMatrix,
    y: Vec<f64>,
}

fn load_features(d: &FeatureArgs) -> Result<FeatureData> {
    let (ids, names, x) = tables::read_matrix(&Table::read(&d.features)?)?;
    let (names, x) = if d.columns.is_empty() {
        (names, x)
    } else {
        let cols = d
            .columns
            .iter()
            .map(|c| names.iter().position(|n| n == c).ok_or_else(|| Error::Schema(c.clone())))
            .collect::<Result<Vec<_>>>()?;
        (d.columns.clone(), x.select_columns(&cols)?)
    };
    let y = read_target(&d.target, &d.column)?.aligned_to(&ids)?;
    Ok(FeatureData { ids, names, x, y })
}

fn cmd_fit_rf(a: RfArgs) -> Result<()> {
    let data = load_features(&a.data)?;
    let config = ForestConfig {
        n_trees: a.n_trees,
        max_depth: a.max_depth,
        max_features: parse_max_features(&a.max_features)?,
        min_samples_leaf: a.min_samples_leaf,
        min_samples_split: a.min_samples_split,
        bootstrap: true,
        seed: a.data.seed,
    };
    config.validate()?;
    let out = run_forest(
        &data.x,
        &data.y,
        data.names.clone(),
        &[config],
        a.data.folds,
        a.test_fraction,
        a.data.seed,
    )?;
    let mut w = ArtifactWriter::new(&a.data.out)?;
    write_forest(&out, &data.ids, &mut w)?;
    w.manifest(None)?;
    print_summary(&forest_test_table(&out));
    Ok(())
}

fn cmd_grid_search(a: GridArgs) -> Result<()> {
    let data = load_features(&a.data)?;
    let grid = match &a.grid {
        None => default_grid(a.data.seed),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read grid {}: {e}", p.display())))?;
            parse_grid_toml(&text, a.data.seed)?
        }
    };
    for c in &grid {
        c.validate()?;
    }
    let out = run_forest(
        &data.x,
        &data.y,
        data.names.clone(),
        &grid,
        a.data.folds,
        a.test_fraction,
        a.data.seed,
    )?;
    let mut w = ArtifactWriter::new(&a.data.out)?;
    write_forest(&out, &data.ids, &mut w)?;
    w.manifest(None)?;
    let b = out.best;
    println!(
        "best: {} trees, depth {}, features {}, leaf {}, split {}; mean CV R2 {:.4} (std {:.4})",
        b.n_trees,
        b.depth_label(),
        b.max_features.label(),
        b.min_samples_leaf,
        b.min_samples_split,
        out.best_cv().mean_r2,
        out.best_cv().std_r2
    );
    Ok(())
}

fn cmd_rank(a: RankArgs) -> Result<()> {
    let preds = read_target(&a.predictions, &a.column)?;
    let ranking = build_ranking(&preds)?;
    tables::ranking_table(&ranking).write(&a.out)?;
    for w in &ranking.warnings {
        eprintln!("warning: {w}");
    }
    println!("ranked {} neighborhoods into {}", ranking.len(), a.out.display());
    Ok(())
}

fn cmd_validate(a: ValidateArgs) -> Result<()> {
    let ranking = tables::read_ranking_table(&Table::read(&a.ranking)?)?;
    let observed = read_target(&a.observed, &a.column)?;
    let report = rank_agreement(&ranking, &observed)?;
    let t = tables::agreement_table(&[("ranking".to_string(), report)]);
    if let Some(out) = &a.out {
        t.write(out)?;
    }
    print_summary(&t);
    Ok(())
}

fn cmd_choropleth(a: ChoroplethArgs) -> Result<()> {
    let ranking = tables::read_ranking_table(&Table::read(&a.ranking)?)?;
    let text = std::fs::read_to_string(&a.geojson).map_err(|e| Error::io(&a.geojson, e))?;
    let c = emit_choropleth(&ranking, &text, &a.id_property)?;
    std::fs::write(&a.out, serde_json::to_string(&c.collection)?).map_err(|e| Error::io(&a.out, e))?;
    let rejects_path = a
        .rejects
        .unwrap_or_else(|| a.out.with_extension("rejects.csv"));
    let mut t = Table::new(&["feature_index", "neighborhood_id", "reason"]);
    for u in &c.unmatched {
        t.push(vec![
            u.index.to_string(),
            u.neighborhood_id.clone().unwrap_or_default(),
            u.reason.clone(),
        ]);
    }
    t.write(&rejects_path)?;
    println!("{} features matched, {} unmatched", c.matched, c.unmatched.len());
    Ok(())
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let config = RunConfig::load(&a.config, &a.overrides)?;
    let out = urbanrisk::pipeline::run_pipeline(&config)?;
    for (model, ag) in &out.agreements {
        println!(
            "{model}: spearman {:.4}, concordant pairs {:.2}%",
            ag.spearman_rho, ag.concordant_pair_pct
        );
    }
    println!("{} artifacts in {}", out.artifacts.len(), out.output_dir.display());
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let config = SynthConfig {
        n_neighborhoods: a.n,
        seed: a.seed,
        ..Default::default()
    };
    let city = generate(&config)?;
    let run = write_city(&city, &config, &a.out)?;
    println!("synthetic city of {} neighborhoods; run with --config {}", a.n, run.display());
    Ok(())
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Pca(a) => cmd_pca(a),
        Command::FitOls(a) => cmd_fit_ols(a),
        Command::FitRlm(a) => cmd_fit_rlm(a),
        Command::FitRf(a) => cmd_fit_rf(a),
        Command::GridSearch(a) => cmd_grid_search(a),
        Command::Rank(a) => cmd_rank(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Choropleth(a) => cmd_choropleth(a),
        Command::Run(a) => cmd_run(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli.command) {
        Ok(()) => {
            info!("done");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.class().exit_code() as u8)
        }
    }
}
