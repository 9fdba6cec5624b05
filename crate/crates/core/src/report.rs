//! Human-readable run report, rebuilt entirely from the persisted tables in
//! an output directory.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;
use crate::numkernel::{mean, sample_variance};
use crate::tables::{parse_ci, Table};

pub mod files {
    pub const INDICATORS_RAW: &str = "indicators_raw.csv";
    pub const INDICATORS_STANDARDIZED: &str = "indicators_standardized.csv";
    pub const DERIVATION_REJECTS: &str = "derivation_rejects.csv";
    pub const CASE_DENSITY: &str = "case_density.csv";
    pub const CASE_REJECTS: &str = "case_rejects.csv";
    pub const TARGET: &str = "target.csv";
    pub const LOADINGS: &str = "pca_loadings.csv";
    pub const EXPLAINED_VARIANCE: &str = "pca_explained_variance.csv";
    pub const SCORES: &str = "pca_scores.csv";
    pub const OLS_SUMMARY: &str = "ols_summary.csv";
    pub const OLS_FIT: &str = "ols_fit.csv";
    pub const OLS_FITTED: &str = "ols_fitted.csv";
    pub const DIAGNOSTICS: &str = "ols_diagnostics.csv";
    pub const RLM_SUMMARY: &str = "rlm_summary.csv";
    pub const RLM_FIT: &str = "rlm_fit.csv";
    pub const RLM_FITTED: &str = "rlm_fitted.csv";
    pub const GRID: &str = "forest_grid_search.csv";
    pub const FOREST_CV: &str = "forest_cv.csv";
    pub const FOREST_TEST: &str = "forest_test.csv";
    pub const FOREST_PREDICTIONS: &str = "forest_predictions.csv";
    pub const AGREEMENT: &str = "agreement.csv";
    pub const CHOROPLETH_REJECTS: &str = "choropleth_rejects.csv";
    pub const REPORT: &str = "report.md";
    pub const MANIFEST: &str = "MANIFEST";
    pub const CONFIG: &str = "config.toml";

    pub const MODELS: [&str; 3] = ["ols", "rlm", "forest"];

    pub fn ranking(model: &str) -> String {
        format!("ranking_{model}.csv")
    }

    pub fn choropleth(model: &str) -> String {
        format!("choropleth_{model}.geojson")
    }
}

/// Every table the report draws on, as read from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineReport {
    pub indicators: Table,
    pub explained_variance: Table,
    pub loadings: Table,
    pub ols_summary: Table,
    pub ols_fit: Table,
    pub diagnostics: Table,
    pub rlm_summary: Table,
    pub rlm_fit: Table,
    pub grid: Table,
    pub forest_cv: Table,
    pub forest_test: Table,
    pub rankings: Vec<(String, Table)>,
    pub agreement: Table,
}

fn fmt(cell: &str) -> String {
    if !cell.contains(['.', 'e', 'E']) {
        return cell.to_string();
    }
    match cell.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => format!("{v:.4}"),
        Ok(v) => format!("{v}"),
        Err(_) => cell.to_string(),
    }
}

fn fmt_p(cell: &str) -> String {
    match cell.trim().parse::<f64>() {
        Ok(p) if p < 0.001 => "<0.001".into(),
        _ => fmt(cell),
    }
}

fn md_table(out: &mut String, headers: &[String], rows: &[Vec<String>]) {
    let _ = writeln!(out, "| {} |", headers.join(" | "));
    let _ = writeln!(out, "|{}", " --- |".repeat(headers.len()));
    for r in rows {
        let _ = writeln!(out, "| {} |", r.join(" | "));
    }
    out.push('\n');
}

fn lookup<'a>(t: &'a Table, key: &str) -> &'a str {
    t.row_by_key(key).and_then(|r| r.get(1)).map_or("", String::as_str)
}

impl PipelineReport {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let read = |name: &str| Table::read(dir.join(name));
        let rankings = files::MODELS
            .iter()
            .map(|m| Ok((m.to_string(), read(&files::ranking(m))?)))
            .collect::<Result<_>>()?;
        Ok(Self {
            indicators: read(files::INDICATORS_RAW)?,
            explained_variance: read(files::EXPLAINED_VARIANCE)?,
            loadings: read(files::LOADINGS)?,
            ols_summary: read(files::OLS_SUMMARY)?,
            ols_fit: read(files::OLS_FIT)?,
            diagnostics: read(files::DIAGNOSTICS)?,
            rlm_summary: read(files::RLM_SUMMARY)?,
            rlm_fit: read(files::RLM_FIT)?,
            grid: read(files::GRID)?,
            forest_cv: read(files::FOREST_CV)?,
            forest_test: read(files::FOREST_TEST)?,
            rankings,
            agreement: read(files::AGREEMENT)?,
        })
    }

    fn indicator_section(&self, out: &mut String) -> Result<()> {
        let headers: Vec<String> = ["Indicator", "Mean", "Std. Dev.", "Min", "Max"]
            .map(String::from)
            .to_vec();
        let mut rows = Vec::new();
        for name in &self.indicators.headers[1..] {
            let v = self.indicators.numeric_column(name)?;
            let min = v.iter().copied().fold(f64::INFINITY, f64::min);
            let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sd = if v.len() > 1 { sample_variance(&v).sqrt() } else { f64::NAN };
            rows.push(vec![
                name.clone(),
                format!("{:.4}", mean(&v)),
                format!("{sd:.4}"),
                format!("{min:.4}"),
                format!("{max:.4}"),
            ]);
        }
        let _ = writeln!(out, "## Indicators\n\n{} neighborhoods.\n", self.indicators.rows.len());
        md_table(out, &headers, &rows);
        Ok(())
    }

    fn numeric_table(out: &mut String, t: &Table) {
        let rows: Vec<Vec<String>> = t
            .rows
            .iter()
            .map(|r| r.iter().map(|c| fmt(c)).collect())
            .collect();
        md_table(out, &t.headers, &rows);
    }

    fn summary(out: &mut String, t: &Table) {
        let rows: Vec<Vec<String>> = t
            .rows
            .iter()
            .map(|r| {
                let ci = parse_ci(&r[5])
                    .map_or_else(|| r[5].clone(), |(lo, hi)| format!("[{lo:.2} ; {hi:.2}]"));
                vec![r[0].clone(), fmt(&r[1]), fmt(&r[2]), fmt(&r[3]), fmt_p(&r[4]), ci]
            })
            .collect();
        md_table(out, &t.headers, &rows);
    }

    fn comparison(&self, out: &mut String) {
        let headers = vec!["Variable".to_string(), "OLS".into(), "RLM".into()];
        let rows: Vec<Vec<String>> = self
            .ols_summary
            .rows
            .iter()
            .map(|r| {
                let rlm = self.rlm_summary.row_by_key(&r[0]).map_or("", |x| x[1].as_str());
                vec![r[0].clone(), fmt(&r[1]), fmt(rlm)]
            })
            .collect();
        md_table(out, &headers, &rows);
    }

    pub fn to_markdown(&self) -> Result<String> {
        let mut out = String::from("# Neighborhood risk modeling report\n\n");
        self.indicator_section(&mut out)?;

        out.push_str("## Principal components\n\n### Explained variance\n\n");
        Self::numeric_table(&mut out, &self.explained_variance);
        out.push_str("### Loadings\n\n");
        Self::numeric_table(&mut out, &self.loadings);

        let _ = writeln!(
            &mut out,
            "## OLS regression\n\nR² = {}, adjusted R² = {}, n = {}.\n",
            fmt(lookup(&self.ols_fit, "r_squared")),
            fmt(lookup(&self.ols_fit, "adj_r_squared")),
            lookup(&self.ols_fit, "n"),
        );
        Self::summary(&mut out, &self.ols_summary);

        out.push_str("### Diagnostic tests\n\n");
        let rows: Vec<Vec<String>> = self
            .diagnostics
            .rows
            .iter()
            .map(|r| vec![r[0].clone(), r[3].clone(), r[4].clone()])
            .collect();
        md_table(
            &mut out,
            &["Test", "Result", "Interpretation"].map(String::from),
            &rows,
        );

        let _ = writeln!(
            &mut out,
            "## Robust regression (Huber)\n\npseudo-R² = {}, iterations = {}, converged = {}.\n",
            fmt(lookup(&self.rlm_fit, "pseudo_r_squared")),
            lookup(&self.rlm_fit, "iterations"),
            lookup(&self.rlm_fit, "converged"),
        );
        Self::summary(&mut out, &self.rlm_summary);
        out.push_str("### OLS and RLM coefficients\n\n");
        self.comparison(&mut out);

        out.push_str("## Random forest\n\n");
        let best = self
            .grid
            .rows
            .iter()
            .find(|r| r.last().map(String::as_str) == Some("true"));
        if let Some(b) = best {
            let _ = writeln!(
                &mut out,
                "Best of {} configurations: {} trees, max depth {}, max features {}, min samples leaf {}, min samples split {}; mean CV R² = {} (std {}).\n",
                self.grid.rows.len(),
                b[1], b[2], b[3], b[4], b[5],
                fmt(&b[6]),
                fmt(&b[7]),
            );
        }
        let _ = writeln!(
            &mut out,
            "Held-out test set: R² = {}, RMSE = {}.\n",
            fmt(lookup(&self.forest_test, "test_r2")),
            fmt(lookup(&self.forest_test, "test_rmse")),
        );
        out.push_str("### Cross-validation folds (best configuration)\n\n");
        Self::numeric_table(&mut out, &self.forest_cv);

        out.push_str("## Risk rankings\n\n");
        for (model, t) in &self.rankings {
            let _ = writeln!(&mut out, "### {} (top 10)\n", model.to_uppercase());
            let rows: Vec<Vec<String>> = t
                .rows
                .iter()
                .take(10)
                .map(|r| r.iter().map(|c| fmt(c)).collect())
                .collect();
            md_table(&mut out, &t.headers, &rows);
        }
        out.push_str("## Agreement with observed validation-year densities\n\n");
        Self::numeric_table(&mut out, &self.agreement);
        Ok(out)
    }
}

/// Loads the tables in `dir` and renders the report.
pub fn render_report(dir: impl AsRef<Path>) -> Result<String> {
    PipelineReport::load(dir)?.to_markdown()
}
