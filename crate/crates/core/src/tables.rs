//! Delimited-text tables for every persisted intermediate, and readers for
//! the ones later stages consume.
//!
//! Numbers are written with Rust's shortest round-trip formatting so that
//! parsing a table back yields the exact values that were computed.

use std::path::Path;

use crate::diagnostics::DiagnosticsReport;
use crate::error::{Error, Result};
use crate::forest::{CvResult, GridSearchResult};
use crate::ingest::{CaseDensity, DerivationReject, IndicatorTable, RejectedRow};
use crate::numkernel::DenseMatrix;
use crate::pca::{PcaModel, ScoreTable};
use crate::ranking::{AgreementReport, RankingEntry, RiskRanking};
use crate::regression::RegressionFit;
use crate::series::NeighborhoodSeries;

pub const DIAGNOSTIC_TESTS: [&str; 4] = [
    "Shapiro-Wilk (Normality)",
    "Breusch-Pagan (Homoscedasticity)",
    "Durbin-Watson (Autocorrelation)",
    "Variance Inflation Factor (VIF)",
];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub fn num(v: f64) -> String {
    format!("{v}")
}

fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

impl Table {
    pub fn new<S: ToString>(headers: &[S]) -> Self {
        Self {
            headers: headers.iter().map(ToString::to_string).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        w.write_record(&self.headers)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::io("<memory>", e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let headers = r.headers()?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self { headers, rows })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(name.to_string()))
    }

    pub fn column(&self, name: &str) -> Result<Vec<&str>> {
        let j = self.column_index(name)?;
        Ok(self.rows.iter().map(|r| r[j].as_str()).collect())
    }

    /// Parses a numeric column; row numbers in errors count the header as 1.
    pub fn numeric_column(&self, name: &str) -> Result<Vec<f64>> {
        self.column(name)?
            .iter()
            .enumerate()
            .map(|(i, s)| parse_num(s, i + 2, name))
            .collect()
    }

    /// Finds the row whose first cell equals `key`.
    pub fn row_by_key(&self, key: &str) -> Option<&[String]> {
        self.rows
            .iter()
            .find(|r| r.first().map(String::as_str) == Some(key))
            .map(Vec::as_slice)
    }
}

fn parse_num(s: &str, row: usize, column: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| Error::Parse {
        row,
        message: format!("column {column}: {s:?} is not a number"),
    })
}

fn matrix_table(first: &str, ids: &[String], names: &[String], m: &DenseMatrix) -> Table {
    let mut headers = vec![first.to_string()];
    headers.extend(names.iter().cloned());
    let mut t = Table::new(&headers);
    for (i, id) in ids.iter().enumerate() {
        let mut row = vec![id.clone()];
        row.extend(m.row(i).iter().map(|v| num(*v)));
        t.push(row);
    }
    t
}

/// `(ids, column names, matrix)` from a table whose first column is the key.
pub fn read_matrix(t: &Table) -> Result<(Vec<String>, Vec<String>, DenseMatrix)> {
    if t.headers.len() < 2 {
        return Err(Error::Schema("expected an id column and at least one value column".into()));
    }
    let ids = t.rows.iter().map(|r| r[0].clone()).collect();
    let names = t.headers[1..].to_vec();
    let mut data = Vec::with_capacity(t.rows.len() * names.len());
    for (i, r) in t.rows.iter().enumerate() {
        for (j, cell) in r[1..].iter().enumerate() {
            data.push(parse_num(cell, i + 2, &names[j])?);
        }
    }
    let m = DenseMatrix::from_row_major(t.rows.len(), names.len(), data)?;
    Ok((ids, names, m))
}

pub fn indicator_table(table: &IndicatorTable) -> Table {
    matrix_table(
        "neighborhood_id",
        &table.neighborhood_ids,
        &table.indicator_names,
        &table.values,
    )
}

/// Reads an unstandardized indicator table.
pub fn read_indicator_table(t: &Table) -> Result<IndicatorTable> {
    let (ids, names, m) = read_matrix(t)?;
    IndicatorTable::with_names(ids, names, m)
}

/// One row per indicator, one column per component.
pub fn loadings_table(model: &PcaModel) -> Table {
    let comps: Vec<String> = (1..=model.n_components()).map(|k| format!("PC{k}")).collect();
    let mut headers = vec!["Indicator".to_string()];
    headers.extend(comps);
    let mut t = Table::new(&headers);
    for (i, name) in model.indicator_names.iter().enumerate() {
        let mut row = vec![name.clone()];
        row.extend(model.loadings.row(i).iter().map(|v| num(*v)));
        t.push(row);
    }
    t
}

pub fn explained_variance_table(model: &PcaModel) -> Table {
    let mut t = Table::new(&["component", "eigenvalue", "explained_ratio", "cumulative_ratio"]);
    for (k, cum) in model.cumulative_ratio().into_iter().enumerate() {
        t.push(vec![
            (k + 1).to_string(),
            num(model.eigenvalues[k]),
            num(model.explained_ratio[k]),
            num(cum),
        ]);
    }
    t
}

fn component_header(k: usize) -> String {
    format!("PC{k}")
}

pub fn scores_table(scores: &ScoreTable) -> Table {
    let names: Vec<String> = scores.components.iter().map(|&k| component_header(k)).collect();
    matrix_table("neighborhood_id", &scores.neighborhood_ids, &names, &scores.scores)
}

pub fn read_scores_table(t: &Table) -> Result<ScoreTable> {
    let (ids, names, m) = read_matrix(t)?;
    let components = names
        .iter()
        .map(|n| {
            n.strip_prefix("PC")
                .and_then(|k| k.parse::<usize>().ok())
                .ok_or_else(|| Error::Schema(format!("score column {n:?} is not PC<k>")))
        })
        .collect::<Result<_>>()?;
    Ok(ScoreTable {
        neighborhood_ids: ids,
        components,
        scores: m,
    })
}

pub fn format_ci(lo: f64, hi: f64) -> String {
    format!("[{} ; {}]", num(lo), num(hi))
}

pub fn parse_ci(s: &str) -> Option<(f64, f64)> {
    let inner = s.trim().strip_prefix('[')?.strip_suffix(']')?;
    let (a, b) = inner.split_once(';')?;
    Some((a.trim().parse().ok()?, b.trim().parse().ok()?))
}

/// Coefficient table: `Variable, Coef., Std. Error, t|z, p-value, 95% CI`.
pub fn summary_table(fit: &RegressionFit) -> Table {
    let mut t = Table::new(&[
        "Variable",
        "Coef.",
        "Std. Error",
        fit.kind.statistic_name(),
        "p-value",
        "95% CI",
    ]);
    for (j, name) in fit.variable_names().into_iter().enumerate() {
        let (lo, hi) = fit.conf_intervals[j];
        t.push(vec![
            name,
            num(fit.coefficients[j]),
            num(fit.std_errors[j]),
            num(fit.test_stats[j]),
            num(fit.p_values[j]),
            format_ci(lo, hi),
        ]);
    }
    t
}

pub fn fit_stats_table(fit: &RegressionFit) -> Table {
    let mut t = Table::new(&["statistic", "value"]);
    let mut add = |k: &str, v: String| t.push(vec![k.to_string(), v]);
    add("model", fit.kind.label().to_string());
    add("n", fit.residuals.len().to_string());
    add("df_resid", fit.df_resid.to_string());
    add("scale", num(fit.scale));
    add("r_squared", opt_num(fit.r_squared));
    add("adj_r_squared", opt_num(fit.adj_r_squared));
    add("pseudo_r_squared", opt_num(fit.pseudo_r_squared));
    add("iterations", fit.iterations.map(|i| i.to_string()).unwrap_or_default());
    add("converged", fit.converged.to_string());
    t
}

/// Fitted values, residuals and (for Huber) final weights per neighborhood.
pub fn fit_rows_table(fit: &RegressionFit) -> Table {
    let mut t = Table::new(&["neighborhood_id", "fitted", "residual", "weight"]);
    for (i, id) in fit.neighborhood_ids.iter().enumerate() {
        t.push(vec![
            id.clone(),
            num(fit.fitted[i]),
            num(fit.residuals[i]),
            fit.weights.as_ref().map(|w| num(w[i])).unwrap_or_default(),
        ]);
    }
    t
}

/// Four rows in fixed order: Shapiro-Wilk, Breusch-Pagan, Durbin-Watson, VIF.
pub fn diagnostics_table(d: &DiagnosticsReport) -> Table {
    let mut t = Table::new(&["Test", "Statistic", "p-value", "Result", "Interpretation"]);
    let vif_max = d.vif.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let rows = [
        (
            num(d.shapiro_w),
            num(d.shapiro_p),
            format!("W = {:.4}, p = {:.4}", d.shapiro_w, d.shapiro_p),
            d.normality,
        ),
        (
            num(d.bp_lm),
            num(d.bp_p),
            format!("LM = {:.4}, p = {:.4}", d.bp_lm, d.bp_p),
            d.homoscedasticity,
        ),
        (num(d.dw), String::new(), format!("DW = {:.4}", d.dw), d.autocorrelation),
        (num(vif_max), String::new(), format!("max VIF = {vif_max:.4}"), d.multicollinearity),
    ];
    for (name, (stat, p, result, verdict)) in DIAGNOSTIC_TESTS.iter().zip(rows) {
        t.push(vec![name.to_string(), stat, p, result, verdict.label().to_string()]);
    }
    t
}

pub fn cv_table(cv: &CvResult) -> Table {
    let mut t = Table::new(&["fold", "size", "r2", "rmse", "error"]);
    for (f, fold) in cv.folds.iter().enumerate() {
        t.push(vec![
            (f + 1).to_string(),
            fold.len().to_string(),
            opt_num(cv.per_fold_r2[f]),
            num(cv.per_fold_rmse[f]),
            cv.fold_errors[f].clone().unwrap_or_default(),
        ]);
    }
    t
}

pub fn grid_table(g: &GridSearchResult) -> Table {
    let mut t = Table::new(&[
        "config",
        "n_trees",
        "max_depth",
        "max_features",
        "min_samples_leaf",
        "min_samples_split",
        "mean_r2",
        "std_r2",
        "mean_rmse",
        "best",
    ]);
    for (i, (c, cv)) in g.grid.iter().zip(&g.per_config_cv).enumerate() {
        t.push(vec![
            (i + 1).to_string(),
            c.n_trees.to_string(),
            c.depth_label(),
            c.max_features.label(),
            c.min_samples_leaf.to_string(),
            c.min_samples_split.to_string(),
            num(cv.mean_r2),
            num(cv.std_r2),
            num(cv.mean_rmse),
            (i == g.best_index).to_string(),
        ]);
    }
    t
}

pub fn ranking_table(r: &RiskRanking) -> Table {
    let mut t = Table::new(&["neighborhood_id", "raw_prediction", "normalized_score", "rank"]);
    for e in &r.entries {
        t.push(vec![
            e.neighborhood_id.clone(),
            num(e.raw_prediction),
            num(e.normalized_score),
            e.rank.to_string(),
        ]);
    }
    t
}

pub fn read_ranking_table(t: &Table) -> Result<RiskRanking> {
    let ids = t.column("neighborhood_id")?;
    let raw = t.numeric_column("raw_prediction")?;
    let score = t.numeric_column("normalized_score")?;
    let rank = t.column("rank")?;
    let entries = (0..ids.len())
        .map(|i| {
            let rank = rank[i].trim().parse::<usize>().map_err(|_| Error::Parse {
                row: i + 2,
                message: format!("rank {:?} is not a positive integer", rank[i]),
            })?;
            Ok(RankingEntry {
                neighborhood_id: ids[i].to_string(),
                raw_prediction: raw[i],
                normalized_score: score[i],
                rank,
            })
        })
        .collect::<Result<_>>()?;
    Ok(RiskRanking {
        entries,
        warnings: Vec::new(),
    })
}

pub fn agreement_table(rows: &[(String, AgreementReport)]) -> Table {
    let mut t = Table::new(&[
        "model",
        "n",
        "spearman_rho",
        "concordant_pairs",
        "discordant_pairs",
        "concordant_pair_pct",
        "top5_overlap",
        "top10_overlap",
        "top20_overlap",
    ]);
    for (model, a) in rows {
        let overlap = |k: usize| {
            a.top_k_overlap
                .iter()
                .find(|(kk, _)| *kk == k)
                .map(|(_, v)| num(*v))
                .unwrap_or_default()
        };
        t.push(vec![
            model.clone(),
            a.n.to_string(),
            num(a.spearman_rho),
            a.concordant_pairs.to_string(),
            a.discordant_pairs.to_string(),
            num(a.concordant_pair_pct),
            overlap(5),
            overlap(10),
            overlap(20),
        ]);
    }
    t
}

pub fn series_table(s: &NeighborhoodSeries, value_name: &str) -> Table {
    let mut t = Table::new(&["neighborhood_id", value_name]);
    for (id, v) in s.ids.iter().zip(&s.values) {
        t.push(vec![id.clone(), num(*v)]);
    }
    t
}

pub fn read_series(t: &Table, value_name: &str) -> Result<NeighborhoodSeries> {
    let ids = t.column("neighborhood_id")?.into_iter().map(str::to_string).collect();
    NeighborhoodSeries::new(ids, t.numeric_column(value_name)?)
}

pub fn density_table(d: &[CaseDensity]) -> Table {
    let mut t = Table::new(&["neighborhood_id", "year", "case_count", "density"]);
    for c in d {
        t.push(vec![
            c.neighborhood_id.clone(),
            c.year.to_string(),
            c.case_count.to_string(),
            num(c.density),
        ]);
    }
    t
}

pub fn row_rejects_table(rejects: &[RejectedRow]) -> Table {
    let mut t = Table::new(&["row", "reason"]);
    for r in rejects {
        t.push(vec![r.row.to_string(), r.reason.clone()]);
    }
    t
}

pub fn derivation_rejects_table(rejects: &[DerivationReject]) -> Table {
    let mut t = Table::new(&["neighborhood_id", "reason"]);
    for r in rejects {
        t.push(vec![r.neighborhood_id.clone(), r.reason.clone()]);
    }
    t
}
