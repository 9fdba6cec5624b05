//! OLS and Huber M-estimation of case density on component scores.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkernel::{
    least_squares, median, normal_quantile, normal_sf, t_quantile, t_sf, weighted_least_squares,
    DenseMatrix, Qr,
};
use crate::pca::ScoreTable;
use crate::series::NeighborhoodSeries;

/// Consistency constant turning the MAD into a normal-scale estimate.
pub const MAD_NORMAL_CONSTANT: f64 = 0.6745;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitKind {
    Ols,
    Huber,
}

impl FitKind {
    pub fn label(self) -> &'static str {
        match self {
            FitKind::Ols => "OLS",
            FitKind::Huber => "RLM",
        }
    }

    /// Column header for the test statistic.
    pub fn statistic_name(self) -> &'static str {
        match self {
            FitKind::Ols => "t",
            FitKind::Huber => "z",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HuberConfig {
    pub tuning_constant: f64,
    pub max_iterations: usize,
    /// Maximum relative coefficient change that counts as converged.
    pub tolerance: f64,
}

impl Default for HuberConfig {
    fn default() -> Self {
        Self {
            tuning_constant: 1.345,
            max_iterations: 50,
            tolerance: 1e-8,
        }
    }
}

impl HuberConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tuning_constant > 0.0) {
            return Err(Error::Config(format!(
                "Huber tuning constant must be positive, got {}",
                self.tuning_constant
            )));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config(format!(
                "Huber tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("Huber max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionFit {
    pub kind: FitKind,
    /// Row order of `fitted` and `residuals`.
    pub neighborhood_ids: Vec<String>,
    /// 1-based component numbers of the non-intercept regressors.
    pub components: Vec<usize>,
    /// Intercept first.
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub test_stats: Vec<f64>,
    pub p_values: Vec<f64>,
    pub conf_intervals: Vec<(f64, f64)>,
    /// Critical value used for the 95% intervals.
    pub critical_value: f64,
    pub residuals: Vec<f64>,
    pub fitted: Vec<f64>,
    /// σ̂ for OLS, the MAD-based scale for Huber.
    pub scale: f64,
    pub df_resid: usize,
    pub r_squared: Option<f64>,
    pub adj_r_squared: Option<f64>,
    pub pseudo_r_squared: Option<f64>,
    pub iterations: Option<usize>,
    /// Final IRLS weights (Huber only).
    pub weights: Option<Vec<f64>>,
    pub converged: bool,
    pub warnings: Vec<String>,
}

impl RegressionFit {
    pub fn variable_names(&self) -> Vec<String> {
        std::iter::once("Intercept".to_string())
            .chain(self.components.iter().map(|c| format!("Component {c}")))
            .collect()
    }

    pub fn intercept(&self) -> f64 {
        self.coefficients[0]
    }
}

fn design(scores: &ScoreTable) -> DenseMatrix {
    scores.scores.with_intercept()
}

fn aligned_response(scores: &ScoreTable, y: &NeighborhoodSeries) -> Result<Vec<f64>> {
    y.aligned_to(&scores.neighborhood_ids)
}

fn total_sum_of_squares(y: &[f64]) -> f64 {
    let m = y.iter().sum::<f64>() / y.len() as f64;
    y.iter().map(|v| (v - m).powi(2)).sum()
}

fn check_sizes(n: usize, p: usize) -> Result<()> {
    if n <= p + 1 {
        return Err(Error::Dimension(format!(
            "need more than {} observations for {p} regressors plus intercept, got {n}",
            p + 1
        )));
    }
    Ok(())
}

fn safe_ratio(coef: f64, se: f64) -> f64 {
    if se > 0.0 {
        coef / se
    } else if coef == 0.0 {
        0.0
    } else {
        coef.signum() * f64::INFINITY
    }
}

/// Ordinary least squares with t-based inference.
pub fn fit_ols(scores: &ScoreTable, y: &NeighborhoodSeries) -> Result<RegressionFit> {
    let yv = aligned_response(scores, y)?;
    let x = design(scores);
    let (n, k) = x.shape();
    check_sizes(n, k - 1)?;
    let qr = Qr::new(&x)?;
    let beta = qr.solve(&yv)?;
    let fitted = x.matvec(&beta)?;
    let residuals: Vec<f64> = yv.iter().zip(&fitted).map(|(a, b)| a - b).collect();
    let rss: f64 = residuals.iter().map(|r| r * r).sum();
    let tss = total_sum_of_squares(&yv);
    if tss == 0.0 {
        return Err(Error::Degenerate("response has zero variance".into()));
    }
    let df = n - k;
    let sigma2 = rss / df as f64;
    let cov = qr.xtx_inverse();
    let std_errors: Vec<f64> = (0..k).map(|j| (sigma2 * cov[(j, j)]).sqrt()).collect();
    let test_stats: Vec<f64> = beta.iter().zip(&std_errors).map(|(b, s)| safe_ratio(*b, *s)).collect();
    let p_values = test_stats
        .iter()
        .map(|t| Ok((2.0 * t_sf(t.abs(), df)?).min(1.0)))
        .collect::<Result<Vec<_>>>()?;
    let crit = t_quantile(0.975, df)?;
    let conf_intervals = beta
        .iter()
        .zip(&std_errors)
        .map(|(b, s)| (b - crit * s, b + crit * s))
        .collect();
    let r2 = 1.0 - rss / tss;
    let adj = 1.0 - (1.0 - r2) * (n - 1) as f64 / df as f64;
    Ok(RegressionFit {
        kind: FitKind::Ols,
        neighborhood_ids: scores.neighborhood_ids.clone(),
        components: scores.components.clone(),
        coefficients: beta,
        std_errors,
        test_stats,
        p_values,
        conf_intervals,
        critical_value: crit,
        residuals,
        fitted,
        scale: sigma2.sqrt(),
        df_resid: df,
        r_squared: Some(r2),
        adj_r_squared: Some(adj),
        pseudo_r_squared: None,
        iterations: None,
        weights: None,
        converged: true,
        warnings: Vec::new(),
    })
}

/// Normalized median absolute deviation about the median.
pub fn mad_scale(residuals: &[f64]) -> f64 {
    let med = median(residuals);
    let dev: Vec<f64> = residuals.iter().map(|r| (r - med).abs()).collect();
    median(&dev) / MAD_NORMAL_CONSTANT
}

pub fn huber_weight(u: f64, c: f64) -> f64 {
    if u.abs() <= c {
        1.0
    } else {
        c / u.abs()
    }
}

pub fn huber_psi(u: f64, c: f64) -> f64 {
    u.clamp(-c, c)
}

/// `‖new − old‖∞ / ‖old‖∞`, the largest coefficient move relative to the
/// coefficient vector's magnitude.
fn max_relative_change(old: &[f64], new: &[f64]) -> f64 {
    let magnitude = old.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let step = old.iter().zip(new).fold(0.0f64, |a, (o, n)| a.max((n - o).abs()));
    step / magnitude.max(f64::MIN_POSITIVE)
}

/// Huber M-estimation by iteratively reweighted least squares, started from
/// the OLS solution, with MAD scale re-estimated every iteration and a
/// sandwich covariance for z-based inference.
pub fn fit_huber(
    scores: &ScoreTable,
    y: &NeighborhoodSeries,
    config: &HuberConfig,
) -> Result<RegressionFit> {
    config.validate()?;
    let yv = aligned_response(scores, y)?;
    let x = design(scores);
    let (n, k) = x.shape();
    check_sizes(n, k - 1)?;
    let c = config.tuning_constant;

    let residuals_of = |beta: &[f64]| -> Result<Vec<f64>> {
        let f = x.matvec(beta)?;
        Ok(yv.iter().zip(&f).map(|(a, b)| a - b).collect())
    };
    let scale_of = |r: &[f64]| -> Result<f64> {
        let s = mad_scale(r);
        if s > 0.0 {
            Ok(s)
        } else {
            Err(Error::Degenerate(
                "MAD scale is zero: more than half of the residuals are identical".into(),
            ))
        }
    };

    let mut beta = least_squares(&x, &yv)?;
    let mut iterations = 0;
    let mut converged = false;
    let mut weights = vec![1.0; n];
    while iterations < config.max_iterations {
        iterations += 1;
        let r = residuals_of(&beta)?;
        let s = scale_of(&r)?;
        weights = r.iter().map(|ri| huber_weight(ri / s, c)).collect();
        let next = weighted_least_squares(&x, &yv, &weights)?;
        let change = max_relative_change(&beta, &next);
        beta = next;
        if change < config.tolerance {
            converged = true;
            break;
        }
    }
    let mut warnings = Vec::new();
    if !converged {
        let msg = format!(
            "IRLS did not converge within {} iterations",
            config.max_iterations
        );
        warn!("{msg}");
        warnings.push(msg);
    }

    let residuals = residuals_of(&beta)?;
    let fitted: Vec<f64> = yv.iter().zip(&residuals).map(|(a, r)| a - r).collect();
    let s = scale_of(&residuals)?;
    let u: Vec<f64> = residuals.iter().map(|r| r / s).collect();
    let psi_sq = u.iter().map(|v| huber_psi(*v, c).powi(2)).sum::<f64>() / n as f64;
    let dpsi = u.iter().filter(|v| v.abs() <= c).count() as f64 / n as f64;
    if dpsi == 0.0 {
        return Err(Error::Degenerate(
            "every residual lies beyond the Huber threshold".into(),
        ));
    }
    let cov = Qr::new(&x)?.xtx_inverse();
    let factor = s * s * psi_sq / (dpsi * dpsi);
    let std_errors: Vec<f64> = (0..k).map(|j| (factor * cov[(j, j)]).sqrt()).collect();
    let test_stats: Vec<f64> = beta.iter().zip(&std_errors).map(|(b, e)| safe_ratio(*b, *e)).collect();
    let p_values = test_stats
        .iter()
        .map(|z| (2.0 * normal_sf(z.abs())).min(1.0))
        .collect();
    let crit = normal_quantile(0.975);
    let conf_intervals = beta
        .iter()
        .zip(&std_errors)
        .map(|(b, e)| (b - crit * e, b + crit * e))
        .collect();

    let mut fit = RegressionFit {
        kind: FitKind::Huber,
        neighborhood_ids: scores.neighborhood_ids.clone(),
        components: scores.components.clone(),
        coefficients: beta,
        std_errors,
        test_stats,
        p_values,
        conf_intervals,
        critical_value: crit,
        residuals,
        fitted,
        scale: s,
        df_resid: n - k,
        r_squared: None,
        adj_r_squared: None,
        pseudo_r_squared: None,
        iterations: Some(iterations),
        weights: Some(weights),
        converged,
        warnings,
    };
    fit.pseudo_r_squared = Some(pseudo_r2(&fit, y)?);
    Ok(fit)
}

/// `1 − Σ(y − ŷ)² / Σ(y − ȳ)²` using the robust fit's fitted values.
pub fn pseudo_r2(fit: &RegressionFit, y: &NeighborhoodSeries) -> Result<f64> {
    if fit.kind != FitKind::Huber {
        return Err(Error::State("pseudo R² is defined for robust fits".into()));
    }
    let yv = y.aligned_to(&fit.neighborhood_ids)?;
    let tss = total_sum_of_squares(&yv);
    if tss == 0.0 {
        return Err(Error::Degenerate("response has zero variance".into()));
    }
    let rss: f64 = yv.iter().zip(&fit.fitted).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(1.0 - rss / tss)
}

/// `ŷ = intercept + scores · β`.
pub fn predict(fit: &RegressionFit, scores: &ScoreTable) -> Result<Vec<f64>> {
    if scores.components != fit.components {
        return Err(Error::Schema(format!(
            "fit uses components {:?}, scores carry {:?}",
            fit.components, scores.components
        )));
    }
    design(scores).matvec(&fit.coefficients)
}

/// Per-coefficient sign agreement between two fits over the same variables.
pub fn sign_agreement(a: &RegressionFit, b: &RegressionFit) -> Vec<bool> {
    a.coefficients
        .iter()
        .zip(&b.coefficients)
        .map(|(x, y)| x.signum() == y.signum())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(cols: &[Vec<f64>]) -> ScoreTable {
        let n = cols.first().map_or(0, Vec::len);
        ScoreTable {
            neighborhood_ids: (0..n).map(|i| format!("N{i:03}")).collect(),
            components: (1..=cols.len()).collect(),
            scores: if cols.is_empty() {
                DenseMatrix::zeros(n, 0)
            } else {
                DenseMatrix::from_columns(cols).unwrap()
            },
        }
    }

    fn series(t: &ScoreTable, y: Vec<f64>) -> NeighborhoodSeries {
        NeighborhoodSeries::new(t.neighborhood_ids.clone(), y).unwrap()
    }

    #[test]
    fn exact_fit_has_unit_r2() {
        let x1 = vec![0.1, -1.0, 2.0, 0.7, -0.3, 1.5];
        let x2 = vec![1.0, 0.0, -1.0, 0.5, 2.0, -2.0];
        let t = table(&[x1.clone(), x2.clone()]);
        let y: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| 3.0 + 2.0 * a - b).collect();
        let fit = fit_ols(&t, &series(&t, y)).unwrap();
        assert!((fit.r_squared.unwrap() - 1.0).abs() < 1e-12);
        assert!(fit.residuals.iter().all(|r| r.abs() < 1e-12));
    }

    #[test]
    fn intercept_only_model() {
        let n = 5;
        let t = ScoreTable {
            neighborhood_ids: (0..n).map(|i| format!("N{i}")).collect(),
            components: vec![],
            scores: DenseMatrix::zeros(n, 0),
        };
        let y = vec![1.0, 4.0, 2.0, 8.0, 5.0];
        let fit = fit_ols(&t, &series(&t, y)).unwrap();
        assert!((fit.coefficients[0] - 4.0).abs() < 1e-12);
        assert!(fit.r_squared.unwrap().abs() < 1e-12);
    }

    #[test]
    fn misaligned_ids_are_a_join_error() {
        let t = table(&[vec![1.0, 2.0, 3.0, 4.0]]);
        let y = NeighborhoodSeries::new(
            vec!["N000".into(), "N001".into(), "N002".into(), "ZZZ".into()],
            vec![1.0, 2.0, 3.0, 5.0],
        )
        .unwrap();
        assert!(matches!(fit_ols(&t, &y), Err(Error::Join(_))));
    }

    #[test]
    fn rank_deficient_design() {
        let a = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        let t = table(&[a.clone(), a.iter().map(|v| 2.0 * v).collect()]);
        let y = series(&t, vec![1.0, 3.0, 2.0, 5.0, 4.0]);
        assert!(matches!(fit_ols(&t, &y), Err(Error::Singular { column: 2 })));
    }

    #[test]
    fn huber_degenerate_scale() {
        // intercept-only: four identical residuals out of six
        let t = ScoreTable {
            neighborhood_ids: (0..6).map(|i| format!("N{i}")).collect(),
            components: vec![],
            scores: DenseMatrix::zeros(6, 0),
        };
        let y = series(&t, vec![3.0, 3.0, 3.0, 3.0, 10.0, -5.0]);
        assert!(matches!(
            fit_huber(&t, &y, &HuberConfig::default()),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn huber_config_validation() {
        let bad = HuberConfig {
            tuning_constant: 0.0,
            ..HuberConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn pseudo_r2_limits() {
        let x = vec![0.3, -1.2, 2.2, 0.9, -0.4, 1.1, -2.0, 0.05];
        let noise = [0.1, -0.2, 0.05, 0.3, -0.1, -0.15, 0.2, -0.05];
        let t = table(&[x.clone()]);
        let y: Vec<f64> = x.iter().zip(noise).map(|(a, e)| 1.0 + a + e).collect();
        let ys = series(&t, y.clone());
        let mut fit = fit_huber(&t, &ys, &HuberConfig::default()).unwrap();
        fit.fitted = y.clone();
        assert_eq!(pseudo_r2(&fit, &ys).unwrap(), 1.0);
        let m = y.iter().sum::<f64>() / y.len() as f64;
        fit.fitted = vec![m; y.len()];
        assert!(pseudo_r2(&fit, &ys).unwrap().abs() < 1e-15);
    }

    #[test]
    fn weights_and_psi() {
        assert_eq!(huber_weight(0.5, 1.345), 1.0);
        assert!((huber_weight(-2.69, 1.345) - 0.5).abs() < 1e-15);
        assert_eq!(huber_psi(5.0, 1.345), 1.345);
        assert!((mad_scale(&[1.0, 2.0, 3.0, 4.0, 100.0]) - 1.0 / MAD_NORMAL_CONSTANT).abs() < 1e-15);
    }
}
