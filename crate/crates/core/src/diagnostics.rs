//! Residual diagnostics for the OLS fit: Shapiro-Wilk, Breusch-Pagan,
//! Durbin-Watson and variance inflation factors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkernel::{chi2_sf, normal_quantile, normal_sf, DenseMatrix, Qr};
use crate::regression::{FitKind, RegressionFit};

pub const ALPHA: f64 = 0.05;
/// Durbin-Watson values inside this band read as "no relevant autocorrelation".
pub const DW_BAND: (f64, f64) = (1.5, 2.5);
/// VIF at or above this flags multicollinearity.
pub const VIF_LIMIT: f64 = 5.0;

fn poly(coefs: &[f64], x: f64) -> f64 {
    coefs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

/// Shapiro-Wilk W and p-value (Royston's AS R94 approximation).
pub fn shapiro_wilk(sample: &[f64]) -> Result<(f64, f64)> {
    const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056];
    const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
    const C3: [f64; 4] = [0.5440, -0.39978, 0.025054, -6.714e-4];
    const C4: [f64; 4] = [1.3822, -0.77857, 0.062767, -0.0020322];
    const C5: [f64; 4] = [-1.5861, -0.31082, -0.083751, 0.0038915];
    const C6: [f64; 3] = [-0.4803, -0.082676, 0.0030302];
    const G: [f64; 2] = [-2.273, 0.459];

    let n = sample.len();
    if !(3..=5000).contains(&n) {
        return Err(Error::Domain(format!(
            "Shapiro-Wilk needs 3 <= n <= 5000, got {n}"
        )));
    }
    let mut x = sample.to_vec();
    x.sort_by(f64::total_cmp);
    let range = x[n - 1] - x[0];
    if !(range > 1e-19 * x[n - 1].abs().max(x[0].abs()).max(1.0)) {
        return Err(Error::Degenerate("sample has zero range".into()));
    }

    let half = n / 2;
    // one coefficient per symmetric pair of order statistics, outermost first
    let mut a = vec![0.0; half];
    let an = n as f64;
    if n == 3 {
        a[0] = std::f64::consts::FRAC_1_SQRT_2;
    } else {
        let m: Vec<f64> = (1..=half)
            .map(|i| normal_quantile((i as f64 - 0.375) / (an + 0.25)))
            .collect();
        let summ2 = 2.0 * m.iter().map(|v| v * v).sum::<f64>();
        let ssumm2 = summ2.sqrt();
        let rsn = 1.0 / an.sqrt();
        let a1 = poly(&C1, rsn) - m[0] / ssumm2;
        let (first, fac) = if n > 5 {
            let a2 = -m[1] / ssumm2 + poly(&C2, rsn);
            let fac = ((summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1])
                / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2))
                .sqrt();
            a[1] = a2;
            (2, fac)
        } else {
            let fac = ((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1)).sqrt();
            (1, fac)
        };
        a[0] = a1;
        for i in first..half {
            a[i] = -m[i] / fac;
        }
    }

    // W as the squared correlation between the data and the antisymmetric
    // coefficient vector; computed on range-scaled data
    let mut coef = vec![0.0; n];
    for i in 0..half {
        coef[i] = -a[i];
        coef[n - 1 - i] = a[i];
    }
    let xs: Vec<f64> = x.iter().map(|v| v / range).collect();
    let xbar = xs.iter().sum::<f64>() / an;
    let cbar = coef.iter().sum::<f64>() / an;
    let (mut ssa, mut ssx, mut sax) = (0.0, 0.0, 0.0);
    for (c, v) in coef.iter().zip(&xs) {
        let dc = c - cbar;
        let dx = v - xbar;
        ssa += dc * dc;
        ssx += dx * dx;
        sax += dc * dx;
    }
    let ssassx = (ssa * ssx).sqrt();
    let w1 = (ssassx - sax) * (ssassx + sax) / (ssa * ssx);
    let w = 1.0 - w1;

    if n == 3 {
        let p = (6.0 / std::f64::consts::PI) * (w.sqrt().asin() - std::f64::consts::FRAC_PI_3);
        return Ok((w, p.clamp(0.0, 1.0)));
    }
    let y = w1.ln();
    let lxx = an.ln();
    let (y, mean, sd) = if n <= 11 {
        let gamma = poly(&G, an);
        if y >= gamma {
            return Ok((w, 1e-99));
        }
        (-(gamma - y).ln(), poly(&C3, an), poly(&C4, an).exp())
    } else {
        (y, poly(&C5, lxx), poly(&C6, lxx).exp())
    };
    let p = normal_sf((y - mean) / sd);
    Ok((w, p.clamp(0.0, 1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BreuschPaganVariant {
    /// Koenker's studentized form, `n·R²` of the auxiliary regression.
    #[default]
    Studentized,
    /// The original form, explained sum of squares over `2σ̂⁴`.
    Classic,
}

/// Breusch-Pagan LM statistic and its chi-square p-value.
///
/// `x` must include the intercept column; the degrees of freedom are the
/// number of remaining columns.
pub fn breusch_pagan(
    residuals: &[f64],
    x: &DenseMatrix,
    variant: BreuschPaganVariant,
) -> Result<(f64, f64)> {
    let n = residuals.len();
    if x.rows() != n {
        return Err(Error::Dimension(format!(
            "{} residuals but design has {} rows",
            n,
            x.rows()
        )));
    }
    if x.cols() < 2 {
        return Err(Error::Dimension(
            "Breusch-Pagan needs at least one regressor besides the intercept".into(),
        ));
    }
    let e2: Vec<f64> = residuals.iter().map(|r| r * r).collect();
    let qr = Qr::new(x)?;
    let gamma = qr.solve(&e2)?;
    let fitted = x.matvec(&gamma)?;
    let mean = e2.iter().sum::<f64>() / n as f64;
    let tss: f64 = e2.iter().map(|v| (v - mean).powi(2)).sum();
    let ess: f64 = fitted.iter().map(|f| (f - mean).powi(2)).sum();
    let lm = match variant {
        BreuschPaganVariant::Studentized => {
            if tss == 0.0 {
                0.0
            } else {
                n as f64 * ess / tss
            }
        }
        BreuschPaganVariant::Classic => {
            if mean == 0.0 {
                return Err(Error::Degenerate("all residuals are zero".into()));
            }
            ess / (2.0 * mean * mean)
        }
    };
    // round-off can push an exact zero slightly negative
    let lm = lm.max(0.0);
    Ok((lm, chi2_sf(lm, x.cols() - 1)?))
}

/// `Σ(rᵢ − rᵢ₋₁)² / Σrᵢ²`.
pub fn durbin_watson(residuals: &[f64]) -> Result<f64> {
    if residuals.len() < 2 {
        return Err(Error::Domain("Durbin-Watson needs at least 2 residuals".into()));
    }
    let ss: f64 = residuals.iter().map(|r| r * r).sum();
    if ss == 0.0 {
        return Err(Error::Degenerate("all residuals are zero".into()));
    }
    let diff: f64 = residuals.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
    Ok(diff / ss)
}

/// Variance inflation factor of each column, regressing it on the others
/// plus an intercept. Perfectly collinear columns get `+∞`.
pub fn vif(x: &DenseMatrix) -> Result<Vec<f64>> {
    let (n, p) = x.shape();
    if p < 2 {
        return Err(Error::Domain(format!("VIF needs at least 2 columns, got {p}")));
    }
    let mut out = Vec::with_capacity(p);
    for j in 0..p {
        let target = x.column(j);
        let mean = target.iter().sum::<f64>() / n as f64;
        let tss: f64 = target.iter().map(|v| (v - mean).powi(2)).sum();
        let scale = target.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if tss <= (1e-12 * scale).powi(2) * n as f64 {
            out.push(f64::INFINITY);
            continue;
        }
        let others: Vec<usize> = (0..p).filter(|&k| k != j).collect();
        let design = x.select_columns(&others)?.with_intercept();
        let beta = match Qr::new(&design).and_then(|qr| qr.solve(&target)) {
            Ok(b) => b,
            Err(Error::Singular { .. }) => {
                // the other columns are themselves dependent; drop to the
                // independent subset through a pivoted retry
                independent_subset_fit(&design, &target)?
            }
            Err(e) => return Err(e),
        };
        let fitted = design.matvec(&beta)?;
        let rss: f64 = target.iter().zip(&fitted).map(|(a, b)| (a - b).powi(2)).sum();
        let r2 = 1.0 - rss / tss;
        out.push(if 1.0 - r2 <= 1e-12 { f64::INFINITY } else { 1.0 / (1.0 - r2) });
    }
    Ok(out)
}

/// Least squares on the greedily chosen linearly independent columns of
/// `design`; coefficients of skipped columns are zero.
fn independent_subset_fit(design: &DenseMatrix, y: &[f64]) -> Result<Vec<f64>> {
    let mut keep: Vec<usize> = Vec::new();
    for j in 0..design.cols() {
        let mut trial = keep.clone();
        trial.push(j);
        if Qr::new(&design.select_columns(&trial)?).is_ok() {
            keep = trial;
        }
    }
    let sub = Qr::new(&design.select_columns(&keep)?)?.solve(y)?;
    let mut beta = vec![0.0; design.cols()];
    for (k, &j) in keep.iter().enumerate() {
        beta[j] = sub[k];
    }
    Ok(beta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Satisfied,
    Violated,
}

impl Verdict {
    fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Satisfied
        } else {
            Verdict::Violated
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Verdict::Satisfied => "Satisfied",
            Verdict::Violated => "Violated",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsReport {
    pub shapiro_w: f64,
    pub shapiro_p: f64,
    pub bp_lm: f64,
    pub bp_p: f64,
    pub bp_variant: BreuschPaganVariant,
    pub dw: f64,
    pub vif: Vec<f64>,
    pub normality: Verdict,
    pub homoscedasticity: Verdict,
    pub autocorrelation: Verdict,
    pub multicollinearity: Verdict,
}

/// Runs all four diagnostics on an OLS fit and its regressor matrix
/// (without intercept, in the fit's row order).
pub fn diagnose(
    fit: &RegressionFit,
    regressors: &DenseMatrix,
    bp_variant: BreuschPaganVariant,
) -> Result<DiagnosticsReport> {
    if fit.kind != FitKind::Ols {
        return Err(Error::State("diagnostics are defined for the OLS fit".into()));
    }
    let (shapiro_w, shapiro_p) = shapiro_wilk(&fit.residuals)?;
    let (bp_lm, bp_p) = breusch_pagan(&fit.residuals, &regressors.with_intercept(), bp_variant)?;
    let dw = durbin_watson(&fit.residuals)?;
    let vif = if regressors.cols() >= 2 {
        vif(regressors)?
    } else {
        vec![1.0; regressors.cols()]
    };
    Ok(DiagnosticsReport {
        shapiro_w,
        shapiro_p,
        bp_lm,
        bp_p,
        bp_variant,
        dw,
        normality: Verdict::from_bool(shapiro_p >= ALPHA),
        homoscedasticity: Verdict::from_bool(bp_p >= ALPHA),
        autocorrelation: Verdict::from_bool((DW_BAND.0..=DW_BAND.1).contains(&dw)),
        multicollinearity: Verdict::from_bool(vif.iter().all(|v| *v < VIF_LIMIT)),
        vif,
    })
}
