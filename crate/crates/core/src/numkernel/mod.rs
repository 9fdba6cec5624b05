//! Deterministic dense linear algebra and distribution functions shared by
//! every statistical module.

mod dist;
mod eigen;
mod lstsq;
mod matrix;

pub use dist::{
    beta_inc, chi2_sf, gamma_p, gamma_q, ln_gamma, normal_cdf, normal_pdf, normal_quantile,
    normal_sf, t_quantile, t_sf,
};
pub use eigen::{symmetric_eigen, EigenResult};
pub use lstsq::{least_squares, weighted_least_squares, Qr};
pub use matrix::DenseMatrix;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance (divisor `n − 1`).
pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
