//! Test-only oracles, deliberately independent of the library's numeric paths.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use urbanrisk::numkernel::DenseMatrix;

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> DenseMatrix {
    let mut m = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = rng.random_range(-1.0..1.0);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// Determinant by Gaussian elimination with partial pivoting.
pub fn determinant(m: &[Vec<f64>]) -> f64 {
    let n = m.len();
    let mut a = m.to_vec();
    let mut det = 1.0;
    for k in 0..n {
        let p = (k..n)
            .max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))
            .unwrap();
        if a[p][k] == 0.0 {
            return 0.0;
        }
        if p != k {
            a.swap(p, k);
            det = -det;
        }
        det *= a[k][k];
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            for j in k..n {
                a[i][j] -= f * a[k][j];
            }
        }
    }
    det
}

/// Eigenvalues of a symmetric matrix as the roots of `det(M − λI)`, found by
/// scanning the Gershgorin interval for sign changes and bisecting.
/// Returned in descending order.
pub fn char_poly_eigenvalues(m: &DenseMatrix) -> Vec<f64> {
    let n = m.rows();
    let rows = m.row_vecs();
    let charpoly = |lambda: f64| {
        let mut a = rows.clone();
        for (i, r) in a.iter_mut().enumerate() {
            r[i] -= lambda;
        }
        determinant(&a)
    };
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..n {
        let radius: f64 = (0..n).filter(|&j| j != i).map(|j| m[(i, j)].abs()).sum();
        lo = lo.min(m[(i, i)] - radius);
        hi = hi.max(m[(i, i)] + radius);
    }
    lo -= 1e-6;
    hi += 1e-6;
    let mut steps = 20_000;
    loop {
        let h = (hi - lo) / steps as f64;
        let mut roots = Vec::new();
        let mut prev = charpoly(lo);
        for s in 1..=steps {
            let x = lo + s as f64 * h;
            let cur = charpoly(x);
            if cur == 0.0 {
                roots.push(x);
            } else if prev != 0.0 && prev.signum() != cur.signum() {
                let (mut a, mut b) = (x - h, x);
                let fa_sign = prev.signum();
                for _ in 0..200 {
                    let mid = 0.5 * (a + b);
                    if charpoly(mid).signum() == fa_sign {
                        a = mid;
                    } else {
                        b = mid;
                    }
                }
                roots.push(0.5 * (a + b));
            }
            prev = cur;
        }
        if roots.len() == n || steps > 2_000_000 {
            roots.sort_by(|a, b| b.total_cmp(a));
            return roots;
        }
        steps *= 10;
    }
}

/// Solves `(XᵀX)β = Xᵀy` by Gauss-Jordan elimination.
pub fn normal_equations(x: &DenseMatrix, y: &[f64]) -> Vec<f64> {
    let inv = gram_inverse(x);
    let p = x.cols();
    let xty: Vec<f64> = (0..p)
        .map(|j| (0..x.rows()).map(|i| x[(i, j)] * y[i]).sum())
        .collect();
    (0..p)
        .map(|i| (0..p).map(|j| inv[i][j] * xty[j]).sum())
        .collect()
}

/// `(XᵀX)⁻¹` by Gauss-Jordan elimination.
pub fn gram_inverse(x: &DenseMatrix) -> Vec<Vec<f64>> {
    let p = x.cols();
    let mut a: Vec<Vec<f64>> = (0..p)
        .map(|i| {
            let mut row: Vec<f64> = (0..p)
                .map(|j| (0..x.rows()).map(|r| x[(r, i)] * x[(r, j)]).sum())
                .collect();
            row.extend((0..p).map(|j| if i == j { 1.0 } else { 0.0 }));
            row
        })
        .collect();
    for k in 0..p {
        let piv = (k..p)
            .max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))
            .unwrap();
        a.swap(k, piv);
        let d = a[k][k];
        for v in a[k].iter_mut() {
            *v /= d;
        }
        for i in 0..p {
            if i != k {
                let f = a[i][k];
                let rowk = a[k].clone();
                for (v, rk) in a[i].iter_mut().zip(rowk) {
                    *v -= f * rk;
                }
            }
        }
    }
    a.into_iter().map(|r| r[p..].to_vec()).collect()
}

/// Simpson's rule on the t density, with the normalizing constant built from
/// explicit factorial products rather than a gamma function.
pub fn t_sf_by_quadrature(t: f64, df: u32) -> f64 {
    assert_eq!(df % 2, 0);
    let nu = df as f64;
    // Γ((ν+1)/2) for even ν: half-integer product times √π
    let mut g_num = std::f64::consts::PI.sqrt();
    let mut k = 0.5;
    while k < (nu + 1.0) / 2.0 - 0.25 {
        g_num *= k;
        k += 1.0;
    }
    let g_den: f64 = (1..(df / 2)).map(|i| i as f64).product();
    let c = g_num / ((nu * std::f64::consts::PI).sqrt() * g_den);
    let pdf = |x: f64| c * (1.0 + x * x / nu).powf(-(nu + 1.0) / 2.0);
    let steps = 200_000;
    let h = t / steps as f64;
    let mut s = pdf(0.0) + pdf(t);
    for i in 1..steps {
        s += pdf(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    0.5 - s * h / 3.0
}

pub fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("N{i:03}")).collect()
}

/// Score table with components numbered 1.. in column order.
pub fn score_table(x: DenseMatrix) -> urbanrisk::pca::ScoreTable {
    urbanrisk::pca::ScoreTable {
        neighborhood_ids: ids(x.rows()),
        components: (1..=x.cols()).collect(),
        scores: x,
    }
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    let data = (0..rows * cols).map(|_| standard_normal(rng)).collect();
    DenseMatrix::from_row_major(rows, cols, data).unwrap()
}

pub fn series(values: Vec<f64>) -> urbanrisk::series::NeighborhoodSeries {
    urbanrisk::series::NeighborhoodSeries::new(ids(values.len()), values).unwrap()
}

/// `intercept + X·beta` row by row.
pub fn linear(x: &DenseMatrix, intercept: f64, beta: &[f64]) -> Vec<f64> {
    (0..x.rows())
        .map(|i| intercept + (0..x.cols()).map(|j| x[(i, j)] * beta[j]).sum::<f64>())
        .collect()
}

pub fn norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}
