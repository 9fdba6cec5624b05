use super::DenseMatrix;
use crate::error::{Error, Result};

/// A column is declared dependent when Householder elimination leaves less
/// than this fraction of its original norm.
const RANK_TOL: f64 = 1e-10;

/// Householder QR factorization of a tall matrix.
#[derive(Debug, Clone)]
pub struct Qr {
    /// Householder vectors below (and on) the diagonal, one per column.
    reflectors: Vec<Vec<f64>>,
    /// Upper-triangular factor, `p × p`.
    r: DenseMatrix,
    rows: usize,
}

impl Qr {
    pub fn new(x: &DenseMatrix) -> Result<Self> {
        let (n, p) = x.shape();
        if n < p {
            return Err(Error::Dimension(format!(
                "least squares needs at least as many rows as columns, got {n}x{p}"
            )));
        }
        let mut a = x.clone();
        let col_norms: Vec<f64> = (0..p)
            .map(|j| (0..n).map(|i| a[(i, j)].powi(2)).sum::<f64>().sqrt())
            .collect();
        let mut reflectors = Vec::with_capacity(p);
        for k in 0..p {
            let norm = (k..n).map(|i| a[(i, k)].powi(2)).sum::<f64>().sqrt();
            if col_norms[k] == 0.0 || norm <= RANK_TOL * col_norms[k] {
                return Err(Error::Singular { column: k });
            }
            let alpha = if a[(k, k)] > 0.0 { -norm } else { norm };
            let mut v: Vec<f64> = (k..n).map(|i| a[(i, k)]).collect();
            v[0] -= alpha;
            let vnorm2: f64 = v.iter().map(|x| x * x).sum();
            if vnorm2 > 0.0 {
                for j in k..p {
                    let dot: f64 = (k..n).map(|i| v[i - k] * a[(i, j)]).sum();
                    let f = 2.0 * dot / vnorm2;
                    for i in k..n {
                        a[(i, j)] -= f * v[i - k];
                    }
                }
            }
            reflectors.push(v);
        }
        let mut r = DenseMatrix::zeros(p, p);
        for i in 0..p {
            for j in i..p {
                r[(i, j)] = a[(i, j)];
            }
        }
        Ok(Self { reflectors, r, rows: n })
    }

    pub fn r(&self) -> &DenseMatrix {
        &self.r
    }

    /// Applies `Qᵀ` to `y`.
    fn qt_apply(&self, y: &[f64]) -> Vec<f64> {
        let mut z = y.to_vec();
        for (k, v) in self.reflectors.iter().enumerate() {
            let vnorm2: f64 = v.iter().map(|x| x * x).sum();
            if vnorm2 == 0.0 {
                continue;
            }
            let dot: f64 = v.iter().zip(&z[k..]).map(|(a, b)| a * b).sum();
            let f = 2.0 * dot / vnorm2;
            for (zi, vi) in z[k..].iter_mut().zip(v) {
                *zi -= f * vi;
            }
        }
        z
    }

    pub fn solve(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.rows {
            return Err(Error::Dimension(format!(
                "design has {} rows but response has {}",
                self.rows,
                y.len()
            )));
        }
        let z = self.qt_apply(y);
        let p = self.r.rows();
        let mut beta = vec![0.0; p];
        for i in (0..p).rev() {
            let s: f64 = (i + 1..p).map(|j| self.r[(i, j)] * beta[j]).sum();
            beta[i] = (z[i] - s) / self.r[(i, i)];
        }
        Ok(beta)
    }

    /// `(XᵀX)⁻¹ = R⁻¹R⁻ᵀ`.
    pub fn xtx_inverse(&self) -> DenseMatrix {
        let p = self.r.rows();
        let mut rinv = DenseMatrix::zeros(p, p);
        for j in 0..p {
            rinv[(j, j)] = 1.0 / self.r[(j, j)];
            for i in (0..j).rev() {
                let s: f64 = (i + 1..=j).map(|k| self.r[(i, k)] * rinv[(k, j)]).sum();
                rinv[(i, j)] = -s / self.r[(i, i)];
            }
        }
        let mut out = DenseMatrix::zeros(p, p);
        for i in 0..p {
            for j in i..p {
                let s: f64 = (j..p).map(|k| rinv[(i, k)] * rinv[(j, k)]).sum();
                out[(i, j)] = s;
                out[(j, i)] = s;
            }
        }
        out
    }
}

/// Minimizes `‖y − Xβ‖²` via Householder QR.
pub fn least_squares(x: &DenseMatrix, y: &[f64]) -> Result<Vec<f64>> {
    if x.rows() != y.len() {
        return Err(Error::Dimension(format!(
            "design has {} rows but response has {}",
            x.rows(),
            y.len()
        )));
    }
    Qr::new(x)?.solve(y)
}

/// Weighted least squares, minimizing `Σ wᵢ (yᵢ − xᵢβ)²`.
pub fn weighted_least_squares(x: &DenseMatrix, y: &[f64], weights: &[f64]) -> Result<Vec<f64>> {
    if weights.len() != y.len() || x.rows() != y.len() {
        return Err(Error::Dimension("weights, design and response disagree".into()));
    }
    let mut xw = x.clone();
    let mut yw = y.to_vec();
    for (i, &w) in weights.iter().enumerate() {
        let sw = w.max(0.0).sqrt();
        for j in 0..x.cols() {
            xw[(i, j)] *= sw;
        }
        yw[i] *= sw;
    }
    least_squares(&xw, &yw)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intercept_only() {
        let x = DenseMatrix::from_columns(&[vec![1.0; 3]]).unwrap();
        let b = least_squares(&x, &[5.0, 5.0, 5.0]).unwrap();
        assert!((b[0] - 5.0).abs() < 1e-14);
    }

    #[test]
    fn exact_line() {
        let xs = [0.0, 1.0, 2.0, 3.5, -1.0];
        let x = DenseMatrix::from_columns(&[vec![1.0; 5], xs.to_vec()]).unwrap();
        let y: Vec<f64> = xs.iter().map(|v| 2.0 * v + 1.0).collect();
        let b = least_squares(&x, &y).unwrap();
        assert!((b[0] - 1.0).abs() < 1e-12 && (b[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn names_dependent_column() {
        let x = DenseMatrix::from_columns(&[
            vec![1.0, 1.0, 1.0, 1.0],
            vec![1.0, 2.0, 3.0, 4.0],
            vec![2.0, 4.0, 6.0, 8.0],
        ])
        .unwrap();
        match least_squares(&x, &[1.0, 2.0, 3.0, 4.0]) {
            Err(Error::Singular { column }) => assert_eq!(column, 2),
            other => panic!("expected singularity, got {other:?}"),
        }
    }

    #[test]
    fn xtx_inverse_is_inverse() {
        let x = DenseMatrix::from_rows(&[
            vec![1.0, 0.3, 2.0],
            vec![1.0, -1.2, 0.5],
            vec![1.0, 2.2, -0.7],
            vec![1.0, 0.9, 1.1],
            vec![1.0, -0.4, 3.0],
        ])
        .unwrap();
        let inv = Qr::new(&x).unwrap().xtx_inverse();
        let prod = x.gram().matmul(&inv).unwrap();
        let err = prod.sub(&DenseMatrix::identity(3)).unwrap().frobenius_norm();
        assert!(err < 1e-12, "{err}");
    }
}
