mod common;

use common::{
    gram_inverse, linear, norm_diff, normal_equations, normal_matrix, score_table, seeded, series,
    standard_normal, t_sf_by_quadrature,
};
use proptest::prelude::*;
use rand::Rng;
use urbanrisk::numkernel::DenseMatrix;
use urbanrisk::pca::ScoreTable;
use urbanrisk::regression::{fit_huber, fit_ols, predict, pseudo_r2, HuberConfig};
use urbanrisk::series::NeighborhoodSeries;

const BETA: [f64; 5] = [-200.0, -150.0, -130.0, 150.0, 320.0];

fn noisy_problem(seed: u64, n: usize, sd: f64) -> (ScoreTable, Vec<f64>) {
    let mut rng = seeded(seed);
    let x = normal_matrix(&mut rng, n, 5);
    let y: Vec<f64> = linear(&x, 700.0, &BETA)
        .into_iter()
        .map(|v| v + sd * standard_normal(&mut rng))
        .collect();
    (score_table(x), y)
}

#[test]
fn ols_matches_normal_equations_and_t_oracle() {
    let (t, y) = noisy_problem(94, 94, 80.0);
    let fit = fit_ols(&t, &series(y.clone())).unwrap();
    let x = t.scores.with_intercept();
    let beta = normal_equations(&x, &y);
    let inv = gram_inverse(&x);
    let fitted: Vec<f64> = (0..94)
        .map(|i| (0..6).map(|j| x[(i, j)] * beta[j]).sum())
        .collect();
    let df = 94 - 6;
    let sigma2 = y.iter().zip(&fitted).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / df as f64;
    // t quantile by bisecting the quadrature survival function
    let (mut lo, mut hi) = (1.0, 3.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if t_sf_by_quadrature(mid, df as u32) > 0.025 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let crit = 0.5 * (lo + hi);
    assert!((fit.critical_value - crit).abs() < 1e-8);
    for j in 0..6 {
        let se = (sigma2 * inv[j][j]).sqrt();
        let tstat = beta[j] / se;
        let p = 2.0 * t_sf_by_quadrature(tstat.abs(), df as u32);
        assert!((fit.coefficients[j] - beta[j]).abs() < 1e-8, "beta {j}");
        assert!((fit.std_errors[j] - se).abs() < 1e-8, "se {j}");
        assert!((fit.test_stats[j] - tstat).abs() < 1e-8 * tstat.abs().max(1.0), "t {j}");
        assert!((fit.p_values[j] - p).abs() < 1e-8, "p {j}: {} vs {p}", fit.p_values[j]);
        let (l, h) = fit.conf_intervals[j];
        assert!((l - (beta[j] - crit * se)).abs() < 1e-7 && (h - (beta[j] + crit * se)).abs() < 1e-7);
    }
    assert_eq!(fit.df_resid, df);
}

#[test]
fn ols_residuals_orthogonal_to_regressors() {
    for seed in 0..20 {
        let (t, y) = noisy_problem(seed, 60, 30.0);
        let fit = fit_ols(&t, &series(y)).unwrap();
        let x = t.scores.with_intercept();
        for j in 0..x.cols() {
            let dot: f64 = (0..x.rows()).map(|i| x[(i, j)] * fit.residuals[i]).sum();
            assert!(dot.abs() < 1e-8, "seed {seed}, column {j}: {dot}");
        }
    }
}

#[test]
fn huber_equals_ols_when_no_residual_is_flagged() {
    // duplicated rows with opposite noise: the OLS residuals are exactly the
    // noise, all of similar magnitude, so |r|/s stays well under c
    let mut rng = seeded(8);
    let half = normal_matrix(&mut rng, 40, 5);
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for (i, clean) in linear(&half, 10.0, &BETA).into_iter().enumerate() {
        let d = 1.0 + 0.05 * rng.random::<f64>();
        rows.push(half.row(i).to_vec());
        rows.push(half.row(i).to_vec());
        y.push(clean + d);
        y.push(clean - d);
    }
    let x = DenseMatrix::from_rows(&rows).unwrap();
    let t = score_table(x);
    let ys = series(y);
    let ols = fit_ols(&t, &ys).unwrap();
    let hub = fit_huber(&t, &ys, &HuberConfig::default()).unwrap();
    assert!(hub.weights.as_ref().unwrap().iter().all(|w| *w == 1.0));
    for (a, b) in ols.coefficients.iter().zip(&hub.coefficients) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn huber_with_huge_constant_is_ols() {
    let wide = HuberConfig {
        tuning_constant: 1e6,
        ..HuberConfig::default()
    };
    for seed in 0..10 {
        let (t, mut y) = noisy_problem(seed, 94, 40.0);
        for v in y.iter_mut().step_by(10) {
            *v += 800.0;
        }
        let ys = series(y);
        let ols = fit_ols(&t, &ys).unwrap();
        let hub = fit_huber(&t, &ys, &wide).unwrap();
        for (a, b) in ols.coefficients.iter().zip(&hub.coefficients) {
            assert!((a - b).abs() < 1e-6, "seed {seed}: {a} vs {b}");
        }
    }
}

#[test]
fn huber_beats_ols_under_contamination() {
    let mut wins = 0;
    let truth: Vec<f64> = std::iter::once(700.0).chain(BETA).collect();
    for seed in 0..100 {
        let (t, mut y) = noisy_problem(1000 + seed, 94, 40.0);
        let mut rng = seeded(seed);
        for i in 0..94 {
            if rng.random::<f64>() < 0.1 {
                y[i] += 20.0 * 40.0;
            }
        }
        let ys = series(y);
        let ols = fit_ols(&t, &ys).unwrap();
        let hub = fit_huber(&t, &ys, &HuberConfig::default()).unwrap();
        if norm_diff(&hub.coefficients, &truth) < norm_diff(&ols.coefficients, &truth) {
            wins += 1;
        }
    }
    assert!(wins >= 95, "Huber closer in {wins} of 100");
}

#[test]
fn pseudo_r2_and_prediction_oracles() {
    let (t, y) = noisy_problem(5, 94, 60.0);
    let ys = series(y.clone());
    let fit = fit_huber(&t, &ys, &HuberConfig::default()).unwrap();
    let m = y.iter().sum::<f64>() / y.len() as f64;
    let oracle = 1.0
        - y.iter().zip(&fit.fitted).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            / y.iter().map(|a| (a - m).powi(2)).sum::<f64>();
    assert!((pseudo_r2(&fit, &ys).unwrap() - oracle).abs() < 1e-12);
    assert_eq!(fit.pseudo_r_squared, Some(pseudo_r2(&fit, &ys).unwrap()));

    let mut rng = seeded(55);
    let rows = normal_matrix(&mut rng, 12, 5);
    let pred = predict(&fit, &score_table(rows.clone())).unwrap();
    for i in 0..12 {
        let direct = fit.coefficients[0]
            + (0..5).map(|j| rows[(i, j)] * fit.coefficients[j + 1]).sum::<f64>();
        assert!((pred[i] - direct).abs() < 1e-10);
    }
    let zero = predict(&fit, &score_table(DenseMatrix::zeros(1, 5))).unwrap();
    assert_eq!(zero[0], fit.intercept());
}

#[test]
fn prediction_is_affine() {
    let (t, y) = noisy_problem(9, 50, 10.0);
    let fit = fit_ols(&t, &series(y)).unwrap();
    let mut rng = seeded(10);
    let a = normal_matrix(&mut rng, 4, 5);
    let b = normal_matrix(&mut rng, 4, 5);
    let mut sum = a.clone();
    for i in 0..4 {
        for j in 0..5 {
            sum[(i, j)] += b[(i, j)];
        }
    }
    let pa = predict(&fit, &score_table(a)).unwrap();
    let pb = predict(&fit, &score_table(b)).unwrap();
    let ps = predict(&fit, &score_table(sum)).unwrap();
    for i in 0..4 {
        assert!((pa[i] + pb[i] - fit.intercept() - ps[i]).abs() < 1e-9);
    }
}

#[test]
fn huber_plateau_for_flagged_outliers() {
    let (t, mut y) = noisy_problem(77, 94, 40.0);
    let flagged: Vec<usize> = (0..94).step_by(11).collect();
    for &i in &flagged {
        y[i] += 20.0 * 40.0;
    }
    let base = fit_huber(&t, &series(y.clone()), &HuberConfig::default()).unwrap();
    for &i in &flagged {
        y[i] += 9.0 * 20.0 * 40.0;
    }
    let big = fit_huber(&t, &series(y), &HuberConfig::default()).unwrap();
    let rel = norm_diff(&base.coefficients, &big.coefficients)
        / base.coefficients.iter().map(|b| b * b).sum::<f64>().sqrt();
    assert!(rel < 1e-3, "relative change {rel}");
}

fn permuted(t: &ScoreTable, y: &NeighborhoodSeries, order: &[usize]) -> (ScoreTable, NeighborhoodSeries) {
    let ids: Vec<String> = order.iter().map(|&i| t.neighborhood_ids[i].clone()).collect();
    let t2 = t.align_to(&ids).unwrap();
    let y2 = NeighborhoodSeries::new(ids.clone(), y.aligned_to(&ids).unwrap()).unwrap();
    (t2, y2)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn huber_is_row_permutation_invariant(seed in 0u64..500, rot in 1usize..59) {
        let (t, mut y) = noisy_problem(seed, 60, 40.0);
        y[3] += 900.0;
        let ys = series(y);
        let a = fit_huber(&t, &ys, &HuberConfig::default()).unwrap();
        let mut order: Vec<usize> = (0..60).collect();
        order.rotate_left(rot);
        order.swap(0, 30);
        let (t2, y2) = permuted(&t, &ys, &order);
        let b = fit_huber(&t2, &y2, &HuberConfig::default()).unwrap();
        for (u, v) in a.coefficients.iter().zip(&b.coefficients) {
            prop_assert!((u - v).abs() < 1e-6 * u.abs().max(1.0));
        }
    }

    #[test]
    fn ols_exact_recovery(seed in 0u64..10_000) {
        let mut rng = seeded(seed);
        let x = normal_matrix(&mut rng, 30, 3);
        let beta: Vec<f64> = (0..3).map(|_| rng.random_range(-50.0..50.0)).collect();
        let y = linear(&x, 5.0, &beta);
        let fit = fit_ols(&score_table(x), &series(y)).unwrap();
        prop_assert!((fit.r_squared.unwrap() - 1.0).abs() < 1e-12);
        for (j, b) in beta.iter().enumerate() {
            prop_assert!((fit.coefficients[j + 1] - b).abs() < 1e-8);
        }
    }
}
