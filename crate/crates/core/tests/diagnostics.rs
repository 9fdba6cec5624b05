mod common;

use common::{seeded, standard_normal};
use serde_json::Value;
use urbanrisk::diagnostics::{
    breusch_pagan, durbin_watson, shapiro_wilk, vif, BreuschPaganVariant,
};
use urbanrisk::numkernel::{normal_quantile, DenseMatrix};

/// Reference values frozen from scipy and statsmodels by
/// `fixtures/gen_diagnostics_reference.py`.
fn reference_cases() -> Vec<Value> {
    let text = include_str!("fixtures/diagnostics_reference.json");
    let v: Value = serde_json::from_str(text).unwrap();
    v["cases"].as_array().unwrap().clone()
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

fn design(v: &Value) -> DenseMatrix {
    let rows: Vec<Vec<f64>> = v.as_array().unwrap().iter().map(floats).collect();
    DenseMatrix::from_rows(&rows).unwrap().with_intercept()
}

#[test]
fn shapiro_wilk_matches_reference() {
    for (i, case) in reference_cases().iter().enumerate() {
        let (w, p) = shapiro_wilk(&floats(&case["sample"])).unwrap();
        let rw = case["shapiro_w"].as_f64().unwrap();
        let rp = case["shapiro_p"].as_f64().unwrap();
        assert!((w - rw).abs() < 1e-6, "case {i}: W {w} vs {rw}");
        assert!((p - rp).abs() < 1e-6, "case {i}: p {p} vs {rp}");
    }
}

#[test]
fn breusch_pagan_matches_reference() {
    for (i, case) in reference_cases().iter().enumerate() {
        let r = floats(&case["residuals"]);
        let x = design(&case["regressors"]);
        let (lm, p) = breusch_pagan(&r, &x, BreuschPaganVariant::Studentized).unwrap();
        let rlm = case["bp_lm"].as_f64().unwrap();
        let rp = case["bp_p"].as_f64().unwrap();
        assert!((lm - rlm).abs() < 1e-6 * rlm.max(1.0), "case {i}: LM {lm} vs {rlm}");
        assert!((p - rp).abs() < 1e-6, "case {i}: p {p} vs {rp}");

        let (lm, p) = breusch_pagan(&r, &x, BreuschPaganVariant::Classic).unwrap();
        let rlm = case["bp_classic_lm"].as_f64().unwrap();
        let rp = case["bp_classic_p"].as_f64().unwrap();
        assert!((lm - rlm).abs() < 1e-6 * rlm.max(1.0), "case {i}: classic LM {lm} vs {rlm}");
        assert!((p - rp).abs() < 1e-6, "case {i}: classic p {p} vs {rp}");
    }
}

#[test]
fn shapiro_on_normal_scores_and_exponential() {
    let n = 50;
    let q: Vec<f64> = (1..=n)
        .map(|i| normal_quantile((i as f64 - 0.375) / (n as f64 + 0.25)))
        .collect();
    let (w, p) = shapiro_wilk(&q).unwrap();
    assert!(w > 0.99 && p > 0.5, "W={w} p={p}");

    let mut rng = seeded(100);
    let expo: Vec<f64> = (0..100)
        .map(|_| -(1.0 - rand::Rng::random::<f64>(&mut rng)).ln())
        .collect();
    let (_, p) = shapiro_wilk(&expo).unwrap();
    assert!(p < 0.01, "p={p}");
}

#[test]
fn breusch_pagan_detects_variance_growing_with_regressor() {
    let mut rng = seeded(500);
    let x: Vec<f64> = (0..500).map(|_| rand::Rng::random_range(&mut rng, 0.0..3.0)).collect();
    let r: Vec<f64> = x.iter().map(|xi| standard_normal(&mut rng) * (0.2 + xi)).collect();
    let design = DenseMatrix::from_columns(&[x]).unwrap().with_intercept();
    let (_, p) = breusch_pagan(&r, &design, BreuschPaganVariant::Studentized).unwrap();
    assert!(p < 0.01, "p={p}");
}

#[test]
fn sign_flip_invariance_and_ranges() {
    let mut rng = seeded(3);
    for n in [10, 40, 94] {
        let r: Vec<f64> = (0..n).map(|_| standard_normal(&mut rng)).collect();
        let neg: Vec<f64> = r.iter().map(|v| -v).collect();
        let x = DenseMatrix::from_columns(&[
            (0..n).map(|_| standard_normal(&mut rng)).collect(),
            (0..n).map(|_| standard_normal(&mut rng)).collect(),
        ])
        .unwrap()
        .with_intercept();
        let (w1, p1) = shapiro_wilk(&r).unwrap();
        let (w2, _) = shapiro_wilk(&neg).unwrap();
        assert!((w1 - w2).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&p1));
        assert_eq!(durbin_watson(&r).unwrap(), durbin_watson(&neg).unwrap());
        let (l1, bp1) = breusch_pagan(&r, &x, BreuschPaganVariant::Studentized).unwrap();
        let (l2, _) = breusch_pagan(&neg, &x, BreuschPaganVariant::Studentized).unwrap();
        assert_eq!(l1, l2);
        assert!((0.0..=1.0).contains(&bp1));
    }
}

#[test]
fn durbin_watson_iid_near_two() {
    let mut rng = seeded(1000);
    let r: Vec<f64> = (0..1000).map(|_| standard_normal(&mut rng)).collect();
    let dw = durbin_watson(&r).unwrap();
    assert!((1.8..=2.2).contains(&dw), "DW={dw}");
}

#[test]
fn vif_of_orthogonal_design_is_one() {
    // centered Hadamard-style columns
    let n = 16;
    let cols: Vec<Vec<f64>> = (0..4)
        .map(|b| (0..n).map(|i| if (i >> b) & 1 == 0 { 1.0 } else { -1.0 }).collect())
        .collect();
    let x = DenseMatrix::from_columns(&cols).unwrap();
    for v in vif(&x).unwrap() {
        assert!((v - 1.0).abs() < 1e-9, "VIF {v}");
    }
}
