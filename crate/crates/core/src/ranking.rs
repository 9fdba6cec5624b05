//! Risk rankings from model predictions and their ordinal agreement with
//! observed densities.

use std::cmp::Ordering;

use log::warn;

use crate::error::{Error, Result};
use crate::series::NeighborhoodSeries;

pub const TOP_K: [usize; 3] = [5, 10, 20];

#[derive(Debug, Clone, PartialEq)]
pub struct RankingEntry {
    pub neighborhood_id: String,
    pub raw_prediction: f64,
    pub normalized_score: f64,
    /// Dense rank, 1 = highest prediction.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskRanking {
    /// Sorted by rank, ties by neighborhood id.
    pub entries: Vec<RankingEntry>,
    pub warnings: Vec<String>,
}

impl RiskRanking {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&RankingEntry> {
        self.entries.iter().find(|e| e.neighborhood_id == id)
    }

    pub fn raw_series(&self) -> NeighborhoodSeries {
        NeighborhoodSeries {
            ids: self.entries.iter().map(|e| e.neighborhood_id.clone()).collect(),
            values: self.entries.iter().map(|e| e.raw_prediction).collect(),
        }
    }
}

pub fn build_ranking(predictions: &NeighborhoodSeries) -> Result<RiskRanking> {
    let n = predictions.len();
    if n < 2 {
        return Err(Error::Domain(format!("ranking needs at least 2 neighborhoods, got {n}")));
    }
    if let Some(i) = predictions.values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Domain(format!(
            "prediction for {} is not finite",
            predictions.ids[i]
        )));
    }
    let min = predictions.values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = predictions.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut warnings = Vec::new();
    if max == min {
        let msg = format!("all {n} predictions equal {min}; scores set to 0.5");
        warn!("{msg}");
        warnings.push(msg);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        predictions.values[b]
            .total_cmp(&predictions.values[a])
            .then_with(|| predictions.ids[a].cmp(&predictions.ids[b]))
    });
    let mut entries = Vec::with_capacity(n);
    let mut rank = 0;
    let mut previous = f64::NAN;
    for i in order {
        let raw = predictions.values[i];
        if raw != previous {
            rank += 1;
            previous = raw;
        }
        let normalized_score = if max > min { (raw - min) / (max - min) } else { 0.5 };
        entries.push(RankingEntry {
            neighborhood_id: predictions.ids[i].clone(),
            raw_prediction: raw,
            normalized_score,
            rank,
        });
    }
    Ok(RiskRanking { entries, warnings })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgreementReport {
    pub n: usize,
    pub spearman_rho: f64,
    pub concordant_pairs: usize,
    pub discordant_pairs: usize,
    pub concordant_pair_pct: f64,
    /// `(k, overlap fraction)` for each k in [`TOP_K`] not exceeding n.
    pub top_k_overlap: Vec<(usize, f64)>,
}

/// 1-based ranks with ties given their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return f64::NAN;
    }
    sab / (saa * sbb).sqrt()
}

/// Spearman's rho: Pearson correlation of average ranks. NaN when either
/// side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&average_ranks(a), &average_ranks(b))
}

/// Concordant and discordant pair counts; pairs tied on either side count
/// as neither.
pub fn pair_counts(a: &[f64], b: &[f64]) -> (usize, usize) {
    let (mut c, mut d) = (0, 0);
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            let s = (a[i] - a[j]).signum() * (b[i] - b[j]).signum();
            if a[i] == a[j] || b[i] == b[j] {
                continue;
            }
            if s > 0.0 {
                c += 1;
            } else {
                d += 1;
            }
        }
    }
    (c, d)
}

/// Ids of the k largest values, ties broken by id.
fn top_k(ids: &[String], values: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .unwrap_or(Ordering::Equal)
            .then_with(|| ids[a].cmp(&ids[b]))
    });
    order.truncate(k);
    order
}

pub fn rank_agreement(predicted: &RiskRanking, observed: &NeighborhoodSeries) -> Result<AgreementReport> {
    let pred = predicted.raw_series();
    let obs = observed.aligned_to(&pred.ids)?;
    agreement_from_values(&pred.ids, &pred.values, &obs)
}

/// Agreement metrics between two aligned value vectors.
pub fn agreement_from_values(ids: &[String], pred: &[f64], obs: &[f64]) -> Result<AgreementReport> {
    let n = ids.len();
    if n < 2 || pred.len() != n || obs.len() != n {
        return Err(Error::Domain(format!(
            "agreement needs at least 2 aligned neighborhoods, got {n}"
        )));
    }
    let (c, d) = pair_counts(pred, obs);
    let concordant_pair_pct = if c + d == 0 {
        f64::NAN
    } else {
        100.0 * c as f64 / (c + d) as f64
    };
    let top_k_overlap = TOP_K
        .iter()
        .filter(|&&k| k <= n)
        .map(|&k| {
            let a = top_k(ids, pred, k);
            let b = top_k(ids, obs, k);
            let shared = a.iter().filter(|i| b.contains(i)).count();
            (k, shared as f64 / k as f64)
        })
        .collect();
    Ok(AgreementReport {
        n,
        spearman_rho: spearman(pred, obs),
        concordant_pairs: c,
        discordant_pairs: d,
        concordant_pair_pct,
        top_k_overlap,
    })
}
