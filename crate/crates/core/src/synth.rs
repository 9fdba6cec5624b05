//! Synthetic city generator used as a test substrate.
//!
//! Latent factors are mixed into six indicators through a fixed loading
//! matrix plus noise, and census counts are backed out of those indicators.
//! The planted case density is a known linear function of the principal
//! component scores of the resulting census (negative on components 1, 2
//! and 4, positive on 5 and 6), and a fraction of neighborhoods receives
//! gross positive contamination.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde_json::json;

use crate::error::{Error, Result};
use crate::ingest::{derive_indicators, CensusTractRaw, ZeroDenominatorPolicy};
use crate::pca::{fit_pca, transform};
use crate::series::NeighborhoodSeries;
use crate::tables::{num, Table};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_neighborhoods: usize,
    pub seed: u64,
    pub first_year: i32,
    pub last_year: i32,
    pub intercept: f64,
    /// `(component, coefficient)` pairs of the planted model.
    pub coefficients: Vec<(usize, f64)>,
    /// Residual noise standard deviation, cases/km².
    pub noise_sd: f64,
    /// Fraction of neighborhoods whose density is inflated.
    pub contamination: f64,
    /// Added density for contaminated neighborhoods, in noise SDs.
    pub outlier_sigmas: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_neighborhoods: 60,
            seed: 2024,
            first_year: 2015,
            last_year: 2024,
            intercept: 700.0,
            coefficients: vec![(1, -200.0), (2, -150.0), (4, -130.0), (5, 150.0), (6, 320.0)],
            noise_sd: 40.0,
            contamination: 0.1,
            outlier_sigmas: 8.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCity {
    /// Census rows as written; some neighborhoods are split over two tracts.
    pub census_rows: Vec<CensusTractRaw>,
    /// `(date, neighborhood)` per case, including a few deliberately
    /// unmatchable rows.
    pub cases: Vec<(NaiveDate, String)>,
    pub geojson: serde_json::Value,
    /// Planted density before noise and contamination.
    pub planted: NeighborhoodSeries,
    /// Expected density including contamination.
    pub expected: NeighborhoodSeries,
    pub contaminated: Vec<String>,
}

/// Row-major 6×6 mixing matrix from latent factors to indicator drivers.
const MIXING: [[f64; 6]; 6] = [
    [1.0, 0.3, 0.0, 0.2, 0.0, 0.0],
    [0.4, 1.0, 0.2, 0.0, 0.0, 0.0],
    [0.0, 0.3, 1.0, 0.0, 0.2, 0.0],
    [-0.5, 0.0, 0.0, 1.0, 0.0, 0.3],
    [0.0, 0.0, 0.4, 0.0, 1.0, 0.2],
    [-0.4, 0.0, 0.0, 0.3, 0.0, 1.0],
];

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn neighborhood_name(i: usize) -> String {
    format!("N{:03}", i + 1)
}

fn build_census(n: usize, rng: &mut ChaCha8Rng) -> Vec<CensusTractRaw> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    (0..n)
        .map(|i| {
            let f: Vec<f64> = (0..6).map(|_| normal.sample(rng)).collect();
            let z: Vec<f64> = MIXING
                .iter()
                .map(|row| row.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>() + 0.3 * normal.sample(rng))
                .collect();
            let density = (8.5 + 0.5 * z[0]).exp();
            let collective = logistic(-4.0 + 0.6 * z[1]);
            let vacancy = logistic(-2.0 + 0.5 * z[2]);
            let household = (3.0 + 0.3 * z[3]).max(1.5);
            let area = (0.3 * z[5]).exp() * (1.0 + 0.1 * z[4].abs());
            let v0001 = (density * area).round().max(50.0);
            let v0007 = (v0001 / household).round().max(10.0);
            let v0003 = (v0007 / (1.0 - vacancy)).round().max(v0007 + 1.0);
            let v0004 = (collective / (1.0 - collective) * v0003).round().max(1.0);
            CensusTractRaw {
                neighborhood_id: neighborhood_name(i),
                v0001,
                v0002: v0003 + v0004,
                v0003,
                v0004,
                v0005: (v0001 / v0007 * 100.0).round() / 100.0,
                v0006: (rng.random::<f64>() * 5.0 * 100.0).round() / 100.0,
                v0007,
                area_km2: (area * 1e4).round() / 1e4,
            }
        })
        .collect()
}

/// Splits every fifth neighborhood into two tracts whose counts and areas
/// sum back to the original.
fn split_tracts(census: &[CensusTractRaw]) -> Vec<CensusTractRaw> {
    let mut out = Vec::new();
    for (i, r) in census.iter().enumerate() {
        if i % 5 != 4 {
            out.push(r.clone());
            continue;
        }
        let half = |v: f64| (v * 0.4).round();
        let a = CensusTractRaw {
            neighborhood_id: r.neighborhood_id.to_lowercase(),
            v0001: half(r.v0001),
            v0002: half(r.v0003) + half(r.v0004),
            v0003: half(r.v0003),
            v0004: half(r.v0004),
            v0005: r.v0005,
            v0006: r.v0006,
            v0007: half(r.v0007),
            area_km2: (r.area_km2 * 0.4 * 1e4).round() / 1e4,
        };
        let b = CensusTractRaw {
            neighborhood_id: r.neighborhood_id.clone(),
            v0001: r.v0001 - a.v0001,
            v0002: r.v0002 - a.v0002,
            v0003: r.v0003 - a.v0003,
            v0004: r.v0004 - a.v0004,
            v0005: r.v0005,
            v0006: r.v0006,
            v0007: r.v0007 - a.v0007,
            area_km2: ((r.area_km2 - a.area_km2) * 1e4).round() / 1e4,
        };
        out.push(a);
        out.push(b);
    }
    out
}

/// Square polygons laid out on a grid near (−34.9, −8.05).
fn grid_geojson(ids: &[String]) -> serde_json::Value {
    let cols = (ids.len() as f64).sqrt().ceil() as usize;
    let step = 0.01;
    let features: Vec<_> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let x0 = -34.95 + (i % cols) as f64 * step;
            let y0 = -8.10 + (i / cols) as f64 * step;
            let ring = vec![
                [x0, y0],
                [x0 + step, y0],
                [x0 + step, y0 + step],
                [x0, y0 + step],
                [x0, y0],
            ];
            json!({
                "type": "Feature",
                "properties": { "id": id, "name": format!("Neighborhood {}", i + 1) },
                "geometry": { "type": "Polygon", "coordinates": [ring] }
            })
        })
        .collect();
    json!({ "type": "FeatureCollection", "features": features })
}

pub fn generate(config: &SynthConfig) -> Result<SynthCity> {
    if config.n_neighborhoods < 10 {
        return Err(Error::Config(format!(
            "synthetic city needs at least 10 neighborhoods, got {}",
            config.n_neighborhoods
        )));
    }
    if config.first_year > config.last_year {
        return Err(Error::Config("first_year is after last_year".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let census = build_census(config.n_neighborhoods, &mut rng);

    let (table, rejects) = derive_indicators(&census, ZeroDenominatorPolicy::Fail)?;
    debug_assert!(rejects.is_empty());
    let standardized = table.standardize()?;
    let model = fit_pca(&standardized)?;
    let scores = transform(&model, &standardized)?;

    let ids = table.neighborhood_ids.clone();
    let planted: Vec<f64> = (0..ids.len())
        .map(|i| {
            let lin = config.intercept
                + config
                    .coefficients
                    .iter()
                    .map(|&(k, b)| b * scores.scores[(i, k - 1)])
                    .sum::<f64>();
            lin.max(20.0)
        })
        .collect();

    let n_bad = (config.contamination * ids.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..ids.len()).collect();
    for i in 0..n_bad {
        let j = rng.random_range(i..order.len());
        order.swap(i, j);
    }
    let mut bad: Vec<usize> = order[..n_bad].to_vec();
    bad.sort_unstable();

    let normal = Normal::new(0.0, config.noise_sd).map_err(|e| Error::Config(e.to_string()))?;
    let mut expected = Vec::with_capacity(ids.len());
    for (i, p) in planted.iter().enumerate() {
        let mut d = (p + normal.sample(&mut rng)).max(5.0);
        if bad.binary_search(&i).is_ok() {
            d += config.outlier_sigmas * config.noise_sd;
        }
        expected.push(d);
    }

    let n_years = (config.last_year - config.first_year + 1) as u64;
    let mut cases = Vec::new();
    for (i, id) in ids.iter().enumerate() {
        let mean = expected[i] * census[i].area_km2;
        let count = Poisson::new(mean)
            .map_err(|e| Error::Config(e.to_string()))?
            .sample(&mut rng) as u64;
        for _ in 0..count {
            let year = config.first_year + rng.random_range(0..n_years) as i32;
            let day = rng.random_range(0..365u64);
            let date = NaiveDate::from_ymd_opt(year, 1, 1).expect("valid year") + Days::new(day);
            cases.push((date, id.clone()));
        }
    }
    // rows the ingest step must reject: an out-of-window year and an
    // unknown neighborhood
    let early = NaiveDate::from_ymd_opt(config.first_year - 1, 6, 1).expect("valid year");
    cases.push((early, ids[0].clone()));
    cases.push((early + Days::new(400), "UNKNOWN PLACE".to_string()));
    // deterministic shuffle so the file is not grouped by neighborhood
    for i in (1..cases.len()).rev() {
        let j = rng.random_range(0..=i);
        cases.swap(i, j);
    }

    Ok(SynthCity {
        census_rows: split_tracts(&census),
        cases,
        geojson: grid_geojson(&ids),
        planted: NeighborhoodSeries::new(ids.clone(), planted)?,
        expected: NeighborhoodSeries::new(ids.clone(), expected)?,
        contaminated: bad.iter().map(|&i| ids[i].clone()).collect(),
    })
}

pub fn census_csv(rows: &[CensusTractRaw]) -> Result<String> {
    let mut t = Table::new(&[
        "neighborhood_id",
        "V0001",
        "V0002",
        "V0003",
        "V0004",
        "V0005",
        "V0006",
        "V0007",
        "AREA_KM2",
    ]);
    for r in rows {
        t.push(vec![
            r.neighborhood_id.clone(),
            num(r.v0001),
            num(r.v0002),
            num(r.v0003),
            num(r.v0004),
            num(r.v0005),
            num(r.v0006),
            num(r.v0007),
            num(r.area_km2),
        ]);
    }
    t.to_csv()
}

pub fn cases_csv(cases: &[(NaiveDate, String)]) -> String {
    let mut s = String::from("date,neighborhood,sex\n");
    for (i, (d, id)) in cases.iter().enumerate() {
        let sex = if i % 2 == 0 { "F" } else { "M" };
        writeln!(s, "{},{id},{sex}", d.format("%Y-%m-%d")).expect("write to string");
    }
    s
}

pub fn truth_table(city: &SynthCity) -> Table {
    let mut t = Table::new(&["neighborhood_id", "planted_density", "expected_density", "contaminated"]);
    for (i, id) in city.planted.ids.iter().enumerate() {
        t.push(vec![
            id.clone(),
            num(city.planted.values[i]),
            num(city.expected.values[i]),
            city.contaminated.contains(id).to_string(),
        ]);
    }
    t
}

/// File names written by [`write_city`].
pub const CENSUS_FILE: &str = "census.csv";
pub const CASES_FILE: &str = "cases.csv";
pub const GEOJSON_FILE: &str = "neighborhoods.geojson";
pub const TRUTH_FILE: &str = "truth.csv";
pub const CONFIG_FILE: &str = "run.toml";

/// Writes census, cases, polygons, planted truth and a ready-to-run
/// configuration into `dir`, returning the configuration path.
pub fn write_city(city: &SynthCity, config: &SynthConfig, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, text: String| {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write(CENSUS_FILE, census_csv(&city.census_rows)?)?;
    write(CASES_FILE, cases_csv(&city.cases))?;
    write(GEOJSON_FILE, serde_json::to_string_pretty(&city.geojson)?)?;
    write(TRUTH_FILE, truth_table(city).to_csv()?)?;
    let run = format!(
        "seed = {seed}\n\n[paths]\ncensus = \"{CENSUS_FILE}\"\ncases = \"{CASES_FILE}\"\ngeojson = \"{GEOJSON_FILE}\"\noutput_dir = \"output\"\n\n[ingest]\nfirst_year = {first}\nlast_year = {last}\n\n[validation]\nyear = {last}\n",
        seed = config.seed,
        first = config.first_year,
        last = config.last_year,
    );
    write(CONFIG_FILE, run)?;
    Ok(dir.join(CONFIG_FILE))
}
