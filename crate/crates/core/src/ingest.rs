//! Census and case-record ingestion, indicator derivation and
//! standardization.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;
use std::path::Path;

use chrono::{Datelike, NaiveDate, NaiveDateTime};
use log::warn;
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::numkernel::{mean, sample_variance, DenseMatrix};

/// Indicator columns, in table order.
pub const INDICATOR_NAMES: [&str; 6] = [
    "population_density",
    "collective_ratio",
    "vacancy_rate",
    "avg_household_size",
    "collective_abs",
    "area_km2",
];

const ID_COLUMNS: [&str; 5] = ["neighborhood_id", "neighborhood", "id", "bairro", "nome_bairro"];
const DATE_COLUMNS: [&str; 3] = ["date", "data", "dt_notificacao"];

/// Uppercase, accent-stripped, whitespace-collapsed key.
pub fn normalize_key(raw: &str) -> String {
    let stripped: String = raw
        .nfd()
        .filter(|c| !unicode_normalization::char::is_combining_mark(*c))
        .collect();
    stripped
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_uppercase()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CensusTractRaw {
    pub neighborhood_id: String,
    pub v0001: f64,
    pub v0002: f64,
    pub v0003: f64,
    pub v0004: f64,
    /// Mean residents per occupied private unit; kept for audit only.
    pub v0005: f64,
    /// Imputed-unit percentage; kept for audit only.
    pub v0006: f64,
    pub v0007: f64,
    pub area_km2: f64,
}

fn detect_delimiter(header_line: &str) -> u8 {
    if header_line.matches(';').count() > header_line.matches(',').count() {
        b';'
    } else {
        b','
    }
}

fn read_text(path: &Path) -> Result<String> {
    let mut s = String::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_string(&mut s))
        .map_err(|e| Error::io(path, e))?;
    Ok(s.trim_start_matches('\u{feff}').to_string())
}

fn find_column(headers: &csv::StringRecord, candidates: &[&str]) -> Option<usize> {
    headers
        .iter()
        .position(|h| candidates.iter().any(|c| h.trim().eq_ignore_ascii_case(c)))
}

fn parse_number(cell: &str, delimiter: u8, row: usize, column: &str) -> Result<f64> {
    let cell = cell.trim();
    // semicolon files usually come with decimal commas
    let normalized = if delimiter == b';' {
        cell.replace(',', ".")
    } else {
        cell.to_string()
    };
    normalized
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Parse {
            row,
            message: format!("column {column}: `{cell}` is not a number"),
        })
}

pub fn parse_census(path: impl AsRef<Path>) -> Result<Vec<CensusTractRaw>> {
    parse_census_str(&read_text(path.as_ref())?)
}

/// Parses a census table; duplicate neighborhood keys are merged by summing
/// counts and areas. Records come back sorted by normalized key.
pub fn parse_census_str(text: &str) -> Result<Vec<CensusTractRaw>> {
    let delimiter = detect_delimiter(text.lines().next().unwrap_or(""));
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let id_col = find_column(&headers, &ID_COLUMNS)
        .ok_or_else(|| Error::Schema("neighborhood_id".into()))?;
    let wanted = [
        "V0001", "V0002", "V0003", "V0004", "V0005", "V0006", "V0007", "AREA_KM2",
    ];
    let mut cols = [0usize; 8];
    for (slot, name) in cols.iter_mut().zip(wanted) {
        *slot = find_column(&headers, &[name]).ok_or_else(|| Error::Schema(name.into()))?;
    }

    let mut merged: BTreeMap<String, CensusTractRaw> = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record?;
        let cell = |k: usize| record.get(cols[k]).unwrap_or("");
        let mut vals = [0.0; 8];
        for k in 0..8 {
            vals[k] = parse_number(cell(k), delimiter, row, wanted[k])?;
        }
        if let Some(k) = vals.iter().position(|v| *v < 0.0) {
            return Err(Error::Parse {
                row,
                message: format!("column {} is negative", wanted[k]),
            });
        }
        let id = normalize_key(record.get(id_col).unwrap_or(""));
        if id.is_empty() {
            return Err(Error::Parse {
                row,
                message: "empty neighborhood id".into(),
            });
        }
        let rec = CensusTractRaw {
            neighborhood_id: id.clone(),
            v0001: vals[0],
            v0002: vals[1],
            v0003: vals[2],
            v0004: vals[3],
            v0005: vals[4],
            v0006: vals[5],
            v0007: vals[6],
            area_km2: vals[7],
        };
        if (rec.v0003 + rec.v0004 - rec.v0002).abs() > 0.5 {
            warn!(
                "row {row} ({id}): V0003 + V0004 = {} but V0002 = {}",
                rec.v0003 + rec.v0004,
                rec.v0002
            );
        }
        match merged.get_mut(&id) {
            Some(acc) => merge_into(acc, &rec),
            None => {
                merged.insert(id, rec);
            }
        }
    }
    Ok(merged.into_values().collect())
}

fn merge_into(acc: &mut CensusTractRaw, rec: &CensusTractRaw) {
    let w_total = acc.v0007 + rec.v0007;
    if w_total > 0.0 {
        acc.v0005 = (acc.v0005 * acc.v0007 + rec.v0005 * rec.v0007) / w_total;
        acc.v0006 = (acc.v0006 * acc.v0007 + rec.v0006 * rec.v0007) / w_total;
    }
    acc.v0001 += rec.v0001;
    acc.v0002 += rec.v0002;
    acc.v0003 += rec.v0003;
    acc.v0004 += rec.v0004;
    acc.v0007 += rec.v0007;
    acc.area_km2 += rec.area_km2;
}

/// What to do with records whose indicator formulas have a zero denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZeroDenominatorPolicy {
    #[default]
    Drop,
    Fail,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivationReject {
    pub neighborhood_id: String,
    pub reason: String,
}

/// Neighborhood × indicator matrix, raw or z-standardized.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorTable {
    pub neighborhood_ids: Vec<String>,
    pub indicator_names: Vec<String>,
    pub values: DenseMatrix,
    pub standardized: bool,
    pub col_means: Vec<f64>,
    pub col_stds: Vec<f64>,
}

impl IndicatorTable {
    pub fn new(neighborhood_ids: Vec<String>, values: DenseMatrix) -> Result<Self> {
        if values.rows() != neighborhood_ids.len() || values.cols() != INDICATOR_NAMES.len() {
            return Err(Error::Dimension(format!(
                "indicator table needs {} rows x {} columns, got {}x{}",
                neighborhood_ids.len(),
                INDICATOR_NAMES.len(),
                values.rows(),
                values.cols()
            )));
        }
        Ok(Self {
            neighborhood_ids,
            indicator_names: INDICATOR_NAMES.iter().map(|s| s.to_string()).collect(),
            values,
            standardized: false,
            col_means: Vec::new(),
            col_stds: Vec::new(),
        })
    }

    /// A table over arbitrary indicator columns.
    pub fn with_names(
        neighborhood_ids: Vec<String>,
        indicator_names: Vec<String>,
        values: DenseMatrix,
    ) -> Result<Self> {
        if values.rows() != neighborhood_ids.len() || values.cols() != indicator_names.len() {
            return Err(Error::Dimension(format!(
                "indicator table needs {} rows x {} columns, got {}x{}",
                neighborhood_ids.len(),
                indicator_names.len(),
                values.rows(),
                values.cols()
            )));
        }
        Ok(Self {
            neighborhood_ids,
            indicator_names,
            values,
            standardized: false,
            col_means: Vec::new(),
            col_stds: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.neighborhood_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighborhood_ids.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.indicator_names.iter().position(|n| n == name)?;
        Some(self.values.column(j))
    }

    /// Z-scores each column with its sample (n−1) standard deviation.
    pub fn standardize(&self) -> Result<IndicatorTable> {
        if self.standardized {
            return Err(Error::State("table is already standardized".into()));
        }
        let n = self.len();
        if n < 3 {
            return Err(Error::Degenerate(format!(
                "standardization needs at least 3 rows, got {n}"
            )));
        }
        let p = self.values.cols();
        let mut means = Vec::with_capacity(p);
        let mut stds = Vec::with_capacity(p);
        for j in 0..p {
            let col = self.values.column(j);
            let m = mean(&col);
            let sd = sample_variance(&col).sqrt();
            let scale = col.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
            if !(sd > 1e-12 * scale) {
                return Err(Error::Degenerate(format!(
                    "indicator `{}` has zero variance",
                    self.indicator_names[j]
                )));
            }
            means.push(m);
            stds.push(sd);
        }
        let mut z = self.values.clone();
        for i in 0..n {
            for j in 0..p {
                z[(i, j)] = (z[(i, j)] - means[j]) / stds[j];
            }
        }
        Ok(IndicatorTable {
            neighborhood_ids: self.neighborhood_ids.clone(),
            indicator_names: self.indicator_names.clone(),
            values: z,
            standardized: true,
            col_means: means,
            col_stds: stds,
        })
    }

    /// Maps a standardized table back to raw units.
    pub fn destandardize(&self) -> Result<IndicatorTable> {
        if !self.standardized {
            return Err(Error::State("table is not standardized".into()));
        }
        let mut raw = self.values.clone();
        for i in 0..raw.rows() {
            for j in 0..raw.cols() {
                raw[(i, j)] = raw[(i, j)] * self.col_stds[j] + self.col_means[j];
            }
        }
        Ok(IndicatorTable {
            neighborhood_ids: self.neighborhood_ids.clone(),
            indicator_names: self.indicator_names.clone(),
            values: raw,
            standardized: false,
            col_means: Vec::new(),
            col_stds: Vec::new(),
        })
    }
}

/// Builds the six indicators from raw counts.
///
/// Records with a zero denominator (V0002, V0003, V0007 or area) or with more
/// occupied than private units are either dropped and reported or abort the
/// derivation, per `policy`.
pub fn derive_indicators(
    raw: &[CensusTractRaw],
    policy: ZeroDenominatorPolicy,
) -> Result<(IndicatorTable, Vec<DerivationReject>)> {
    let mut ids = Vec::with_capacity(raw.len());
    let mut rows = Vec::with_capacity(raw.len());
    let mut rejects = Vec::new();
    for r in raw {
        let zero: Vec<&str> = [
            ("V0002", r.v0002),
            ("V0003", r.v0003),
            ("V0007", r.v0007),
            ("AREA_KM2", r.area_km2),
        ]
        .iter()
        .filter(|(_, v)| *v <= 0.0)
        .map(|(n, _)| *n)
        .collect();
        let reason = if !zero.is_empty() {
            Some(format!("zero denominator: {}", zero.join(", ")))
        } else if r.v0007 > r.v0003 {
            Some(format!("V0007 ({}) exceeds V0003 ({})", r.v0007, r.v0003))
        } else {
            None
        };
        if let Some(reason) = reason {
            rejects.push(DerivationReject {
                neighborhood_id: r.neighborhood_id.clone(),
                reason,
            });
            continue;
        }
        ids.push(r.neighborhood_id.clone());
        rows.push(vec![
            r.v0001 / r.area_km2,
            r.v0004 / r.v0002,
            (r.v0003 - r.v0007) / r.v0003,
            r.v0001 / r.v0007,
            r.v0004,
            r.area_km2,
        ]);
    }
    if !rejects.is_empty() {
        match policy {
            ZeroDenominatorPolicy::Fail => {
                return Err(Error::Derivation {
                    neighborhoods: rejects.iter().map(|r| r.neighborhood_id.clone()).collect(),
                    reason: rejects[0].reason.clone(),
                })
            }
            ZeroDenominatorPolicy::Drop => {
                for r in &rejects {
                    warn!("dropping {}: {}", r.neighborhood_id, r.reason);
                }
            }
        }
    }
    let values = if rows.is_empty() {
        DenseMatrix::zeros(0, INDICATOR_NAMES.len())
    } else {
        DenseMatrix::from_rows(&rows)?
    };
    Ok((IndicatorTable::new(ids, values)?, rejects))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseRecord {
    /// 1-based line number in the source file.
    pub row: usize,
    pub date: NaiveDate,
    pub neighborhood_id: String,
}

fn parse_date(cell: &str, day_first: bool) -> Option<NaiveDate> {
    let cell = cell.trim();
    if let Ok(d) = NaiveDate::parse_from_str(cell, "%Y-%m-%d") {
        return Some(d);
    }
    if let Ok(dt) = NaiveDateTime::parse_from_str(cell, "%Y-%m-%dT%H:%M:%S") {
        return Some(dt.date());
    }
    if let Some(prefix) = cell.get(..10) {
        if cell.len() > 10 && cell.as_bytes()[10] == b'T' {
            return NaiveDate::parse_from_str(prefix, "%Y-%m-%d").ok();
        }
    }
    if day_first {
        for fmt in ["%d/%m/%Y", "%d-%m-%Y"] {
            if let Ok(d) = NaiveDate::parse_from_str(cell, fmt) {
                return Some(d);
            }
        }
    }
    None
}

pub fn parse_cases(path: impl AsRef<Path>, day_first: bool) -> Result<Vec<CaseRecord>> {
    parse_cases_str(&read_text(path.as_ref())?, day_first)
}

/// Parses case records; only the date and neighborhood columns are read.
pub fn parse_cases_str(text: &str, day_first: bool) -> Result<Vec<CaseRecord>> {
    let delimiter = detect_delimiter(text.lines().next().unwrap_or(""));
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let date_col = find_column(&headers, &DATE_COLUMNS).ok_or_else(|| Error::Schema("date".into()))?;
    let id_col =
        find_column(&headers, &ID_COLUMNS).ok_or_else(|| Error::Schema("neighborhood".into()))?;
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record?;
        let raw_date = record.get(date_col).unwrap_or("");
        let date = parse_date(raw_date, day_first).ok_or_else(|| Error::Parse {
            row,
            message: format!("unparseable date `{raw_date}`"),
        })?;
        out.push(CaseRecord {
            row,
            date,
            neighborhood_id: normalize_key(record.get(id_col).unwrap_or("")),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseDensity {
    pub neighborhood_id: String,
    pub year: i32,
    pub case_count: u64,
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RejectedRow {
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseAggregation {
    /// Sorted by (neighborhood, year).
    pub densities: Vec<CaseDensity>,
    pub rejects: Vec<RejectedRow>,
}

/// Inclusive calendar-year window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct YearRange {
    pub first: i32,
    pub last: i32,
}

impl YearRange {
    pub fn single(year: i32) -> Self {
        Self { first: year, last: year }
    }

    pub fn contains(&self, year: i32) -> bool {
        (self.first..=self.last).contains(&year)
    }
}

/// Groups case records by (neighborhood, year) and divides by area.
///
/// Records outside `year_filter` or naming a neighborhood missing from
/// `areas` land in the rejects report.
pub fn aggregate_cases(
    records: &[CaseRecord],
    areas: &HashMap<String, f64>,
    year_filter: Option<YearRange>,
) -> Result<CaseAggregation> {
    let mut counts: BTreeMap<(String, i32), u64> = BTreeMap::new();
    let mut rejects = Vec::new();
    for rec in records {
        let year = rec.date.year();
        if let Some(range) = year_filter {
            if !range.contains(year) {
                rejects.push(RejectedRow {
                    row: rec.row,
                    reason: format!("year {year} outside {}-{}", range.first, range.last),
                });
                continue;
            }
        }
        if !areas.contains_key(&rec.neighborhood_id) {
            rejects.push(RejectedRow {
                row: rec.row,
                reason: format!("unknown neighborhood `{}`", rec.neighborhood_id),
            });
            continue;
        }
        *counts.entry((rec.neighborhood_id.clone(), year)).or_default() += 1;
    }
    if counts.is_empty() {
        return Err(Error::Empty(format!(
            "none of {} case records matched the census table and year filter",
            records.len()
        )));
    }
    let densities = counts
        .into_iter()
        .map(|((id, year), case_count)| {
            let density = case_count as f64 / areas[&id];
            CaseDensity {
                neighborhood_id: id,
                year,
                case_count,
                density,
            }
        })
        .collect();
    Ok(CaseAggregation { densities, rejects })
}

/// Total density per neighborhood across all aggregated years, in `ids`
/// order; neighborhoods without cases get zero.
pub fn total_density(
    densities: &[CaseDensity],
    areas: &HashMap<String, f64>,
    ids: &[String],
) -> Result<Vec<f64>> {
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for d in densities {
        *counts.entry(d.neighborhood_id.as_str()).or_default() += d.case_count;
    }
    ids.iter()
        .map(|id| {
            let area = areas
                .get(id)
                .ok_or_else(|| Error::Join(format!("no area for neighborhood `{id}`")))?;
            Ok(counts.get(id.as_str()).copied().unwrap_or(0) as f64 / area)
        })
        .collect()
}

pub fn area_map(raw: &[CensusTractRaw]) -> HashMap<String, f64> {
    raw.iter()
        .map(|r| (r.neighborhood_id.clone(), r.area_km2))
        .collect()
}
