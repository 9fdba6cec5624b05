//! Run configuration: a TOML file with nested sections, every key
//! overridable from the command line as `--section.key=value`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diagnostics::BreuschPaganVariant;
use crate::error::{Error, Result};
use crate::forest::{default_grid, ForestConfig};
use crate::ingest::{YearRange, ZeroDenominatorPolicy, INDICATOR_NAMES};
use crate::pca::ComponentSelection;
use crate::regression::HuberConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub census: PathBuf,
    pub cases: PathBuf,
    /// Neighborhood polygons; the choropleth is skipped when absent.
    #[serde(default)]
    pub geojson: Option<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default = "default_id_property")]
    pub geojson_id_property: String,
}

fn default_id_property() -> String {
    crate::geojson::DEFAULT_ID_PROPERTY.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub zero_denominator: ZeroDenominatorPolicy,
    /// Accept DD/MM/YYYY dates in the case file.
    pub day_first: bool,
    /// Inclusive year window whose cases form the modeling target.
    pub first_year: i32,
    pub last_year: i32,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            zero_denominator: ZeroDenominatorPolicy::Drop,
            day_first: false,
            first_year: 2015,
            last_year: 2024,
        }
    }
}

impl IngestConfig {
    pub fn years(&self) -> YearRange {
        YearRange {
            first: self.first_year,
            last: self.last_year,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcaConfig {
    /// A list of 1-based components, or a cumulative explained-variance
    /// threshold in (0, 1].
    pub selection: ComponentSelection,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    pub breusch_pagan: BreuschPaganVariant,
}

/// Which predictors the forest sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForestFeatures {
    /// The selected principal-component scores.
    #[default]
    Components,
    /// Population density, vacancy rate, collective ratio and household size.
    Indicators,
}

pub const FOREST_INDICATORS: [&str; 4] = [
    "population_density",
    "vacancy_rate",
    "collective_ratio",
    "avg_household_size",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestSection {
    pub features: ForestFeatures,
    pub cv_folds: usize,
    pub test_fraction: f64,
    /// Explicit grid; empty means the built-in 96-point grid.
    pub grid: Vec<ForestConfig>,
}

impl Default for ForestSection {
    fn default() -> Self {
        Self {
            features: ForestFeatures::Components,
            cv_folds: 10,
            test_fraction: 0.25,
            grid: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationConfig {
    pub year: i32,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self { year: 2024 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsConfig,
    #[serde(default)]
    pub ingest: IngestConfig,
    #[serde(default)]
    pub pca: PcaConfig,
    #[serde(default)]
    pub huber: HuberConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default)]
    pub forest: ForestSection,
    #[serde(default)]
    pub validation: ValidationConfig,
    #[serde(default)]
    pub seed: u64,
}

/// Reads a standalone grid file made of `[[grid]]` tables.
pub fn parse_grid_toml(text: &str, seed: u64) -> Result<Vec<ForestConfig>> {
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct GridFile {
        grid: Vec<ForestConfig>,
    }
    let g: GridFile = toml::from_str(text).map_err(|e| Error::Config(format!("invalid grid: {e}")))?;
    if g.grid.is_empty() {
        return Err(Error::Config("grid file lists no configurations".into()));
    }
    g.grid
        .into_iter()
        .map(|c| {
            let c = ForestConfig { seed, ..c };
            c.validate()?;
            Ok(c)
        })
        .collect()
}

/// Splits `a.b.c=value` into its key path and value.
pub fn parse_override(arg: &str) -> Result<(Vec<String>, String)> {
    let arg = arg.strip_prefix("--").unwrap_or(arg);
    let (key, value) = arg
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {arg:?} must look like key.path=value")))?;
    let path: Vec<String> = key.split('.').map(str::to_string).collect();
    if path.iter().any(String::is_empty) {
        return Err(Error::Config(format!("malformed override key {key:?}")));
    }
    Ok((path, value.to_string()))
}

/// Interprets an override value as a TOML literal, falling back to a string.
fn override_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn apply_override(root: &mut toml::Table, path: &[String], value: toml::Value) -> Result<()> {
    let (last, parents) = path.split_last().expect("non-empty key path");
    let mut table = root;
    for key in parents {
        let entry = table
            .entry(key.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("{key:?} is not a section")))?;
    }
    table.insert(last.clone(), value);
    Ok(())
}

const PATH_KEYS: [&str; 4] = ["census", "cases", "geojson", "output_dir"];

impl RunConfig {
    /// Parses TOML text; relative paths are taken relative to `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path, overrides: &[String]) -> Result<Self> {
        let mut root: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        if let Some(paths) = root.get_mut("paths").and_then(toml::Value::as_table_mut) {
            for key in PATH_KEYS {
                if let Some(toml::Value::String(s)) = paths.get_mut(key) {
                    *s = base_dir.join(&*s).to_string_lossy().into_owned();
                }
            }
        }
        for o in overrides {
            let (path, raw) = parse_override(o)?;
            apply_override(&mut root, &path, override_value(&raw))?;
        }
        let config: RunConfig = toml::Value::Table(root)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("invalid config: {e}")))?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base, overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Forest grid with every entry's seed set to the master seed.
    pub fn forest_grid(&self) -> Vec<ForestConfig> {
        if self.forest.grid.is_empty() {
            default_grid(self.seed)
        } else {
            self.forest
                .grid
                .iter()
                .map(|c| ForestConfig { seed: self.seed, ..*c })
                .collect()
        }
    }

    /// Every check that can run before touching the data.
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("census", &self.paths.census), ("cases", &self.paths.cases)] {
            if !p.is_file() {
                return Err(Error::Config(format!("paths.{name}: {} does not exist", p.display())));
            }
        }
        if let Some(g) = &self.paths.geojson {
            if !g.is_file() {
                return Err(Error::Config(format!("paths.geojson: {} does not exist", g.display())));
            }
        }
        if self.ingest.first_year > self.ingest.last_year {
            return Err(Error::Config(format!(
                "ingest.first_year {} is after ingest.last_year {}",
                self.ingest.first_year, self.ingest.last_year
            )));
        }
        self.pca.selection.validate(INDICATOR_NAMES.len())?;
        self.huber.validate()?;
        if self.forest.cv_folds < 2 {
            return Err(Error::Config(format!(
                "forest.cv_folds must be at least 2, got {}",
                self.forest.cv_folds
            )));
        }
        let f = self.forest.test_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Config(format!("forest.test_fraction must lie in (0, 1), got {f}")));
        }
        for c in &self.forest.grid {
            c.validate()?;
        }
        Ok(())
    }
}
