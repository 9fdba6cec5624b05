//! Choropleth export: risk scores injected into neighborhood polygons.

use std::collections::HashMap;

use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::ingest::normalize_key;
use crate::ranking::{RankingEntry, RiskRanking};

pub const DEFAULT_ID_PROPERTY: &str = "id";

#[derive(Debug, Clone, PartialEq)]
pub struct UnmatchedFeature {
    /// Position of the feature in the collection.
    pub index: usize,
    pub neighborhood_id: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct Choropleth {
    pub collection: Value,
    pub matched: usize,
    pub unmatched: Vec<UnmatchedFeature>,
}

/// Reads the feature's neighborhood key from `properties[id_property]`,
/// falling back to the feature-level `id` member.
fn feature_key(feature: &Value, id_property: &str) -> Option<String> {
    let raw = feature
        .get("properties")
        .and_then(|p| p.get(id_property))
        .or_else(|| feature.get("id"))?;
    match raw {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn features_mut(collection: &mut Value) -> Result<&mut Vec<Value>> {
    if collection.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(Error::Schema("GeoJSON root must be a FeatureCollection".into()));
    }
    collection
        .get_mut("features")
        .and_then(Value::as_array_mut)
        .ok_or_else(|| Error::Schema("FeatureCollection without a features array".into()))
}

fn number(v: f64) -> Value {
    serde_json::Number::from_f64(v).map_or(Value::Null, Value::Number)
}

pub fn emit_choropleth(ranking: &RiskRanking, geojson: &str, id_property: &str) -> Result<Choropleth> {
    let mut collection: Value = serde_json::from_str(geojson)?;
    let lookup: HashMap<&str, &RankingEntry> = ranking
        .entries
        .iter()
        .map(|e| (e.neighborhood_id.as_str(), e))
        .collect();
    let mut matched = 0;
    let mut unmatched = Vec::new();
    for (index, feature) in features_mut(&mut collection)?.iter_mut().enumerate() {
        let key = feature_key(feature, id_property);
        let entry = key.as_deref().and_then(|k| lookup.get(normalize_key(k).as_str()));
        let Some(obj) = feature.as_object_mut() else {
            return Err(Error::Schema(format!("feature {index} is not an object")));
        };
        let props = obj
            .entry("properties")
            .or_insert_with(|| Value::Object(Map::new()));
        if props.is_null() {
            *props = Value::Object(Map::new());
        }
        let Some(props) = props.as_object_mut() else {
            return Err(Error::Schema(format!("feature {index} has non-object properties")));
        };
        match entry {
            Some(e) => {
                matched += 1;
                props.insert("risk_score".into(), number(e.normalized_score));
                props.insert("risk_rank".into(), Value::from(e.rank));
                props.insert("raw_prediction".into(), number(e.raw_prediction));
            }
            None => {
                for k in ["risk_score", "risk_rank", "raw_prediction"] {
                    props.insert(k.into(), Value::Null);
                }
                let reason = match &key {
                    Some(k) => format!("no ranking entry for {k:?}"),
                    None => format!("feature lacks a {id_property:?} property"),
                };
                unmatched.push(UnmatchedFeature {
                    index,
                    neighborhood_id: key,
                    reason,
                });
            }
        }
    }
    if matched == 0 {
        return Err(Error::Join(format!(
            "no GeoJSON feature matched any of the {} ranked neighborhoods",
            ranking.len()
        )));
    }
    Ok(Choropleth {
        collection,
        matched,
        unmatched,
    })
}

/// `(normalized key, risk_score, risk_rank, raw_prediction)` per feature,
/// as read back from an emitted collection.
pub type InjectedProperties = (Option<String>, Option<f64>, Option<u64>, Option<f64>);

pub fn read_injected(geojson: &str, id_property: &str) -> Result<Vec<InjectedProperties>> {
    let mut collection: Value = serde_json::from_str(geojson)?;
    Ok(features_mut(&mut collection)?
        .iter()
        .map(|f| {
            let props = f.get("properties");
            let get = |k: &str| props.and_then(|p| p.get(k));
            (
                feature_key(f, id_property).map(|k| normalize_key(&k)),
                get("risk_score").and_then(Value::as_f64),
                get("risk_rank").and_then(Value::as_u64),
                get("raw_prediction").and_then(Value::as_f64),
            )
        })
        .collect())
}
