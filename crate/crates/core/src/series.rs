use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};

/// One value per neighborhood, e.g. observed densities or model predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodSeries {
    pub ids: Vec<String>,
    pub values: Vec<f64>,
}

impl NeighborhoodSeries {
    pub fn new(ids: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if ids.len() != values.len() {
            return Err(Error::Dimension(format!(
                "{} ids but {} values",
                ids.len(),
                values.len()
            )));
        }
        let unique: BTreeSet<&String> = ids.iter().collect();
        if unique.len() != ids.len() {
            return Err(Error::Join("duplicate neighborhood ids".into()));
        }
        Ok(Self { ids, values })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<f64> {
        self.ids.iter().position(|i| i == id).map(|k| self.values[k])
    }

    /// Values reordered to follow `ids`. The key sets must be identical;
    /// otherwise the error lists the symmetric difference.
    pub fn aligned_to(&self, ids: &[String]) -> Result<Vec<f64>> {
        let index: HashMap<&str, usize> = self
            .ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let theirs: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
        let ours: BTreeSet<&str> = index.keys().copied().collect();
        if ours != theirs || theirs.len() != ids.len() {
            let diff: Vec<&str> = ours.symmetric_difference(&theirs).copied().collect();
            return Err(Error::Join(format!(
                "neighborhood sets differ; symmetric difference: {diff:?}"
            )));
        }
        Ok(ids.iter().map(|id| self.values[index[id.as_str()]]).collect())
    }
}
