//! Named-tensor container holding every model parameter and buffer.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    RandomInit,
    Imported,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry<T> {
    pub tensor: Tensor<T>,
    /// BatchNorm running statistics are stored but not trained.
    pub trainable: bool,
}

/// Insertion-ordered map `name → tensor`. Names are unique.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightStore<T = f32> {
    entries: IndexMap<String, Entry<T>>,
    pub provenance: Provenance,
}

impl<T: Scalar> Default for WeightStore<T> {
    fn default() -> Self {
        Self::new(Provenance::RandomInit)
    }
}

impl<T: Scalar> WeightStore<T> {
    pub fn new(provenance: Provenance) -> Self {
        WeightStore {
            entries: IndexMap::new(),
            provenance,
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>, trainable: bool) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::invalid("weight_store", format!("duplicate name `{name}`")));
        }
        self.entries.insert(name, Entry { tensor, trainable });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.entries
            .get(name)
            .map(|e| &e.tensor)
            .ok_or_else(|| Error::MissingWeights(vec![name.to_string()]))
    }

    pub fn entry(&self, name: &str) -> Option<&Entry<T>> {
        self.entries.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    /// Replaces an existing tensor; the shape must not change.
    pub fn set(&mut self, name: &str, tensor: Tensor<T>) -> Result<()> {
        let e = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::MissingWeights(vec![name.to_string()]))?;
        if e.tensor.shape() != tensor.shape() {
            return Err(Error::WeightMismatch(vec![format!(
                "{name}: expected {:?}, got {:?}",
                e.tensor.shape(),
                tensor.shape()
            )]));
        }
        e.tensor = tensor;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Entry<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn trainable_names(&self) -> Vec<String> {
        self.entries
            .iter()
            .filter(|(_, e)| e.trainable)
            .map(|(k, _)| k.clone())
            .collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Element count over every stored tensor, buffers included.
    pub fn total_params(&self) -> usize {
        self.entries.values().map(|e| e.tensor.len()).sum()
    }

    pub fn trainable_params(&self) -> usize {
        self.entries
            .values()
            .filter(|e| e.trainable)
            .map(|e| e.tensor.len())
            .sum()
    }

    pub fn cast<U: Scalar>(&self) -> WeightStore<U> {
        WeightStore {
            entries: self
                .entries
                .iter()
                .map(|(k, e)| {
                    (
                        k.clone(),
                        Entry {
                            tensor: e.tensor.cast(),
                            trainable: e.trainable,
                        },
                    )
                })
                .collect(),
            provenance: self.provenance,
        }
    }

    /// Copies every entry of `source` whose name exists here. Returns the
    /// names that were matched; fails without modifying `self` if any
    /// expected name is missing from `source` or any shape differs.
    pub fn import_from(&mut self, source: &WeightStore<T>) -> Result<Vec<String>> {
        let missing: Vec<String> = self.entries.keys().filter(|k| !source.contains(k)).cloned().collect();
        if !missing.is_empty() {
            return Err(Error::MissingWeights(missing));
        }
        let mismatched: Vec<String> = self
            .entries
            .iter()
            .filter_map(|(k, e)| {
                let s = source.get(k).ok()?;
                (s.shape() != e.tensor.shape())
                    .then(|| format!("{k}: expected {:?}, got {:?}", e.tensor.shape(), s.shape()))
            })
            .collect();
        if !mismatched.is_empty() {
            return Err(Error::WeightMismatch(mismatched));
        }
        let names: Vec<String> = self.entries.keys().cloned().collect();
        for k in &names {
            self.entries[k].tensor = source.get(k)?.clone();
        }
        self.provenance = Provenance::Imported;
        Ok(names)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = WeightStore::<f32>::default();
        s.insert("a", Tensor::zeros(&[2]), true).unwrap();
        assert!(s.insert("a", Tensor::zeros(&[2]), true).is_err());
    }

    #[test]
    fn counts() {
        let mut s = WeightStore::<f32>::default();
        s.insert("w", Tensor::zeros(&[10, 5]), true).unwrap();
        s.insert("b", Tensor::zeros(&[5]), true).unwrap();
        s.insert("bn.running_mean", Tensor::zeros(&[5]), false).unwrap();
        assert_eq!(s.total_params(), 60);
        assert_eq!(s.trainable_params(), 55);
    }

    #[test]
    fn import_reports_every_problem() {
        let mut dst = WeightStore::<f32>::default();
        dst.insert("a", Tensor::zeros(&[2]), true).unwrap();
        dst.insert("b", Tensor::zeros(&[3]), true).unwrap();
        let empty = WeightStore::default();
        match dst.import_from(&empty).unwrap_err() {
            Error::MissingWeights(names) => assert_eq!(names, vec!["a", "b"]),
            e => panic!("{e}"),
        }
        let mut src = WeightStore::default();
        src.insert("a", Tensor::ones(&[2]), true).unwrap();
        src.insert("b", Tensor::ones(&[4]), true).unwrap();
        match dst.import_from(&src).unwrap_err() {
            Error::WeightMismatch(rows) => assert_eq!(rows.len(), 1),
            e => panic!("{e}"),
        }
        assert_eq!(dst.get("a").unwrap().sum(), 0.0);
    }
}
