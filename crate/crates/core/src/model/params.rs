use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ops::BatchNormStats;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    /// Learned by gradient descent.
    Param,
    /// State that is saved with the model but never receives gradients
    /// (batch-norm running statistics).
    Buffer,
}

#[derive(Clone, Debug)]
pub struct Entry {
    pub tensor: Tensor,
    pub kind: EntryKind,
    pub trainable: bool,
}

/// Named tensors of a model in a stable insertion order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: IndexMap<String, Entry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>, kind: EntryKind, trainable: bool) {
        let name = name.into();
        let trainable = trainable && kind == EntryKind::Param;
        let tensor = Tensor::leaf(shape, data, trainable).expect("parameter shape");
        let previous = self.entries.insert(name.clone(), Entry { tensor, kind, trainable });
        assert!(previous.is_none(), "duplicate parameter name {name}");
    }

    pub(crate) fn insert_bn(&mut self, prefix: &str, channels: usize, trainable: bool) {
        self.insert(format!("{prefix}.gamma"), vec![channels], vec![1.0; channels], EntryKind::Param, trainable);
        self.insert(format!("{prefix}.beta"), vec![channels], vec![0.0; channels], EntryKind::Param, trainable);
        self.insert(format!("{prefix}.running_mean"), vec![channels], vec![0.0; channels], EntryKind::Buffer, false);
        self.insert(format!("{prefix}.running_var"), vec![channels], vec![1.0; channels], EntryKind::Buffer, false);
        self.insert(format!("{prefix}.tracked"), vec![1], vec![0.0], EntryKind::Buffer, false);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entry(name).map(|e| &e.tensor)
    }

    pub fn entry(&self, name: &str) -> Result<&Entry> {
        self.entries.get(name).ok_or_else(|| Error::ParamMismatch {
            name: name.to_string(),
            detail: "no such tensor in model".into(),
        })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn bn_stats(&self, prefix: &str) -> Result<BatchNormStats> {
        Ok(BatchNormStats {
            mean: self.get(&format!("{prefix}.running_mean"))?.clone(),
            var: self.get(&format!("{prefix}.running_var"))?.clone(),
            tracked: self.get(&format!("{prefix}.tracked"))?.clone(),
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Entry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Parameters that currently receive gradients.
    pub fn trainable(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries
            .iter()
            .filter(|(_, e)| e.trainable)
            .map(|(k, e)| (k.as_str(), &e.tensor))
    }

    /// Changes the trainable flag; the tensor is replaced by a fresh leaf
    /// holding the same values.
    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        let entry = self.entries.get_mut(name).ok_or_else(|| Error::ParamMismatch {
            name: name.to_string(),
            detail: "no such tensor in model".into(),
        })?;
        let trainable = trainable && entry.kind == EntryKind::Param;
        if entry.trainable != trainable {
            entry.tensor = entry.tensor.detach_with_grad(trainable);
            entry.trainable = trainable;
        }
        Ok(())
    }

    pub fn zero_grad(&self) {
        for e in self.entries.values() {
            e.tensor.zero_grad();
        }
    }

    /// Copy of every value, in store order.
    pub fn snapshot(&self) -> Vec<Vec<f32>> {
        self.entries.values().map(|e| e.tensor.to_vec()).collect()
    }

    pub fn restore(&self, snapshot: &[Vec<f32>]) -> Result<()> {
        if snapshot.len() != self.entries.len() {
            return Err(Error::State(format!(
                "snapshot holds {} tensors, model has {}",
                snapshot.len(),
                self.entries.len()
            )));
        }
        for (e, values) in self.entries.values().zip(snapshot) {
            e.tensor.set_data(values)?;
        }
        Ok(())
    }

    /// Total number of learned scalars.
    pub fn parameter_count(&self) -> usize {
        self.entries
            .values()
            .filter(|e| e.kind == EntryKind::Param)
            .map(|e| e.tensor.numel())
            .sum()
    }
}
