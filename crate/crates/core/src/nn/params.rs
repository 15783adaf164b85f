use std::collections::HashMap;

use super::matrix::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// Named parameter tensors in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Params {
    names: Vec<String>,
    values: Vec<Matrix>,
    index: HashMap<String, usize>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Matrix) -> ParamId {
        assert!(!self.index.contains_key(name), "duplicate parameter name `{name}`");
        self.index.insert(name.to_string(), self.values.len());
        self.names.push(name.to_string());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Replaces values from another store with identical names and shapes.
    pub fn load_from(&mut self, other: &Params) -> Result<()> {
        for (name, value) in other.iter() {
            let id = self
                .id(name)
                .ok_or_else(|| Error::Schema(format!("unexpected tensor `{name}`")))?;
            let slot = self.get_mut(id);
            if slot.shape() != value.shape() {
                return Err(Error::Shape(format!(
                    "tensor `{name}`: expected {:?}, found {:?}",
                    slot.shape(),
                    value.shape()
                )));
            }
            *slot = value.clone();
        }
        if other.len() != self.len() {
            return Err(Error::Schema(format!(
                "expected {} tensors, found {}",
                self.len(),
                other.len()
            )));
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Matrix::is_finite)
    }
}
