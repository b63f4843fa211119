//! Named parameter tensors, each tagged frozen or trainable exactly once.

use std::borrow::Cow;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::quant::{quantize, QuantizedMatrix};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tag {
    Frozen,
    Trainable,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParamValue {
    Dense(Tensor),
    Quantized(QuantizedMatrix),
}

impl ParamValue {
    pub fn shape(&self) -> &[usize] {
        match self {
            ParamValue::Dense(t) => t.shape(),
            ParamValue::Quantized(q) => &q.shape,
        }
    }

    /// Dense values; quantized storage is dequantized.
    pub fn values(&self) -> Cow<'_, [f64]> {
        match self {
            ParamValue::Dense(t) => Cow::Borrowed(t.data()),
            ParamValue::Quantized(q) => Cow::Owned(q.dequantize_vec()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    tag: Tag,
    value: ParamValue,
}

impl Param {
    pub fn tag(&self) -> Tag {
        self.tag
    }

    pub fn value(&self) -> &ParamValue {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn is_trainable(&self) -> bool {
        self.tag == Tag::Trainable
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterSet {
    params: BTreeMap<String, Param>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tag: Tag, value: ParamValue) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(ModelError::InvalidConfig(format!("parameter {name:?} defined twice")));
        }
        if tag == Tag::Trainable && matches!(value, ParamValue::Quantized(_)) {
            return Err(ModelError::InvalidConfig(format!(
                "trainable parameter {name:?} cannot be quantized"
            )));
        }
        self.params.insert(name, Param { tag, value });
        Ok(())
    }

    pub fn insert_dense(&mut self, name: impl Into<String>, tag: Tag, t: Tensor) -> Result<()> {
        self.insert(name, tag, ParamValue::Dense(t))
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.params
            .get(name)
            .ok_or_else(|| ModelError::UnknownParameter(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn values(&self, name: &str) -> Result<Cow<'_, [f64]>> {
        Ok(self.get(name)?.value.values())
    }

    /// Mutable access to a trainable tensor. Frozen parameters are refused.
    pub fn trainable_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| ModelError::UnknownParameter(name.to_string()))?;
        match (&p.tag, &mut p.value) {
            (Tag::Trainable, ParamValue::Dense(t)) => Ok(t),
            _ => Err(ModelError::InvalidConfig(format!("parameter {name:?} is frozen"))),
        }
    }

    /// Replaces a parameter's value keeping its tag; the shape must match.
    pub fn replace(&mut self, name: &str, value: ParamValue) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| ModelError::UnknownParameter(name.to_string()))?;
        if p.value.shape() != value.shape() {
            return Err(ModelError::ShapeMismatch(format!(
                "{name}: expected {:?}, got {:?}",
                p.value.shape(),
                value.shape()
            )));
        }
        if p.tag == Tag::Trainable && matches!(value, ParamValue::Quantized(_)) {
            return Err(ModelError::InvalidConfig(format!(
                "trainable parameter {name:?} cannot be quantized"
            )));
        }
        p.value = value;
        Ok(())
    }

    pub fn remove(&mut self, name: &str) -> Result<Param> {
        self.params
            .remove(name)
            .ok_or_else(|| ModelError::UnknownParameter(name.to_string()))
    }

    /// Stores every frozen 2-D matrix as int4 blocks; vectors stay dense.
    pub fn quantize_frozen_matrices(&mut self) {
        for p in self.params.values_mut() {
            if p.tag != Tag::Frozen {
                continue;
            }
            if let ParamValue::Dense(t) = &p.value {
                if t.shape().len() == 2 {
                    p.value = ParamValue::Quantized(quantize(t));
                }
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names_tagged(&self, tag: Tag) -> Vec<&str> {
        self.iter().filter(|(_, p)| p.tag == tag).map(|(n, _)| n).collect()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn count_scalars(&self, tag: Tag) -> usize {
        self.iter()
            .filter(|(_, p)| p.tag == tag)
            .map(|(_, p)| p.shape().iter().product::<usize>())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tags_fixed_and_frozen_refused() {
        let mut ps = ParameterSet::new();
        ps.insert_dense("w", Tag::Frozen, Tensor::zeros(&[2, 2])).unwrap();
        ps.insert_dense("g", Tag::Trainable, Tensor::zeros(&[2])).unwrap();
        assert!(ps.insert_dense("w", Tag::Trainable, Tensor::zeros(&[2, 2])).is_err());
        assert!(ps.trainable_mut("w").is_err());
        assert!(ps.trainable_mut("g").is_ok());
        assert!(matches!(ps.get("nope"), Err(ModelError::UnknownParameter(_))));
        assert_eq!(ps.names_tagged(Tag::Frozen), vec!["w"]);
    }

    #[test]
    fn quantize_only_frozen_matrices() {
        let mut ps = ParameterSet::new();
        ps.insert_dense("w", Tag::Frozen, Tensor::filled(&[2, 3], 0.5)).unwrap();
        ps.insert_dense("b", Tag::Frozen, Tensor::zeros(&[3])).unwrap();
        ps.insert_dense("t", Tag::Trainable, Tensor::zeros(&[2, 3])).unwrap();
        ps.quantize_frozen_matrices();
        assert!(matches!(ps.get("w").unwrap().value(), ParamValue::Quantized(_)));
        assert!(matches!(ps.get("b").unwrap().value(), ParamValue::Dense(_)));
        assert!(matches!(ps.get("t").unwrap().value(), ParamValue::Dense(_)));
        assert_eq!(ps.values("w").unwrap().as_ref(), &[0.5; 6]);
        assert_eq!(ps.get("w").unwrap().tag(), Tag::Frozen);
    }

    #[test]
    fn replace_checks_shape() {
        let mut ps = ParameterSet::new();
        ps.insert_dense("w", Tag::Frozen, Tensor::zeros(&[2, 2])).unwrap();
        assert!(ps.replace("w", ParamValue::Dense(Tensor::zeros(&[4]))).is_err());
        ps.replace("w", ParamValue::Dense(Tensor::filled(&[2, 2], 1.0))).unwrap();
        assert_eq!(ps.get("w").unwrap().tag(), Tag::Frozen);
    }
}
