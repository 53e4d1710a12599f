use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Partition a parameter belongs to. Optimizer, inheritance and extraction
/// all key off this tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParamTag {
    Dense,
    Rre { domain: usize, layer: usize, expert: usize },
    Embedding { slot: usize },
}

impl ParamTag {
    pub fn is_rre(&self) -> bool {
        matches!(self, ParamTag::Rre { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub tensor: Tensor,
    pub tag: ParamTag,
}

/// Named tensors in insertion order. Iteration order is stable and drives
/// every sweep over parameters, which keeps training bit-reproducible.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamTree {
    entries: IndexMap<String, Param>,
}

impl ParamTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor, tag: ParamTag) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::TreeMismatch(format!("duplicate parameter name {name}")));
        }
        self.entries.insert(name, Param { tensor, tag });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.entries.get_mut(name)
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .map(|p| &p.tensor)
            .ok_or_else(|| Error::TreeMismatch(format!("missing parameter {name}")))
    }

    pub fn tensor_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(name)
            .map(|p| &mut p.tensor)
            .ok_or_else(|| Error::TreeMismatch(format!("missing parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn num_elements(&self) -> usize {
        self.entries.values().map(|p| p.tensor.numel()).sum()
    }

    /// Same names, shapes and tags, all values zero.
    pub fn zeros_like(&self) -> ParamTree {
        let entries = self
            .entries
            .iter()
            .map(|(k, p)| {
                (
                    k.clone(),
                    Param {
                        tensor: Tensor::zeros(p.tensor.shape()),
                        tag: p.tag,
                    },
                )
            })
            .collect();
        ParamTree { entries }
    }

    /// Checks that `other` has the same names, order, shapes and tags.
    pub fn check_aligned(&self, other: &ParamTree) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::TreeMismatch(format!(
                "{} vs {} entries",
                self.len(),
                other.len()
            )));
        }
        for ((ka, a), (kb, b)) in self.entries.iter().zip(&other.entries) {
            if ka != kb || a.tensor.shape() != b.tensor.shape() || a.tag != b.tag {
                return Err(Error::TreeMismatch(format!("{ka} vs {kb}")));
            }
        }
        Ok(())
    }

    /// `self += factor * other`, trees must be aligned.
    pub fn add_scaled(&mut self, other: &ParamTree, factor: f64) -> Result<()> {
        self.check_aligned(other)?;
        for (a, b) in self.entries.values_mut().zip(other.entries.values()) {
            for (x, y) in a.tensor.data_mut().iter_mut().zip(b.tensor.data()) {
                *x += factor * y;
            }
        }
        Ok(())
    }

    /// L2 norm over every tensor whose tag satisfies `filter`.
    pub fn norm_where(&self, filter: impl Fn(&ParamTag) -> bool) -> f64 {
        self.entries
            .values()
            .filter(|p| filter(&p.tag))
            .map(|p| p.tensor.sum_sq())
            .sum::<f64>()
            .sqrt()
    }

    /// Largest absolute element-wise difference over shared names.
    pub fn max_abs_diff(&self, other: &ParamTree) -> f64 {
        self.entries
            .iter()
            .filter_map(|(k, p)| other.get(k).map(|q| p.tensor.max_abs_diff(&q.tensor)))
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn insertion_order_and_uniqueness() {
        let mut t = ParamTree::new();
        t.insert("b", Tensor::zeros(&[2]), ParamTag::Dense).unwrap();
        t.insert("a", Tensor::zeros(&[3]), ParamTag::Embedding { slot: 0 })
            .unwrap();
        assert!(t.insert("a", Tensor::zeros(&[1]), ParamTag::Dense).is_err());
        assert_eq!(t.names().collect::<Vec<_>>(), vec!["b", "a"]);
        assert_eq!(t.num_elements(), 5);
    }

    #[test]
    fn alignment_and_norms() {
        let mut t = ParamTree::new();
        t.insert("w", Tensor::filled(&[4], 1.0), ParamTag::Dense).unwrap();
        let rre = ParamTag::Rre {
            domain: 0,
            layer: 0,
            expert: 1,
        };
        t.insert("x", Tensor::filled(&[1], 2.0), rre).unwrap();
        let mut g = t.zeros_like();
        g.add_scaled(&t, 0.5).unwrap();
        assert_eq!(g.tensor("w").unwrap().data(), &[0.5; 4]);
        assert_eq!(t.norm_where(|tag| !tag.is_rre()), 2.0);
        assert_eq!(t.norm_where(ParamTag::is_rre), 2.0);
        let mut other = ParamTree::new();
        other.insert("w", Tensor::zeros(&[4]), ParamTag::Dense).unwrap();
        assert!(t.check_aligned(&other).is_err());
    }
}
