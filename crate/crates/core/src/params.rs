use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};

use crate::error::{invalid, Result};
use crate::tensor::Tensor;

/// Ordered map from parameter name to tensor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TensorTable {
    map: BTreeMap<String, Tensor>,
}

impl TensorTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Option<Tensor> {
        self.map.insert(name.into(), t)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.map.get(name).ok_or_else(|| invalid!("missing tensor `{}`", name))
    }

    pub fn get_entry(&self, name: &str) -> Result<(&str, &Tensor)> {
        self.map
            .get_key_value(name)
            .map(|(k, v)| (k.as_str(), v))
            .ok_or_else(|| invalid!("missing tensor `{}`", name))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.map.get_mut(name).ok_or_else(|| invalid!("missing tensor `{}`", name))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.map.remove(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.map.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(|k| k.as_str())
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.map.values().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.map.values().all(Tensor::is_finite)
    }

    pub fn zeros_like(&self) -> Self {
        Self { map: self.map.iter().map(|(k, v)| (k.clone(), Tensor::zeros(v.shape()))).collect() }
    }

    /// FNV-1a over names, shapes and exact value bits.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for b in bytes {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for (k, v) in &self.map {
            eat(k.as_bytes());
            for d in v.shape() {
                eat(&(*d as u64).to_le_bytes());
            }
            for x in v.data() {
                eat(&x.to_bits().to_le_bytes());
            }
        }
        h
    }

    /// Copies every entry of `other` in under `prefix`.
    pub fn extend_prefixed(&mut self, prefix: &str, other: &TensorTable) {
        for (k, v) in other.iter() {
            let mut name = prefix.to_string();
            name.push_str(k);
            self.map.insert(name, v.clone());
        }
    }

    /// Entries whose names start with `prefix`, with the prefix stripped.
    pub fn strip_prefix(&self, prefix: &str) -> Self {
        let map = self
            .map
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), v.clone())))
            .collect();
        Self { map }
    }
}

impl FromIterator<(String, Tensor)> for TensorTable {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        Self { map: iter.into_iter().collect() }
    }
}
