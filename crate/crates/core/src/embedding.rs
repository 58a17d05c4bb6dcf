//! Per-layer embedding sets and the `TKD1` binary dump codec.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "TKD1" | u32 layer_index | u32 n_samples | u32 dim | u32 n_classes | u8 split
//!        | n_samples*dim f32 (row-major) | n_samples u32 labels
//! ```
//!
//! The layer name is not part of the dump; it lives in the manifest.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const MAGIC: &[u8; 4] = b"TKD1";
pub const HEADER_LEN: usize = 4 + 4 * 4 + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    fn flag(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Test => 1,
        }
    }

    fn from_flag(flag: u8) -> Result<Self> {
        match flag {
            0 => Ok(Split::Train),
            1 => Ok(Split::Test),
            other => Err(invalid("split", format!("unknown split flag {other}"))),
        }
    }
}

/// Frozen embeddings of one layer for one dataset split.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    /// 1-based layer position.
    pub layer_index: u32,
    pub layer_name: String,
    pub n_classes: u32,
    pub split: Split,
    pub dim: usize,
    /// Row-major `n_samples x dim`.
    pub features: Vec<f32>,
    pub labels: Vec<u32>,
}

impl EmbeddingSet {
    /// Builds a set and checks every invariant.
    pub fn new(
        layer_index: u32,
        layer_name: impl Into<String>,
        n_classes: u32,
        split: Split,
        dim: usize,
        features: Vec<f32>,
        labels: Vec<u32>,
    ) -> Result<Self> {
        let set = Self {
            layer_index,
            layer_name: layer_name.into(),
            n_classes,
            split,
            dim,
            features,
            labels,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.features.chunks_exact(self.dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_index == 0 {
            return Err(invalid("layer_index", "layer_index must be >= 1"));
        }
        if self.n_classes == 0 {
            return Err(invalid("n_classes", "n_classes must be > 0"));
        }
        if self.labels.is_empty() {
            return Err(invalid("n_samples", "n_samples must be > 0"));
        }
        if self.dim == 0 {
            return Err(invalid("dim", "dim must be > 0"));
        }
        let expected = self.labels.len() * self.dim;
        if self.features.len() != expected {
            return Err(invalid(
                "features",
                format!(
                    "features row count does not match labels: {} values for {} samples of dim {}",
                    self.features.len(),
                    self.labels.len(),
                    self.dim
                ),
            ));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.n_classes) {
            return Err(invalid(
                "labels",
                format!("label out of range: {bad} >= n_classes {}", self.n_classes),
            ));
        }
        if let Some(pos) = self.features.iter().position(|v| !v.is_finite()) {
            return Err(invalid(
                "features",
                format!("non-finite feature value at sample {}", pos / self.dim),
            ));
        }
        Ok(())
    }

    /// Serializes to the `TKD1` layout. Fails if the set violates an invariant.
    pub fn encode(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let n = self.n_samples();
        let to_u32 = |field: &'static str, v: usize| {
            u32::try_from(v).map_err(|_| invalid(field, format!("{field} exceeds u32")))
        };
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * (self.features.len() + n));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.layer_index.to_le_bytes());
        out.extend_from_slice(&to_u32("n_samples", n)?.to_le_bytes());
        out.extend_from_slice(&to_u32("dim", self.dim)?.to_le_bytes());
        out.extend_from_slice(&self.n_classes.to_le_bytes());
        out.push(self.split.flag());
        for v in &self.features {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for l in &self.labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
        Ok(out)
    }

    /// Parses a `TKD1` byte stream. The returned set has an empty layer name.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..4] != MAGIC {
            return Err(Error::BadMagic);
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncated { expected: HEADER_LEN, found: bytes.len() });
        }
        let word = |i: usize| {
            let at = 4 + 4 * i;
            u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
        };
        let layer_index = word(0);
        let n = word(1) as usize;
        let dim = word(2) as usize;
        let n_classes = word(3);
        let split = Split::from_flag(bytes[HEADER_LEN - 1])?;

        let n_values = n
            .checked_mul(dim)
            .ok_or_else(|| invalid("dim", "n_samples * dim overflows"))?;
        let expected = n_values
            .checked_add(n)
            .and_then(|w| w.checked_mul(4))
            .and_then(|b| b.checked_add(HEADER_LEN))
            .ok_or_else(|| invalid("n_samples", "payload size overflows"))?;
        if bytes.len() < expected {
            return Err(Error::Truncated { expected, found: bytes.len() });
        }
        if bytes.len() > expected {
            return Err(invalid(
                "payload",
                format!("trailing bytes: expected {expected}, found {}", bytes.len()),
            ));
        }

        let payload = &bytes[HEADER_LEN..];
        let features = payload[..4 * n_values]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let labels = payload[4 * n_values..]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(layer_index, String::new(), n_classes, split, dim, features, labels)
    }
}
