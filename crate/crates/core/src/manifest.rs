//! Dataset manifest: which dumps make up one (backbone, dataset) pair.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingSet;
use crate::error::{invalid, Result};
use crate::reduce::{pool_spatial, pool_tokens, SpatialTensor};

/// How a dump's rows map to probe inputs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Rows are already probe vectors.
    #[default]
    None,
    /// Rows are `H x W x C` maps; pool to 2x2 and flatten.
    Spatial,
    /// Rows are `T x D` token matrices without a class token.
    Tokens,
    /// Rows are `T x D` token matrices whose first token is the class token.
    TokensCls,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub index: u32,
    pub name: String,
    /// `[H, W, C]`, `[T, D]` or `[dim]`.
    pub raw_shape: Vec<usize>,
    pub train_dump: String,
    pub test_dump: String,
    #[serde(default, skip_serializing_if = "is_default_reduction")]
    pub reduce: Reduction,
}

fn is_default_reduction(r: &Reduction) -> bool {
    *r == Reduction::None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub backbone_id: String,
    pub dataset_id: String,
    pub n_classes: u32,
    pub total_layers: u32,
    pub layers: Vec<LayerEntry>,
}

impl Manifest {
    /// Accuracy of uniform guessing.
    pub fn chance(&self) -> f64 {
        1.0 / f64::from(self.n_classes.max(1))
    }

    /// Structural problems that need no file access.
    pub fn structural_problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.n_classes == 0 {
            out.push(String::from("n_classes must be positive"));
        }
        if self.total_layers == 0 {
            out.push(String::from("total_layers must be positive"));
        }
        if self.layers.is_empty() {
            out.push(String::from("no layers listed"));
        }
        let mut prev = 0u32;
        for l in &self.layers {
            if l.index <= prev {
                out.push(format!("layer index {} not strictly increasing after {prev}", l.index));
            }
            if l.index > self.total_layers {
                out.push(format!("layer index {} exceeds total_layers {}", l.index, self.total_layers));
            }
            if l.raw_shape.is_empty() || l.raw_shape.contains(&0) {
                out.push(format!("layer {}: raw_shape must be non-empty with positive dims", l.index));
            }
            if let Err(e) = l.probe_dim() {
                out.push(format!("layer {}: {e}", l.index));
            }
            prev = l.index;
        }
        out
    }

    /// Layers a probe curve covers: everything below the output layer.
    pub fn probe_layers(&self) -> impl Iterator<Item = &LayerEntry> {
        self.layers.iter().filter(move |l| l.index < self.total_layers)
    }
}

impl LayerEntry {
    /// Width of a raw dump row.
    pub fn raw_dim(&self) -> usize {
        self.raw_shape.iter().product()
    }

    /// Width of the vector the probe sees after reduction.
    pub fn probe_dim(&self) -> Result<usize> {
        match (self.reduce, self.raw_shape.as_slice()) {
            (Reduction::None, _) => Ok(self.raw_dim()),
            (Reduction::Spatial, [_, _, c]) => Ok(4 * c),
            (Reduction::Tokens | Reduction::TokensCls, [_, d]) => Ok(*d),
            (r, s) => Err(invalid("raw_shape", format!("shape {s:?} incompatible with reduction {r:?}"))),
        }
    }

    /// Applies this layer's reduction to a raw dump, naming the result.
    pub fn prepare(&self, mut set: EmbeddingSet) -> Result<EmbeddingSet> {
        set.layer_name.clone_from(&self.name);
        if set.layer_index != self.index {
            return Err(invalid(
                "layer_index",
                format!("dump declares layer {} but manifest entry is {}", set.layer_index, self.index),
            ));
        }
        if self.reduce == Reduction::None {
            return Ok(set);
        }
        if set.dim != self.raw_dim() {
            return Err(invalid(
                "dim",
                format!("dim mismatch: raw shape {:?} needs {} values, dump has {}", self.raw_shape, self.raw_dim(), set.dim),
            ));
        }
        let out_dim = self.probe_dim()?;
        let mut features = Vec::with_capacity(set.n_samples() * out_dim);
        for row in set.rows() {
            let pooled = match (self.reduce, self.raw_shape.as_slice()) {
                (Reduction::Spatial, &[h, w, c]) => pool_spatial(&SpatialTensor::new(h, w, c, row.to_vec())?)?,
                (Reduction::Tokens, &[t, d]) => pool_tokens(t, d, row, false)?,
                (Reduction::TokensCls, &[t, d]) => pool_tokens(t, d, row, true)?,
                _ => unreachable!("probe_dim validated the shape"),
            };
            features.extend_from_slice(&pooled);
        }
        set.features = features;
        set.dim = out_dim;
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::Split;
    use alloc::vec;

    fn entry(index: u32, shape: Vec<usize>, reduce: Reduction) -> LayerEntry {
        LayerEntry {
            index,
            name: format!("conv{index}"),
            raw_shape: shape,
            train_dump: String::from("a.tkd"),
            test_dump: String::from("b.tkd"),
            reduce,
        }
    }

    #[test]
    fn ordering_and_bounds_checked() {
        let m = Manifest {
            backbone_id: "b".into(),
            dataset_id: "d".into(),
            n_classes: 10,
            total_layers: 3,
            layers: vec![entry(2, vec![4], Reduction::None), entry(2, vec![4], Reduction::None), entry(4, vec![4], Reduction::None)],
        };
        let problems = m.structural_problems();
        assert_eq!(problems.len(), 2, "{problems:?}");
        assert!((m.chance() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn probe_layers_skip_output_layer() {
        let m = Manifest {
            backbone_id: "b".into(),
            dataset_id: "d".into(),
            n_classes: 2,
            total_layers: 3,
            layers: (1..=3).map(|i| entry(i, vec![2], Reduction::None)).collect(),
        };
        assert_eq!(m.probe_layers().map(|l| l.index).collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn spatial_reduction_applied_per_row() {
        let e = entry(1, vec![2, 2, 1], Reduction::Spatial);
        assert_eq!(e.probe_dim().unwrap(), 4);
        let raw = EmbeddingSet::new(1, "", 2, Split::Train, 4, vec![1.0, 2.0, 3.0, 4.0, 0.0, 0.0, 0.0, 8.0], vec![0, 1]).unwrap();
        let out = e.prepare(raw).unwrap();
        assert_eq!(out.layer_name, "conv1");
        assert_eq!(out.features, vec![1.0, 2.0, 3.0, 4.0, 0.0, 0.0, 0.0, 8.0]);

        let e = entry(1, vec![3, 2], Reduction::TokensCls);
        let raw = EmbeddingSet::new(1, "", 2, Split::Train, 6, vec![9.0, 9.0, 2.0, 2.0, 4.0, 4.0], vec![0]).unwrap();
        assert_eq!(e.prepare(raw).unwrap().features, vec![3.0, 3.0]);
    }

    #[test]
    fn incompatible_shape_reported() {
        let e = entry(1, vec![4, 4], Reduction::Spatial);
        assert!(e.probe_dim().is_err());
    }
}
