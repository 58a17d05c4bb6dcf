//! Manifest validation against the dumps on disk.

use std::path::Path;

use serde::{Deserialize, Serialize};
use tunnelkit_core::embedding::{EmbeddingSet, Split};
use tunnelkit_core::manifest::{LayerEntry, Manifest};

use crate::error::{Result, TkError};
use crate::io::{read_dump, resolve};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStatus {
    pub index: u32,
    pub name: String,
    pub ok: bool,
    pub messages: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub backbone_id: String,
    pub dataset_id: String,
    pub passed: bool,
    /// Manifest-level problems.
    pub problems: Vec<String>,
    pub layers: Vec<LayerStatus>,
}

impl ValidationReport {
    /// Every failure message, prefixed by its layer.
    pub fn failures(&self) -> Vec<String> {
        let mut out = self.problems.clone();
        for l in &self.layers {
            out.extend(l.messages.iter().map(|m| format!("layer {}: {m}", l.index)));
        }
        out
    }
}

fn check_split(m: &Manifest, entry: &LayerEntry, set: &EmbeddingSet, split: Split, msgs: &mut Vec<String>) {
    let tag = split.as_str();
    if set.split != split {
        msgs.push(format!("{tag} dump is flagged as {}", set.split.as_str()));
    }
    if set.layer_index != entry.index {
        msgs.push(format!("{tag} dump declares layer {}", set.layer_index));
    }
    if set.n_classes != m.n_classes {
        msgs.push(format!("{tag} dump declares {} classes, manifest {}", set.n_classes, m.n_classes));
    }
    if let Some(&bad) = set.labels.iter().find(|&&l| l >= m.n_classes) {
        msgs.push(format!("{tag}: label out of range: {bad} >= {}", m.n_classes));
    }
    if set.dim != entry.raw_dim() {
        msgs.push(format!("dim mismatch: raw_shape {:?} has {} values, {tag} dump has {}", entry.raw_shape, entry.raw_dim(), set.dim));
    }
}

/// Loads every dump the manifest names and reports per-layer problems.
pub fn validate_manifest(m: &Manifest, base_dir: &Path) -> ValidationReport {
    let problems = m.structural_problems();
    let mut layers = Vec::with_capacity(m.layers.len());
    for entry in &m.layers {
        let mut messages = Vec::new();
        let mut loaded = Vec::new();
        for (split, rel) in [(Split::Train, &entry.train_dump), (Split::Test, &entry.test_dump)] {
            match read_dump(&resolve(base_dir, rel)) {
                Ok(set) => {
                    check_split(m, entry, &set, split, &mut messages);
                    loaded.push(set);
                }
                Err(e) => messages.push(format!("{}: {e}", split.as_str())),
            }
        }
        if let [train, test] = loaded.as_slice() {
            if train.dim != test.dim {
                messages.push(format!("dim mismatch: train dim {}, test dim {}", train.dim, test.dim));
            }
        }
        layers.push(LayerStatus { index: entry.index, name: entry.name.clone(), ok: messages.is_empty(), messages });
    }
    let passed = problems.is_empty() && layers.iter().all(|l| l.ok);
    ValidationReport { backbone_id: m.backbone_id.clone(), dataset_id: m.dataset_id.clone(), passed, problems, layers }
}

/// Train and test sets of one layer, reduced to probe inputs.
pub fn load_layer(m: &Manifest, entry: &LayerEntry, base_dir: &Path) -> Result<(EmbeddingSet, EmbeddingSet)> {
    let load = |rel: &str| -> Result<EmbeddingSet> {
        let path = resolve(base_dir, rel);
        let set = read_dump(&path)?;
        if set.n_classes != m.n_classes {
            return Err(TkError::Invalid(format!(
                "{}: dump declares {} classes, manifest {}",
                path.display(),
                set.n_classes,
                m.n_classes
            )));
        }
        entry.prepare(set).map_err(|e| TkError::data(path.display().to_string(), e))
    };
    Ok((load(&entry.train_dump)?, load(&entry.test_dump)?))
}
