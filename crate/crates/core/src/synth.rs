//! Synthetic layered embeddings with an injectable tunnel.
//!
//! Every sample carries an ID label and an independent OOD label. Feature
//! coordinates are split into an ID block (class means of the ID label), an
//! OOD block (class means of the OOD label) and a nuisance block; all blocks
//! carry the same per-sample isotropic noise at every layer. The class signal
//! is scaled by `0.3 + 0.7 l / n_layers`, so separability grows with depth.
//! From layer `K` on, a growing fraction of the OOD and nuisance coordinates
//! is zeroed (reaching `compression_strength` at the last layer) before a
//! fixed per-layer random rotation re-embeds the vector, so the rank shrinks
//! and the OOD labels become progressively harder to recover while the ID
//! labels are untouched.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingSet, Split};
use crate::error::{invalid, Result};
use crate::rng;

/// Norm of every class mean, in units of `noise_scale = 1`.
const CLASS_MEAN_NORM: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_layers: u32,
    pub tunnel_start: Option<u32>,
    /// Samples per split.
    pub n_samples: usize,
    pub n_classes: u32,
    pub dim: usize,
    pub compression_strength: f64,
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_layers: 10,
            tunnel_start: Some(8),
            n_samples: 1000,
            n_classes: 4,
            dim: 32,
            compression_strength: 0.9,
            noise_scale: 1.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers < 2 {
            return Err(invalid("n_layers", "n_layers must be >= 2"));
        }
        if let Some(k) = self.tunnel_start {
            if k < 1 || k > self.n_layers {
                return Err(invalid("tunnel_start", format!("tunnel_start {k} outside 1..={}", self.n_layers)));
            }
        }
        if self.n_samples == 0 {
            return Err(invalid("n_samples", "n_samples must be > 0"));
        }
        if self.n_classes < 2 {
            return Err(invalid("n_classes", "n_classes must be >= 2"));
        }
        if self.dim < 2 {
            return Err(invalid("dim", "dim must be >= 2"));
        }
        if !(0.0..=1.0).contains(&self.compression_strength) {
            return Err(invalid("compression_strength", "compression_strength must be in [0, 1]"));
        }
        if !(self.noise_scale > 0.0 && self.noise_scale.is_finite()) {
            return Err(invalid("noise_scale", "noise_scale must be positive"));
        }
        Ok(())
    }

    /// Fraction of OOD and nuisance coordinates removed at layer `l`.
    pub fn removed_fraction(&self, l: u32) -> f64 {
        match self.tunnel_start {
            Some(k) if l >= k => self.compression_strength * f64::from(l - k + 1) / f64::from(self.n_layers - k + 1),
            _ => 0.0,
        }
    }

    fn blocks(&self) -> (usize, usize) {
        let d_id = self.dim.div_ceil(4);
        let d_ood = self.dim.div_ceil(4).min(self.dim - d_id);
        (d_id, d_ood)
    }
}

fn signal_scale(l: u32, n_layers: u32) -> f64 {
    0.3 + 0.7 * f64::from(l) / f64::from(n_layers)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitPair {
    pub train: EmbeddingSet,
    pub test: EmbeddingSet,
}

/// Per-layer train/test sets for both labelings; entry `l - 1` is layer `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthFixture {
    pub config: SynthConfig,
    pub id: Vec<SplitPair>,
    pub ood: Vec<SplitPair>,
}

fn gaussian_vec(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(r)).collect()
}

fn class_means(r: &mut ChaCha8Rng, classes: u32, width: usize) -> Vec<Vec<f64>> {
    (0..classes)
        .map(|_| {
            let v = gaussian_vec(r, width);
            let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>()).max(1e-12);
            v.into_iter().map(|x| x * CLASS_MEAN_NORM / norm).collect()
        })
        .collect()
}

/// Random orthogonal `n x n` matrix (row-major) by Gram-Schmidt on Gaussian rows.
fn random_orthogonal(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(n);
    while q.len() < n {
        let mut v = gaussian_vec(r, n);
        for _ in 0..2 {
            for b in &q {
                let d: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
                v.iter_mut().zip(b).for_each(|(a, c)| *a -= d * c);
            }
        }
        let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
        if norm > 1e-8 {
            q.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    q.concat()
}

struct Samples {
    id_labels: Vec<u32>,
    ood_labels: Vec<u32>,
    noise: Vec<Vec<f64>>,
}

fn draw_samples(cfg: &SynthConfig, split: Split) -> Samples {
    let mut r = rng::stream(cfg.seed, &[rng::hash_str("synth-samples"), split as u64]);
    let n = cfg.n_samples;
    let id_labels = (0..n).map(|_| r.random_range(0..cfg.n_classes)).collect();
    let ood_labels = (0..n).map(|_| r.random_range(0..cfg.n_classes)).collect();
    let noise = (0..n).map(|_| gaussian_vec(&mut r, cfg.dim).into_iter().map(|x| x * cfg.noise_scale).collect()).collect();
    Samples { id_labels, ood_labels, noise }
}

pub fn synth_tunnel_fixture(cfg: &SynthConfig) -> Result<SynthFixture> {
    cfg.validate()?;
    let (d_id, d_ood) = cfg.blocks();
    let d_rest = cfg.dim - d_id - d_ood;
    let mut r = rng::stream(cfg.seed, &[rng::hash_str("synth-structure")]);
    let id_means = class_means(&mut r, cfg.n_classes, d_id);
    let ood_means = class_means(&mut r, cfg.n_classes, d_ood);
    let rotations: Vec<Vec<f64>> = (0..cfg.n_layers).map(|_| random_orthogonal(&mut r, cfg.dim)).collect();
    let splits = [(Split::Train, draw_samples(cfg, Split::Train)), (Split::Test, draw_samples(cfg, Split::Test))];

    let mut id = Vec::with_capacity(cfg.n_layers as usize);
    let mut ood = Vec::with_capacity(cfg.n_layers as usize);
    for l in 1..=cfg.n_layers {
        let s = signal_scale(l, cfg.n_layers);
        let f = cfg.removed_fraction(l);
        let drop_ood = libm::round(f * d_ood as f64) as usize;
        let drop_rest = libm::round(f * d_rest as f64) as usize;
        let q = &rotations[(l - 1) as usize];
        let mut pairs: Vec<(EmbeddingSet, EmbeddingSet)> = Vec::with_capacity(2);
        for (split, smp) in &splits {
            let mut features = Vec::with_capacity(cfg.n_samples * cfg.dim);
            let mut h = vec![0.0f64; cfg.dim];
            for i in 0..cfg.n_samples {
                let e = &smp.noise[i];
                let mu = &id_means[smp.id_labels[i] as usize];
                let nu = &ood_means[smp.ood_labels[i] as usize];
                for c in 0..cfg.dim {
                    h[c] = if c < d_id {
                        s * mu[c] + e[c]
                    } else if c < d_id + d_ood {
                        if c - d_id < drop_ood { 0.0 } else { s * nu[c - d_id] + e[c] }
                    } else if c - d_id - d_ood < drop_rest {
                        0.0
                    } else {
                        e[c]
                    };
                }
                for row in q.chunks_exact(cfg.dim) {
                    features.push(row.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>() as f32);
                }
            }
            let name = format!("layer{l}");
            let id_set = EmbeddingSet::new(l, &name, cfg.n_classes, *split, cfg.dim, features.clone(), smp.id_labels.clone())?;
            let ood_set = EmbeddingSet::new(l, &name, cfg.n_classes, *split, cfg.dim, features, smp.ood_labels.clone())?;
            pairs.push((id_set, ood_set));
        }
        let (test_pair, train_pair) = (pairs.pop().expect("test split"), pairs.pop().expect("train split"));
        id.push(SplitPair { train: train_pair.0, test: test_pair.0 });
        ood.push(SplitPair { train: train_pair.1, test: test_pair.1 });
    }
    Ok(SynthFixture { config: *cfg, id, ood })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rank::{rank_curve, DEFAULT_MAX_SAMPLES};

    fn small(k: Option<u32>) -> SynthConfig {
        SynthConfig { n_samples: 200, tunnel_start: k, ..SynthConfig::default() }
    }

    #[test]
    fn shapes_and_labels() {
        let f = synth_tunnel_fixture(&small(Some(8))).unwrap();
        assert_eq!((f.id.len(), f.ood.len()), (10, 10));
        for (l, p) in f.id.iter().enumerate() {
            assert_eq!(p.train.layer_index as usize, l + 1);
            assert_eq!(p.train.n_samples(), 200);
            assert_eq!(p.test.split, Split::Test);
            assert_eq!(p.train.features, f.ood[l].train.features);
        }
        assert_ne!(f.id[0].train.labels, f.ood[0].train.labels);
    }

    #[test]
    fn deterministic_bytes() {
        let a = synth_tunnel_fixture(&small(Some(8))).unwrap();
        let b = synth_tunnel_fixture(&small(Some(8))).unwrap();
        for (x, y) in a.ood.iter().zip(&b.ood) {
            assert_eq!(x.train.encode().unwrap(), y.train.encode().unwrap());
            assert_eq!(x.test.encode().unwrap(), y.test.encode().unwrap());
        }
    }

    #[test]
    fn invalid_tunnel_start() {
        assert!(synth_tunnel_fixture(&SynthConfig { tunnel_start: Some(0), ..small(None) }).is_err());
        assert!(synth_tunnel_fixture(&SynthConfig { tunnel_start: Some(11), ..small(None) }).is_err());
        assert!(synth_tunnel_fixture(&SynthConfig { compression_strength: 1.5, ..small(None) }).is_err());
    }

    #[test]
    fn rank_shrinks_inside_tunnel_only() {
        let f = synth_tunnel_fixture(&small(Some(8))).unwrap();
        let sets: Vec<EmbeddingSet> = f.id.iter().map(|p| p.train.clone()).collect();
        let ranks = rank_curve(&sets, DEFAULT_MAX_SAMPLES, 0).unwrap().ranks();
        assert!(ranks[..7].iter().all(|&r| r == 32), "{ranks:?}");
        assert!(ranks[7..].windows(2).all(|w| w[1] <= w[0]), "{ranks:?}");
        assert!(ranks[9] < ranks[6]);

        let f = synth_tunnel_fixture(&small(None)).unwrap();
        let sets: Vec<EmbeddingSet> = f.id.iter().map(|p| p.train.clone()).collect();
        let ranks = rank_curve(&sets, DEFAULT_MAX_SAMPLES, 0).unwrap().ranks();
        assert!(2 * ranks[9] >= ranks[0]);
    }

    #[test]
    fn removed_fraction_schedule() {
        let c = SynthConfig::default();
        assert_eq!(c.removed_fraction(7), 0.0);
        assert!((c.removed_fraction(8) - 0.3).abs() < 1e-12);
        assert!((c.removed_fraction(10) - 0.9).abs() < 1e-12);
        assert_eq!(SynthConfig { tunnel_start: None, ..c }.removed_fraction(10), 0.0);
    }
}
