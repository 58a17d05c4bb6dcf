//! The probe grid: one job per (manifest, layer), run on a rayon pool.

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tunnelkit_core::manifest::Manifest;
use tunnelkit_core::probe::{train_probe, ProbeConfig, ProbeCurve, INIT_SCHEME};
use tunnelkit_core::rng::hash_str;

use crate::error::{Result, TkError};
use crate::validate::load_layer;

#[derive(Debug, Clone)]
pub struct GridInput {
    pub manifest: Manifest,
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub backbone_id: String,
    pub dataset_id: String,
    pub layer: u32,
    pub layer_name: String,
    pub best_top1: Option<f64>,
    pub best_epoch: Option<usize>,
    pub epochs_run: usize,
    pub seed: u64,
    pub init: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveResult {
    pub backbone_id: String,
    pub dataset_id: String,
    pub chance: f64,
    pub probes: Vec<ProbeRecord>,
}

impl CurveResult {
    /// The probe curve, or `None` if any layer failed.
    pub fn curve(&self) -> Option<ProbeCurve> {
        let acc: Option<Vec<f64>> = self.probes.iter().map(|p| p.best_top1).collect();
        acc.filter(|a| !a.is_empty()).map(|a| ProbeCurve::new(&self.backbone_id, &self.dataset_id, self.chance, a))
    }

    pub fn failures(&self) -> Vec<String> {
        self.probes.iter().filter_map(|p| p.error.as_ref().map(|e| format!("layer {}: {e}", p.layer))).collect()
    }
}

/// Key of the shuffling stream for one (backbone, dataset) pair.
pub fn stream_key(backbone_id: &str, dataset_id: &str) -> u64 {
    hash_str(&format!("{backbone_id}/{dataset_id}"))
}

fn run_job(input: &GridInput, layer: usize, cfg: &ProbeConfig) -> ProbeRecord {
    let m = &input.manifest;
    let entry = &m.layers[layer];
    let mut record = ProbeRecord {
        backbone_id: m.backbone_id.clone(),
        dataset_id: m.dataset_id.clone(),
        layer: entry.index,
        layer_name: entry.name.clone(),
        best_top1: None,
        best_epoch: None,
        epochs_run: 0,
        seed: cfg.seed,
        init: INIT_SCHEME.to_string(),
        error: None,
    };
    let cfg = ProbeConfig { stream_key: stream_key(&m.backbone_id, &m.dataset_id), ..cfg.clone() };
    let outcome = load_layer(m, entry, &input.base_dir)
        .and_then(|(train, test)| train_probe(&train, &test, &cfg).map_err(|e| TkError::data("probe", e)));
    match outcome {
        Ok(o) => {
            record.best_top1 = Some(o.best_top1);
            record.best_epoch = Some(o.best_epoch);
            record.epochs_run = o.epochs_run;
        }
        Err(e) => record.error = Some(e.to_string()),
    }
    record
}

/// Trains a probe for every probe layer of every manifest. `threads == 0`
/// uses rayon's default width. Results do not depend on the thread count.
pub fn probe_grid(inputs: &[GridInput], cfg: &ProbeConfig, threads: usize) -> Result<Vec<CurveResult>> {
    cfg.validate().map_err(|e| TkError::data("probe config", e))?;
    let jobs: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, inp)| {
            let total = inp.manifest.total_layers;
            inp.manifest.layers.iter().enumerate().filter(move |(_, l)| l.index < total).map(move |(j, _)| (i, j))
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| TkError::Invalid(format!("thread pool: {e}")))?;
    let records: Vec<(usize, ProbeRecord)> =
        pool.install(|| jobs.par_iter().map(|&(i, j)| (i, run_job(&inputs[i], j, cfg))).collect());
    let mut out: Vec<CurveResult> = inputs
        .iter()
        .map(|inp| CurveResult {
            backbone_id: inp.manifest.backbone_id.clone(),
            dataset_id: inp.manifest.dataset_id.clone(),
            chance: inp.manifest.chance(),
            probes: Vec::new(),
        })
        .collect();
    for (i, r) in records {
        out[i].probes.push(r);
    }
    Ok(out)
}
