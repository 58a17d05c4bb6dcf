//! The report pipeline: validated manifests in, an indexed bundle of tables,
//! JSON and plots out.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tunnelkit_core::embedding::EmbeddingSet;
use tunnelkit_core::gbrt::GbrtParams;
use tunnelkit_core::manifest::{LayerEntry, Manifest};
use tunnelkit_core::metrics::{aggregate_strength, detect_tunnel, tunnel_report, Strength, TunnelReport};
use tunnelkit_core::probe::{Profile, ProbeConfig, ProbeCurve};
use tunnelkit_core::rank::{rank_curve, RankPoint, DEFAULT_MAX_SAMPLES};
use tunnelkit_core::slope::ExperimentRecord;
use tunnelkit_core::synth::{synth_tunnel_fixture, SynthConfig};

use crate::error::{Result, TkError};
use crate::grid::{probe_grid, CurveResult, GridInput};
use crate::io::{csv_bytes, manifest_dir, read_dump, read_manifest, resolve, to_json_bytes, write_atomic, write_dump, write_manifest};
use crate::plot::{curve_plot_svg, shap_slope_svg, Band};
use crate::records::{read_records, slope_reports, slope_rows};
use crate::validate::validate_manifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Probe,
    Metrics,
    Rank,
    Shap,
    Plot,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Probe => "probe",
            Stage::Metrics => "metrics",
            Stage::Rank => "rank",
            Stage::Shap => "shap",
            Stage::Plot => "plot",
        }
    }

    fn needs_ood(self) -> bool {
        matches!(self, Stage::Probe | Stage::Metrics | Stage::Plot)
    }

    fn needs_manifest(self) -> bool {
        self != Stage::Shap
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    pub ood_manifests: Vec<PathBuf>,
    pub profile: Profile,
    pub seed: u64,
    pub out: PathBuf,
    pub stages: Vec<Stage>,
    pub band: Band,
    pub records: Option<PathBuf>,
    /// Probe grid width; 0 uses every core.
    pub threads: usize,
    pub max_samples: usize,
    /// Rank raw dump rows instead of probe inputs.
    pub rank_raw: bool,
    pub gbrt: GbrtParams,
}

impl RunConfig {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        Self {
            manifest: None,
            ood_manifests: Vec::new(),
            profile: Profile::Cnn,
            seed: 0,
            out: out.into(),
            stages: Vec::new(),
            band: Band::Std,
            records: None,
            threads: 0,
            max_samples: DEFAULT_MAX_SAMPLES,
            rank_raw: false,
            gbrt: GbrtParams::default(),
        }
    }

    /// Requested stages plus the ones they depend on, in execution order.
    pub fn expanded_stages(&self) -> Vec<Stage> {
        let mut s = self.stages.clone();
        if s.contains(&Stage::Plot) || s.contains(&Stage::Metrics) {
            s.push(Stage::Probe);
        }
        if s.contains(&Stage::Plot) {
            s.push(Stage::Metrics);
        }
        s.sort();
        s.dedup();
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageState {
    Ok,
    Partial,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStatus {
    pub stage: Stage,
    pub requested: bool,
    pub status: StageState,
    pub outputs: Vec<String>,
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean_retained: f64,
    pub strength: Strength,
    pub n_reports: usize,
    pub tunnel_starts: Vec<Option<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryConfig {
    pub manifest: Option<String>,
    pub ood_manifests: Vec<String>,
    pub records: Option<String>,
    pub profile: Profile,
    pub seed: u64,
    pub stages: Vec<Stage>,
    pub band: Band,
    pub max_samples: usize,
    pub rank_raw: bool,
    pub probe: ProbeConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub tool: String,
    pub version: String,
    pub config: SummaryConfig,
    pub stages: Vec<StageStatus>,
    pub aggregate: Option<Aggregate>,
    /// Every file of the bundle except this summary, relative to the output directory.
    pub outputs: Vec<String>,
}

pub const SUMMARY_FILE: &str = "summary.json";

fn display(p: &Path) -> String {
    p.display().to_string()
}

struct Bundle {
    dir: PathBuf,
    written: Vec<String>,
}

impl Bundle {
    fn put(&mut self, name: &str, bytes: &[u8], outputs: &mut Vec<String>) -> Result<()> {
        write_atomic(&self.dir.join(name), bytes)?;
        self.written.push(name.to_string());
        outputs.push(name.to_string());
        Ok(())
    }
}

fn status(stage: Stage, requested: bool) -> StageStatus {
    StageStatus { stage, requested, status: StageState::Ok, outputs: Vec::new(), errors: Vec::new() }
}

fn finish(st: &mut StageStatus) {
    st.status = match (st.outputs.is_empty(), st.errors.is_empty()) {
        (_, true) if !st.outputs.is_empty() => StageState::Ok,
        (false, false) => StageState::Partial,
        _ => StageState::Failed,
    };
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurvesFile {
    pub id: ProbeCurve,
    pub ood: Vec<ProbeCurve>,
}

#[derive(Serialize)]
struct CurveRow<'a> {
    layer: usize,
    dataset: &'a str,
    role: &'a str,
    accuracy: f64,
}

fn curve_rows<'a>(id: &'a ProbeCurve, ood: &'a [ProbeCurve]) -> Vec<CurveRow<'a>> {
    std::iter::once((id, "id"))
        .chain(ood.iter().map(|c| (c, "ood")))
        .flat_map(|(c, role)| {
            c.accuracies.iter().enumerate().map(move |(i, &a)| CurveRow { layer: i + 1, dataset: &c.dataset_id, role, accuracy: a })
        })
        .collect()
}

#[derive(Serialize)]
struct ReportsFile<'a> {
    reports: &'a [TunnelReport],
    aggregate: &'a Aggregate,
}

/// Tunnel reports of every OOD curve against the ID curve.
pub fn compute_reports(curves: &CurvesFile) -> (Vec<TunnelReport>, Vec<String>) {
    let mut reports = Vec::new();
    let mut errors = Vec::new();
    for ood in &curves.ood {
        match tunnel_report(&curves.id, ood) {
            Ok(r) => reports.push(r),
            Err(e) => errors.push(format!("{}: {e}", ood.dataset_id)),
        }
    }
    (reports, errors)
}

pub fn aggregate(reports: &[TunnelReport]) -> Option<Aggregate> {
    let (mean_retained, strength) = aggregate_strength(reports).ok()?;
    Some(Aggregate { mean_retained, strength, n_reports: reports.len(), tunnel_starts: reports.iter().map(|r| r.tunnel_start).collect() })
}

/// Start of the tunnel in the mean OOD curve, which is what the plot draws.
pub fn mean_tunnel_start(ood: &[ProbeCurve]) -> Option<usize> {
    let n = ood.first()?.len();
    let acc = (0..n).map(|l| ood.iter().map(|c| c.accuracies[l]).sum::<f64>() / ood.len() as f64).collect();
    detect_tunnel(&ProbeCurve::new("mean", "mean", 0.0, acc)).ok().flatten()
}

fn rank_sets(m: &Manifest, base: &Path, raw: bool) -> Result<Vec<EmbeddingSet>> {
    m.layers
        .iter()
        .map(|e: &LayerEntry| {
            let path = resolve(base, &e.train_dump);
            let set = read_dump(&path)?;
            if raw {
                Ok(set)
            } else {
                e.prepare(set).map_err(|err| TkError::data(display(&path), err))
            }
        })
        .collect()
}

fn load_manifest(path: &Path) -> Result<(Manifest, PathBuf)> {
    let m = read_manifest(path)?;
    let base = manifest_dir(path);
    let report = validate_manifest(&m, &base);
    if !report.passed {
        return Err(TkError::Invalid(format!("{}: invalid manifest: {}", display(path), report.failures().join("; "))));
    }
    Ok((m, base))
}

pub fn probe_config(profile: Profile, seed: u64) -> ProbeConfig {
    ProbeConfig { seed, ..ProbeConfig::profile(profile) }
}

/// Runs the requested stages and writes the bundle plus `summary.json`.
///
/// Usage and data errors are raised before anything is written. A stage
/// that fails after that is recorded in the summary; the call then returns
/// [`TkError::Stage`] if some requested stage produced no output at all.
pub fn run_pipeline(cfg: &RunConfig) -> Result<Summary> {
    if cfg.stages.is_empty() {
        return Err(TkError::Usage("no stages requested".into()));
    }
    let stages = cfg.expanded_stages();
    if stages.iter().any(|s| s.needs_manifest()) && cfg.manifest.is_none() {
        return Err(TkError::Usage("--manifest is required".into()));
    }
    if stages.iter().any(|s| s.needs_ood()) && cfg.ood_manifests.is_empty() {
        return Err(TkError::Usage("at least one --ood-manifest is required".into()));
    }
    if stages.contains(&Stage::Shap) && cfg.records.is_none() {
        return Err(TkError::Usage("--records is required for the shap stage".into()));
    }
    if cfg.max_samples == 0 {
        return Err(TkError::Usage("--max-samples must be positive".into()));
    }
    for p in cfg.ood_manifests.iter().chain(&cfg.manifest).chain(&cfg.records) {
        if !p.is_file() {
            return Err(TkError::Usage(format!("no such file: {}", display(p))));
        }
    }
    let mut inputs = Vec::new();
    if stages.iter().any(|s| s.needs_manifest()) {
        let id = cfg.manifest.as_ref().expect("checked above");
        for p in std::iter::once(id).chain(cfg.ood_manifests.iter().filter(|_| stages.iter().any(|s| s.needs_ood()))) {
            let (manifest, base_dir) = load_manifest(p)?;
            inputs.push(GridInput { manifest, base_dir });
        }
    }
    let records: Option<Vec<ExperimentRecord>> =
        if stages.contains(&Stage::Shap) { Some(read_records(cfg.records.as_ref().expect("checked above"))?) } else { None };

    let probe = probe_config(cfg.profile, cfg.seed);
    fs::create_dir_all(&cfg.out).map_err(|e| TkError::io(&cfg.out, e))?;
    let mut bundle = Bundle { dir: cfg.out.clone(), written: Vec::new() };
    let mut statuses = Vec::new();
    let mut curves: Option<CurvesFile> = None;
    let mut agg: Option<Aggregate> = None;

    for &stage in &stages {
        let mut st = status(stage, cfg.stages.contains(&stage));
        let mut outs = Vec::new();
        match stage {
            Stage::Probe => {
                let results: Vec<CurveResult> = probe_grid(&inputs, &probe, cfg.threads)?;
                let records: Vec<_> = results.iter().flat_map(|r| r.probes.iter().cloned()).collect();
                bundle.put("probes.json", &to_json_bytes(&records), &mut outs)?;
                for r in &results {
                    st.errors.extend(r.failures().into_iter().map(|e| format!("{}/{}: {e}", r.backbone_id, r.dataset_id)));
                }
                let id = results[0].curve();
                let ood: Vec<ProbeCurve> = results[1..].iter().filter_map(CurveResult::curve).collect();
                if let (Some(id), false) = (id, ood.is_empty()) {
                    let file = CurvesFile { id, ood };
                    bundle.put("curves.csv", &csv_bytes(&curve_rows(&file.id, &file.ood))?, &mut outs)?;
                    bundle.put("curves.json", &to_json_bytes(&file), &mut outs)?;
                    curves = Some(file);
                } else {
                    st.errors.push("no complete ID/OOD curve pair".into());
                }
            }
            Stage::Metrics => match &curves {
                Some(c) => {
                    let (reports, errors) = compute_reports(c);
                    st.errors.extend(errors);
                    if let Some(a) = aggregate(&reports) {
                        bundle.put("tunnel_reports.json", &to_json_bytes(&ReportsFile { reports: &reports, aggregate: &a }), &mut outs)?;
                        bundle.put("tunnel_reports.csv", &csv_bytes(&reports)?, &mut outs)?;
                        agg = Some(a);
                    }
                }
                None => st.errors.push("no probe curves".into()),
            },
            Stage::Rank => {
                let id = &inputs[0];
                match rank_sets(&id.manifest, &id.base_dir, cfg.rank_raw).and_then(|sets| {
                    rank_curve(&sets, cfg.max_samples, cfg.seed).map_err(|e| TkError::data("rank", e))
                }) {
                    Ok(rc) => {
                        bundle.put("rank.csv", &csv_bytes::<RankPoint>(&rc.points)?, &mut outs)?;
                    }
                    Err(e) => st.errors.push(e.to_string()),
                }
            }
            Stage::Shap => {
                let recs = records.as_deref().expect("loaded above");
                match slope_reports(recs, &cfg.gbrt) {
                    Ok(reports) => {
                        bundle.put("shap_slopes.json", &to_json_bytes(&reports), &mut outs)?;
                        bundle.put("shap_slopes.csv", &csv_bytes(&slope_rows(&reports))?, &mut outs)?;
                        for r in &reports {
                            bundle.put(&format!("shap_slope_{}.svg", r.target.as_str()), shap_slope_svg(r).as_bytes(), &mut outs)?;
                        }
                    }
                    Err(e) => st.errors.push(e.to_string()),
                }
            }
            Stage::Plot => match &curves {
                Some(c) => match curve_plot_svg(&c.id, &c.ood, mean_tunnel_start(&c.ood), cfg.band) {
                    Ok(svg) => bundle.put("curve_plot.svg", svg.as_bytes(), &mut outs)?,
                    Err(e) => st.errors.push(e.to_string()),
                },
                None => st.errors.push("no probe curves".into()),
            },
        }
        st.outputs = outs;
        finish(&mut st);
        statuses.push(st);
    }

    let summary = Summary {
        tool: "tunnelkit".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: SummaryConfig {
            manifest: cfg.manifest.as_deref().map(display),
            ood_manifests: cfg.ood_manifests.iter().map(|p| display(p)).collect(),
            records: cfg.records.as_deref().map(display),
            profile: cfg.profile,
            seed: cfg.seed,
            stages: cfg.stages.clone(),
            band: cfg.band,
            max_samples: cfg.max_samples,
            rank_raw: cfg.rank_raw,
            probe,
        },
        stages: statuses,
        aggregate: agg,
        outputs: bundle.written.clone(),
    };
    write_atomic(&cfg.out.join(SUMMARY_FILE), &to_json_bytes(&summary))?;
    let empty: Vec<&StageStatus> = summary.stages.iter().filter(|s| s.requested && s.outputs.is_empty()).collect();
    if let Some(s) = empty.first() {
        return Err(TkError::Stage { stage: s.stage.as_str().into(), reason: s.errors.join("; ") });
    }
    Ok(summary)
}

/// Writes the synthetic fixture as TKD1 dumps plus an ID and an OOD manifest.
/// Returns the two manifest paths.
pub fn write_synth_bundle(cfg: &SynthConfig, out: &Path) -> Result<(PathBuf, PathBuf)> {
    let fixture = synth_tunnel_fixture(cfg).map_err(|e| TkError::data("synth", e))?;
    let dumps = out.join("dumps");
    fs::create_dir_all(&dumps).map_err(|e| TkError::io(&dumps, e))?;
    let mut paths = Vec::new();
    for (role, pairs) in [("id", &fixture.id), ("ood", &fixture.ood)] {
        let mut layers = Vec::new();
        for p in pairs.iter() {
            let l = p.train.layer_index;
            let train = format!("dumps/{role}_layer{l}_train.tkd");
            let test = format!("dumps/{role}_layer{l}_test.tkd");
            write_dump(&p.train, &out.join(&train))?;
            write_dump(&p.test, &out.join(&test))?;
            layers.push(LayerEntry {
                index: l,
                name: p.train.layer_name.clone(),
                raw_shape: vec![p.train.dim],
                train_dump: train,
                test_dump: test,
                reduce: Default::default(),
            });
        }
        let m = Manifest {
            backbone_id: "synth".into(),
            dataset_id: format!("synth-{role}"),
            n_classes: cfg.n_classes,
            total_layers: cfg.n_layers,
            layers,
        };
        let path = out.join(format!("{role}_manifest.json"));
        write_manifest(&m, &path)?;
        paths.push(path);
    }
    let ood = paths.pop().expect("two manifests");
    Ok((paths.pop().expect("two manifests"), ood))
}
