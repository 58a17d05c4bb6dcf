use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tunnelkit::error::{Result, TkError};
use tunnelkit::io::{csv_bytes, manifest_dir, read_csv, read_json, read_manifest, to_json_bytes, write_atomic};
use tunnelkit::pipeline::{aggregate, compute_reports, run_pipeline, write_synth_bundle, CurvesFile, RunConfig, Stage};
use tunnelkit::plot::Band;
use tunnelkit::records::{run_stats, PairRow};
use tunnelkit::validate::validate_manifest;
use tunnelkit_core::probe::Profile;
use tunnelkit_core::rank::DEFAULT_MAX_SAMPLES;
use tunnelkit_core::synth::SynthConfig;

#[derive(Parser)]
#[command(name = "tunnelkit", version, about = "Measure the OOD tunnel effect from per-layer embedding dumps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a manifest and every dump it references.
    Validate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long = "ood-manifest")]
        ood_manifests: Vec<PathBuf>,
        /// Also write validation.json here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the synthetic tunnel fixture as dumps and manifests.
    Synth(SynthArgs),
    /// Train linear probes for every layer of every manifest.
    Probe(RunArgs),
    /// Tunnel metrics, from manifests or from an existing curves.json.
    Metrics {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        curves: Option<PathBuf>,
    },
    /// Paired Wilcoxon signed-rank tests and Cliff's delta.
    Stats {
        /// CSV with columns comparison,metric,a,b.
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// SHAP slopes of experiment records.
    Shap(RunArgs),
    /// Numerical rank of every layer of the ID manifest.
    Rank(RunArgs),
    /// Run several stages and write an indexed report bundle.
    Report(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Cnn,
    Vit,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long = "ood-manifest")]
    ood_manifests: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "cnn")]
    profile: ProfileArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated; only honored by `report`.
    #[arg(long, value_enum, value_delimiter = ',')]
    stages: Vec<Stage>,
    #[arg(long, value_enum, default_value = "std")]
    band: Band,
    /// Experiment-record CSV for the shap stage.
    #[arg(long)]
    records: Option<PathBuf>,
    /// Probe-grid threads, 0 for all cores.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_SAMPLES)]
    max_samples: usize,
    /// Rank raw dump rows rather than the pooled probe inputs.
    #[arg(long)]
    rank_raw: bool,
}

impl RunArgs {
    fn config(&self, stages: Vec<Stage>) -> RunConfig {
        RunConfig {
            manifest: self.manifest.clone(),
            ood_manifests: self.ood_manifests.clone(),
            profile: match self.profile {
                ProfileArg::Cnn => Profile::Cnn,
                ProfileArg::Vit => Profile::Vit,
            },
            seed: self.seed,
            stages,
            band: self.band,
            records: self.records.clone(),
            threads: self.threads,
            max_samples: self.max_samples,
            rank_raw: self.rank_raw,
            ..RunConfig::new(&self.out)
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Layer where compression starts, or `none`.
    #[arg(long, default_value = "8")]
    tunnel_start: String,
    #[arg(long, default_value_t = 10)]
    layers: u32,
    /// Samples per split.
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 4)]
    classes: u32,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 0.9)]
    compression: f64,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
}

fn synth(a: &SynthArgs) -> Result<()> {
    let tunnel_start = match a.tunnel_start.as_str() {
        "none" => None,
        s => Some(s.parse().map_err(|_| TkError::Usage(format!("--tunnel-start: expected a layer or `none`, got {s}")))?),
    };
    let cfg = SynthConfig {
        n_layers: a.layers,
        tunnel_start,
        n_samples: a.samples,
        n_classes: a.classes,
        dim: a.dim,
        compression_strength: a.compression,
        noise_scale: a.noise,
        seed: a.seed,
    };
    cfg.validate().map_err(|e| TkError::Usage(e.to_string()))?;
    let (id, ood) = write_synth_bundle(&cfg, &a.out)?;
    println!("{}", id.display());
    println!("{}", ood.display());
    Ok(())
}

fn validate(manifest: &Path, oods: &[PathBuf], out: Option<&PathBuf>) -> Result<()> {
    let mut reports = Vec::new();
    for p in std::iter::once(manifest).chain(oods.iter().map(PathBuf::as_path)) {
        let m = read_manifest(p)?;
        let r = validate_manifest(&m, &manifest_dir(p));
        println!("{}: {}", p.display(), if r.passed { "ok" } else { "FAILED" });
        for f in r.failures() {
            println!("  {f}");
        }
        reports.push(r);
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| TkError::io(dir, e))?;
        write_atomic(&dir.join("validation.json"), &to_json_bytes(&reports))?;
    }
    if reports.iter().all(|r| r.passed) {
        Ok(())
    } else {
        Err(TkError::Invalid("validation failed".into()))
    }
}

fn metrics_from_curves(curves: &Path, out: &Path) -> Result<()> {
    let file: CurvesFile = read_json(curves)?;
    let (reports, errors) = compute_reports(&file);
    let agg = aggregate(&reports).ok_or_else(|| TkError::Invalid(format!("no tunnel report: {}", errors.join("; "))))?;
    std::fs::create_dir_all(out).map_err(|e| TkError::io(out, e))?;
    write_atomic(&out.join("tunnel_reports.json"), &to_json_bytes(&serde_json::json!({ "reports": reports, "aggregate": agg })))?;
    write_atomic(&out.join("tunnel_reports.csv"), &csv_bytes(&reports)?)?;
    println!("mean retained {:.2}% ({})", agg.mean_retained, agg.strength);
    Ok(())
}

fn stats(pairs: &Path, out: &Path) -> Result<()> {
    let rows: Vec<PairRow> = read_csv(pairs)?;
    let stats = run_stats(&rows)?;
    std::fs::create_dir_all(out).map_err(|e| TkError::io(out, e))?;
    write_atomic(&out.join("stats.csv"), &csv_bytes(&stats)?)?;
    for s in &stats {
        println!("{}/{}: delta {:.3} ({}), p {:.4}", s.comparison, s.metric, s.effect_size, s.magnitude, s.p_value);
    }
    Ok(())
}

fn run(args: &RunArgs, stages: Vec<Stage>) -> Result<()> {
    let summary = run_pipeline(&args.config(stages))?;
    for s in &summary.stages {
        println!("{}: {:?} ({} outputs)", s.stage.as_str(), s.status, s.outputs.len());
        for e in &s.errors {
            println!("  {e}");
        }
    }
    if let Some(a) = &summary.aggregate {
        println!("mean retained {:.2}% ({})", a.mean_retained, a.strength);
    }
    Ok(())
}

fn dispatch(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Validate { manifest, ood_manifests, out } => validate(manifest, ood_manifests, out.as_ref()),
        Command::Synth(a) => synth(a),
        Command::Probe(a) => run(a, vec![Stage::Probe]),
        Command::Metrics { curves: Some(c), run: a } => metrics_from_curves(c, &a.out),
        Command::Metrics { curves: None, run: a } => run(a, vec![Stage::Metrics]),
        Command::Stats { pairs, out } => stats(pairs, out),
        Command::Shap(a) => run(a, vec![Stage::Shap]),
        Command::Rank(a) => run(a, vec![Stage::Rank]),
        Command::Report(a) => {
            let stages = if a.stages.is_empty() {
                let mut s = vec![Stage::Probe, Stage::Metrics, Stage::Rank, Stage::Plot];
                if a.records.is_some() {
                    s.push(Stage::Shap);
                }
                s
            } else {
                a.stages.clone()
            };
            run(a, stages)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
