//! `bdlm`: command-line front end for the bearing diagnosis pipeline.
//!
//! Exit codes: 0 success, 1 runtime error, 2 usage or plan error. Failures
//! print a human line and a `key=value` line to stderr.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bdlm_core::features::save_feature_csv;
use bdlm_core::ingest::load_manifest;
use bdlm_core::spectral::StftConfig;
use bdlm_core::synth::{fixture_signals, SyntheticDataset};
use bdlm_core::textgen::{emit_corpus, render_record, PromptTemplate};
use bdlm_core::{extract_features, segment_sliding_window, stft, Segment, SegmentationConfig, Signal};
use bdlm_experiments::embed::export_embeddings;
use bdlm_experiments::plan::Grid;
use bdlm_experiments::{
    build_splits, evaluate, run_plan_with_model, ExperimentError, ExperimentPlan, ExperimentReport, Part, PlanKind,
    SplitMode, SplitSpec,
};
use bdlm_model::checkpoint::{load_checkpoint, save_checkpoint};
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "bdlm", version, about = "Bearing fault diagnosis: features, corpora, training and experiment protocols")]
struct Cli {
    /// Seed for splits, initialisation and shuffling; overrides plan seeds.
    #[arg(long, global = true, env = "BD_SEED")]
    seed: Option<u64>,
    /// Worker threads; 1 runs everything serially.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load a dataset manifest and list its signals.
    Inspect {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Write the 24 features of every segment to CSV.
    Extract {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        seg: SegArgs,
    },
    /// Write a fine-tuning corpus split 8:2 into <out>-train.jsonl and <out>-test.jsonl.
    Corpus {
        #[arg(long)]
        manifest: PathBuf,
        /// Output prefix.
        #[arg(long)]
        out: PathBuf,
        /// Prompt template JSON; the built-in template when omitted.
        #[arg(long)]
        template: Option<PathBuf>,
        #[command(flatten)]
        seg: SegArgs,
    },
    /// Write the STFT magnitude of one signal to CSV.
    Spectrogram {
        #[arg(long)]
        manifest: PathBuf,
        /// Signal id; the first signal when omitted.
        #[arg(long)]
        signal: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 256)]
        nperseg: usize,
        #[arg(long, default_value_t = 128)]
        hop: usize,
    },
    /// Write synthetic stand-in recordings as CSV files plus a manifest.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        /// Stand-in name: SYN-A, SYN-B, SYN-C or SYN-D.
        #[arg(long, default_value = "SYN-A")]
        dataset: String,
        /// Comma-separated operating conditions.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        conditions: Vec<u32>,
        /// Windows per recording under --window/--step.
        #[arg(long, default_value_t = 20)]
        segments: usize,
        #[command(flatten)]
        seg: SegArgs,
    },
    /// Run a single-dataset plan and save the best model.
    Train {
        #[command(flatten)]
        plan: PlanArgs,
        /// Checkpoint path; <out-dir>/<plan id>.bdlm when omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Accuracy and confusion matrix of a checkpoint on a manifest.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Window step; the window length comes from the checkpoint.
        #[arg(long, default_value_t = 1024)]
        step: usize,
    },
    /// Run any plan and write its report.
    Protocol {
        #[command(flatten)]
        plan: PlanArgs,
    },
    /// Run a patch/stride sweep over a plan's dataset.
    Sweep {
        #[command(flatten)]
        plan: PlanArgs,
        /// Named grid (table8) or cells such as 128x8,64x4.
        #[arg(long, default_value = "table8")]
        grid: String,
    },
    /// Write pooled embeddings of every segment of a manifest to CSV.
    ExportEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1024)]
        step: usize,
    },
}

#[derive(Debug, Args)]
struct SegArgs {
    /// Window length in samples.
    #[arg(long, default_value_t = 2048)]
    window: usize,
    /// Step between window starts.
    #[arg(long, default_value_t = 1024)]
    step: usize,
}

impl SegArgs {
    fn config(&self) -> Result<SegmentationConfig, Fail> {
        SegmentationConfig::new(self.window, self.step).map_err(|e| Fail::usage(e.to_string()))
    }
}

#[derive(Debug, Args)]
struct PlanArgs {
    /// Plan file (TOML).
    #[arg(long)]
    plan: PathBuf,
    /// Directory for reports and checkpoints.
    #[arg(long, default_value = "reports")]
    out_dir: PathBuf,
    /// Override the number of trials.
    #[arg(long)]
    trials: Option<usize>,
    /// Override train.epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Override train.lr.
    #[arg(long)]
    lr: Option<f64>,
    /// Override train.batch_size.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Override model.d_model.
    #[arg(long)]
    d_model: Option<usize>,
    /// Override model.n_layers.
    #[arg(long)]
    n_layers: Option<usize>,
    /// Override model.n_heads.
    #[arg(long)]
    n_heads: Option<usize>,
    /// Override model.patch_len.
    #[arg(long)]
    patch_len: Option<usize>,
    /// Override model.stride.
    #[arg(long)]
    stride: Option<usize>,
}

impl PlanArgs {
    fn load(&self, seed: Option<u64>) -> Result<ExperimentPlan, Fail> {
        // An unreadable plan is as much a usage error as an invalid one.
        let mut p = ExperimentPlan::load(&self.plan).map_err(|e| match e {
            ExperimentError::Io { .. } => Fail { code: 2, kind: "plan", message: e.to_string() },
            other => other.into(),
        })?;
        if let Some(s) = seed {
            p.seed = s;
        }
        if let Some(v) = self.trials {
            p.trials = v;
        }
        for t in std::iter::once(&mut p.train).chain(p.pretrain.as_mut()) {
            if let Some(v) = self.epochs {
                t.epochs = v;
            }
            if let Some(v) = self.lr {
                t.lr = v;
            }
            if let Some(v) = self.batch_size {
                t.batch_size = v;
            }
        }
        let m = &mut p.model;
        for (slot, v) in [
            (&mut m.d_model, self.d_model),
            (&mut m.n_layers, self.n_layers),
            (&mut m.n_heads, self.n_heads),
            (&mut m.patch_len, self.patch_len),
            (&mut m.stride, self.stride),
        ] {
            if let Some(v) = v {
                *slot = v;
            }
        }
        p.validate()?;
        Ok(p)
    }
}

/// A failure with its exit code and a short machine-readable kind.
#[derive(Debug)]
struct Fail {
    code: u8,
    kind: &'static str,
    message: String,
}

impl Fail {
    fn usage(message: String) -> Self {
        Fail { code: 2, kind: "usage", message }
    }

    fn runtime(kind: &'static str, message: String) -> Self {
        Fail { code: 1, kind, message }
    }
}

impl From<ExperimentError> for Fail {
    fn from(e: ExperimentError) -> Self {
        if e.is_usage() {
            return Fail { code: 2, kind: "plan", message: e.to_string() };
        }
        let kind = match &e {
            ExperimentError::Core(_) => "core",
            ExperimentError::Model(_) => "model",
            ExperimentError::Io { .. } | ExperimentError::Csv(_) => "io",
            _ => "experiment",
        };
        Fail::runtime(kind, e.to_string())
    }
}

impl From<bdlm_core::Error> for Fail {
    fn from(e: bdlm_core::Error) -> Self {
        Fail::runtime("core", e.to_string())
    }
}

impl From<bdlm_model::ModelError> for Fail {
    fn from(e: bdlm_model::ModelError) -> Self {
        Fail::runtime("model", e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return report_failure(Fail::usage(format!("cannot set up {n} threads: {e}")));
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => report_failure(f),
    }
}

fn report_failure(f: Fail) -> ExitCode {
    eprintln!("bdlm: error: {}", f.message);
    eprintln!("error code={} kind={} message={:?}", f.code, f.kind, f.message);
    ExitCode::from(f.code)
}

fn run(cli: &Cli) -> Result<(), Fail> {
    match &cli.command {
        Command::Inspect { manifest } => inspect(manifest),
        Command::Extract { manifest, out, seg } => extract(manifest, out, &seg.config()?),
        Command::Corpus { manifest, out, template, seg } => {
            corpus(manifest, out, template.as_deref(), &seg.config()?, cli.seed.unwrap_or(0))
        }
        Command::Spectrogram { manifest, signal, out, nperseg, hop } => {
            spectrogram(manifest, signal.as_deref(), out, *nperseg, *hop)
        }
        Command::Synth { out_dir, dataset, conditions, segments, seg } => {
            synth(out_dir, dataset, conditions, *segments, &seg.config()?, cli.seed.unwrap_or(1))
        }
        Command::Train { plan, checkpoint } => {
            let p = plan.load(cli.seed)?;
            if p.kind != PlanKind::Single {
                return Err(Fail::usage(format!("train needs a single plan, got {:?}", p.kind)));
            }
            let outcome = run_plan_with_model(&p)?;
            finish(&p, &outcome.report, &plan.out_dir)?;
            if let Some(model) = outcome.best_model {
                let path = checkpoint.clone().unwrap_or_else(|| plan.out_dir.join(format!("{}.bdlm", p.id)));
                save_checkpoint(&model, &path)?;
                println!("checkpoint: {}", path.display());
            }
            Ok(())
        }
        Command::Eval { checkpoint, manifest, step } => eval(checkpoint, manifest, *step),
        Command::Protocol { plan } => {
            let p = plan.load(cli.seed)?;
            let outcome = run_plan_with_model(&p)?;
            finish(&p, &outcome.report, &plan.out_dir)
        }
        Command::Sweep { plan, grid } => {
            let mut p = plan.load(cli.seed)?;
            p.kind = PlanKind::Sweep;
            p.grid = parse_grid(grid)?;
            p.validate()?;
            let outcome = run_plan_with_model(&p)?;
            finish(&p, &outcome.report, &plan.out_dir)
        }
        Command::ExportEmbeddings { checkpoint, manifest, out, step } => {
            let model = load_checkpoint(checkpoint)?;
            let segs = manifest_segments(manifest, &SegmentationConfig::new(model.config().window_len, *step)?)?;
            let refs: Vec<&Segment> = segs.iter().collect();
            let n = export_embeddings(&model, &refs, out)?;
            println!("rows: {n}");
            println!("columns: {}", 5 + model.config().d_model);
            Ok(())
        }
    }
}

fn parse_grid(s: &str) -> Result<Grid, Fail> {
    if s.chars().all(|c| c.is_ascii_alphanumeric()) && !s.contains('x') {
        return Ok(Grid::Named(s.to_string()));
    }
    s.split(',')
        .map(|cell| {
            let (p, st) = cell.split_once('x').ok_or_else(|| Fail::usage(format!("bad grid cell {cell:?}")))?;
            let n = |v: &str| v.trim().parse::<usize>().map_err(|_| Fail::usage(format!("bad grid cell {cell:?}")));
            Ok((n(p)?, n(st)?))
        })
        .collect::<Result<Vec<_>, _>>()
        .map(Grid::Cells)
}

fn manifest_signals(manifest: &Path) -> Result<Vec<Signal>, Fail> {
    Ok(load_manifest(manifest)?.signals)
}

fn manifest_segments(manifest: &Path, seg: &SegmentationConfig) -> Result<Vec<Segment>, Fail> {
    let mut out = Vec::new();
    for s in manifest_signals(manifest)? {
        out.extend(segment_sliding_window(&s, seg)?);
    }
    Ok(out)
}

fn inspect(manifest: &Path) -> Result<(), Fail> {
    let ds = load_manifest(manifest)?;
    println!("dataset: {}", ds.dataset_id);
    println!("labels: {}", ds.labels.iter().map(|l| l.as_str()).collect::<Vec<_>>().join(","));
    println!("signals: {}", ds.signals.len());
    for s in &ds.signals {
        println!(
            "{}\tcondition={}\tlabel={}\tsamples={}\trate_hz={}",
            s.id,
            s.condition_id,
            s.label,
            s.len(),
            s.sample_rate_hz
        );
    }
    Ok(())
}

fn extract(manifest: &Path, out: &Path, seg: &SegmentationConfig) -> Result<(), Fail> {
    let segs = manifest_segments(manifest, seg)?;
    let feats = segs.iter().map(extract_features).collect::<bdlm_core::Result<Vec<_>>>()?;
    let undefined = feats.iter().filter(|f| f.has_undefined()).count();
    let rows: Vec<_> = feats.into_iter().zip(&segs).collect();
    save_feature_csv(out, &rows)?;
    println!("segments: {}", segs.len());
    println!("features: {}", segs.len() * bdlm_core::features::N_FEATURES);
    println!("rows with undefined features: {undefined}");
    Ok(())
}

fn corpus(manifest: &Path, out: &Path, template: Option<&Path>, seg: &SegmentationConfig, seed: u64) -> Result<(), Fail> {
    let tpl = match template {
        Some(p) => PromptTemplate::load(p)?,
        None => PromptTemplate::default(),
    };
    let segs = manifest_segments(manifest, seg)?;
    let splits = build_splits(&segs, &SplitSpec::new(SplitMode::TrainTest82, seed))?;
    println!("seed: {seed}");
    for (part, name) in [(Part::Train, "train"), (Part::Test, "test")] {
        let records = splits
            .select(part, &segs)
            .into_iter()
            .map(|s| render_record(&extract_features(s)?, s.label, &tpl))
            .collect::<bdlm_core::Result<Vec<_>>>()?;
        let mut file = out.as_os_str().to_owned();
        file.push(format!("-{name}.jsonl"));
        let path = PathBuf::from(file);
        let n = emit_corpus(&records, &path)?;
        println!("{name}: {n} lines -> {}", path.display());
    }
    println!("purged: {}", splits.purged);
    Ok(())
}

fn spectrogram(manifest: &Path, signal: Option<&str>, out: &Path, nperseg: usize, hop: usize) -> Result<(), Fail> {
    let signals = manifest_signals(manifest)?;
    let s = match signal {
        Some(id) => signals
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| Fail::runtime("core", format!("no signal {id:?} in manifest")))?,
        None => signals.first().ok_or_else(|| Fail::runtime("core", "manifest has no signals".into()))?,
    };
    let cfg = StftConfig { window_len: nperseg, hop, ..StftConfig::default() };
    let sg = stft(&s.samples, s.sample_rate_hz, &cfg)?;
    sg.save_csv(out)?;
    println!("signal: {}", s.id);
    println!("frames: {}", sg.frames.len());
    println!("bins: {}", sg.freqs_hz.len());
    Ok(())
}

fn synth(
    out_dir: &Path,
    dataset: &str,
    conditions: &[u32],
    segments: usize,
    seg: &SegmentationConfig,
    seed: u64,
) -> Result<(), Fail> {
    let ds = SyntheticDataset::stand_ins()
        .into_iter()
        .find(|d| d.id == dataset)
        .ok_or_else(|| Fail::usage(format!("unknown stand-in {dataset:?}")))?;
    let io = |p: &Path, e: std::io::Error| Fail::runtime("io", format!("{}: {e}", p.display()));
    std::fs::create_dir_all(out_dir).map_err(|e| io(out_dir, e))?;
    let signals = fixture_signals(&ds, conditions, segments, seg, seed)?;
    let mut manifest = format!("dataset_id = {:?}\n", ds.id);
    for s in &signals {
        let file = format!("{}.csv", s.id.replace('/', "_"));
        let path = out_dir.join(&file);
        let mut text = String::from("amplitude\n");
        for v in &s.samples {
            text.push_str(&format!("{v}\n"));
        }
        std::fs::write(&path, text).map_err(|e| io(&path, e))?;
        manifest.push_str(&format!(
            "\n[[entry]]\npath = {file:?}\nchannel = \"amplitude\"\nsample_rate_hz = {:?}\ncondition = {:?}\nlabel = {:?}\n",
            s.sample_rate_hz,
            s.condition_id,
            s.label.as_str()
        ));
    }
    let mpath = out_dir.join("manifest.toml");
    std::fs::write(&mpath, manifest).map_err(|e| io(&mpath, e))?;
    println!("seed: {seed}");
    println!("signals: {}", signals.len());
    println!("manifest: {}", mpath.display());
    Ok(())
}

fn eval(checkpoint: &Path, manifest: &Path, step: usize) -> Result<(), Fail> {
    let model = load_checkpoint(checkpoint)?;
    let segs = manifest_segments(manifest, &SegmentationConfig::new(model.config().window_len, step)?)?;
    let refs: Vec<&Segment> = segs.iter().collect();
    let m = evaluate(&model, &refs)?;
    println!("segments: {}", segs.len());
    println!("accuracy: {:.6}", m.accuracy);
    println!("confusion (rows true, columns predicted; {}):", label_header(&m.confusion.labels));
    for row in &m.confusion.counts {
        println!("  {}", row.iter().map(u64::to_string).collect::<Vec<_>>().join("\t"));
    }
    Ok(())
}

fn label_header(labels: &[bdlm_core::FaultLabel]) -> String {
    labels.iter().map(|l| l.short_name()).collect::<Vec<_>>().join(" ")
}

/// Saves the report and prints the summary table.
fn finish(plan: &ExperimentPlan, report: &ExperimentReport, out_dir: &Path) -> Result<(), Fail> {
    let (json, csv) = report.save(&out_dir.join(&plan.id))?;
    println!("plan: {} ({:?})", plan.id, plan.kind);
    println!("seeds: {}", report.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(","));
    for run in &report.runs {
        if run.arms.is_empty() {
            for f in &run.corpus_files {
                println!("{}\tcorpus\t{} lines -> {}", run.name, f.lines, f.path.display());
            }
            continue;
        }
        let arms: Vec<String> = run.arms.iter().map(|a| format!("{} {}", a.arm, a.summary.display())).collect();
        let mut line = format!("{}\t{}", run.name, arms.join("\t"));
        if let Some(d) = &run.difference {
            line.push_str(&format!("\tdifference {}", d.display()));
        }
        if run.cell.is_some_and(|c| c.chosen) {
            line.push_str("\t(chosen)");
        }
        line.push_str(&format!("\t{:.1}s", run.wall_time_s));
        println!("{line}");
    }
    println!("leakage: {}", report.leakage());
    println!("digest: {}", report.digest());
    println!("report: {} {}", json.display(), csv.display());
    Ok(())
}
