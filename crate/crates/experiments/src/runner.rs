//! Protocol runners. Trials run in parallel on the current rayon pool and
//! are merged in seed order, so results do not depend on the thread count.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use bdlm_core::features::extract_features;
use bdlm_core::textgen::{emit_corpus, render_record, PromptTemplate};
use bdlm_core::{FaultLabel, Segment};
use bdlm_model::{train, EpochLog, Model, ModelConfig, Sample, TrainConfig};
use log::info;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::data::{load_segments, with_conditions};
use crate::error::{ExperimentError, Result};
use crate::metrics::{compute_metrics, Metrics};
use crate::plan::{ExperimentPlan, Partition, PlanKind, Transfer, CHOSEN_CELL};
use crate::report::{hex, ArmReport, CorpusFile, ExperimentReport, RunReport, SplitSizes, Summary, SweepCell, TrialReport};
use crate::split::{
    audit_overlap, balance_classes, build_splits, build_splits_of, stratified_subsample, Part, SplitMode, SplitSpec,
    Splits,
};

/// A report plus the model of the best trial of single runs.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: ExperimentReport,
    pub best_model: Option<Model>,
}

pub fn run_plan(plan: &ExperimentPlan) -> Result<ExperimentReport> {
    Ok(run_plan_with_model(plan)?.report)
}

pub fn run_plan_with_model(plan: &ExperimentPlan) -> Result<RunOutcome> {
    match plan.kind {
        PlanKind::Single => run_single_with_model(plan),
        PlanKind::CrossCondition => without_model(run_cross_condition(plan)),
        PlanKind::CrossDatasetFull => without_model(run_cross_dataset_full(plan)),
        PlanKind::CrossDatasetLimited => without_model(run_cross_dataset_limited(plan)),
        PlanKind::Sweep => without_model(sweep_patch_stride(plan)),
    }
}

fn without_model(r: Result<ExperimentReport>) -> Result<RunOutcome> {
    r.map(|report| RunOutcome { report, best_model: None })
}

fn expect_kind(plan: &ExperimentPlan, kinds: &[PlanKind]) -> Result<()> {
    plan.validate()?;
    if kinds.contains(&plan.kind) {
        Ok(())
    } else {
        Err(ExperimentError::Plan(format!("plan kind {:?} cannot run here (expected {kinds:?})", plan.kind)))
    }
}

fn report(plan: &ExperimentPlan, runs: Vec<RunReport>, started: Instant) -> ExperimentReport {
    ExperimentReport {
        plan_id: plan.id.clone(),
        kind: plan.kind,
        plan: plan.to_toml(),
        seeds: plan.trial_seeds(),
        runs,
        wall_time_s: started.elapsed().as_secs_f64(),
    }
}

/// Segments per dataset id, loaded once per plan.
struct Cache<'p> {
    plan: &'p ExperimentPlan,
    loaded: BTreeMap<String, Vec<Segment>>,
}

impl<'p> Cache<'p> {
    fn new(plan: &'p ExperimentPlan) -> Self {
        Cache { plan, loaded: BTreeMap::new() }
    }

    fn load(&mut self, id: &str) -> Result<()> {
        if !self.loaded.contains_key(id) {
            let segs = load_segments(self.plan, self.plan.dataset_spec(id)?)?;
            info!("dataset {id}: {} segments", segs.len());
            self.loaded.insert(id.to_string(), segs);
        }
        Ok(())
    }

    fn get(&self, id: &str) -> &[Segment] {
        &self.loaded[id]
    }
}

pub fn samples(segs: &[&Segment]) -> Vec<Sample> {
    segs.iter().map(|s| Sample { window: s.samples.clone(), class: s.label.class_index() }).collect()
}

/// Accuracy and confusion of `model` on `segs`.
pub fn evaluate(model: &Model, segs: &[&Segment]) -> Result<Metrics> {
    let mut preds = Vec::with_capacity(segs.len());
    for chunk in segs.chunks(64) {
        let windows: Vec<&[f64]> = chunk.iter().map(|s| s.samples.as_slice()).collect();
        preds.extend(model.predict_batch(&windows)?);
    }
    let labels: Vec<usize> = segs.iter().map(|s| s.label.class_index()).collect();
    compute_metrics(&preds, &labels)
}

fn model_config(plan: &ExperimentPlan, seed: u64) -> ModelConfig {
    ModelConfig { seed, ..plan.model.clone() }
}

fn train_config(base: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig { seed, ..base.clone() }
}

struct Fitted {
    trial: TrialReport,
    model: Model,
}

fn fit_and_test(
    init: Model,
    tr: &[&Segment],
    va: &[&Segment],
    te: &[&Segment],
    tc: &TrainConfig,
    pretrain_log: Vec<EpochLog>,
) -> Result<Fitted> {
    let out = train(init, &samples(tr), &samples(va), tc)?;
    let m = evaluate(&out.model, te)?;
    Ok(Fitted {
        trial: TrialReport {
            seed: tc.seed,
            sizes: SplitSizes { train: tr.len(), val: va.len(), test: te.len() },
            train_digest: membership_digest(tr),
            pretrain_log,
            log: out.log,
            best_epoch: out.best_epoch,
            best_val_accuracy: out.best_val_accuracy,
            test_accuracy: m.accuracy,
            confusion: m.confusion,
        },
        model: out.model,
    })
}

/// SHA-256 over `signal_id:start` lines of `segs`, in order. Equal digests
/// mean the same windows in the same order.
pub fn membership_digest(segs: &[&Segment]) -> String {
    let mut h = Sha256::new();
    for s in segs {
        h.update(format!("{}:{}\n", s.origin.signal_id, s.origin.start));
    }
    hex(&h.finalize())
}

fn parts<'a>(splits: &Splits, segs: &'a [Segment]) -> [Vec<&'a Segment>; 3] {
    [Part::Train, Part::Val, Part::Test].map(|p| splits.select(p, segs))
}

fn leakage(groups: &[Vec<&Segment>]) -> usize {
    let refs: Vec<&[&Segment]> = groups.iter().map(Vec::as_slice).collect();
    audit_overlap(&refs)
}

fn slug(s: &str) -> String {
    let mut out = String::new();
    for c in s.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('-') {
            out.push('-');
        }
    }
    out.trim_matches('-').to_string()
}

/// Writes one corpus file per named split of a run.
fn emit_corpora(plan: &ExperimentPlan, run: &str, splits: &[(&str, &[&Segment])]) -> Result<Vec<CorpusFile>> {
    let job = plan.corpus.as_ref().expect("corpus job present");
    let tpl = match &job.template {
        Some(p) => PromptTemplate::load(&plan.resolve(p))?,
        None => PromptTemplate::default(),
    };
    let dir = plan.resolve(&job.out_dir);
    std::fs::create_dir_all(&dir).map_err(|e| ExperimentError::io(&dir, e))?;
    let mut files = Vec::new();
    for (part, segs) in splits {
        let records = segs
            .iter()
            .map(|s| render_record(&extract_features(s)?, s.label, &tpl))
            .collect::<bdlm_core::Result<Vec<_>>>()?;
        let path: PathBuf = dir.join(format!("{}-{}-{part}.jsonl", slug(&plan.id), slug(run)));
        let lines = emit_corpus(&records, &path)?;
        files.push(CorpusFile { path, lines });
    }
    Ok(files)
}

pub fn run_single(plan: &ExperimentPlan) -> Result<ExperimentReport> {
    Ok(run_single_with_model(plan)?.report)
}

pub fn run_single_with_model(plan: &ExperimentPlan) -> Result<RunOutcome> {
    expect_kind(plan, &[PlanKind::Single])?;
    let started = Instant::now();
    let spec = plan.primary_dataset()?;
    let segs = load_segments(plan, spec)?;
    let (run, model) = single_run(plan, &plan.model, &segs, &spec.id)?;
    Ok(RunOutcome { report: report(plan, vec![run], started), best_model: model })
}

fn single_run(
    plan: &ExperimentPlan,
    model: &ModelConfig,
    segs: &[Segment],
    name: &str,
) -> Result<(RunReport, Option<Model>)> {
    let started = Instant::now();
    let mut run = RunReport::new(name);
    let split = |seed| build_splits(segs, &SplitSpec { mode: SplitMode::TrainValTest811, seed, balance: plan.balance });
    if plan.corpus.is_some() {
        let s = split(plan.seed)?;
        let [tr, va, te] = parts(&s, segs);
        run.leakage = leakage(&[tr.clone(), va.clone(), te.clone()]);
        run.corpus_files = emit_corpora(plan, name, &[("train", &tr), ("val", &va), ("test", &te)])?;
        run.wall_time_s = started.elapsed().as_secs_f64();
        return Ok((run, None));
    }
    let results: Vec<(Fitted, usize)> = plan
        .trial_seeds()
        .into_par_iter()
        .map(|seed| {
            let s = split(seed)?;
            let [tr, va, te] = parts(&s, segs);
            let leak = leakage(&[tr.clone(), va.clone(), te.clone()]);
            let init = Model::init(ModelConfig { seed, ..model.clone() })?;
            Ok((fit_and_test(init, &tr, &va, &te, &train_config(&plan.train, seed), Vec::new())?, leak))
        })
        .collect::<Result<_>>()?;
    run.leakage = results.iter().map(|r| r.1).sum();
    let (trials, models): (Vec<_>, Vec<_>) = results.into_iter().map(|(f, _)| (f.trial, f.model)).unzip();
    let arm = ArmReport::new("model", trials);
    let best = models.into_iter().nth(arm.best_trial);
    info!("{name}: test accuracy {}", arm.summary.display());
    run.arms.push(arm);
    run.wall_time_s = started.elapsed().as_secs_f64();
    Ok((run, best))
}

/// Train/val carved 8:1 from the training conditions and the balanced test
/// conditions, as indices into `segs`.
pub fn cross_condition_splits(segs: &[Segment], p: &Partition, seed: u64, balance: bool) -> Result<Splits> {
    let train_idx = with_conditions(segs, &p.train)?;
    let test_idx = with_conditions(segs, &p.test)?;
    let mut s = build_splits_of(segs, &train_idx, &SplitSpec { mode: SplitMode::TrainVal81, seed, balance })?;
    s.test = if balance { balance_classes(segs, &test_idx, seed) } else { test_idx };
    Ok(s)
}

pub fn run_cross_condition(plan: &ExperimentPlan) -> Result<ExperimentReport> {
    expect_kind(plan, &[PlanKind::CrossCondition])?;
    let started = Instant::now();
    let mut cache = Cache::new(plan);
    let mut runs = Vec::new();
    for p in &plan.partitions {
        let t0 = Instant::now();
        let id = match &p.dataset {
            Some(d) => d.clone(),
            None => plan.primary_dataset()?.id.clone(),
        };
        cache.load(&id)?;
        let segs = cache.get(&id);
        let name = format!("{id} {}", p.name());
        let mut run = RunReport::new(&name);
        run.partition = Some(p.clone());
        if plan.corpus.is_some() {
            let s = cross_condition_splits(segs, p, plan.seed, plan.balance)?;
            let [tr, va, te] = parts(&s, segs);
            run.leakage = leakage(&[tr.clone(), va.clone(), te.clone()]);
            run.corpus_files = emit_corpora(plan, &name, &[("train", &tr), ("val", &va), ("test", &te)])?;
        } else {
            let results: Vec<(Fitted, usize)> = plan
                .trial_seeds()
                .into_par_iter()
                .map(|seed| {
                    let s = cross_condition_splits(segs, p, seed, plan.balance)?;
                    let [tr, va, te] = parts(&s, segs);
                    let leak = leakage(&[tr.clone(), va.clone(), te.clone()]);
                    let init = Model::init(model_config(plan, seed))?;
                    Ok((fit_and_test(init, &tr, &va, &te, &train_config(&plan.train, seed), Vec::new())?, leak))
                })
                .collect::<Result<_>>()?;
            run.leakage = results.iter().map(|r| r.1).sum();
            let arm = ArmReport::new("model", results.into_iter().map(|r| r.0.trial).collect());
            info!("{name}: test accuracy {}", arm.summary.display());
            run.arms.push(arm);
        }
        run.wall_time_s = t0.elapsed().as_secs_f64();
        runs.push(run);
    }
    Ok(report(plan, runs, started))
}

/// Segment sets of one cross-dataset trial.
pub struct TransferSets<'a> {
    pub pretrain_train: Vec<&'a Segment>,
    pub pretrain_val: Vec<&'a Segment>,
    pub target_train: Vec<&'a Segment>,
    pub target_val: Vec<&'a Segment>,
    pub target_test: Vec<&'a Segment>,
    /// SHA-256 of the limited subsample's origins, when one was drawn.
    pub subsample_digest: Option<String>,
    pub leakage: usize,
}

impl TransferSets<'_> {
    pub fn target_in_pretrain(&self, target: &str) -> usize {
        self.pretrain_train.iter().chain(&self.pretrain_val).filter(|s| s.dataset_id == target).count()
    }
}

/// Builds the phase-1 union of source splits and the target splits. With
/// `fraction`, the target train split is replaced by a stratified subsample.
pub fn transfer_sets<'a>(
    sources: &[&'a [Segment]],
    target: &'a [Segment],
    seed: u64,
    balance: bool,
    fraction: Option<f64>,
) -> Result<TransferSets<'a>> {
    let spec = SplitSpec { mode: SplitMode::TrainValTest811, seed, balance };
    let mut sets = TransferSets {
        pretrain_train: Vec::new(),
        pretrain_val: Vec::new(),
        target_train: Vec::new(),
        target_val: Vec::new(),
        target_test: Vec::new(),
        subsample_digest: None,
        leakage: 0,
    };
    for src in sources {
        let s = build_splits(src, &spec)?;
        let [tr, va, te] = parts(&s, src);
        sets.leakage += leakage(&[tr.clone(), va.clone(), te]);
        sets.pretrain_train.extend(tr);
        sets.pretrain_val.extend(va);
    }
    let mut s = build_splits(target, &spec)?;
    if let Some(f) = fraction {
        s.train = stratified_subsample(target, &s.train, f, seed)?;
    }
    let [tr, va, te] = parts(&s, target);
    if fraction.is_some() {
        sets.subsample_digest = Some(membership_digest(&tr));
    }
    sets.leakage += leakage(&[tr.clone(), va.clone(), te.clone()]);
    let classes = |v: &[&Segment]| v.iter().map(|s| s.label).collect::<std::collections::BTreeSet<FaultLabel>>();
    let seen = classes(&tr);
    if let Some(missing) = classes(&te).difference(&seen).next() {
        return Err(ExperimentError::LabelSpaceMismatch(format!(
            "target label {missing} never appears in the target training data"
        )));
    }
    sets.target_train = tr;
    sets.target_val = va;
    sets.target_test = te;
    Ok(sets)
}

pub fn run_cross_dataset_full(plan: &ExperimentPlan) -> Result<ExperimentReport> {
    expect_kind(plan, &[PlanKind::CrossDatasetFull])?;
    cross_dataset(plan, None)
}

pub fn run_cross_dataset_limited(plan: &ExperimentPlan) -> Result<ExperimentReport> {
    expect_kind(plan, &[PlanKind::CrossDatasetLimited])?;
    cross_dataset(plan, Some(plan.limited_fraction))
}

struct PairedTrial {
    transfer: TrialReport,
    baseline: TrialReport,
    digest: Option<String>,
    leakage: usize,
    target_in_pretrain: usize,
}

fn cross_dataset(plan: &ExperimentPlan, fraction: Option<f64>) -> Result<ExperimentReport> {
    let started = Instant::now();
    let mut cache = Cache::new(plan);
    let mut runs = Vec::new();
    let pretrain = plan.pretrain.clone().unwrap_or_else(|| plan.train.clone());
    for t in &plan.transfers {
        let t0 = Instant::now();
        for id in t.sources.iter().chain([&t.target]) {
            cache.load(id)?;
        }
        let sources: Vec<&[Segment]> = t.sources.iter().map(|id| cache.get(id)).collect();
        let target = cache.get(&t.target);
        let mut run = RunReport::new(t.name());
        run.transfer = Some(t.clone());
        if plan.corpus.is_some() {
            let sets = transfer_sets(&sources, target, plan.seed, plan.balance, fraction)?;
            run.leakage = sets.leakage;
            run.target_in_pretrain = sets.target_in_pretrain(&t.target);
            run.subsample_digests.extend(sets.subsample_digest.clone());
            run.corpus_files = emit_corpora(
                plan,
                &t.name(),
                &[("pretrain", &sets.pretrain_train), ("train", &sets.target_train), ("test", &sets.target_test)],
            )?;
        } else {
            let trials: Vec<PairedTrial> = plan
                .trial_seeds()
                .into_par_iter()
                .map(|seed| paired_trial(plan, t, &sources, target, seed, fraction, &pretrain))
                .collect::<Result<_>>()?;
            finish_paired(&mut run, trials);
        }
        run.wall_time_s = t0.elapsed().as_secs_f64();
        runs.push(run);
    }
    Ok(report(plan, runs, started))
}

fn paired_trial(
    plan: &ExperimentPlan,
    t: &Transfer,
    sources: &[&[Segment]],
    target: &[Segment],
    seed: u64,
    fraction: Option<f64>,
    pretrain: &TrainConfig,
) -> Result<PairedTrial> {
    let sets = transfer_sets(sources, target, seed, plan.balance, fraction)?;
    let init = Model::init(model_config(plan, seed))?;
    let tc = train_config(&plan.train, seed);
    let phase1 = train(init.clone(), &samples(&sets.pretrain_train), &samples(&sets.pretrain_val), &train_config(pretrain, seed))?;
    // Phase 2 starts from fresh optimizer moments.
    let transfer = fit_and_test(phase1.model, &sets.target_train, &sets.target_val, &sets.target_test, &tc, phase1.log)?;
    let baseline = fit_and_test(init, &sets.target_train, &sets.target_val, &sets.target_test, &tc, Vec::new())?;
    Ok(PairedTrial {
        transfer: transfer.trial,
        baseline: baseline.trial,
        target_in_pretrain: sets.target_in_pretrain(&t.target),
        digest: sets.subsample_digest,
        leakage: sets.leakage,
    })
}

fn finish_paired(run: &mut RunReport, trials: Vec<PairedTrial>) {
    let mut transfer = Vec::new();
    let mut baseline = Vec::new();
    for p in trials {
        run.leakage += p.leakage;
        run.target_in_pretrain += p.target_in_pretrain;
        run.subsample_digests.extend(p.digest);
        run.differences.push(p.transfer.test_accuracy - p.baseline.test_accuracy);
        transfer.push(p.transfer);
        baseline.push(p.baseline);
    }
    run.difference = Some(Summary::of(&run.differences));
    let (a, b) = (ArmReport::new("transfer", transfer), ArmReport::new("baseline", baseline));
    info!("{}: transfer {} baseline {}", run.name, a.summary.display(), b.summary.display());
    run.arms = vec![a, b];
}

/// One single-dataset run per (patch, stride) cell of the plan's grid.
pub fn sweep_patch_stride(plan: &ExperimentPlan) -> Result<ExperimentReport> {
    expect_kind(plan, &[PlanKind::Sweep])?;
    let started = Instant::now();
    let spec = plan.primary_dataset()?;
    let segs = load_segments(plan, spec)?;
    let mut runs = Vec::new();
    for (patch_len, stride) in plan.grid.cells()? {
        let model = ModelConfig { patch_len, stride, ..plan.model.clone() };
        model.validate().map_err(|e| ExperimentError::Plan(format!("cell ({patch_len}, {stride}): {e}")))?;
        let (mut run, _) = single_run(plan, &model, &segs, &format!("patch {patch_len} stride {stride}"))?;
        run.cell = Some(SweepCell { patch_len, stride, chosen: (patch_len, stride) == CHOSEN_CELL });
        runs.push(run);
    }
    Ok(report(plan, runs, started))
}
