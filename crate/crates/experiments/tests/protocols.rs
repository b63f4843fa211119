use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use bdlm_core::synth::{fixture_segments, SyntheticDataset};
use bdlm_core::{FaultLabel, Segment, SegmentationConfig};
use bdlm_experiments::data::load_segments;
use bdlm_experiments::runner::{cross_condition_splits, membership_digest, transfer_sets};
use bdlm_experiments::split::audit_overlap;
use bdlm_experiments::*;

/// Small windows and a one-layer model keep every protocol run to seconds.
fn tiny(kind: &str, extra: &str) -> ExperimentPlan {
    let text = format!(
        r#"
id = "tiny-{kind}"
kind = "{kind}"
trials = 2
seed = 7

[segmentation]
window_len = 512
step = 256

[model]
window_len = 512
patch_len = 64
stride = 32
d_model = 16
n_layers = 1
n_heads = 1

[train]
epochs = 3
batch_size = 8

{extra}
"#
    );
    ExperimentPlan::parse(&text, Path::new(".")).unwrap()
}

const ONE: &str = r#"
[[datasets]]
id = "A"
stand_in = "SYN-A"
segments_per_signal = 20
"#;

const CONDITIONS: &str = r#"
[[datasets]]
id = "CWRU"
stand_in = "SYN-A"
segments_per_signal = 12
conditions = [0, 1, 2, 3]

[[partition]]
train = [0, 1]
test = [2]

[[partition]]
train = [1, 2, 3]
test = [0]
"#;

const FOUR: &str = r#"
[[datasets]]
id = "A"
stand_in = "SYN-A"
segments_per_signal = 30

[[datasets]]
id = "B"
stand_in = "SYN-B"
segments_per_signal = 12

[[datasets]]
id = "C"
stand_in = "SYN-C"
segments_per_signal = 12

[[datasets]]
id = "D"
stand_in = "SYN-D"
segments_per_signal = 12

[[transfer]]
sources = ["B", "C", "D"]
target = "A"
"#;

#[test]
fn single_run_shape_and_determinism() {
    let plan = tiny("single", ONE);
    let a = run_single(&plan).unwrap();
    assert_eq!(a.seeds, vec![7, 8]);
    assert_eq!(a.runs.len(), 1);
    let arm = &a.runs[0].arms[0];
    assert_eq!(arm.trials.len(), 2);
    for t in &arm.trials {
        assert!(!t.log.is_empty() && t.log.len() <= 3);
        assert_eq!(t.confusion.row_sums().iter().sum::<u64>() as usize, t.sizes.test);
        // Balanced test split: every class has the same count.
        let rows: BTreeSet<u64> = t.confusion.row_sums().into_iter().collect();
        assert_eq!(rows.len(), 1);
    }
    let accs = arm.accuracies();
    assert_eq!(arm.summary.mean, (accs[0] + accs[1]) / 2.0);
    assert_eq!(a.leakage(), 0);

    let b = run_single(&plan).unwrap();
    assert_eq!(a.digest(), b.digest());
    let mut c = b.clone();
    c.wall_time_s += 1.0;
    assert_eq!(c.digest(), a.digest());
    c.runs[0].arms[0].trials[0].test_accuracy += 1e-12;
    assert_ne!(c.digest(), a.digest());

    let back = ExperimentReport::from_json(&a.to_json()).unwrap();
    assert_eq!(back.digest(), a.digest());

    let mut csv = Vec::new();
    a.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    let epochs: usize = arm.trials.iter().map(|t| t.log.len()).sum();
    assert_eq!(text.lines().count(), 1 + 2 * epochs + 2);
    assert!(text.starts_with("plan_id,run,arm,trial,epoch,metric,value\n"));
}

#[test]
fn thread_count_does_not_change_results() {
    let plan = tiny("single", ONE);
    let serial = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let wide = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let a = serial.install(|| run_single(&plan)).unwrap();
    let b = wide.install(|| run_single(&plan)).unwrap();
    assert_eq!(a.digest(), b.digest());
}

#[test]
fn cross_condition_membership() {
    let plan = tiny("cross_condition", CONDITIONS);
    let segs = load_segments(&plan, &plan.datasets[0]).unwrap();
    for p in &plan.partitions {
        for seed in 0..3 {
            let s = cross_condition_splits(&segs, p, seed, true).unwrap();
            for &i in &s.test {
                assert!(p.test.contains(&segs[i].condition_id));
            }
            for &i in s.train.iter().chain(&s.val) {
                assert!(p.train.contains(&segs[i].condition_id));
            }
            // Test holds every balanced segment of the test condition.
            assert_eq!(s.test.len(), 4 * 12);
            let parts = [Part::Train, Part::Val, Part::Test].map(|x| s.select(x, &segs));
            assert_eq!(audit_overlap(&[&parts[0], &parts[1], &parts[2]]), 0);
        }
    }
    let report = run_cross_condition(&plan).unwrap();
    assert_eq!(report.runs.len(), 2);
    assert_eq!(report.leakage(), 0);
    assert_eq!(report.runs[0].partition.as_ref().unwrap().test, vec!["2"]);

    let missing = Partition { dataset: None, train: vec!["0".into()], test: vec!["9".into()] };
    assert!(matches!(cross_condition_splits(&segs, &missing, 0, true), Err(ExperimentError::EmptyCondition(c)) if c == "9"));
}

#[test]
fn cross_dataset_full_pairs_arms() {
    let plan = tiny("cross_dataset_full", FOUR);
    let report = run_cross_dataset_full(&plan).unwrap();
    let run = &report.runs[0];
    assert_eq!(run.target_in_pretrain, 0);
    assert_eq!(run.leakage, 0);
    let (t, b) = (run.arm("transfer").unwrap(), run.arm("baseline").unwrap());
    assert_eq!(t.trials.len(), 2);
    for (i, d) in run.differences.iter().enumerate() {
        assert_eq!(*d, t.trials[i].test_accuracy - b.trials[i].test_accuracy);
        assert_eq!(t.trials[i].sizes, b.trials[i].sizes);
        assert!(!t.trials[i].pretrain_log.is_empty());
        assert!(b.trials[i].pretrain_log.is_empty());
    }
    assert!(run.subsample_digests.is_empty());
}

#[test]
fn phase_one_never_sees_the_target() {
    let plan = tiny("cross_dataset_full", FOUR);
    let load = |id: &str| load_segments(&plan, plan.dataset_spec(id).unwrap()).unwrap();
    let (a, b, c, d) = (load("A"), load("B"), load("C"), load("D"));
    let sets = transfer_sets(&[&b, &c, &d], &a, 3, true, None).unwrap();
    assert_eq!(sets.target_in_pretrain("A"), 0);
    assert!(sets.pretrain_train.iter().all(|s| s.dataset_id != "A"));
    let ids: BTreeSet<&str> = sets.pretrain_train.iter().map(|s| s.dataset_id.as_str()).collect();
    assert_eq!(ids, BTreeSet::from(["B", "C", "D"]));
    assert_eq!(sets.leakage, 0);
}

#[test]
fn limited_arms_share_the_subsample() {
    let plan = tiny("cross_dataset_limited", FOUR);
    let load = |id: &str| load_segments(&plan, plan.dataset_spec(id).unwrap()).unwrap();
    let (a, b, c, d) = (load("A"), load("B"), load("C"), load("D"));
    let x = transfer_sets(&[&b, &c, &d], &a, 11, true, Some(0.1)).unwrap();
    let y = transfer_sets(&[&b, &c, &d], &a, 11, true, Some(0.1)).unwrap();
    assert_eq!(x.subsample_digest, y.subsample_digest);
    assert_eq!(x.target_train, y.target_train);
    let full = transfer_sets(&[&b, &c, &d], &a, 11, true, None).unwrap();
    assert_eq!(x.target_test, full.target_test);
    assert_eq!(x.target_train.len(), (full.target_train.len() as f64 * 0.1).round() as usize);
    assert!(x.target_train.iter().all(|s| full.target_train.contains(s)));

    let report = run_cross_dataset_limited(&plan).unwrap();
    let run = &report.runs[0];
    assert_eq!(run.subsample_digests.len(), 2);
    let (t, base) = (run.arm("transfer").unwrap(), run.arm("baseline").unwrap());
    for i in 0..2 {
        assert_eq!(t.trials[i].sizes.train, x.target_train.len());
        assert_eq!(t.trials[i].sizes, base.trials[i].sizes);
        assert_eq!(t.trials[i].train_digest, base.trials[i].train_digest);
        assert_eq!(t.trials[i].train_digest, run.subsample_digests[i]);
    }
    assert_eq!(run.subsample_digests[0], membership_digest(&transfer_sets(&[&b, &c, &d], &a, 7, true, Some(0.1)).unwrap().target_train));
    assert_ne!(run.subsample_digests[0], run.subsample_digests[1]);
}

#[test]
fn sweep_records_cells() {
    let mut plan = tiny("sweep", ONE);
    plan.trials = 1;
    plan.grid = Grid::Cells(vec![(64, 32), (128, 64)]);
    let report = sweep_patch_stride(&plan).unwrap();
    assert_eq!(report.runs.len(), 2);
    let cells: Vec<(usize, usize)> = report.runs.iter().map(|r| r.cell.map(|c| (c.patch_len, c.stride)).unwrap()).collect();
    assert_eq!(cells, vec![(64, 32), (128, 64)]);
    assert!(report.runs.iter().all(|r| r.wall_time_s > 0.0));
    plan.grid = Grid::Cells(vec![(1024, 8)]);
    assert!(matches!(sweep_patch_stride(&plan), Err(ExperimentError::Plan(_))));
}

#[test]
fn corpus_job_writes_split_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut plan = tiny("single", ONE);
    plan.corpus = Some(plan::CorpusJob { out_dir: dir.path().to_path_buf(), template: None });
    let report = run_single(&plan).unwrap();
    let run = &report.runs[0];
    assert!(run.arms.is_empty());
    let names: Vec<String> =
        run.corpus_files.iter().map(|f| f.path.file_name().unwrap().to_string_lossy().into_owned()).collect();
    assert_eq!(names, ["tiny-single-a-train.jsonl", "tiny-single-a-val.jsonl", "tiny-single-a-test.jsonl"]);
    for f in &run.corpus_files {
        let text = std::fs::read_to_string(&f.path).unwrap();
        assert_eq!(text.lines().count(), f.lines);
    }
    assert!(std::fs::read_to_string(&run.corpus_files[0].path).unwrap().contains("inner ring fault"));
}

fn shipped(name: &str) -> ExperimentPlan {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "plans", name].iter().collect();
    ExperimentPlan::load(&path).unwrap()
}

#[test]
fn shipped_plans_validate() {
    let cc = shipped("cwru_cross_condition.toml");
    let rows: Vec<(Vec<&str>, Vec<&str>)> = cc
        .partitions
        .iter()
        .map(|p| (p.train.iter().map(String::as_str).collect(), p.test.iter().map(String::as_str).collect()))
        .collect();
    let expected: [(&[&str], &str); 16] = [
        (&["0", "1"], "2"),
        (&["0", "1"], "3"),
        (&["1", "2"], "0"),
        (&["1", "2"], "3"),
        (&["0", "2"], "1"),
        (&["0", "2"], "3"),
        (&["1", "3"], "2"),
        (&["1", "3"], "0"),
        (&["0", "3"], "1"),
        (&["0", "3"], "2"),
        (&["2", "3"], "0"),
        (&["2", "3"], "1"),
        (&["1", "2", "3"], "0"),
        (&["0", "2", "3"], "1"),
        (&["0", "1", "2"], "3"),
        (&["0", "1", "3"], "2"),
    ];
    assert_eq!(rows.len(), 16);
    for ((train, test), (et, ee)) in rows.iter().zip(expected) {
        assert_eq!(train.as_slice(), et);
        assert_eq!(test.as_slice(), [ee]);
    }
    assert_eq!(cc.train.epochs, 10);

    for (name, target_order) in [
        ("cross_dataset_full.toml", ["PU", "JNU", "MFPT", "CWRU"]),
        ("cross_dataset_limited.toml", ["PU", "JNU", "MFPT", "CWRU"]),
    ] {
        let p = shipped(name);
        let targets: Vec<&str> = p.transfers.iter().map(|t| t.target.as_str()).collect();
        assert_eq!(targets, target_order);
        for t in &p.transfers {
            assert_eq!(t.sources.len(), 3);
            assert!(!t.sources.contains(&t.target));
        }
    }
    assert_eq!(shipped("cross_dataset_limited.toml").limited_fraction, 0.10);
    let single = shipped("synthetic_single.toml");
    assert_eq!((single.model.patch_len, single.model.stride, single.train.lr), (128, 8, 0.001));
    let sweep = shipped("table8_sweep.toml");
    assert_eq!(sweep.grid.cells().unwrap(), TABLE8_GRID.to_vec());
}

#[test]
fn metrics_match_counting_oracle() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
    for _ in 0..50 {
        let n = rng.random_range(0..200);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
        let preds: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
        let m = compute_metrics(&preds, &labels).unwrap();
        for t in 0..4 {
            for p in 0..4 {
                let count = (0..n).filter(|&i| labels[i] == t && preds[i] == p).count() as u64;
                assert_eq!(m.confusion.counts[t][p], count);
            }
        }
        let hits = (0..n).filter(|&i| labels[i] == preds[i]).count();
        let want = if n == 0 { 0.0 } else { hits as f64 / n as f64 };
        assert_eq!(m.accuracy, want);
        assert_eq!(m.accuracy, m.confusion.accuracy());
    }
    let cm = ConfusionMatrix::default();
    assert_eq!(
        cm.labels,
        [FaultLabel::RollingElement, FaultLabel::InnerRace, FaultLabel::Normal, FaultLabel::OuterRace]
    );
}

#[test]
fn embeddings_export_and_separate_classes() {
    let seg = SegmentationConfig::new(512, 256).unwrap();
    let ds = SyntheticDataset::four_class("SYN-A", 1.0);
    let segs: Vec<Segment> = fixture_segments(&ds, &[0], 24, &seg, 3)
        .unwrap()
        .into_iter()
        .filter(|s| matches!(s.label, FaultLabel::Normal | FaultLabel::InnerRace))
        .collect();
    let cfg = bdlm_model::ModelConfig {
        window_len: 512,
        patch_len: 64,
        stride: 32,
        d_model: 16,
        n_heads: 1,
        n_layers: 1,
        n_classes: 4,
        seed: 2,
        ..Default::default()
    };
    let refs: Vec<&Segment> = segs.iter().collect();
    let train = bdlm_experiments::runner::samples(&refs);
    let tc = bdlm_model::TrainConfig { epochs: 15, batch_size: 8, lr: 3e-3, seed: 1, ..Default::default() };
    let model = bdlm_model::train(bdlm_model::Model::init(cfg).unwrap(), &train, &train, &tc).unwrap().model;

    let dir = tempfile::tempdir().unwrap();
    let (p1, p2) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    assert_eq!(export_embeddings(&model, &refs, &p1).unwrap(), segs.len());
    export_embeddings(&model, &refs, &p2).unwrap();
    let text = std::fs::read_to_string(&p1).unwrap();
    assert_eq!(text, std::fs::read_to_string(&p2).unwrap());
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    assert_eq!(rdr.headers().unwrap().len(), 5 + 16);
    let rows: Vec<(String, Vec<f64>)> = rdr
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[2].to_string(), r.iter().skip(5).map(|v| v.parse().unwrap()).collect())
        })
        .collect();
    assert_eq!(rows.len(), segs.len());

    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let group = |l: &str| rows.iter().filter(|r| r.0 == l).map(|r| r.1.clone()).collect::<Vec<_>>();
    let centroid = |g: &[Vec<f64>]| (0..16).map(|j| g.iter().map(|v| v[j]).sum::<f64>() / g.len() as f64).collect::<Vec<_>>();
    let (n, i) = (group("normal"), group("inner_race"));
    let (cn, ci) = (centroid(&n), centroid(&i));
    let within = n.iter().map(|v| dist(v, &cn)).chain(i.iter().map(|v| dist(v, &ci))).sum::<f64>() / (n.len() + i.len()) as f64;
    assert!(dist(&cn, &ci) > within, "centroids {} apart, within-class {within}", dist(&cn, &ci));
}
