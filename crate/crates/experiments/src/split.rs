//! Stratified, seeded and leakage-free train/val/test splits.
//!
//! Within each class, every signal's windows are taken in time order and
//! its share of the validation and test windows is cut from the two ends,
//! which end going to which split being seeded. Held-out windows therefore
//! touch the training run at one edge only. Windows that still share samples
//! with another split are purged, held-out splits winning over training.

use std::collections::{BTreeMap, HashMap};

use bdlm_core::synth::mix_seed;
use bdlm_core::{FaultLabel, Segment};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ExperimentError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    #[serde(rename = "train_test_82")]
    TrainTest82,
    #[serde(rename = "train_val_test_811")]
    TrainValTest811,
    /// Train and validation only, used inside the training conditions of a
    /// cross-condition run.
    #[serde(rename = "train_val_81")]
    TrainVal81,
}

impl SplitMode {
    /// Total parts and the train, val and test shares of them.
    fn blocks(self) -> (usize, [usize; 3]) {
        match self {
            SplitMode::TrainTest82 => (5, [4, 0, 1]),
            SplitMode::TrainValTest811 => (10, [8, 1, 1]),
            SplitMode::TrainVal81 => (9, [8, 1, 0]),
        }
    }

    /// Smallest class that still gives every split at least one segment.
    pub fn min_class_size(self) -> usize {
        self.blocks().0
    }

    pub fn fractions(self) -> [f64; 3] {
        let (k, b) = self.blocks();
        b.map(|n| n as f64 / k as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub seed: u64,
    /// Downsample every class to the smallest class count first.
    pub balance: bool,
}

impl SplitSpec {
    pub fn new(mode: SplitMode, seed: u64) -> Self {
        SplitSpec { mode, seed, balance: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    Train,
    Val,
    Test,
}

/// Indices into the segment slice given to [`build_splits`], ascending.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    /// Segments dropped because they overlapped another split or were
    /// trimmed to restore balance afterwards.
    pub purged: usize,
}

impl Splits {
    pub fn part(&self, p: Part) -> &[usize] {
        match p {
            Part::Train => &self.train,
            Part::Val => &self.val,
            Part::Test => &self.test,
        }
    }

    pub fn select<'a>(&self, p: Part, segments: &'a [Segment]) -> Vec<&'a Segment> {
        self.part(p).iter().map(|&i| &segments[i]).collect()
    }
}

/// Segment indices grouped by label, each group ordered by origin.
pub(crate) fn by_class(segments: &[Segment], idx: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &i in idx {
        groups.entry(segments[i].label.class_index()).or_default().push(i);
    }
    for g in groups.values_mut() {
        g.sort_by(|a, b| segments[*a].origin.cmp(&segments[*b].origin).then(a.cmp(b)));
    }
    groups
}

/// Seeded choice of `k` members of `group`, returned in group order.
fn choose(group: &[usize], k: usize, seed: u64) -> Vec<usize> {
    if k >= group.len() {
        return group.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos: Vec<usize> = rand::seq::index::sample(&mut rng, group.len(), k).into_vec();
    pos.sort_unstable();
    pos.into_iter().map(|p| group[p]).collect()
}

pub fn build_splits(segments: &[Segment], spec: &SplitSpec) -> Result<Splits> {
    let all: Vec<usize> = (0..segments.len()).collect();
    build_splits_of(segments, &all, spec)
}

/// As [`build_splits`], restricted to the segments at `idx`.
pub fn build_splits_of(segments: &[Segment], idx: &[usize], spec: &SplitSpec) -> Result<Splits> {
    let k = spec.mode.min_class_size();
    let mut groups = by_class(segments, idx);
    for (&c, g) in &groups {
        if g.len() < k {
            return Err(ExperimentError::ClassTooSmall {
                label: FaultLabel::CLASS_ORDER[c],
                have: g.len(),
                need: k,
            });
        }
    }
    if spec.balance {
        let m = groups.values().map(Vec::len).min().unwrap_or(0);
        for (&c, g) in groups.iter_mut() {
            *g = choose(g, m, mix_seed(spec.seed, &[1, c as u64]));
        }
    }

    let fractions = spec.mode.fractions();
    let mut per_class: BTreeMap<usize, [Vec<usize>; 3]> = BTreeMap::new();
    let mut purged = 0;
    for (&c, g) in &groups {
        let n = g.len();
        let q = apportion(n, &fractions, &[n; 3]);
        let (n_val, n_test) = (q[1], q[2]);
        let runs = signal_runs(segments, g);
        let lens: Vec<usize> = runs.iter().map(|r| r.len()).collect();
        let weights: Vec<f64> = lens.iter().map(|&l| l as f64).collect();
        let val_q = apportion(n_val, &weights, &lens);
        let room: Vec<usize> = lens.iter().zip(&val_q).map(|(l, v)| l - v).collect();
        let test_q = apportion(n_test, &weights, &room);
        let mut parts: [Vec<usize>; 3] = Default::default();
        for (r, run) in runs.iter().enumerate() {
            let (v, t) = (val_q[r], test_q[r]);
            let flip = mix_seed(spec.seed, &[5, c as u64, r as u64]) & 1 == 1;
            let (head, tail) = if flip { (t, v) } else { (v, t) };
            let (a, rest) = run.split_at(head);
            let (mid, b) = rest.split_at(rest.len() - tail);
            let (va, te) = if flip { (b, a) } else { (a, b) };
            parts[0].extend_from_slice(mid);
            parts[1].extend_from_slice(va);
            parts[2].extend_from_slice(te);
        }
        // Test wins over val and train, val wins over train.
        let test_spans = spans(segments, &parts[2]);
        let before = parts[1].len() + parts[0].len();
        parts[1].retain(|&i| !hits(&test_spans, &segments[i]));
        let mut held = test_spans;
        for (sig, v) in spans(segments, &parts[1]) {
            held.entry(sig).or_default().extend(v);
        }
        parts[0].retain(|&i| !hits(&held, &segments[i]));
        purged += before - parts[1].len() - parts[0].len();
        per_class.insert(c, parts);
    }

    if spec.balance {
        for slot in 0..3 {
            let m = per_class.values().map(|p| p[slot].len()).min().unwrap_or(0);
            for p in per_class.values_mut() {
                purged += p[slot].len() - m;
                p[slot].truncate(m);
            }
        }
    }

    let mut out = Splits { purged, ..Splits::default() };
    for parts in per_class.into_values() {
        let [tr, va, te] = parts;
        out.train.extend(tr);
        out.val.extend(va);
        out.test.extend(te);
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

/// Consecutive members of an origin-ordered group sharing a signal.
fn signal_runs<'g>(segments: &[Segment], g: &'g [usize]) -> Vec<&'g [usize]> {
    let mut runs = Vec::new();
    let mut start = 0;
    for i in 1..=g.len() {
        if i == g.len() || segments[g[i]].origin.signal_id != segments[g[start]].origin.signal_id {
            runs.push(&g[start..i]);
            start = i;
        }
    }
    runs
}

/// Splits `total` in proportion to `weights` by largest remainder, ties to
/// the earlier slot, never giving a slot more than its cap.
pub(crate) fn apportion(total: usize, weights: &[f64], caps: &[usize]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut out: Vec<usize> = exact.iter().zip(caps).map(|(e, &c)| (e.floor() as usize).min(c)).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let mut left = total.saturating_sub(out.iter().sum());
    while left > 0 {
        let before = left;
        for &i in &order {
            if left > 0 && out[i] < caps[i] {
                out[i] += 1;
                left -= 1;
            }
        }
        if left == before {
            break;
        }
    }
    out
}

/// `idx` with every class cut to the smallest class count, seeded.
pub fn balance_classes(segments: &[Segment], idx: &[usize], seed: u64) -> Vec<usize> {
    let groups = by_class(segments, idx);
    let m = groups.values().map(Vec::len).min().unwrap_or(0);
    let mut out: Vec<usize> =
        groups.iter().flat_map(|(&c, g)| choose(g, m, mix_seed(seed, &[4, c as u64]))).collect();
    out.sort_unstable();
    out
}

type SpanMap<'a> = HashMap<&'a str, Vec<std::ops::Range<usize>>>;

fn spans<'a>(segments: &'a [Segment], idx: &[usize]) -> SpanMap<'a> {
    let mut m: SpanMap<'a> = HashMap::new();
    for &i in idx {
        m.entry(segments[i].origin.signal_id.as_str()).or_default().push(segments[i].span());
    }
    m
}

fn hits(m: &SpanMap<'_>, s: &Segment) -> bool {
    let r = s.span();
    m.get(s.origin.signal_id.as_str())
        .is_some_and(|v| v.iter().any(|o| o.start < r.end && r.start < o.end))
}

/// Number of window pairs from different groups that share samples of the
/// same signal. Zero means the groups are leakage-free.
pub fn audit_overlap(groups: &[&[&Segment]]) -> usize {
    let mut by_signal: HashMap<&str, Vec<(usize, usize, usize)>> = HashMap::new();
    for (g, segs) in groups.iter().enumerate() {
        for s in segs.iter() {
            let r = s.span();
            by_signal.entry(s.origin.signal_id.as_str()).or_default().push((r.start, r.end, g));
        }
    }
    let mut n = 0;
    for v in by_signal.values_mut() {
        v.sort_unstable();
        for i in 0..v.len() {
            for j in i + 1..v.len() {
                if v[j].0 >= v[i].1 {
                    break;
                }
                if v[j].2 != v[i].2 {
                    n += 1;
                }
            }
        }
    }
    n
}

/// Class-proportional seeded subsample of `fraction` of `idx`.
///
/// The total is `round(fraction * n)`; per-class quotas use largest
/// remainders, ties going to the earlier class.
pub fn stratified_subsample(segments: &[Segment], idx: &[usize], fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(ExperimentError::Plan(format!("limited_fraction must be in (0, 1], got {fraction}")));
    }
    let groups = by_class(segments, idx);
    let n = idx.len();
    let total = (fraction * n as f64).round() as usize;
    let mut quota: Vec<(usize, usize, f64)> = groups
        .iter()
        .map(|(&c, g)| {
            let exact = total as f64 * g.len() as f64 / n as f64;
            (c, exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let mut left = total - quota.iter().map(|q| q.1).sum::<usize>();
    let mut by_rem: Vec<usize> = (0..quota.len()).collect();
    by_rem.sort_by(|&a, &b| quota[b].2.total_cmp(&quota[a].2).then(a.cmp(&b)));
    for &i in &by_rem {
        if left == 0 {
            break;
        }
        quota[i].1 += 1;
        left -= 1;
    }
    let mut out = Vec::with_capacity(total);
    for (c, q, _) in quota {
        let g = &groups[&c];
        if q == 0 {
            return Err(ExperimentError::ClassTooSmall { label: FaultLabel::CLASS_ORDER[c], have: 0, need: 1 });
        }
        out.extend(choose(g, q, mix_seed(seed, &[3, c as u64])));
    }
    out.sort_unstable();
    Ok(out)
}
