//! What the server can try with its trace: tell ORAM reads from writes, and
//! estimate how many one-sided reads happened.
//!
//! Everything here is a pure function of an [`ObserverTrace`] plus, for
//! scoring, labels the server never sees.

use serde::{Deserialize, Serialize};

use crate::layout::TreeLayout;
use crate::observer::ObserverTrace;
use crate::stats::{self, ChiSquare};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Label {
    Read,
    Write,
}

/// Per-event features of a non-empty diff.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventFeatures {
    /// Leaf under the deepest changed bucket, when that bucket is a leaf.
    pub leaf: Option<u64>,
    pub size: usize,
    /// Write verbs since the previous non-empty event.
    pub clock_gap: u64,
    pub prev_leaf: Option<u64>,
}

pub fn features(trace: &ObserverTrace, layout: &TreeLayout) -> Vec<EventFeatures> {
    let mut out = Vec::new();
    let mut last_clock = 0;
    let mut prev_leaf = None;
    for event in trace.nonempty() {
        let buckets = trace.event_buckets(event, layout);
        let leaf = buckets.last().and_then(|&b| layout.bucket_leaf(b));
        out.push(EventFeatures { leaf, size: buckets.len(), clock_gap: event.server_clock - last_clock, prev_leaf });
        last_clock = event.server_clock;
        prev_leaf = leaf;
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classifier {
    ConstantRead,
    ConstantWrite,
    /// Read iff the leaf lies in the left half of the tree.
    LeafHalf,
    /// Read iff the leaf is even.
    LeafParity,
    /// Write iff the diff is larger than the smallest seen.
    DiffSize,
    /// Write iff more than one write verb separates this event from the last.
    ClockGap,
    /// Read iff this event hit the same leaf as the previous one.
    RepeatLeaf,
    /// Majority label per leaf bin, learned on the other half of the trace.
    LeafHistogram,
}

impl Classifier {
    pub const ALL: [Classifier; 8] = [
        Classifier::ConstantRead,
        Classifier::ConstantWrite,
        Classifier::LeafHalf,
        Classifier::LeafParity,
        Classifier::DiffSize,
        Classifier::ClockGap,
        Classifier::RepeatLeaf,
        Classifier::LeafHistogram,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Classifier::ConstantRead => "constant-read",
            Classifier::ConstantWrite => "constant-write",
            Classifier::LeafHalf => "leaf-half",
            Classifier::LeafParity => "leaf-parity",
            Classifier::DiffSize => "diff-size",
            Classifier::ClockGap => "clock-gap",
            Classifier::RepeatLeaf => "repeat-leaf",
            Classifier::LeafHistogram => "leaf-histogram",
        }
    }

    fn needs_training(self) -> bool {
        self == Classifier::LeafHistogram
    }
}

fn guess(b: bool, if_true: Label) -> Label {
    match (b, if_true) {
        (true, l) => l,
        (false, Label::Read) => Label::Write,
        (false, Label::Write) => Label::Read,
    }
}

/// Label-free guesses for one non-empty event each. The trained classifier
/// falls back to guessing read; use [`evaluate_classifiers`] to score it.
pub fn classify_trace(trace: &ObserverTrace, layout: &TreeLayout, classifier: Classifier) -> Vec<Label> {
    let feats = features(trace, layout);
    let half = layout.leaf_count() / 2;
    let min_size = feats.iter().map(|f| f.size).min().unwrap_or(0);
    feats
        .iter()
        .map(|f| match classifier {
            Classifier::ConstantRead | Classifier::LeafHistogram => Label::Read,
            Classifier::ConstantWrite => Label::Write,
            Classifier::LeafHalf => guess(f.leaf.is_some_and(|l| l < half), Label::Read),
            Classifier::LeafParity => guess(f.leaf.is_some_and(|l| l % 2 == 0), Label::Read),
            Classifier::DiffSize => guess(f.size > min_size, Label::Write),
            Classifier::ClockGap => guess(f.clock_gap > 1, Label::Write),
            Classifier::RepeatLeaf => guess(f.leaf.is_some() && f.leaf == f.prev_leaf, Label::Read),
        })
        .collect()
}

struct LeafModel {
    bins: usize,
    leaf_count: u64,
    majority: Vec<Label>,
}

impl LeafModel {
    fn bin(&self, leaf: Option<u64>) -> usize {
        match leaf {
            Some(l) => (l * self.bins as u64 / self.leaf_count) as usize,
            None => self.bins,
        }
    }

    fn train(feats: &[EventFeatures], labels: &[Label], leaf_count: u64, bins: usize) -> Self {
        let mut model = LeafModel { bins, leaf_count, majority: Vec::new() };
        let mut votes = vec![(0u64, 0u64); bins + 1];
        for (f, l) in feats.iter().zip(labels) {
            let v = &mut votes[model.bin(f.leaf)];
            match l {
                Label::Read => v.0 += 1,
                Label::Write => v.1 += 1,
            }
        }
        model.majority = votes.iter().map(|&(r, w)| if w > r { Label::Write } else { Label::Read }).collect();
        model
    }

    fn predict(&self, f: &EventFeatures) -> Label {
        self.majority[self.bin(f.leaf)]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierScore {
    pub name: String,
    pub accuracy: f64,
    pub events: usize,
}

fn accuracy(guesses: &[Label], labels: &[Label]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    guesses.iter().zip(labels).filter(|(g, l)| g == l).count() as f64 / labels.len() as f64
}

/// Scores every built-in classifier against the hidden labels, one per
/// non-empty event in trace order. The trained model is scored by two-fold
/// cross-validation over the first and second halves.
pub fn evaluate_classifiers(trace: &ObserverTrace, labels: &[Label], layout: &TreeLayout) -> Vec<ClassifierScore> {
    let feats = features(trace, layout);
    assert_eq!(feats.len(), labels.len(), "one label per non-empty event");
    Classifier::ALL
        .iter()
        .map(|&c| {
            let guesses = if c.needs_training() {
                let mid = feats.len() / 2;
                let bins = stats::leaf_bins(layout.leaf_count(), mid.max(1));
                let first = LeafModel::train(&feats[..mid], &labels[..mid], layout.leaf_count(), bins);
                let second = LeafModel::train(&feats[mid..], &labels[mid..], layout.leaf_count(), bins);
                let mut g: Vec<Label> = feats[..mid].iter().map(|f| second.predict(f)).collect();
                g.extend(feats[mid..].iter().map(|f| first.predict(f)));
                g
            } else {
                classify_trace(trace, layout, c)
            };
            ClassifierScore { name: c.name().to_string(), accuracy: accuracy(&guesses, labels), events: labels.len() }
        })
        .collect()
}

pub fn best(scores: &[ClassifierScore]) -> Option<&ClassifierScore> {
    scores.iter().max_by(|a, b| a.accuracy.total_cmp(&b.accuracy))
}

fn leaf_histogram<'a>(feats: impl Iterator<Item = &'a EventFeatures>, layout: &TreeLayout, bins: usize) -> Vec<u64> {
    stats::histogram(feats.filter_map(|f| f.leaf), layout.leaf_count(), bins)
}

/// Chi-square uniformity of the accessed leaves.
pub fn leaf_uniformity(feats: &[EventFeatures], layout: &TreeLayout) -> ChiSquare {
    let bins = stats::leaf_bins(layout.leaf_count(), feats.len());
    stats::uniformity(&leaf_histogram(feats.iter(), layout, bins))
}

/// Two-sample test: are read-event leaves distributed like write-event leaves?
pub fn leaf_homogeneity(feats: &[EventFeatures], labels: &[Label], layout: &TreeLayout) -> ChiSquare {
    let pick = |want: Label| feats.iter().zip(labels).filter(move |(_, &l)| l == want).map(|(f, _)| f);
    let smaller = pick(Label::Read).count().min(pick(Label::Write).count());
    let bins = stats::leaf_bins(layout.leaf_count(), smaller);
    stats::homogeneity(&leaf_histogram(pick(Label::Read), layout, bins), &leaf_histogram(pick(Label::Write), layout, bins))
}

/// What the server may assume about a run: how many one-sided reads it
/// could contain, and how many visible ORAM accesses it does contain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorPrior {
    pub min_reads: u64,
    pub max_reads: u64,
    pub oram_accesses: u64,
}

impl DetectorPrior {
    pub fn mean(&self) -> f64 {
        (self.min_reads + self.max_reads) as f64 / 2.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    PriorMean,
    /// Scales the prior by observed over expected non-empty events.
    EventRatio,
    /// Counts empty diffs, as if each hid a read.
    EmptyDiffs,
    /// Reads the excess of the server clock over the visible accesses.
    ClockExcess,
}

impl Estimator {
    pub const ALL: [Estimator; 4] = [Estimator::PriorMean, Estimator::EventRatio, Estimator::EmptyDiffs, Estimator::ClockExcess];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::PriorMean => "prior-mean",
            Estimator::EventRatio => "event-ratio",
            Estimator::EmptyDiffs => "empty-diffs",
            Estimator::ClockExcess => "clock-excess",
        }
    }
}

/// Estimated one-sided read count, from the trace alone.
pub fn detect_onesided(trace: &ObserverTrace, estimator: Estimator, prior: &DetectorPrior) -> f64 {
    let nonempty = trace.nonempty().count() as f64;
    let clock = trace.events.last().map_or(0, |e| e.server_clock) as f64;
    let expected = prior.oram_accesses.max(1) as f64;
    let estimate = match estimator {
        Estimator::PriorMean => prior.mean(),
        Estimator::EventRatio => prior.mean() * nonempty / expected,
        Estimator::EmptyDiffs => (trace.events.len() as f64 - nonempty) * prior.mean() / expected,
        Estimator::ClockExcess => prior.mean() + (clock - expected),
    };
    estimate.clamp(prior.min_reads as f64, prior.max_reads as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorScore {
    pub name: String,
    pub mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorReport {
    pub trials: usize,
    /// Error of the best constant guess in hindsight (the variance of the
    /// true counts). No trace-free guess can do better.
    pub baseline_mse: f64,
    pub prior_mean_mse: f64,
    pub estimators: Vec<DetectorScore>,
    /// Whether every trial produced the same trace.
    pub traces_identical: bool,
    pub best_mse: f64,
    /// No estimator beat the baseline.
    pub pass: bool,
}

pub fn evaluate_detectors(traces: &[ObserverTrace], truths: &[u64], prior: &DetectorPrior) -> DetectorReport {
    assert_eq!(traces.len(), truths.len());
    let n = truths.len().max(1) as f64;
    let mean = truths.iter().sum::<u64>() as f64 / n;
    let mse = |est: &dyn Fn(usize) -> f64| truths.iter().enumerate().map(|(i, &t)| (est(i) - t as f64).powi(2)).sum::<f64>() / n;
    let baseline_mse = mse(&|_| mean);
    let prior_mean_mse = mse(&|_| prior.mean());
    let estimators: Vec<DetectorScore> = Estimator::ALL
        .iter()
        .map(|&e| DetectorScore { name: e.name().to_string(), mse: mse(&|i| detect_onesided(&traces[i], e, prior)) })
        .collect();
    let best_mse = estimators.iter().map(|s| s.mse).fold(f64::INFINITY, f64::min);
    // relative slack for float summation order only
    let pass = best_mse >= baseline_mse * (1.0 - 1e-9);
    let traces_identical = traces.windows(2).all(|w| w[0] == w[1]);
    DetectorReport { trials: truths.len(), baseline_mse, prior_mean_mse, estimators, traces_identical, best_mse, pass }
}
