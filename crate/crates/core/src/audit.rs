//! The adversary audit: labeled runs recorded by the observer, then every
//! check the server could attempt, gathered into one JSON report.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::adversary::{self, ClassifierScore, DetectorPrior, DetectorReport, Label};
use crate::client::Route;
use crate::config::{Backend, Config};
use crate::error::{Error, Result};
use crate::observer::{DigestGranularity, ObserverTrace};
use crate::rng::{SeedStreams, Stream};
use crate::session::{OpResult, Session};
use crate::stats::ChiSquare;
use crate::workload::{self, Op};

/// Accuracy band a classifier must stay inside to count as guessing.
pub const CHANCE_BAND: (f64, f64) = (0.48, 0.52);
pub const P_THRESHOLD: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuditSpec {
    /// ORAM reads and writes in the labeled run, interleaved at random.
    pub labeled_reads: u64,
    pub labeled_writes: u64,
    /// Run-phase operations replayed by each invisibility run.
    pub invisibility_ops: u64,
    /// Extra one-sided reads inserted into the second invisibility run.
    pub invisibility_reads: u64,
    pub detector_trials: u64,
    pub detector_block_count: u64,
    pub detector_accesses: u64,
    pub detector_max_reads: u64,
}

impl Default for AuditSpec {
    fn default() -> Self {
        AuditSpec {
            labeled_reads: 25_000,
            labeled_writes: 25_000,
            invisibility_ops: 2_000,
            invisibility_reads: 10_000,
            detector_trials: 20,
            detector_block_count: 4_096,
            detector_accesses: 500,
            detector_max_reads: 20_000,
        }
    }
}

impl AuditSpec {
    pub fn validate(&self) -> Result<()> {
        if self.labeled_reads == 0 || self.labeled_writes == 0 {
            return Err(Error::config("the labeled run needs both reads and writes"));
        }
        if self.detector_trials < 2 {
            return Err(Error::config("the detector needs at least two trials"));
        }
        if self.detector_block_count == 0 {
            return Err(Error::config("detector_block_count must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledRun {
    pub reads: u64,
    pub writes: u64,
    pub events: usize,
    /// Events whose deepest changed bucket is a leaf.
    pub leaf_events: usize,
    pub max_stash: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvisibilityCheck {
    pub snap_every: u64,
    /// Visible operations only.
    pub baseline: String,
    /// The same, plus inserted one-sided reads.
    pub with_reads: String,
    /// Only the ORAM accesses of the baseline, its one-sided reads deleted.
    pub oram_only: String,
    pub inserted_reads: u64,
    pub deleted_reads: u64,
    pub identical: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub snap_every: u64,
    pub granularity: DigestGranularity,
    pub x_percent: f64,
    pub labeled: LabeledRun,
    pub leaf_uniformity: ChiSquare,
    pub read_write_homogeneity: ChiSquare,
    pub classifiers: Vec<ClassifierScore>,
    pub best_classifier: ClassifierScore,
    pub invisibility: Vec<InvisibilityCheck>,
    pub invisible: bool,
    pub detector: DetectorReport,
    pub max_stash: usize,
    pub pass: bool,
}

impl AuditReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Hands out loaded sessions: forks of one template on the simulated
/// backend, fresh loads on the wire.
struct Sessions<'a> {
    config: Config,
    load: &'a [Op],
    template: Option<Session>,
}

impl<'a> Sessions<'a> {
    fn new(config: Config, load: &'a [Op]) -> Result<Self> {
        let template = match config.backend {
            Backend::Simulated => Some(Session::loaded(&config, Backend::Simulated, &config.profile, load)?),
            Backend::Wire => None,
        };
        Ok(Sessions { config, load, template })
    }

    fn next(&self, x_percent: f64) -> Result<Session> {
        let mut s = match &self.template {
            Some(t) => t.try_fork()?,
            None => Session::loaded(&self.config, self.config.backend, &self.config.profile, self.load)?,
        };
        s.client.set_oram_fraction(x_percent)?;
        Ok(s)
    }
}

fn random_value(rng: &mut impl RngCore, len: usize) -> Vec<u8> {
    let mut v = vec![0u8; len];
    rng.fill_bytes(&mut v);
    v
}

/// Runs one visible access and labels the non-empty events it produced.
fn labeled_access(s: &mut Session, op: &Op, label: Label, labels: &mut Vec<Label>) -> Result<()> {
    let trace_len = |s: &Session| s.client.transport().observer().map_or(0, |o| o.trace().events.len());
    let before = trace_len(s);
    match op {
        Op::Put { key, value } => s.client.put(*key, value)?,
        Op::Get { key } => {
            s.client.oram_get(*key)?;
        }
    }
    let observer = s.client.transport().observer().expect("observer attached");
    labels.extend(observer.trace().events[before..].iter().filter(|e| !e.diff.is_empty()).map(|_| label));
    Ok(())
}

fn labeled_run(sessions: &Sessions<'_>, config: &Config) -> Result<(ObserverTrace, Vec<Label>, LabeledRun)> {
    let spec = &config.audit;
    let mut rng = SeedStreams::new(config.workload.seed).substream(Stream::Adversary, 0);
    let keys = config.workload.record_count;
    let mut kinds: Vec<Label> = (0..spec.labeled_reads).map(|_| Label::Read).chain((0..spec.labeled_writes).map(|_| Label::Write)).collect();
    kinds.shuffle(&mut rng);
    let mut s = sessions.next(100.0)?;
    s.attach(1)?;
    let mut labels = Vec::with_capacity(kinds.len());
    for kind in kinds {
        let key = rng.random_range(0..keys);
        let op = match kind {
            Label::Read => Op::Get { key },
            Label::Write => Op::Put { key, value: random_value(&mut rng, config.client.value_bytes) },
        };
        labeled_access(&mut s, &op, kind, &mut labels)?;
    }
    let max_stash = s.client.metrics().max_stash;
    let trace = s.detach().expect("observer attached");
    // the closing snapshot follows the last write-back, so it is empty
    debug_assert_eq!(trace.nonempty().count(), labels.len());
    let layout = s.client.layout();
    let leaf_events = adversary::features(&trace, layout).iter().filter(|f| f.leaf.is_some()).count();
    let run = LabeledRun { reads: spec.labeled_reads, writes: spec.labeled_writes, events: labels.len(), leaf_events, max_stash };
    Ok((trace, labels, run))
}

fn invisibility_check(sessions: &Sessions<'_>, config: &Config, ops: &[Op], snap_every: u64) -> Result<InvisibilityCheck> {
    let x = config.client.mix.oram_fraction;
    let keys = config.workload.record_count;

    let mut a = sessions.next(x)?;
    a.attach(snap_every)?;
    let mut routes: Vec<Option<Route>> = Vec::with_capacity(ops.len());
    for op in ops {
        routes.push(match a.apply(op)? {
            OpResult::Get { route, .. } => Some(route),
            OpResult::Put => None,
        });
    }
    let baseline = a.detach().expect("observer attached");

    // extra reads: a sorted list of insertion points, each before some op
    let mut rng = SeedStreams::new(config.workload.seed).substream(Stream::Adversary, 1);
    let mut inserts: Vec<(usize, u64)> =
        (0..config.audit.invisibility_reads).map(|_| (rng.random_range(0..=ops.len()), rng.random_range(0..keys))).collect();
    inserts.sort_unstable();
    let mut b = sessions.next(x)?;
    b.attach(snap_every)?;
    let mut next = inserts.iter().peekable();
    for (i, op) in ops.iter().enumerate() {
        while let Some(&(_, key)) = next.next_if(|(at, _)| *at == i) {
            b.client.one_sided_get(key)?;
        }
        b.apply(op)?;
    }
    for &(_, key) in next {
        b.client.one_sided_get(key)?;
    }
    let with_reads = b.detach().expect("observer attached");

    let mut c = sessions.next(x)?;
    c.attach(snap_every)?;
    let mut deleted = 0;
    for (op, route) in ops.iter().zip(&routes) {
        match (op, route) {
            (Op::Put { key, value }, _) => c.client.put(*key, value)?,
            (Op::Get { key }, Some(Route::Oram)) => {
                c.client.oram_get(*key)?;
            }
            (Op::Get { .. }, _) => deleted += 1,
        }
    }
    let oram_only = c.detach().expect("observer attached");

    let identical = baseline == with_reads && baseline == oram_only;
    Ok(InvisibilityCheck {
        snap_every,
        baseline: baseline.fingerprint(),
        with_reads: with_reads.fingerprint(),
        oram_only: oram_only.fingerprint(),
        inserted_reads: config.audit.invisibility_reads,
        deleted_reads: deleted,
        identical,
    })
}

fn detector(config: &Config) -> Result<DetectorReport> {
    let spec = &config.audit;
    let mut small = config.clone();
    small.client.block_count = spec.detector_block_count;
    small.workload.record_count = spec.detector_block_count;
    small.workload.op_count = 0;
    let load = workload::generate(&small.workload)?.load;
    let sessions = Sessions::new(small.clone(), &load)?;
    let keys = spec.detector_block_count;

    // one fixed visible sequence for every trial
    let mut rng = SeedStreams::new(config.workload.seed).substream(Stream::Adversary, 2);
    let visible: Vec<Op> = (0..spec.detector_accesses)
        .map(|_| {
            let key = rng.random_range(0..keys);
            if rng.random_bool(0.5) {
                Op::Get { key }
            } else {
                Op::Put { key, value: random_value(&mut rng, small.client.value_bytes) }
            }
        })
        .collect();
    let prior = DetectorPrior { min_reads: 0, max_reads: spec.detector_max_reads, oram_accesses: spec.detector_accesses };

    let mut traces = Vec::new();
    let mut truths = Vec::new();
    for trial in 0..spec.detector_trials {
        let mut trng = SeedStreams::new(config.workload.seed).substream(Stream::Adversary, 16 + trial);
        let truth = trng.random_range(prior.min_reads..=prior.max_reads);
        let mut at: Vec<usize> = (0..truth).map(|_| trng.random_range(0..=visible.len())).collect();
        at.sort_unstable();
        let mut s = sessions.next(100.0)?;
        s.attach(1)?;
        let mut pending = at.iter().peekable();
        for (i, op) in visible.iter().enumerate() {
            while pending.next_if(|&&p| p == i).is_some() {
                s.client.one_sided_get(trng.random_range(0..keys))?;
            }
            match op {
                Op::Put { key, value } => s.client.put(*key, value)?,
                Op::Get { key } => {
                    s.client.oram_get(*key)?;
                }
            }
        }
        for _ in pending {
            s.client.one_sided_get(trng.random_range(0..keys))?;
        }
        traces.push(s.detach().expect("observer attached"));
        truths.push(truth);
    }
    Ok(adversary::evaluate_detectors(&traces, &truths, &prior))
}

/// Full audit. Leakage statistics always use the finest schedule
/// (`snap_every = 1`); the invisibility check runs at 1, at `snap_every`
/// and at twice `snap_every`.
pub fn audit(config: &Config, snap_every: u64) -> Result<AuditReport> {
    config.validate()?;
    if snap_every == 0 {
        return Err(Error::config("snapshot frequency must be at least 1"));
    }
    let w = workload::generate(&config.workload)?;
    let sessions = Sessions::new(config.clone(), &w.load)?;
    let layout = config.client.layout()?;

    let (trace, labels, labeled) = labeled_run(&sessions, config)?;
    let feats = adversary::features(&trace, &layout);
    let leaf_uniformity = adversary::leaf_uniformity(&feats, &layout);
    let read_write_homogeneity = adversary::leaf_homogeneity(&feats, &labels, &layout);
    let classifiers = adversary::evaluate_classifiers(&trace, &labels, &layout);
    let best_classifier = adversary::best(&classifiers).expect("classifiers are scored").clone();
    drop(trace);

    let ops = &w.run[..w.run.len().min(config.audit.invisibility_ops as usize)];
    let mut freqs = vec![1, snap_every, snap_every.saturating_mul(2)];
    freqs.sort_unstable();
    freqs.dedup();
    let invisibility = freqs.into_iter().map(|f| invisibility_check(&sessions, config, ops, f)).collect::<Result<Vec<_>>>()?;
    let invisible = invisibility.iter().all(|c| c.identical);
    drop(sessions);

    let detector = detector(config)?;
    let in_band = (CHANCE_BAND.0..=CHANCE_BAND.1).contains(&best_classifier.accuracy);
    let pass = leaf_uniformity.p_value > P_THRESHOLD
        && read_write_homogeneity.p_value > P_THRESHOLD
        && in_band
        && invisible
        && detector.pass;
    Ok(AuditReport {
        snap_every,
        granularity: config.granularity,
        x_percent: config.client.mix.oram_fraction,
        max_stash: labeled.max_stash,
        labeled,
        leaf_uniformity,
        read_write_homogeneity,
        classifiers,
        best_classifier,
        invisibility,
        invisible,
        detector,
        pass,
    })
}
