//! The untrusted server's view.
//!
//! The observer digests the region (one SHA-256 per bucket, or per slot),
//! and diffs consecutive snapshots. Its schedule is driven by the server's
//! own clock, which advances on write verbs only: the server cannot time
//! anything off a one-sided read, because it never sees one. With
//! `snap_every = 1` it snapshots at every write-verb boundary, which is the
//! finest schedule that can observe any change.
//!
//! Only one observer may be attached to a region at a time; it consumes the
//! region's written-slot list to re-digest incrementally.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::error::{Error, Result};
use crate::layout::TreeLayout;
use crate::transport::{Fork, NetProfile, RegionStore, Transport, TransportMetrics};

pub type Digest = [u8; 32];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DigestGranularity {
    #[default]
    Bucket,
    Slot,
}

impl DigestGranularity {
    fn unit_bytes(self, layout: &TreeLayout) -> usize {
        match self {
            DigestGranularity::Bucket => layout.bucket_bytes(),
            DigestGranularity::Slot => layout.slot_bytes(),
        }
    }

    fn units(self, layout: &TreeLayout) -> u64 {
        match self {
            DigestGranularity::Bucket => layout.bucket_count(),
            DigestGranularity::Slot => layout.slot_count(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Snapshot {
    pub seq: u64,
    /// Write verbs the server had seen when this snapshot was taken.
    pub server_clock: u64,
    pub granularity: DigestGranularity,
    pub digests: Vec<Digest>,
}

/// Indices of units whose digest differs, ascending.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotDiff {
    pub changed: Vec<u64>,
}

impl SnapshotDiff {
    pub fn is_empty(&self) -> bool {
        self.changed.is_empty()
    }
}

fn digest(bytes: &[u8]) -> Digest {
    Sha256::digest(bytes).into()
}

/// Digests the whole region from scratch.
pub fn take_snapshot(region: &RegionStore, layout: &TreeLayout, granularity: DigestGranularity) -> Snapshot {
    let unit = granularity.unit_bytes(layout);
    let units = granularity.units(layout) as usize;
    let digests = region.with_contents(|bytes| bytes.chunks(unit).take(units).map(digest).collect());
    Snapshot { seq: 0, server_clock: 0, granularity, digests }
}

pub fn diff(a: &Snapshot, b: &Snapshot) -> Result<SnapshotDiff> {
    if a.digests.len() != b.digests.len() || a.granularity != b.granularity {
        return Err(Error::LayoutMismatch { left: a.digests.len(), right: b.digests.len() });
    }
    let changed = a
        .digests
        .iter()
        .zip(&b.digests)
        .enumerate()
        .filter(|(_, (x, y))| x != y)
        .map(|(i, _)| i as u64)
        .collect();
    Ok(SnapshotDiff { changed })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: u64,
    pub server_clock: u64,
    pub diff: SnapshotDiff,
}

/// Everything the server learned: one event per snapshot after the first,
/// empty diffs included.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObserverTrace {
    pub snap_every: u64,
    pub granularity: DigestGranularity,
    pub events: Vec<TraceEvent>,
}

impl ObserverTrace {
    pub fn nonempty(&self) -> impl Iterator<Item = &TraceEvent> {
        self.events.iter().filter(|e| !e.diff.is_empty())
    }

    /// SHA-256 over the canonical JSON encoding of the trace.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("trace serializes");
        Sha256::digest(json).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Distinct buckets touched by an event, ascending.
    pub fn event_buckets(&self, event: &TraceEvent, layout: &TreeLayout) -> Vec<u64> {
        match self.granularity {
            DigestGranularity::Bucket => event.diff.changed.clone(),
            DigestGranularity::Slot => {
                let z = layout.bucket_capacity() as u64;
                let mut buckets: Vec<u64> = event.diff.changed.iter().map(|s| s / z).collect();
                buckets.dedup();
                buckets
            }
        }
    }
}

/// If `buckets` is exactly one root-to-leaf path, its leaf.
pub fn path_leaf(buckets: &[u64], layout: &TreeLayout) -> Option<u64> {
    let leaf = layout.bucket_leaf(*buckets.last()?)?;
    let path = layout.path(leaf).ok()?;
    (path.nodes == buckets).then_some(leaf)
}

#[derive(Debug)]
pub struct Observer {
    region: Arc<RegionStore>,
    layout: TreeLayout,
    current: Snapshot,
    trace: ObserverTrace,
    writes_seen: u64,
}

impl Observer {
    /// Takes the baseline snapshot. `snap_every` is in write verbs; 1 is
    /// the maximum frequency.
    pub fn attach(region: Arc<RegionStore>, layout: TreeLayout, granularity: DigestGranularity, snap_every: u64) -> Result<Self> {
        if snap_every == 0 {
            return Err(Error::config("snapshot frequency must be at least 1"));
        }
        if region.size() < layout.region_bytes() {
            return Err(Error::config("region is smaller than the tree layout"));
        }
        let unit = granularity.unit_bytes(&layout);
        let units = granularity.units(&layout) as usize;
        let digests = region.capture(|bytes, _| bytes.chunks(unit).take(units).map(digest).collect());
        Ok(Observer {
            region,
            layout,
            current: Snapshot { seq: 0, server_clock: 0, granularity, digests },
            trace: ObserverTrace { snap_every, granularity, events: Vec::new() },
            writes_seen: 0,
        })
    }

    pub fn layout(&self) -> &TreeLayout {
        &self.layout
    }

    pub fn current(&self) -> &Snapshot {
        &self.current
    }

    pub fn trace(&self) -> &ObserverTrace {
        &self.trace
    }

    /// Server-side tick after a write verb lands.
    pub fn on_write_verb(&mut self) {
        self.writes_seen += 1;
        if self.writes_seen.is_multiple_of(self.trace.snap_every) {
            self.snapshot_now();
        }
    }

    /// Takes a snapshot now and records its diff against the previous one.
    pub fn snapshot_now(&mut self) -> &TraceEvent {
        let granularity = self.current.granularity;
        let unit = granularity.unit_bytes(&self.layout);
        let slots_per_unit = (unit / self.layout.slot_bytes()) as u64;
        let units = self.current.digests.len() as u64;
        let digests = &mut self.current.digests;
        let changed = self.region.capture(|bytes, dirty| {
            let mut touched: Vec<u64> = dirty.iter().map(|s| s / slots_per_unit).filter(|&u| u < units).collect();
            touched.sort_unstable();
            touched.dedup();
            touched
                .into_iter()
                .filter(|&u| {
                    let start = u as usize * unit;
                    let fresh = digest(&bytes[start..start + unit]);
                    let was = std::mem::replace(&mut digests[u as usize], fresh);
                    was != fresh
                })
                .collect()
        });
        self.current.seq += 1;
        self.current.server_clock = self.writes_seen;
        self.trace.events.push(TraceEvent {
            seq: self.current.seq,
            server_clock: self.writes_seen,
            diff: SnapshotDiff { changed },
        });
        self.trace.events.last().unwrap()
    }

    /// Final snapshot, then the trace.
    pub fn finish(mut self) -> ObserverTrace {
        self.snapshot_now();
        self.trace
    }
}

/// A transport with the server's observer on the far side. Write verbs
/// tick the observer; read verbs pass through untouched.
#[derive(Debug)]
pub struct ObservedTransport<T> {
    inner: T,
    observer: Option<Observer>,
}

impl<T: Transport> ObservedTransport<T> {
    pub fn new(inner: T) -> Self {
        ObservedTransport { inner, observer: None }
    }

    pub fn attach(&mut self, observer: Observer) {
        self.observer = Some(observer);
    }

    /// Final snapshot and the trace, if an observer was attached.
    pub fn detach(&mut self) -> Option<ObserverTrace> {
        self.observer.take().map(Observer::finish)
    }

    pub fn observer(&self) -> Option<&Observer> {
        self.observer.as_ref()
    }

    pub fn observer_mut(&mut self) -> Option<&mut Observer> {
        self.observer.as_mut()
    }

    pub fn inner(&self) -> &T {
        &self.inner
    }

    pub fn inner_mut(&mut self) -> &mut T {
        &mut self.inner
    }

    pub fn into_inner(self) -> T {
        self.inner
    }
}

impl<T: Fork> Fork for ObservedTransport<T> {
    /// The copy starts with no observer attached.
    fn fork(&self) -> Self {
        ObservedTransport { inner: self.inner.fork(), observer: None }
    }
}

impl<T: Transport> Transport for ObservedTransport<T> {
    fn region_bytes(&self) -> u64 {
        self.inner.region_bytes()
    }

    fn slot_bytes(&self) -> usize {
        self.inner.slot_bytes()
    }

    fn read_batch(&mut self, ranges: &[(u64, usize)]) -> Result<Vec<Vec<u8>>> {
        self.inner.read_batch(ranges)
    }

    fn write_batch(&mut self, segments: &[(u64, &[u8])]) -> Result<()> {
        let result = self.inner.write_batch(segments);
        if let Some(observer) = self.observer.as_mut() {
            observer.on_write_verb();
        }
        result
    }

    fn metrics(&self) -> &TransportMetrics {
        self.inner.metrics()
    }

    fn set_metrics(&mut self, metrics: TransportMetrics) {
        self.inner.set_metrics(metrics)
    }

    fn profile(&self) -> &NetProfile {
        self.inner.profile()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::make_layout;
    use crate::transport::{BatchMode, SimTransport};

    fn setup() -> (TreeLayout, Arc<RegionStore>) {
        let layout = make_layout(8, 2, 64).unwrap();
        let region = Arc::new(RegionStore::new(layout.region_bytes(), 64).unwrap());
        (layout, region)
    }

    #[test]
    fn no_writes_no_diff() {
        let (layout, region) = setup();
        let a = take_snapshot(&region, &layout, DigestGranularity::Bucket);
        let b = take_snapshot(&region, &layout, DigestGranularity::Bucket);
        assert!(diff(&a, &b).unwrap().is_empty());
        assert!(diff(&a, &a).unwrap().is_empty());
    }

    #[test]
    fn one_slot_write_shows_one_bucket() {
        let (layout, region) = setup();
        let a = take_snapshot(&region, &layout, DigestGranularity::Bucket);
        region.write(layout.slot_offset(5, 1), &[1; 64]).unwrap();
        let b = take_snapshot(&region, &layout, DigestGranularity::Bucket);
        assert_eq!(diff(&a, &b).unwrap().changed, vec![5]);
        assert_eq!(diff(&b, &a).unwrap(), diff(&a, &b).unwrap());
        let slots_a = take_snapshot(&region, &layout, DigestGranularity::Slot);
        region.write(layout.slot_offset(2, 0), &[1; 64]).unwrap();
        let slots_b = take_snapshot(&region, &layout, DigestGranularity::Slot);
        assert_eq!(diff(&slots_a, &slots_b).unwrap().changed, vec![4]);
        assert!(matches!(diff(&a, &slots_a), Err(Error::LayoutMismatch { .. })));
    }

    #[test]
    fn incremental_snapshots_match_full_recompute() {
        let (layout, region) = setup();
        let mut obs = Observer::attach(Arc::clone(&region), layout, DigestGranularity::Bucket, 1).unwrap();
        region.write(layout.slot_offset(3, 0), &[7; 128]).unwrap();
        // same bytes again: written but unchanged
        region.write(layout.slot_offset(9, 0), &[0; 64]).unwrap();
        let event = obs.snapshot_now().clone();
        assert_eq!(event.diff.changed, vec![3]);
        assert_eq!(obs.current().digests, take_snapshot(&region, &layout, DigestGranularity::Bucket).digests);
    }

    #[test]
    fn reads_do_not_tick_the_observer() {
        let (layout, region) = setup();
        let mut t = ObservedTransport::new(SimTransport::new(Arc::clone(&region), NetProfile::ib40(), BatchMode::PerPath));
        t.attach(Observer::attach(Arc::clone(&region), layout, DigestGranularity::Bucket, 1).unwrap());
        for _ in 0..10 {
            t.os_read(0, 64).unwrap();
        }
        assert!(t.observer().unwrap().trace().events.is_empty());
        t.os_write(layout.bucket_offset(4), &[1; 128]).unwrap();
        let trace = t.detach().unwrap();
        let changed: Vec<_> = trace.events.iter().map(|e| e.diff.changed.clone()).collect();
        assert_eq!(changed, vec![vec![4], vec![]]);
        assert_eq!(trace.events[0].server_clock, 1);
    }

    #[test]
    fn snap_every_groups_writes() {
        let (layout, region) = setup();
        let mut t = ObservedTransport::new(SimTransport::new(Arc::clone(&region), NetProfile::ib40(), BatchMode::PerPath));
        t.attach(Observer::attach(Arc::clone(&region), layout, DigestGranularity::Bucket, 2).unwrap());
        t.os_write(layout.bucket_offset(1), &[1; 128]).unwrap();
        t.os_write(layout.bucket_offset(2), &[1; 128]).unwrap();
        t.os_write(layout.bucket_offset(6), &[1; 128]).unwrap();
        let trace = t.detach().unwrap();
        let changed: Vec<_> = trace.events.iter().map(|e| e.diff.changed.clone()).collect();
        assert_eq!(changed, vec![vec![1, 2], vec![6]]);
    }

    #[test]
    fn path_leaf_recognizes_paths() {
        let layout = make_layout(8, 2, 64).unwrap();
        assert_eq!(path_leaf(&[0, 2, 5, 12], &layout), Some(5));
        assert_eq!(path_leaf(&[0, 2, 5], &layout), None);
        assert_eq!(path_leaf(&[0, 1, 5, 12], &layout), None);
        assert_eq!(path_leaf(&[], &layout), None);
    }
}
