//! One-sided verbs over a remote byte region.
//!
//! A [`Transport`] reads and writes the server region without any server
//! software taking part: reads leave no trace at all, writes are only
//! visible through what they do to memory. Two backends implement it, the
//! in-process [`sim::SimTransport`] and the loopback TCP [`wire`] protocol.
//!
//! Time is charged by a closed-form model: every charged verb costs the
//! profile's base latency plus `8 * bytes / bandwidth`. How many verbs a
//! batch counts as is set by [`BatchMode`].

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

mod region;
pub mod sim;
pub mod wire;

pub use region::RegionStore;
pub use sim::SimTransport;
pub use wire::{WireServer, WireTransport};

/// Transports whose far side can be deep-copied.
pub trait Fork {
    fn fork(&self) -> Self;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetProfile {
    pub name: String,
    /// Fixed cost of one verb, microseconds.
    pub base_latency_us: f64,
    /// Link bandwidth, bits per second.
    pub bandwidth_bps: f64,
}

impl NetProfile {
    pub fn ib40() -> Self {
        NetProfile { name: "ib40".into(), base_latency_us: 2.0, bandwidth_bps: 40e9 }
    }

    pub fn ib100() -> Self {
        NetProfile { name: "ib100".into(), base_latency_us: 1.5, bandwidth_bps: 100e9 }
    }

    pub fn custom(name: impl Into<String>, base_latency_us: f64, bandwidth_bps: f64) -> Result<Self> {
        let profile = NetProfile { name: name.into(), base_latency_us, bandwidth_bps };
        profile.validate()?;
        Ok(profile)
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "ib40" => Ok(Self::ib40()),
            "ib100" => Ok(Self::ib100()),
            other => Err(Error::config(format!("unknown network profile {other:?} (expected ib40 or ib100)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        // written to reject NaN as well
        if self.base_latency_us.is_nan() || self.base_latency_us <= 0.0 || self.bandwidth_bps.is_nan() || self.bandwidth_bps <= 0.0 {
            return Err(Error::config(format!("profile {} needs positive latency and bandwidth", self.name)));
        }
        Ok(())
    }

    /// Charged time in microseconds for `verbs` verbs moving `bytes` in total.
    pub fn charge_us(&self, verbs: u64, bytes: u64) -> f64 {
        verbs as f64 * self.base_latency_us + (bytes * 8) as f64 * 1e6 / self.bandwidth_bps
    }
}

impl Default for NetProfile {
    fn default() -> Self {
        Self::ib40()
    }
}

/// How a multi-segment batch is charged.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BatchMode {
    /// One verb per batch call (a whole path per direction).
    #[default]
    PerPath,
    /// One verb per contiguous segment (bucket).
    PerBucket,
    /// One verb per slot.
    PerSlot,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerbStats {
    /// Charged verbs.
    pub verbs: u64,
    /// Contiguous segments actually transferred.
    pub segments: u64,
    pub bytes: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TransportMetrics {
    pub reads: VerbStats,
    pub writes: VerbStats,
    /// Wall-clock time spent inside verbs.
    pub elapsed: Duration,
}

impl TransportMetrics {
    pub fn verbs(&self) -> u64 {
        self.reads.verbs + self.writes.verbs
    }

    pub fn bytes(&self) -> u64 {
        self.reads.bytes + self.writes.bytes
    }

    pub fn virtual_time_us(&self, profile: &NetProfile) -> f64 {
        profile.charge_us(self.verbs(), self.bytes())
    }

    /// Verbs and bytes charged since `earlier`.
    pub fn since(&self, earlier: &TransportMetrics) -> (u64, u64) {
        (self.verbs() - earlier.verbs(), self.bytes() - earlier.bytes())
    }
}

/// Charging state shared by both backends.
#[derive(Clone, Debug)]
pub struct Meter {
    profile: NetProfile,
    batch: BatchMode,
    slot_bytes: usize,
    metrics: TransportMetrics,
}

impl Meter {
    pub fn new(profile: NetProfile, batch: BatchMode, slot_bytes: usize) -> Self {
        Meter { profile, batch, slot_bytes, metrics: TransportMetrics::default() }
    }

    fn charge(batch: BatchMode, slot_bytes: usize, stats: &mut VerbStats, lens: impl Iterator<Item = usize>) {
        let mut segments = 0u64;
        let mut bytes = 0u64;
        let mut slots = 0u64;
        for len in lens {
            segments += 1;
            bytes += len as u64;
            slots += len.div_ceil(slot_bytes).max(1) as u64;
        }
        if segments == 0 {
            return;
        }
        stats.verbs += match batch {
            BatchMode::PerPath => 1,
            BatchMode::PerBucket => segments,
            BatchMode::PerSlot => slots,
        };
        stats.segments += segments;
        stats.bytes += bytes;
    }

    pub fn charge_read(&mut self, lens: impl Iterator<Item = usize>) {
        Self::charge(self.batch, self.slot_bytes, &mut self.metrics.reads, lens)
    }

    pub fn charge_write(&mut self, lens: impl Iterator<Item = usize>) {
        Self::charge(self.batch, self.slot_bytes, &mut self.metrics.writes, lens)
    }

    pub fn add_elapsed(&mut self, d: Duration) {
        self.metrics.elapsed += d;
    }

    pub fn profile(&self) -> &NetProfile {
        &self.profile
    }

    pub fn batch(&self) -> BatchMode {
        self.batch
    }

    pub fn metrics(&self) -> &TransportMetrics {
        &self.metrics
    }

    pub fn set_metrics(&mut self, metrics: TransportMetrics) {
        self.metrics = metrics;
    }
}

pub fn check_range(size: u64, offset: u64, len: u64) -> Result<()> {
    match offset.checked_add(len) {
        Some(end) if end <= size => Ok(()),
        _ => Err(Error::Range { offset, len, size }),
    }
}

/// Writes must cover whole slots: slots are the atomicity unit.
pub fn check_write(size: u64, slot_bytes: usize, offset: u64, len: u64) -> Result<()> {
    check_range(size, offset, len)?;
    let slot = slot_bytes as u64;
    if !offset.is_multiple_of(slot) || !len.is_multiple_of(slot) {
        return Err(Error::Alignment { offset, len, slot_bytes });
    }
    Ok(())
}

/// One-sided access to a remote region.
pub trait Transport {
    fn region_bytes(&self) -> u64;

    fn slot_bytes(&self) -> usize;

    /// Reads every range as one batch; charged per the batch mode.
    fn read_batch(&mut self, ranges: &[(u64, usize)]) -> Result<Vec<Vec<u8>>>;

    /// Writes every segment as one batch. Each segment must be slot aligned.
    fn write_batch(&mut self, segments: &[(u64, &[u8])]) -> Result<()>;

    fn metrics(&self) -> &TransportMetrics;

    fn set_metrics(&mut self, metrics: TransportMetrics);

    fn profile(&self) -> &NetProfile;

    fn os_read(&mut self, offset: u64, len: usize) -> Result<Vec<u8>> {
        Ok(self.read_batch(&[(offset, len)])?.pop().unwrap_or_default())
    }

    fn os_write(&mut self, offset: u64, payload: &[u8]) -> Result<()> {
        self.write_batch(&[(offset, payload)])
    }

    /// Charged time so far under this transport's profile.
    fn virtual_time_us(&self) -> f64 {
        self.metrics().virtual_time_us(self.profile())
    }
}

impl<T: Transport + ?Sized> Transport for Box<T> {
    fn region_bytes(&self) -> u64 {
        (**self).region_bytes()
    }
    fn slot_bytes(&self) -> usize {
        (**self).slot_bytes()
    }
    fn read_batch(&mut self, ranges: &[(u64, usize)]) -> Result<Vec<Vec<u8>>> {
        (**self).read_batch(ranges)
    }
    fn write_batch(&mut self, segments: &[(u64, &[u8])]) -> Result<()> {
        (**self).write_batch(segments)
    }
    fn metrics(&self) -> &TransportMetrics {
        (**self).metrics()
    }
    fn set_metrics(&mut self, metrics: TransportMetrics) {
        (**self).set_metrics(metrics)
    }
    fn profile(&self) -> &NetProfile {
        (**self).profile()
    }
}

/// A region bound to one of the two backends.
#[derive(Debug)]
pub enum RegionHandle {
    Simulated(SimTransport),
    Wire(WireTransport),
}

macro_rules! dispatch {
    ($self:ident, $t:ident => $e:expr) => {
        match $self {
            RegionHandle::Simulated($t) => $e,
            RegionHandle::Wire($t) => $e,
        }
    };
}

impl RegionHandle {
    pub fn is_simulated(&self) -> bool {
        matches!(self, RegionHandle::Simulated(_))
    }
}

impl Fork for RegionHandle {
    /// # Panics
    /// On the wire backend, whose region lives behind the server.
    fn fork(&self) -> Self {
        match self {
            RegionHandle::Simulated(t) => RegionHandle::Simulated(t.fork()),
            RegionHandle::Wire(_) => panic!("a wire transport cannot be forked"),
        }
    }
}

impl Transport for RegionHandle {
    fn region_bytes(&self) -> u64 {
        dispatch!(self, t => t.region_bytes())
    }
    fn slot_bytes(&self) -> usize {
        dispatch!(self, t => t.slot_bytes())
    }
    fn read_batch(&mut self, ranges: &[(u64, usize)]) -> Result<Vec<Vec<u8>>> {
        dispatch!(self, t => t.read_batch(ranges))
    }
    fn write_batch(&mut self, segments: &[(u64, &[u8])]) -> Result<()> {
        dispatch!(self, t => t.write_batch(segments))
    }
    fn metrics(&self) -> &TransportMetrics {
        dispatch!(self, t => t.metrics())
    }
    fn set_metrics(&mut self, metrics: TransportMetrics) {
        dispatch!(self, t => t.set_metrics(metrics))
    }
    fn profile(&self) -> &NetProfile {
        dispatch!(self, t => t.profile())
    }
}
