//! The client-facing store.
//!
//! `put` always runs the unmodified Path ORAM protocol. `get` draws a
//! seeded Bernoulli decision per request: with probability X% it runs the
//! full protocol (remap and write-back, so the server sees exactly what a
//! `put` produces), otherwise it fetches the one slot holding the key with a
//! single one-sided read, which the server cannot see.
//!
//! The single-slot read is possible because the client records where every
//! block lands during write-back (the [`LocationMap`]).

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::{PathSpec, TreeLayout};
use crate::oram::{Access, Block, PathOram, PathStore, ResidencyAudit, DEFAULT_BUCKET_CAPACITY, DEFAULT_STASH_MAX};
use crate::rng::{SeedStreams, Stream, StreamRng};
use crate::sealing::{make_dummy, slot_bytes_for, PlainBlock, SealKey, Sealer, DEFAULT_VALUE_BYTES};
use crate::transport::{BatchMode, Fork, NetProfile, Transport, TransportMetrics};

/// Buckets per batch when formatting the region.
const FORMAT_BATCH_BUCKETS: u64 = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixConfig {
    /// Percentage of reads that run the full ORAM protocol, in [0, 100].
    pub oram_fraction: f64,
    pub seed: u64,
}

impl Default for MixConfig {
    fn default() -> Self {
        MixConfig { oram_fraction: 50.0, seed: 0x5eed }
    }
}

impl MixConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=100.0).contains(&self.oram_fraction) {
            return Err(Error::config(format!("oram_fraction {} outside [0, 100]", self.oram_fraction)));
        }
        Ok(())
    }
}

/// How a one-sided get fetches a server-resident block.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReadMode {
    /// Exactly the slot named by the location map.
    #[default]
    Slot,
    /// The whole bucket containing it.
    Bucket,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClientConfig {
    pub block_count: u64,
    pub bucket_capacity: usize,
    pub value_bytes: usize,
    pub stash_max: usize,
    pub mix: MixConfig,
    pub read_mode: ReadMode,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            block_count: 32_000,
            bucket_capacity: DEFAULT_BUCKET_CAPACITY,
            value_bytes: DEFAULT_VALUE_BYTES,
            stash_max: DEFAULT_STASH_MAX,
            mix: MixConfig::default(),
            read_mode: ReadMode::Slot,
        }
    }
}

impl ClientConfig {
    pub fn layout(&self) -> Result<TreeLayout> {
        TreeLayout::new(self.block_count, self.bucket_capacity, slot_bytes_for(self.value_bytes))
    }

    pub fn validate(&self) -> Result<()> {
        self.mix.validate()?;
        self.layout().map(|_| ())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Location {
    Stash,
    Slot { bucket: u64, slot: u32 },
}

#[derive(Clone, Debug, Default)]
pub struct LocationMap {
    entries: HashMap<u64, Location>,
}

impl LocationMap {
    pub fn get(&self, key: u64) -> Option<Location> {
        self.entries.get(&key).copied()
    }

    fn set(&mut self, key: u64, location: Location) {
        self.entries.insert(key, location);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, Location)> + '_ {
        self.entries.iter().map(|(&k, &l)| (k, l))
    }
}

/// How a get was served.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Route {
    /// Full ORAM access.
    Oram,
    /// One one-sided read of the mapped slot.
    OneSided,
    /// Served from the stash, no verb.
    Stash,
    /// Key never written, no verb.
    Absent,
}

impl Route {
    pub fn is_oram(self) -> bool {
        self == Route::Oram
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Drop the write-back of the n-th ORAM access (0-based, counted from
    /// client creation).
    SkipWriteBack { access: u64 },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClientMetrics {
    pub transport: TransportMetrics,
    pub puts: u64,
    pub oram_reads: u64,
    pub one_sided_reads: u64,
    pub stash_reads: u64,
    pub absent_reads: u64,
    pub max_stash: usize,
}

impl ClientMetrics {
    /// Reads that did not run the ORAM protocol.
    pub fn direct_reads(&self) -> u64 {
        self.one_sided_reads + self.stash_reads + self.absent_reads
    }
}

/// Sealing path store over a transport; records block placements.
#[derive(Debug)]
struct SealedStore<T> {
    transport: T,
    sealer: Sealer,
    layout: TreeLayout,
    rng: StreamRng,
    locations: LocationMap,
    write_backs: u64,
    skip_write_back: Option<u64>,
}

impl<T: Transport> SealedStore<T> {
    fn open_bucket(&self, bytes: &[u8]) -> Result<Vec<(usize, Block)>> {
        let mut out = Vec::new();
        for (slot, raw) in bytes.chunks(self.layout.slot_bytes()).enumerate() {
            let plain = self.sealer.open(raw)?;
            if !plain.is_dummy() {
                out.push((slot, Block { key: plain.key, leaf: plain.leaf, value: plain.value().to_vec() }));
            }
        }
        Ok(out)
    }

    fn seal_bucket(&mut self, blocks: &[Block], out: &mut [u8]) -> Result<()> {
        let slot_bytes = self.layout.slot_bytes();
        let value_bytes = self.sealer.value_bytes();
        for (i, chunk) in out.chunks_mut(slot_bytes).enumerate() {
            let plain = match blocks.get(i) {
                Some(b) => PlainBlock::real(b.key, b.leaf, &b.value, value_bytes)?,
                None => make_dummy(&mut self.rng, value_bytes),
            };
            self.sealer.seal_into(&plain, &mut self.rng, chunk);
        }
        Ok(())
    }

    fn format(&mut self) -> Result<()> {
        let bucket_bytes = self.layout.bucket_bytes();
        let total = self.layout.bucket_count();
        let mut first = 0;
        while first < total {
            let count = FORMAT_BATCH_BUCKETS.min(total - first);
            let mut buf = vec![0u8; count as usize * bucket_bytes];
            for chunk in buf.chunks_mut(bucket_bytes) {
                self.seal_bucket(&[], chunk)?;
            }
            self.transport.write_batch(&[(self.layout.bucket_offset(first), &buf)])?;
            first += count;
        }
        Ok(())
    }
}

impl<T: Transport> PathStore for SealedStore<T> {
    fn read_path(&mut self, path: &PathSpec) -> Result<Vec<Block>> {
        let bucket_bytes = self.layout.bucket_bytes();
        let ranges: Vec<(u64, usize)> = path.nodes.iter().map(|&n| (self.layout.bucket_offset(n), bucket_bytes)).collect();
        let buckets = self.transport.read_batch(&ranges)?;
        let mut blocks = Vec::new();
        for bytes in &buckets {
            blocks.extend(self.open_bucket(bytes)?.into_iter().map(|(_, b)| b));
        }
        Ok(blocks)
    }

    fn write_path(&mut self, path: &PathSpec, buckets: &[Vec<Block>]) -> Result<()> {
        let index = self.write_backs;
        self.write_backs += 1;
        if self.skip_write_back == Some(index) {
            return Ok(());
        }
        let bucket_bytes = self.layout.bucket_bytes();
        let mut buf = vec![0u8; bucket_bytes * path.nodes.len()];
        for (blocks, chunk) in buckets.iter().zip(buf.chunks_mut(bucket_bytes)) {
            self.seal_bucket(blocks, chunk)?;
        }
        let segments: Vec<(u64, &[u8])> =
            path.nodes.iter().zip(buf.chunks(bucket_bytes)).map(|(&n, c)| (self.layout.bucket_offset(n), c)).collect();
        self.transport.write_batch(&segments)?;
        for (&bucket, blocks) in path.nodes.iter().zip(buckets) {
            for (slot, b) in blocks.iter().enumerate() {
                self.locations.set(b.key, Location::Slot { bucket, slot: slot as u32 });
            }
        }
        Ok(())
    }

    fn inspect_bucket(&mut self, bucket: u64) -> Result<Vec<(usize, Block)>> {
        let bytes = self.transport.os_read(self.layout.bucket_offset(bucket), self.layout.bucket_bytes())?;
        self.open_bucket(&bytes)
    }
}

impl<T: Fork> Fork for SealedStore<T> {
    fn fork(&self) -> Self {
        SealedStore {
            transport: self.transport.fork(),
            sealer: self.sealer.clone(),
            layout: self.layout,
            rng: self.rng.clone(),
            locations: self.locations.clone(),
            write_backs: self.write_backs,
            skip_write_back: self.skip_write_back,
        }
    }
}

/// The client: stash, position map, location map, sealing key and mixer.
/// Nothing in here is ever sent to the server.
#[derive(Debug)]
pub struct OneSidedOram<T> {
    config: ClientConfig,
    layout: TreeLayout,
    oram: PathOram,
    store: SealedStore<T>,
    mixer: StreamRng,
    counters: ClientMetrics,
}

impl<T: Transport> OneSidedOram<T> {
    /// Sets up client state and formats the region with sealed dummies.
    /// Transport metrics are reset afterwards.
    pub fn init(config: ClientConfig, transport: T) -> Result<Self> {
        config.validate()?;
        let layout = config.layout()?;
        if transport.slot_bytes() != layout.slot_bytes() {
            return Err(Error::config(format!(
                "transport slots are {} bytes, layout needs {}",
                transport.slot_bytes(),
                layout.slot_bytes()
            )));
        }
        if transport.region_bytes() < layout.region_bytes() {
            return Err(Error::config(format!(
                "region of {} bytes cannot hold a {}-byte tree",
                transport.region_bytes(),
                layout.region_bytes()
            )));
        }
        let seeds = SeedStreams::new(config.mix.seed);
        let key = SealKey::generate(&mut seeds.stream(Stream::SealKey));
        let mut store = SealedStore {
            transport,
            sealer: Sealer::new(&key, config.value_bytes),
            layout,
            rng: seeds.stream(Stream::Seal),
            locations: LocationMap::default(),
            write_backs: 0,
            skip_write_back: None,
        };
        store.format()?;
        store.transport.set_metrics(TransportMetrics::default());
        Ok(OneSidedOram {
            oram: PathOram::new(layout, config.stash_max, seeds.stream(Stream::Remap)),
            store,
            mixer: seeds.stream(Stream::Mixer),
            layout,
            config,
            counters: ClientMetrics::default(),
        })
    }

    pub fn config(&self) -> &ClientConfig {
        &self.config
    }

    pub fn layout(&self) -> &TreeLayout {
        &self.layout
    }

    pub fn oram(&self) -> &PathOram {
        &self.oram
    }

    pub fn locations(&self) -> &LocationMap {
        &self.store.locations
    }

    pub fn transport(&self) -> &T {
        &self.store.transport
    }

    pub fn transport_mut(&mut self) -> &mut T {
        &mut self.store.transport
    }

    pub fn into_transport(self) -> T {
        self.store.transport
    }

    pub fn set_oram_fraction(&mut self, percent: f64) -> Result<()> {
        let mix = MixConfig { oram_fraction: percent, ..self.config.mix.clone() };
        mix.validate()?;
        self.config.mix = mix;
        Ok(())
    }

    pub fn inject_fault(&mut self, fault: Fault) {
        match fault {
            Fault::SkipWriteBack { access } => self.store.skip_write_back = Some(access),
        }
    }

    fn check_value(&self, value: &[u8]) -> Result<()> {
        if value.len() > self.config.value_bytes {
            return Err(Error::argument(format!(
                "value of {} bytes exceeds value_bytes {}",
                value.len(),
                self.config.value_bytes
            )));
        }
        Ok(())
    }

    fn access(&mut self, key: u64, op: Access<'_>) -> Result<Option<Vec<u8>>> {
        let outcome = self.oram.access(&mut self.store, key, op)?;
        for k in self.oram.stash().keys() {
            self.store.locations.set(k, Location::Stash);
        }
        self.counters.max_stash = self.counters.max_stash.max(self.oram.stash().len());
        Ok(outcome.value)
    }

    /// Writes always take the full ORAM path.
    pub fn put(&mut self, key: u64, value: &[u8]) -> Result<()> {
        self.check_value(value)?;
        self.access(key, Access::Write(value))?;
        self.counters.puts += 1;
        Ok(())
    }

    pub fn get(&mut self, key: u64) -> Result<Option<Vec<u8>>> {
        Ok(self.get_routed(key)?.0)
    }

    /// A get, reporting which route served it.
    pub fn get_routed(&mut self, key: u64) -> Result<(Option<Vec<u8>>, Route)> {
        let draw: f64 = self.mixer.random();
        if draw * 100.0 < self.config.mix.oram_fraction {
            Ok((self.oram_get(key)?, Route::Oram))
        } else {
            self.one_sided_get_routed(key)
        }
    }

    /// A read forced through the full ORAM protocol.
    pub fn oram_get(&mut self, key: u64) -> Result<Option<Vec<u8>>> {
        let value = self.access(key, Access::Read)?;
        self.counters.oram_reads += 1;
        Ok(value)
    }

    /// A read that bypasses the mixer and never runs the ORAM protocol.
    pub fn one_sided_get(&mut self, key: u64) -> Result<Option<Vec<u8>>> {
        Ok(self.one_sided_get_routed(key)?.0)
    }

    fn one_sided_get_routed(&mut self, key: u64) -> Result<(Option<Vec<u8>>, Route)> {
        let corrupt = || Error::LocationMapCorruption { key };
        match self.store.locations.get(key) {
            None => {
                self.counters.absent_reads += 1;
                Ok((None, Route::Absent))
            }
            Some(Location::Stash) => {
                let block = self.oram.stash().get(key).ok_or_else(corrupt)?;
                let value = block.value.clone();
                self.counters.stash_reads += 1;
                Ok((Some(value), Route::Stash))
            }
            Some(Location::Slot { bucket, slot }) => {
                let block = match self.config.read_mode {
                    ReadMode::Slot => {
                        let offset = self.layout.slot_offset(bucket, slot as usize);
                        let raw = self.store.transport.os_read(offset, self.layout.slot_bytes())?;
                        let plain = self.store.sealer.open(&raw).map_err(|_| corrupt())?;
                        if plain.is_dummy() || plain.key != key {
                            return Err(corrupt());
                        }
                        plain.value().to_vec()
                    }
                    ReadMode::Bucket => {
                        let raw = self.store.transport.os_read(self.layout.bucket_offset(bucket), self.layout.bucket_bytes())?;
                        let blocks = self.store.open_bucket(&raw).map_err(|_| corrupt())?;
                        blocks.into_iter().find(|(s, b)| *s == slot as usize && b.key == key).ok_or_else(corrupt)?.1.value
                    }
                };
                self.counters.one_sided_reads += 1;
                Ok((Some(block), Route::OneSided))
            }
        }
    }

    pub fn metrics(&self) -> ClientMetrics {
        ClientMetrics { transport: self.store.transport.metrics().clone(), ..self.counters.clone() }
    }

    /// Returns the metrics so far and resets them.
    pub fn flush_metrics(&mut self) -> ClientMetrics {
        let out = self.metrics();
        self.store.transport.set_metrics(TransportMetrics::default());
        self.counters = ClientMetrics::default();
        out
    }

    /// White-box walk of the whole tree: residency of every key plus
    /// agreement of the location map with where blocks actually are.
    /// Transport metrics are left as they were.
    pub fn audit(&mut self) -> Result<ClientAudit> {
        let saved = self.store.transport.metrics().clone();
        let residency = self.oram.audit(&mut self.store);
        self.store.transport.set_metrics(saved);
        let residency = residency?;
        let mut location_errors = Vec::new();
        for (key, _) in self.oram.positions().iter() {
            let expected = match residency.tree_resident.get(&key) {
                Some(&(bucket, slot)) => Location::Slot { bucket, slot: slot as u32 },
                None => Location::Stash,
            };
            if self.store.locations.get(key) != Some(expected) {
                location_errors.push(format!("key {key}: map says {:?}, block is at {expected:?}", self.store.locations.get(key)));
            }
        }
        if self.store.locations.len() != self.oram.positions().len() {
            location_errors.push(format!(
                "{} located keys vs {} mapped keys",
                self.store.locations.len(),
                self.oram.positions().len()
            ));
        }
        location_errors.sort();
        Ok(ClientAudit { residency, location_errors })
    }
}

impl<T: Transport + Fork> Fork for OneSidedOram<T> {
    /// An independent client over a deep copy of the region. Both copies
    /// continue with identical random streams.
    fn fork(&self) -> Self {
        OneSidedOram {
            config: self.config.clone(),
            layout: self.layout,
            oram: self.oram.clone(),
            store: self.store.fork(),
            mixer: self.mixer.clone(),
            counters: self.counters.clone(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ClientAudit {
    pub residency: ResidencyAudit,
    pub location_errors: Vec<String>,
}

impl ClientAudit {
    pub fn is_clean(&self) -> bool {
        self.residency.is_clean() && self.location_errors.is_empty()
    }
}

/// Predicted read cost for mix fraction `x_percent`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostPrediction {
    /// One full ORAM access: path read plus path write.
    pub oram_access_us: f64,
    /// One server-resident one-sided read.
    pub one_sided_us: f64,
    pub mean_read_us: f64,
    /// Mean read cost at X = 100 over mean read cost at `x_percent`.
    pub speedup: f64,
}

pub fn cost_model(x_percent: f64, layout: &TreeLayout, profile: &NetProfile) -> CostPrediction {
    cost_model_with(x_percent, layout, profile, BatchMode::PerPath, ReadMode::Slot)
}

pub fn cost_model_with(
    x_percent: f64,
    layout: &TreeLayout,
    profile: &NetProfile,
    batch: BatchMode,
    read_mode: ReadMode,
) -> CostPrediction {
    let path_len = layout.path_len() as u64;
    let z = layout.bucket_capacity() as u64;
    let path_bytes = path_len * layout.bucket_bytes() as u64;
    let path_verbs = match batch {
        BatchMode::PerPath => 1,
        BatchMode::PerBucket => path_len,
        BatchMode::PerSlot => path_len * z,
    };
    let oram = 2.0 * profile.charge_us(path_verbs, path_bytes);
    let one_sided = match read_mode {
        ReadMode::Slot => profile.charge_us(1, layout.slot_bytes() as u64),
        ReadMode::Bucket => {
            let verbs = if batch == BatchMode::PerSlot { z } else { 1 };
            profile.charge_us(verbs, layout.bucket_bytes() as u64)
        }
    };
    let frac = x_percent / 100.0;
    let mean = frac * oram + (1.0 - frac) * one_sided;
    CostPrediction { oram_access_us: oram, one_sided_us: one_sided, mean_read_us: mean, speedup: oram / mean }
}

/// The closed-form mix on explicit per-route costs.
pub fn mixed_cost(x_percent: f64, oram_us: f64, one_sided_us: f64) -> (f64, f64) {
    let frac = x_percent / 100.0;
    let mean = frac * oram_us + (1.0 - frac) * one_sided_us;
    (mean, oram_us / mean)
}
