//! The Path ORAM access algorithm.
//!
//! This module knows nothing about sealing or transport; it talks to the
//! tree through [`PathStore`], which moves whole paths of plaintext blocks.
//! [`MemoryPathStore`] is a plain in-memory tree used for tests and for
//! stash experiments that do not need sealing.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;

use crate::error::{Error, Result};
use crate::layout::{PathSpec, TreeLayout};
use crate::rng::StreamRng;

pub const DEFAULT_BUCKET_CAPACITY: usize = 4;
pub const DEFAULT_STASH_MAX: usize = 500;

/// A real block in plaintext, as held in the stash.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub key: u64,
    pub leaf: u64,
    pub value: Vec<u8>,
}

#[derive(Clone, Debug, Default)]
pub struct Stash {
    blocks: BTreeMap<u64, Block>,
}

impl Stash {
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn get(&self, key: u64) -> Option<&Block> {
        self.blocks.get(&key)
    }

    pub fn contains(&self, key: u64) -> bool {
        self.blocks.contains_key(&key)
    }

    /// Inserts or replaces the block for `block.key`.
    pub fn insert(&mut self, block: Block) -> Option<Block> {
        self.blocks.insert(block.key, block)
    }

    pub fn remove(&mut self, key: u64) -> Option<Block> {
        self.blocks.remove(&key)
    }

    /// Blocks in key order.
    pub fn iter(&self) -> impl Iterator<Item = &Block> {
        self.blocks.values()
    }

    pub fn keys(&self) -> impl Iterator<Item = u64> + '_ {
        self.blocks.keys().copied()
    }
}

#[derive(Clone, Debug, Default)]
pub struct PositionMap {
    leaves: HashMap<u64, u64>,
}

impl PositionMap {
    pub fn get(&self, key: u64) -> Option<u64> {
        self.leaves.get(&key).copied()
    }

    pub fn set(&mut self, key: u64, leaf: u64) {
        self.leaves.insert(key, leaf);
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.leaves.iter().map(|(&k, &l)| (k, l))
    }
}

/// Keys assigned to each bucket of a path, root first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvictionPlan {
    pub buckets: Vec<Vec<u64>>,
}

impl EvictionPlan {
    pub fn assigned(&self) -> usize {
        self.buckets.iter().map(Vec::len).sum()
    }
}

/// Greedy write-back placement: walk the path from the leaf up and give each
/// bucket up to Z of the remaining stash blocks that may legally live there,
/// lowest keys first. Blocks left over stay in the stash.
pub fn evict_plan(stash: &Stash, path: &PathSpec, layout: &TreeLayout) -> EvictionPlan {
    let levels = layout.levels() as usize;
    let capacity = layout.bucket_capacity();
    let mut by_level: Vec<Vec<u64>> = vec![Vec::new(); levels + 1];
    for block in stash.iter() {
        by_level[layout.common_level(block.leaf, path.leaf) as usize].push(block.key);
    }
    let mut buckets = vec![Vec::new(); levels + 1];
    let mut pool: Vec<u64> = Vec::new();
    for level in (0..=levels).rev() {
        if !by_level[level].is_empty() {
            pool.append(&mut by_level[level]);
            pool.sort_unstable();
        }
        let take = pool.len().min(capacity);
        buckets[level] = pool.drain(..take).collect();
    }
    EvictionPlan { buckets }
}

/// Storage for whole paths of plaintext blocks.
pub trait PathStore {
    /// Every real block stored on `path`.
    fn read_path(&mut self, path: &PathSpec) -> Result<Vec<Block>>;

    /// Rewrites every bucket on `path`; `buckets[i]` goes to `path.nodes[i]`
    /// and holds at most Z blocks, in slot order. Remaining slots are dummies.
    fn write_path(&mut self, path: &PathSpec, buckets: &[Vec<Block>]) -> Result<()>;

    /// Real blocks of a single bucket, with their slot index. Audit only.
    fn inspect_bucket(&mut self, bucket: u64) -> Result<Vec<(usize, Block)>>;
}

/// Plaintext tree in memory.
#[derive(Clone, Debug)]
pub struct MemoryPathStore {
    buckets: Vec<Vec<Block>>,
}

impl MemoryPathStore {
    pub fn new(layout: &TreeLayout) -> Self {
        MemoryPathStore { buckets: vec![Vec::new(); layout.bucket_count() as usize] }
    }
}

impl PathStore for MemoryPathStore {
    fn read_path(&mut self, path: &PathSpec) -> Result<Vec<Block>> {
        Ok(path.nodes.iter().flat_map(|&n| self.buckets[n as usize].iter().cloned()).collect())
    }

    fn write_path(&mut self, path: &PathSpec, buckets: &[Vec<Block>]) -> Result<()> {
        for (&node, blocks) in path.nodes.iter().zip(buckets) {
            self.buckets[node as usize] = blocks.clone();
        }
        Ok(())
    }

    fn inspect_bucket(&mut self, bucket: u64) -> Result<Vec<(usize, Block)>> {
        Ok(self.buckets[bucket as usize].iter().cloned().enumerate().collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Access<'a> {
    Read,
    Write(&'a [u8]),
}

/// What one access did.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AccessOutcome {
    /// Value before the access; `None` if the key was never written.
    pub value: Option<Vec<u8>>,
    /// Leaf whose path was read and rewritten.
    pub path_leaf: u64,
    /// New leaf of the key, if the key exists after the access.
    pub new_leaf: Option<u64>,
}

/// Client-side Path ORAM state: stash, position map and the remap stream.
#[derive(Clone, Debug)]
pub struct PathOram {
    layout: TreeLayout,
    stash: Stash,
    positions: PositionMap,
    stash_max: usize,
    max_stash_seen: usize,
    accesses: u64,
    rng: StreamRng,
}

impl PathOram {
    pub fn new(layout: TreeLayout, stash_max: usize, rng: StreamRng) -> Self {
        PathOram {
            layout,
            stash: Stash::default(),
            positions: PositionMap::default(),
            stash_max,
            max_stash_seen: 0,
            accesses: 0,
            rng,
        }
    }

    pub fn layout(&self) -> &TreeLayout {
        &self.layout
    }

    pub fn stash(&self) -> &Stash {
        &self.stash
    }

    pub fn positions(&self) -> &PositionMap {
        &self.positions
    }

    pub fn stash_max(&self) -> usize {
        self.stash_max
    }

    /// Largest stash size observed after any write-back.
    pub fn max_stash_seen(&self) -> usize {
        self.max_stash_seen
    }

    pub fn accesses(&self) -> u64 {
        self.accesses
    }

    fn random_leaf(&mut self) -> u64 {
        self.rng.random_range(0..self.layout.leaf_count())
    }

    /// Assigns `key` a fresh uniformly random leaf.
    pub fn remap(&mut self, key: u64) -> u64 {
        let leaf = self.random_leaf();
        self.positions.set(key, leaf);
        leaf
    }

    /// One Path ORAM access. Reads and writes run the same steps: fetch the
    /// mapped path into the stash, remap the key, apply the write, then
    /// write the path back with greedy eviction. A key that was never
    /// written reads a random path and leaves no block behind.
    pub fn access<S: PathStore + ?Sized>(&mut self, store: &mut S, key: u64, op: Access<'_>) -> Result<AccessOutcome> {
        let mapped = self.positions.get(key);
        let path_leaf = match mapped {
            Some(leaf) => leaf,
            None => self.random_leaf(),
        };
        let path = self.layout.path(path_leaf)?;

        for block in store.read_path(&path)? {
            // a stash copy is always at least as new as a tree copy
            self.stash.blocks.entry(block.key).or_insert(block);
        }

        let value = self.stash.get(key).map(|b| b.value.clone());
        let new_leaf = match op {
            Access::Write(v) => {
                let leaf = self.remap(key);
                self.stash.insert(Block { key, leaf, value: v.to_vec() });
                Some(leaf)
            }
            Access::Read if mapped.is_some() => {
                let leaf = self.remap(key);
                if let Some(b) = self.stash.remove(key) {
                    self.stash.insert(Block { leaf, ..b });
                }
                Some(leaf)
            }
            Access::Read => None,
        };

        let plan = evict_plan(&self.stash, &path, &self.layout);
        let buckets: Vec<Vec<Block>> = plan
            .buckets
            .iter()
            .map(|keys| keys.iter().map(|k| self.stash.remove(*k).expect("planned key is in stash")).collect())
            .collect();
        store.write_path(&path, &buckets)?;

        self.accesses += 1;
        self.max_stash_seen = self.max_stash_seen.max(self.stash.len());
        if self.stash.len() > self.stash_max {
            return Err(Error::StashOverflow { size: self.stash.len(), max: self.stash_max });
        }
        Ok(AccessOutcome { value, path_leaf, new_leaf })
    }

    /// White-box residency check: every mapped key must be found exactly once,
    /// either in the stash or in a bucket on its mapped path.
    pub fn audit<S: PathStore + ?Sized>(&self, store: &mut S) -> Result<ResidencyAudit> {
        let mut found: HashMap<u64, Vec<(u64, usize)>> = HashMap::new();
        for bucket in 0..self.layout.bucket_count() {
            for (slot, block) in store.inspect_bucket(bucket)? {
                found.entry(block.key).or_default().push((bucket, slot));
            }
        }
        let mut audit = ResidencyAudit::default();
        for (key, leaf) in self.positions.iter() {
            let in_stash = self.stash.contains(key);
            let placements = found.remove(&key).unwrap_or_default();
            match (in_stash, placements.as_slice()) {
                (true, []) => audit.stash_resident += 1,
                (false, [(bucket, slot)]) => {
                    let on_path = self.layout.path(leaf)?.nodes.contains(bucket);
                    if on_path {
                        audit.tree_resident.insert(key, (*bucket, *slot));
                    } else {
                        audit.violations.push(format!("key {key} in bucket {bucket}, off the path of leaf {leaf}"));
                    }
                }
                (false, []) => audit.violations.push(format!("key {key} is missing")),
                _ => audit.violations.push(format!("key {key} stored {} times (stash: {in_stash})", placements.len())),
            }
        }
        for key in found.keys() {
            audit.violations.push(format!("unmapped key {key} present in tree"));
        }
        for key in self.stash.keys() {
            if self.positions.get(key).is_none() {
                audit.violations.push(format!("unmapped key {key} in stash"));
            }
        }
        audit.violations.sort();
        Ok(audit)
    }
}

#[derive(Clone, Debug, Default)]
pub struct ResidencyAudit {
    pub stash_resident: usize,
    /// Placement of each tree-resident key.
    pub tree_resident: HashMap<u64, (u64, usize)>,
    pub violations: Vec<String>,
}

impl ResidencyAudit {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::make_layout;
    use crate::rng::{SeedStreams, Stream};
    use crate::sealing::slot_bytes_for;
    use crate::stats;

    fn layout(n: u64, z: usize) -> TreeLayout {
        make_layout(n, z, slot_bytes_for(16)).unwrap()
    }

    fn oram(layout: TreeLayout, seed: u64) -> PathOram {
        PathOram::new(layout, DEFAULT_STASH_MAX, SeedStreams::new(seed).stream(Stream::Remap))
    }

    fn stash_of(blocks: &[(u64, u64)]) -> Stash {
        let mut s = Stash::default();
        for &(key, leaf) in blocks {
            s.insert(Block { key, leaf, value: vec![] });
        }
        s
    }

    /// Largest number of blocks any placement can put on the path, found by
    /// trying every assignment of blocks to {stash} ∪ legal buckets.
    fn max_placeable(stash: &[(u64, u64)], path: &PathSpec, layout: &TreeLayout) -> usize {
        fn go(i: usize, stash: &[(u64, u64)], path: &PathSpec, layout: &TreeLayout, load: &mut Vec<usize>) -> usize {
            if i == stash.len() {
                return 0;
            }
            let mut best = go(i + 1, stash, path, layout, load);
            let deepest = layout.common_level(stash[i].1, path.leaf) as usize;
            for level in 0..=deepest {
                if load[level] < layout.bucket_capacity() {
                    load[level] += 1;
                    best = best.max(1 + go(i + 1, stash, path, layout, load));
                    load[level] -= 1;
                }
            }
            best
        }
        go(0, stash, path, layout, &mut vec![0; path.nodes.len()])
    }

    #[test]
    fn empty_stash_plans_nothing() {
        let l = layout(8, 4);
        let plan = evict_plan(&Stash::default(), &l.path(3).unwrap(), &l);
        assert_eq!(plan.buckets.len(), 4);
        assert!(plan.buckets.iter().all(Vec::is_empty));
    }

    #[test]
    fn matching_leaf_goes_to_leaf_bucket() {
        let l = layout(8, 4);
        let plan = evict_plan(&stash_of(&[(9, 5)]), &l.path(5).unwrap(), &l);
        assert_eq!(plan.buckets[3], vec![9]);
        assert_eq!(plan.assigned(), 1);
    }

    #[test]
    fn root_only_blocks_overflow_to_stash() {
        // leaves 4..8 share only the root with leaf 0
        let l = layout(8, 4);
        let blocks = [(1, 4), (2, 5), (3, 6), (4, 7), (5, 4)];
        let path = l.path(0).unwrap();
        assert_eq!(max_placeable(&blocks, &path, &l), 4);
        let plan = evict_plan(&stash_of(&blocks), &path, &l);
        assert_eq!(plan.buckets[0], vec![1, 2, 3, 4]);
        assert_eq!(plan.assigned(), 4);
    }

    #[test]
    fn greedy_is_maximal_and_legal() {
        let l = layout(8, 2);
        let mut rng = SeedStreams::new(3).stream(Stream::Adversary);
        for _ in 0..300 {
            let n = rng.random_range(0..9);
            let blocks: Vec<(u64, u64)> = (0..n).map(|k| (k, rng.random_range(0..8))).collect();
            let path = l.path(rng.random_range(0..8)).unwrap();
            let plan = evict_plan(&stash_of(&blocks), &path, &l);
            assert_eq!(plan.assigned(), max_placeable(&blocks, &path, &l), "{blocks:?} on leaf {}", path.leaf);
            for (level, keys) in plan.buckets.iter().enumerate() {
                assert!(keys.len() <= 2);
                for k in keys {
                    let leaf = blocks[*k as usize].1;
                    assert!(l.path(leaf).unwrap().nodes.contains(&path.nodes[level]));
                }
            }
        }
    }

    #[test]
    fn read_your_write_and_absent() {
        let l = layout(64, 4);
        let mut o = oram(l, 1);
        let mut store = MemoryPathStore::new(&l);
        assert_eq!(o.access(&mut store, 7, Access::Read).unwrap().value, None);
        o.access(&mut store, 7, Access::Write(b"seven")).unwrap();
        assert_eq!(o.access(&mut store, 7, Access::Read).unwrap().value.as_deref(), Some(&b"seven"[..]));
        let out = o.access(&mut store, 7, Access::Write(b"eight")).unwrap();
        assert_eq!(out.value.as_deref(), Some(&b"seven"[..]));
        assert!(o.positions().get(8).is_none());
        assert!(o.audit(&mut store).unwrap().is_clean());
    }

    #[test]
    fn access_reads_the_mapped_path() {
        let l = layout(64, 4);
        let mut o = oram(l, 2);
        let mut store = MemoryPathStore::new(&l);
        o.access(&mut store, 1, Access::Write(b"a")).unwrap();
        for _ in 0..20 {
            let mapped = o.positions().get(1).unwrap();
            let out = o.access(&mut store, 1, Access::Read).unwrap();
            assert_eq!(out.path_leaf, mapped);
            assert_eq!(o.positions().get(1), out.new_leaf);
        }
    }

    #[test]
    fn remap_single_leaf_and_determinism() {
        let mut o = oram(layout(1, 4), 5);
        assert!((0..100).all(|k| o.remap(k) == 0));
        let l = layout(1 << 10, 4);
        let seq = |seed| {
            let mut o = oram(l, seed);
            (0..50).map(|k| o.remap(k)).collect::<Vec<_>>()
        };
        assert_eq!(seq(9), seq(9));
        assert_ne!(seq(9), seq(10));
    }

    #[test]
    fn remap_is_uniform() {
        let l = layout(32_768, 4);
        let mut o = oram(l, 12);
        let leaves: Vec<u64> = (0..100_000).map(|k| o.remap(k)).collect();
        let bins = stats::leaf_bins(l.leaf_count(), leaves.len());
        let test = stats::uniformity(&stats::histogram(leaves, l.leaf_count(), bins));
        assert!(test.p_value > 0.01, "{test:?}");
    }

    #[test]
    fn stash_overflow_is_fatal() {
        // Z = 1 on a one-bucket tree: the second key cannot be placed
        let l = layout(1, 1);
        let mut o = PathOram::new(l, 0, SeedStreams::new(1).stream(Stream::Remap));
        let mut store = MemoryPathStore::new(&l);
        o.access(&mut store, 1, Access::Write(b"x")).unwrap();
        let err = o.access(&mut store, 2, Access::Write(b"y")).unwrap_err();
        assert!(matches!(err, Error::StashOverflow { size: 1, max: 0 }));
    }

    #[test]
    fn matches_map_oracle_with_residency() {
        let l = layout(256, 4);
        let mut o = oram(l, 4);
        let mut store = MemoryPathStore::new(&l);
        let mut oracle: HashMap<u64, Vec<u8>> = HashMap::new();
        let mut rng = SeedStreams::new(4).stream(Stream::Workload);
        for i in 0..5_000u64 {
            let key = rng.random_range(0..300);
            if rng.random_bool(0.5) {
                let v = i.to_le_bytes().to_vec();
                o.access(&mut store, key, Access::Write(&v)).unwrap();
                oracle.insert(key, v);
            } else {
                assert_eq!(o.access(&mut store, key, Access::Read).unwrap().value, oracle.get(&key).cloned());
            }
            if i % 500 == 0 {
                let audit = o.audit(&mut store).unwrap();
                assert!(audit.is_clean(), "{:?}", audit.violations);
                assert_eq!(audit.stash_resident + audit.tree_resident.len(), oracle.len());
            }
        }
    }
}
