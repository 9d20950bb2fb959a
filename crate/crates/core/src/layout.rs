//! Tree geometry.
//!
//! Buckets are stored in heap order: the root is bucket 0 and the children
//! of bucket `i` are `2i + 1` and `2i + 2`. Leaves occupy the last
//! `leaf_count` indices. Bucket `i` occupies the byte range
//! `[i * Z * slot_bytes, (i + 1) * Z * slot_bytes)` of the server region.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sealing::SEAL_OVERHEAD;

/// Deepest tree this crate will lay out. 2^41 - 1 buckets is far past
/// anything that fits in memory anyway.
pub const MAX_LEVELS: u32 = 40;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeLayout {
    block_count: u64,
    bucket_capacity: usize,
    levels: u32,
    slot_bytes: usize,
}

/// A root-to-leaf path: `nodes[0]` is the root, the last entry is the leaf bucket.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PathSpec {
    pub leaf: u64,
    pub nodes: Vec<u64>,
}

pub fn make_layout(block_count: u64, bucket_capacity: usize, slot_bytes: usize) -> Result<TreeLayout> {
    TreeLayout::new(block_count, bucket_capacity, slot_bytes)
}

impl TreeLayout {
    pub fn new(block_count: u64, bucket_capacity: usize, slot_bytes: usize) -> Result<Self> {
        if block_count == 0 {
            return Err(Error::config("block_count must be at least 1"));
        }
        if bucket_capacity == 0 {
            return Err(Error::config("bucket_capacity must be at least 1"));
        }
        if slot_bytes < SEAL_OVERHEAD {
            return Err(Error::config(format!(
                "slot_bytes {slot_bytes} is below the sealing overhead of {SEAL_OVERHEAD}"
            )));
        }
        let levels = ceil_log2(block_count);
        if levels > MAX_LEVELS {
            return Err(Error::config(format!("block_count {block_count} needs {levels} levels")));
        }
        Ok(TreeLayout { block_count, bucket_capacity, levels, slot_bytes })
    }

    pub fn block_count(&self) -> u64 {
        self.block_count
    }

    pub fn bucket_capacity(&self) -> usize {
        self.bucket_capacity
    }

    /// Height of the tree: the root is level 0, leaves are at level `levels`.
    pub fn levels(&self) -> u32 {
        self.levels
    }

    pub fn slot_bytes(&self) -> usize {
        self.slot_bytes
    }

    pub fn leaf_count(&self) -> u64 {
        1 << self.levels
    }

    pub fn bucket_count(&self) -> u64 {
        2 * self.leaf_count() - 1
    }

    pub fn slot_count(&self) -> u64 {
        self.bucket_count() * self.bucket_capacity as u64
    }

    pub fn path_len(&self) -> usize {
        self.levels as usize + 1
    }

    pub fn bucket_bytes(&self) -> usize {
        self.bucket_capacity * self.slot_bytes
    }

    pub fn region_bytes(&self) -> u64 {
        self.bucket_count() * self.bucket_bytes() as u64
    }

    pub fn bucket_offset(&self, bucket: u64) -> u64 {
        bucket * self.bucket_bytes() as u64
    }

    pub fn slot_offset(&self, bucket: u64, slot: usize) -> u64 {
        self.bucket_offset(bucket) + (slot * self.slot_bytes) as u64
    }

    /// Bucket index of leaf `leaf`.
    pub fn leaf_bucket(&self, leaf: u64) -> u64 {
        self.leaf_count() - 1 + leaf
    }

    /// Level of a bucket in the tree (root = 0).
    pub fn bucket_level(&self, bucket: u64) -> u32 {
        63 - (bucket + 1).leading_zeros()
    }

    /// Inverse of [`leaf_bucket`](Self::leaf_bucket); `None` for interior buckets.
    pub fn bucket_leaf(&self, bucket: u64) -> Option<u64> {
        let first = self.leaf_count() - 1;
        (bucket >= first && bucket < self.bucket_count()).then(|| bucket - first)
    }

    /// Deepest level at which the paths to leaves `a` and `b` share a bucket.
    pub fn common_level(&self, a: u64, b: u64) -> u32 {
        let diverge = 64 - (a ^ b).leading_zeros();
        self.levels - diverge
    }

    pub fn path(&self, leaf: u64) -> Result<PathSpec> {
        if leaf >= self.leaf_count() {
            return Err(Error::argument(format!("leaf {leaf} outside [0, {})", self.leaf_count())));
        }
        let mut nodes = Vec::with_capacity(self.path_len());
        let mut node = self.leaf_bucket(leaf);
        nodes.push(node);
        while node > 0 {
            node = (node - 1) / 2;
            nodes.push(node);
        }
        nodes.reverse();
        Ok(PathSpec { leaf, nodes })
    }
}

/// Root-to-leaf bucket list for `leaf`.
pub fn path_nodes(leaf: u64, layout: &TreeLayout) -> Result<PathSpec> {
    layout.path(leaf)
}

fn ceil_log2(n: u64) -> u32 {
    if n <= 1 {
        0
    } else {
        64 - (n - 1).leading_zeros()
    }
}
