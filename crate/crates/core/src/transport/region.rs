use std::sync::RwLock;

use crate::error::{Error, Result};
use crate::transport::{check_range, check_write};

/// The server's storage region.
///
/// Writes apply one slot at a time under the write lock, so a concurrent
/// reader of the whole region (a snapshot) sees each slot either entirely
/// before or entirely after any write. The region also keeps the list of
/// slots written since the last [`capture`](Self::capture), which lets a
/// snapshot re-digest only what changed.
#[derive(Debug)]
pub struct RegionStore {
    inner: RwLock<Inner>,
    size: u64,
    slot_bytes: usize,
}

#[derive(Debug, Clone)]
struct Inner {
    bytes: Vec<u8>,
    dirty: Vec<u64>,
    marked: Vec<bool>,
}

impl RegionStore {
    pub fn new(size: u64, slot_bytes: usize) -> Result<Self> {
        if slot_bytes == 0 || !size.is_multiple_of(slot_bytes as u64) {
            return Err(Error::config(format!("region of {size} bytes is not a whole number of {slot_bytes}-byte slots")));
        }
        let slots = (size / slot_bytes as u64) as usize;
        let inner = Inner { bytes: vec![0; size as usize], dirty: Vec::new(), marked: vec![false; slots] };
        Ok(RegionStore { inner: RwLock::new(inner), size, slot_bytes })
    }

    pub fn size(&self) -> u64 {
        self.size
    }

    pub fn slot_bytes(&self) -> usize {
        self.slot_bytes
    }

    pub fn read_into(&self, offset: u64, out: &mut [u8]) -> Result<()> {
        check_range(self.size, offset, out.len() as u64)?;
        let inner = self.inner.read().expect("region lock poisoned");
        let start = offset as usize;
        out.copy_from_slice(&inner.bytes[start..start + out.len()]);
        Ok(())
    }

    pub fn read(&self, offset: u64, len: usize) -> Result<Vec<u8>> {
        let mut out = vec![0; len];
        self.read_into(offset, &mut out)?;
        Ok(out)
    }

    pub fn write(&self, offset: u64, payload: &[u8]) -> Result<()> {
        check_write(self.size, self.slot_bytes, offset, payload.len() as u64)?;
        for (i, chunk) in payload.chunks(self.slot_bytes).enumerate() {
            let start = offset as usize + i * self.slot_bytes;
            let slot = start / self.slot_bytes;
            let mut inner = self.inner.write().expect("region lock poisoned");
            inner.bytes[start..start + chunk.len()].copy_from_slice(chunk);
            if !inner.marked[slot] {
                inner.marked[slot] = true;
                inner.dirty.push(slot as u64);
            }
        }
        Ok(())
    }

    /// Runs `f` on a consistent view of the region.
    pub fn with_contents<R>(&self, f: impl FnOnce(&[u8]) -> R) -> R {
        let inner = self.inner.read().expect("region lock poisoned");
        f(&inner.bytes)
    }

    /// Runs `f` on a consistent view of the region along with the slots
    /// written since the previous capture, then clears that list.
    pub fn capture<R>(&self, f: impl FnOnce(&[u8], &[u64]) -> R) -> R {
        let mut inner = self.inner.write().expect("region lock poisoned");
        let Inner { bytes, dirty, marked } = &mut *inner;
        let out = f(bytes, dirty);
        for &s in dirty.iter() {
            marked[s as usize] = false;
        }
        dirty.clear();
        out
    }

    /// An independent copy of the region.
    pub fn fork(&self) -> RegionStore {
        let inner = self.inner.read().expect("region lock poisoned").clone();
        RegionStore { inner: RwLock::new(inner), size: self.size, slot_bytes: self.slot_bytes }
    }
}
