//! Block sealing.
//!
//! Every slot the server stores is `nonce || ciphertext || tag` under
//! AES-256-GCM, where the ciphertext covers a 24-byte header
//! (key u64, leaf u64, kind u32, logical length u32, little-endian) followed
//! by the zero-padded payload. Real and dummy slots are the same length and
//! every seal draws a fresh nonce, so the server cannot tell them apart or
//! tell an unchanged re-seal from a new value.

use std::fmt;

use aes_gcm::aead::{AeadInPlace, KeyInit};
use aes_gcm::{Aes256Gcm, Key, Nonce, Tag};
use rand::RngCore;

use crate::error::{Error, Result};

pub const NONCE_BYTES: usize = 12;
pub const TAG_BYTES: usize = 16;
pub const HEADER_BYTES: usize = 24;
pub const SEAL_OVERHEAD: usize = NONCE_BYTES + HEADER_BYTES + TAG_BYTES;
pub const DEFAULT_VALUE_BYTES: usize = 512;

/// Size of a sealed slot carrying `value_bytes` of payload.
pub const fn slot_bytes_for(value_bytes: usize) -> usize {
    SEAL_OVERHEAD + value_bytes
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u32)]
pub enum BlockKind {
    Dummy = 0,
    Real = 1,
}

#[derive(Clone, PartialEq, Eq)]
pub struct PlainBlock {
    pub key: u64,
    pub leaf: u64,
    pub kind: BlockKind,
    len: u32,
    payload: Vec<u8>,
}

impl PlainBlock {
    pub fn real(key: u64, leaf: u64, value: &[u8], value_bytes: usize) -> Result<Self> {
        if value.len() > value_bytes {
            return Err(Error::argument(format!(
                "value of {} bytes exceeds the {value_bytes}-byte payload",
                value.len()
            )));
        }
        let mut payload = vec![0u8; value_bytes];
        payload[..value.len()].copy_from_slice(value);
        Ok(PlainBlock { key, leaf, kind: BlockKind::Real, len: value.len() as u32, payload })
    }

    pub fn is_dummy(&self) -> bool {
        self.kind == BlockKind::Dummy
    }

    /// The logical value, without padding.
    pub fn value(&self) -> &[u8] {
        &self.payload[..self.len as usize]
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }
}

impl fmt::Debug for PlainBlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PlainBlock")
            .field("key", &self.key)
            .field("leaf", &self.leaf)
            .field("kind", &self.kind)
            .field("len", &self.len)
            .finish_non_exhaustive()
    }
}

/// A filler block with a random payload.
pub fn make_dummy<R: RngCore + ?Sized>(rng: &mut R, value_bytes: usize) -> PlainBlock {
    let mut payload = vec![0u8; value_bytes];
    rng.fill_bytes(&mut payload);
    PlainBlock { key: 0, leaf: 0, kind: BlockKind::Dummy, len: 0, payload }
}

/// The client's 256-bit sealing key. Never leaves the client.
#[derive(Clone, PartialEq, Eq)]
pub struct SealKey([u8; 32]);

impl SealKey {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        SealKey(bytes)
    }

    pub fn generate<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        let mut bytes = [0u8; 32];
        rng.fill_bytes(&mut bytes);
        SealKey(bytes)
    }
}

impl fmt::Debug for SealKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SealKey(..)")
    }
}

/// A sealed slot, exactly `slot_bytes` long.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SealedSlot(Vec<u8>);

impl SealedSlot {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        SealedSlot(bytes)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn nonce(&self) -> &[u8] {
        &self.0[..NONCE_BYTES]
    }

    pub fn ciphertext(&self) -> &[u8] {
        &self.0[NONCE_BYTES..self.0.len() - TAG_BYTES]
    }

    pub fn tag(&self) -> &[u8] {
        &self.0[self.0.len() - TAG_BYTES..]
    }
}

/// Keyed sealer for one payload size.
#[derive(Clone)]
pub struct Sealer {
    cipher: Aes256Gcm,
    value_bytes: usize,
}

impl fmt::Debug for Sealer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Sealer").field("value_bytes", &self.value_bytes).finish_non_exhaustive()
    }
}

impl Sealer {
    pub fn new(key: &SealKey, value_bytes: usize) -> Self {
        let cipher = Aes256Gcm::new(Key::<Aes256Gcm>::from_slice(&key.0));
        Sealer { cipher, value_bytes }
    }

    pub fn value_bytes(&self) -> usize {
        self.value_bytes
    }

    pub fn slot_bytes(&self) -> usize {
        slot_bytes_for(self.value_bytes)
    }

    /// Seals `block` into `out`, which must be exactly `slot_bytes` long.
    pub fn seal_into<R: RngCore + ?Sized>(&self, block: &PlainBlock, rng: &mut R, out: &mut [u8]) {
        assert_eq!(out.len(), self.slot_bytes(), "output buffer must be one slot");
        assert_eq!(block.payload.len(), self.value_bytes, "payload size mismatch");
        let (nonce, rest) = out.split_at_mut(NONCE_BYTES);
        rng.fill_bytes(nonce);
        let (body, tag_out) = rest.split_at_mut(HEADER_BYTES + self.value_bytes);
        body[0..8].copy_from_slice(&block.key.to_le_bytes());
        body[8..16].copy_from_slice(&block.leaf.to_le_bytes());
        body[16..20].copy_from_slice(&(block.kind as u32).to_le_bytes());
        body[20..24].copy_from_slice(&block.len.to_le_bytes());
        body[HEADER_BYTES..].copy_from_slice(&block.payload);
        let tag = self
            .cipher
            .encrypt_in_place_detached(Nonce::from_slice(nonce), b"", body)
            .expect("slot fits the GCM length limit");
        tag_out.copy_from_slice(&tag);
    }

    pub fn seal<R: RngCore + ?Sized>(&self, block: &PlainBlock, rng: &mut R) -> SealedSlot {
        let mut out = vec![0u8; self.slot_bytes()];
        self.seal_into(block, rng, &mut out);
        SealedSlot(out)
    }

    pub fn open(&self, slot: &[u8]) -> Result<PlainBlock> {
        if slot.len() != self.slot_bytes() {
            return Err(Error::MalformedSlot { expected: self.slot_bytes(), actual: slot.len() });
        }
        let (nonce, rest) = slot.split_at(NONCE_BYTES);
        let (body, tag) = rest.split_at(rest.len() - TAG_BYTES);
        let mut body = body.to_vec();
        self.cipher
            .decrypt_in_place_detached(Nonce::from_slice(nonce), b"", &mut body, Tag::from_slice(tag))
            .map_err(|_| Error::Tamper)?;
        let key = u64::from_le_bytes(body[0..8].try_into().unwrap());
        let leaf = u64::from_le_bytes(body[8..16].try_into().unwrap());
        let kind = match u32::from_le_bytes(body[16..20].try_into().unwrap()) {
            0 => BlockKind::Dummy,
            1 => BlockKind::Real,
            _ => return Err(Error::MalformedSlot { expected: slot.len(), actual: slot.len() }),
        };
        let len = u32::from_le_bytes(body[20..24].try_into().unwrap());
        if len as usize > self.value_bytes {
            return Err(Error::MalformedSlot { expected: slot.len(), actual: slot.len() });
        }
        body.drain(..HEADER_BYTES);
        Ok(PlainBlock { key, leaf, kind, len, payload: body })
    }
}

pub fn seal<R: RngCore + ?Sized>(block: &PlainBlock, key: &SealKey, rng: &mut R) -> SealedSlot {
    Sealer::new(key, block.payload.len()).seal(block, rng)
}

pub fn open(slot: &SealedSlot, key: &SealKey) -> Result<PlainBlock> {
    let value_bytes = slot
        .len()
        .checked_sub(SEAL_OVERHEAD)
        .ok_or(Error::MalformedSlot { expected: SEAL_OVERHEAD, actual: slot.len() })?;
    Sealer::new(key, value_bytes).open(slot.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn rng() -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(11)
    }

    #[test]
    fn slot_size_is_sum_of_fields() {
        assert_eq!(slot_bytes_for(512), 12 + 16 + 24 + 512);
        assert_eq!(slot_bytes_for(512), 564);
    }

    #[test]
    fn dummy_round_trip() {
        let mut r = rng();
        let key = SealKey::generate(&mut r);
        let dummy = PlainBlock { key: 0, leaf: 0, kind: BlockKind::Dummy, len: 0, payload: vec![0; 512] };
        let slot = seal(&dummy, &key, &mut r);
        assert_eq!(slot.len(), 564);
        assert_eq!(open(&slot, &key).unwrap(), dummy);
    }

    #[test]
    fn resealing_changes_every_part() {
        let mut r = rng();
        let key = SealKey::generate(&mut r);
        let block = PlainBlock::real(3, 9, b"same", 512).unwrap();
        let a = seal(&block, &key, &mut r);
        let b = seal(&block, &key, &mut r);
        assert_ne!(a.nonce(), b.nonce());
        assert_ne!(a.ciphertext(), b.ciphertext());
        assert_eq!(open(&a, &key).unwrap(), open(&b, &key).unwrap());
    }

    #[test]
    fn wrong_key_is_tamper() {
        let mut r = rng();
        let key = SealKey::generate(&mut r);
        let other = SealKey::generate(&mut r);
        let slot = seal(&PlainBlock::real(1, 2, b"v", 512).unwrap(), &key, &mut r);
        assert!(matches!(open(&slot, &other), Err(Error::Tamper)));
    }

    #[test]
    fn wrong_length_is_malformed() {
        let mut r = rng();
        let key = SealKey::generate(&mut r);
        let sealer = Sealer::new(&key, 512);
        let slot = sealer.seal(&make_dummy(&mut r, 512), &mut r);
        let short = &slot.as_bytes()[..563];
        assert!(matches!(sealer.open(short), Err(Error::MalformedSlot { expected: 564, actual: 563 })));
        assert!(matches!(open(&SealedSlot::from_bytes(vec![0; 10]), &key), Err(Error::MalformedSlot { .. })));
    }

    #[test]
    fn bit_flips_are_rejected() {
        let mut r = rng();
        let key = SealKey::generate(&mut r);
        let sealer = Sealer::new(&key, 512);
        let slot = sealer.seal(&PlainBlock::real(5, 6, &[7; 100], 512).unwrap(), &mut r);
        for _ in 0..100 {
            let bit = r.random_range(0..slot.len() * 8);
            let mut bytes = slot.as_bytes().to_vec();
            bytes[bit / 8] ^= 1 << (bit % 8);
            assert!(matches!(sealer.open(&bytes), Err(Error::Tamper)), "bit {bit} accepted");
        }
    }

    #[test]
    fn oversized_value_rejected() {
        assert!(matches!(PlainBlock::real(1, 1, &[0; 513], 512), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn dummies_and_reals_have_the_same_size() {
        let mut r = rng();
        let key = SealKey::generate(&mut r);
        let sealer = Sealer::new(&key, 512);
        let mut bucket = Vec::new();
        for i in 0..4 {
            let block = if i % 2 == 0 { make_dummy(&mut r, 512) } else { PlainBlock::real(i, i, b"x", 512).unwrap() };
            bucket.extend_from_slice(sealer.seal(&block, &mut r).as_bytes());
        }
        assert_eq!(bucket.len(), 4 * 564);
    }

    #[test]
    fn sealed_byte_histograms_do_not_separate_dummies_from_reals() {
        let mut r = rng();
        let key = SealKey::generate(&mut r);
        let sealer = Sealer::new(&key, 512);
        let mut dummy_hist = vec![0u64; 256];
        let mut real_hist = vec![0u64; 256];
        for i in 0..1000u64 {
            for &b in sealer.seal(&make_dummy(&mut r, 512), &mut r).as_bytes() {
                dummy_hist[b as usize] += 1;
            }
            // low-entropy plaintext: short value, zero padding
            let real = PlainBlock::real(i, i % 16, &i.to_le_bytes(), 512).unwrap();
            for &b in sealer.seal(&real, &mut r).as_bytes() {
                real_hist[b as usize] += 1;
            }
        }
        let test = stats::homogeneity(&dummy_hist, &real_hist);
        assert!(test.p_value > 0.01, "{test:?}");
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(256))]
        #[test]
        fn round_trip(key in proptest::prelude::any::<u64>(), leaf in proptest::prelude::any::<u64>(),
                      value in proptest::collection::vec(proptest::prelude::any::<u8>(), 0..=64),
                      seed in proptest::prelude::any::<u64>()) {
            let mut r = ChaCha12Rng::seed_from_u64(seed);
            let sk = SealKey::generate(&mut r);
            let sealer = Sealer::new(&sk, 64);
            let block = PlainBlock::real(key, leaf, &value, 64).unwrap();
            let slot = sealer.seal(&block, &mut r);
            proptest::prop_assert_eq!(slot.len(), slot_bytes_for(64));
            let opened = sealer.open(slot.as_bytes()).unwrap();
            proptest::prop_assert_eq!(opened.value(), &value[..]);
            proptest::prop_assert_eq!(opened, block);
        }
    }
}
