use std::collections::HashMap;
use std::sync::Arc;

use onesided_oram::transport::SimTransport;
use onesided_oram::{BatchMode, ClientConfig, Fork, Location, MixConfig, NetProfile, OneSidedOram, ReadMode, RegionStore, Route};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn client(block_count: u64, x: f64, read_mode: ReadMode) -> OneSidedOram<SimTransport> {
    let config = ClientConfig { block_count, mix: MixConfig { oram_fraction: x, seed: 7 }, read_mode, ..ClientConfig::default() };
    let layout = config.layout().unwrap();
    let region = Arc::new(RegionStore::new(layout.region_bytes(), layout.slot_bytes()).unwrap());
    OneSidedOram::init(config, SimTransport::new(region, NetProfile::ib40(), BatchMode::PerPath)).unwrap()
}

fn value(key: u64, version: u64) -> Vec<u8> {
    let mut v = vec![0u8; 512];
    v[..8].copy_from_slice(&key.to_le_bytes());
    v[8..16].copy_from_slice(&version.to_le_bytes());
    v
}

#[test]
fn location_map_stays_exact_over_random_puts() {
    let mut c = client(4096, 50.0, ReadMode::Slot);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..10_000u64 {
        let key = rng.random_range(0..4096);
        c.put(key, &value(key, i)).unwrap();
        if i % 2_500 == 2_499 {
            let audit = c.audit().unwrap();
            assert!(audit.is_clean(), "after {} puts: {audit:?}", i + 1);
        }
    }
    for (key, loc) in c.locations().iter() {
        match loc {
            Location::Stash => assert!(c.oram().stash().contains(key)),
            Location::Slot { .. } => assert!(!c.oram().stash().contains(key)),
        }
    }
}

#[test]
fn mix_routes_about_x_percent_through_oram() {
    let mut c = client(1024, 50.0, ReadMode::Slot);
    for k in 0..1024 {
        c.put(k, &value(k, 0)).unwrap();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut oram = 0;
    for _ in 0..10_000 {
        let key = rng.random_range(0..1024);
        let (v, route) = c.get_routed(key).unwrap();
        assert_eq!(v, Some(value(key, 0)));
        oram += route.is_oram() as u32;
    }
    assert!((4_800..=5_200).contains(&oram), "{oram}");
}

#[test]
fn results_do_not_depend_on_x() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ops: Vec<(u64, bool)> = (0..4_000).map(|_| (rng.random_range(0..300), rng.random_bool(0.5))).collect();
    let run = |x: f64| {
        let mut c = client(512, x, ReadMode::Slot);
        let mut out = Vec::new();
        for (i, &(key, is_get)) in ops.iter().enumerate() {
            if is_get {
                out.push(c.get(key).unwrap());
            } else {
                c.put(key, &value(key, i as u64)).unwrap();
            }
        }
        assert!(c.audit().unwrap().is_clean());
        out
    };
    let base = run(0.0);
    assert_eq!(base, run(50.0));
    assert_eq!(base, run(100.0));
    // and they agree with a map
    let mut map = HashMap::new();
    let mut expected = Vec::new();
    for (i, &(key, is_get)) in ops.iter().enumerate() {
        if is_get {
            expected.push(map.get(&key).cloned());
        } else {
            map.insert(key, value(key, i as u64));
        }
    }
    assert_eq!(base, expected);
}

#[test]
fn one_sided_get_reads_one_slot_and_writes_nothing() {
    let mut c = client(256, 0.0, ReadMode::Slot);
    for k in 0..256 {
        c.put(k, &value(k, 0)).unwrap();
    }
    let slot_bytes = c.layout().slot_bytes() as u64;
    let key = (0..256).find(|&k| matches!(c.locations().get(k), Some(Location::Slot { .. }))).unwrap();
    c.flush_metrics();
    for _ in 0..10 {
        assert_eq!(c.one_sided_get(key).unwrap(), Some(value(key, 0)));
    }
    let m = c.metrics();
    assert_eq!((m.transport.reads.verbs, m.transport.reads.bytes), (10, 10 * slot_bytes));
    assert_eq!(m.transport.writes.verbs, 0);
    assert_eq!(m.one_sided_reads, 10);
}

#[test]
fn bucket_mode_reads_the_whole_bucket() {
    let mut c = client(256, 0.0, ReadMode::Bucket);
    for k in 0..256 {
        c.put(k, &value(k, 0)).unwrap();
    }
    let key = (0..256).find(|&k| matches!(c.locations().get(k), Some(Location::Slot { .. }))).unwrap();
    c.flush_metrics();
    assert_eq!(c.one_sided_get(key).unwrap(), Some(value(key, 0)));
    assert_eq!(c.metrics().transport.reads.bytes, c.layout().bucket_bytes() as u64);
}

#[test]
fn stash_and_absent_keys_cost_nothing_remote() {
    let mut c = client(256, 0.0, ReadMode::Slot);
    for k in 0..256 {
        c.put(k, &value(k, 1)).unwrap();
    }
    c.flush_metrics();
    assert_eq!(c.get_routed(10_000).unwrap(), (None, Route::Absent));
    let stashed = c.oram().stash().keys().next();
    if let Some(k) = stashed {
        assert_eq!(c.get_routed(k).unwrap(), (Some(value(k, 1)), Route::Stash));
    }
    assert_eq!(c.metrics().transport.verbs(), 0);
}

#[test]
fn forks_evolve_independently() {
    let mut a = client(128, 100.0, ReadMode::Slot);
    a.put(1, &value(1, 1)).unwrap();
    let mut b = a.fork();
    b.put(1, &value(1, 2)).unwrap();
    assert_eq!(a.get(1).unwrap(), Some(value(1, 1)));
    assert_eq!(b.get(1).unwrap(), Some(value(1, 2)));
}

#[test]
fn oversized_values_are_rejected() {
    let mut c = client(16, 50.0, ReadMode::Slot);
    assert!(c.put(0, &[0u8; 513]).is_err());
    c.put(0, b"short").unwrap();
    assert_eq!(c.get(0).unwrap().as_deref(), Some(&b"short"[..]));
}
