//! One-sided Path ORAM.
//!
//! A Path ORAM key-value store over an abstract one-sided transport. Writes
//! always run the full ORAM protocol. Reads are mixed: a configurable
//! fraction runs the full protocol (and is indistinguishable from a write),
//! the rest are served by a single one-sided slot read the server cannot
//! observe.
//!
//! The crate also carries the adversary used to check those claims: a
//! server-side observer that snapshots the storage region and diffs
//! consecutive snapshots, plus classifiers that try to tell reads from
//! writes.

pub mod adversary;
pub mod audit;
pub mod bench;
pub mod client;
pub mod config;
pub mod error;
pub mod layout;
pub mod observer;
pub mod oram;
pub mod rng;
pub mod sealing;
pub mod session;
pub mod stats;
pub mod transport;
pub mod verify;
pub mod workload;

pub use client::{cost_model, ClientConfig, CostPrediction, Location, LocationMap, MixConfig, OneSidedOram, ReadMode, Route};
pub use error::{Error, Result};
pub use layout::{make_layout, PathSpec, TreeLayout};
pub use observer::{ObservedTransport, Observer, ObserverTrace, Snapshot, SnapshotDiff};
pub use transport::{BatchMode, Fork, NetProfile, RegionStore, Transport, TransportMetrics};
