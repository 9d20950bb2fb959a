//! YCSB-style workloads: a load phase that inserts every record, then a run
//! phase of gets and puts over a uniform or zipfian key distribution.

use rand::distr::Distribution;
use rand::{Rng, RngCore};
use rand_distr::Zipf;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{SeedStreams, Stream};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum KeyDistribution {
    #[default]
    Uniform,
    /// Zipfian over record ranks, scrambled onto keys the way YCSB does.
    Zipfian { theta: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkloadSpec {
    pub record_count: u64,
    pub value_bytes: usize,
    pub op_count: u64,
    /// Fraction of run-phase operations that are gets.
    pub read_fraction: f64,
    pub distribution: KeyDistribution,
    pub seed: u64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            record_count: 32_000,
            value_bytes: 512,
            op_count: 100_000,
            read_fraction: 1.0,
            distribution: KeyDistribution::Uniform,
            seed: 42,
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<()> {
        if self.record_count == 0 {
            return Err(Error::config("record_count must be at least 1"));
        }
        if self.value_bytes == 0 {
            return Err(Error::config("value_bytes must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.read_fraction) {
            return Err(Error::config(format!("read_fraction {} outside [0, 1]", self.read_fraction)));
        }
        if let KeyDistribution::Zipfian { theta } = self.distribution {
            if theta <= 0.0 || !theta.is_finite() {
                return Err(Error::config(format!("zipfian theta {theta} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Op {
    Put { key: u64, value: Vec<u8> },
    Get { key: u64 },
}

impl Op {
    pub fn key(&self) -> u64 {
        match self {
            Op::Put { key, .. } | Op::Get { key } => *key,
        }
    }

    pub fn is_get(&self) -> bool {
        matches!(self, Op::Get { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Workload {
    pub load: Vec<Op>,
    pub run: Vec<Op>,
}

fn fnv1a(x: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in x.to_le_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

enum KeyChooser {
    Uniform(u64),
    Zipfian(Zipf<f64>, u64),
}

impl KeyChooser {
    fn new(spec: &WorkloadSpec) -> Result<Self> {
        Ok(match spec.distribution {
            KeyDistribution::Uniform => KeyChooser::Uniform(spec.record_count),
            KeyDistribution::Zipfian { theta } => {
                let zipf = Zipf::new(spec.record_count as f64, theta).map_err(|e| Error::config(format!("zipfian: {e}")))?;
                KeyChooser::Zipfian(zipf, spec.record_count)
            }
        })
    }

    fn next<R: Rng>(&self, rng: &mut R) -> u64 {
        match self {
            KeyChooser::Uniform(n) => rng.random_range(0..*n),
            KeyChooser::Zipfian(zipf, n) => {
                let rank = zipf.sample(rng) as u64;
                fnv1a(rank) % n
            }
        }
    }
}

pub fn generate(spec: &WorkloadSpec) -> Result<Workload> {
    spec.validate()?;
    let mut rng = SeedStreams::new(spec.seed).stream(Stream::Workload);
    let value = |rng: &mut dyn RngCore| {
        let mut v = vec![0u8; spec.value_bytes];
        rng.fill_bytes(&mut v);
        v
    };
    let load = (0..spec.record_count).map(|key| Op::Put { key, value: value(&mut rng) }).collect();
    let chooser = KeyChooser::new(spec)?;
    let mut run = Vec::with_capacity(spec.op_count as usize);
    for _ in 0..spec.op_count {
        let key = chooser.next(&mut rng);
        if rng.random_bool(spec.read_fraction) {
            run.push(Op::Get { key });
        } else {
            run.push(Op::Put { key, value: value(&mut rng) });
        }
    }
    Ok(Workload { load, run })
}
