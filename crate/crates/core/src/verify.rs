//! Correctness oracle: the workload replayed against both the client and a
//! plain map, stopping at the first disagreement.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::client::{Fault, Route};
use crate::config::Config;
use crate::error::Result;
use crate::session::{OpResult, Session};
use crate::workload::{self, Op};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Load,
    Run,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Divergence {
    pub phase: Phase,
    pub index: usize,
    pub key: u64,
    pub route: Option<Route>,
    /// What went wrong: a differing value, or the error the client raised.
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub ops: u64,
    pub gets_checked: u64,
    pub oram_reads: u64,
    pub direct_reads: u64,
    pub max_stash: usize,
    pub first_divergence: Option<Divergence>,
    /// End-of-run white-box checks; `None` when the run already diverged.
    pub residency_violations: Option<usize>,
    pub location_errors: Option<usize>,
    pub pass: bool,
}

fn describe(value: &Option<Vec<u8>>) -> String {
    match value {
        None => "absent".into(),
        Some(v) => format!("{} bytes starting {:02x?}", v.len(), &v[..v.len().min(8)]),
    }
}

/// Runs load and run phases on the configured backend. `fault`, if any, is
/// injected before the load phase.
pub fn verify(config: &Config, fault: Option<Fault>) -> Result<VerifyReport> {
    let w = workload::generate(&config.workload)?;
    let mut session = Session::open(config, config.backend, &config.profile)?;
    if let Some(f) = fault {
        session.client.inject_fault(f);
    }
    let mut oracle: HashMap<u64, Vec<u8>> = HashMap::new();
    let mut gets_checked = 0;
    let mut first_divergence = None;
    'phases: for (phase, ops) in [(Phase::Load, &w.load), (Phase::Run, &w.run)] {
        for (index, op) in ops.iter().enumerate() {
            let diverge = |route, detail| Some(Divergence { phase, index, key: op.key(), route, detail });
            match (session.apply(op), op) {
                (Err(e), _) => first_divergence = diverge(None, e.to_string()),
                (Ok(_), Op::Put { key, value }) => {
                    oracle.insert(*key, value.clone());
                }
                (Ok(OpResult::Get { value, route }), Op::Get { key }) => {
                    gets_checked += 1;
                    let expected = oracle.get(key).cloned();
                    if value != expected {
                        let detail = format!("expected {}, got {}", describe(&expected), describe(&value));
                        first_divergence = diverge(Some(route), detail);
                    }
                }
                (Ok(OpResult::Put), Op::Get { .. }) => unreachable!("a get returns a value"),
            }
            if first_divergence.is_some() {
                break 'phases;
            }
        }
    }
    let metrics = session.client.metrics();
    let (residency_violations, location_errors) = if first_divergence.is_none() {
        let audit = session.client.audit()?;
        (Some(audit.residency.violations.len()), Some(audit.location_errors.len()))
    } else {
        (None, None)
    };
    let pass = first_divergence.is_none() && residency_violations == Some(0) && location_errors == Some(0);
    Ok(VerifyReport {
        ops: (w.load.len() + w.run.len()) as u64,
        gets_checked,
        oram_reads: metrics.oram_reads,
        direct_reads: metrics.direct_reads(),
        max_stash: metrics.max_stash,
        first_divergence,
        residency_violations,
        location_errors,
        pass,
    })
}
