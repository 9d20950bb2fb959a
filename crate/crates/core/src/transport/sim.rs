//! In-process backend: verbs act directly on a shared [`RegionStore`] and
//! are charged virtual time by the closed-form model.

use std::sync::Arc;
use std::time::Instant;

use crate::error::Result;
use crate::transport::{check_range, check_write, BatchMode, Fork, Meter, NetProfile, RegionStore, Transport, TransportMetrics};

#[derive(Debug)]
pub struct SimTransport {
    region: Arc<RegionStore>,
    meter: Meter,
}

impl SimTransport {
    pub fn new(region: Arc<RegionStore>, profile: NetProfile, batch: BatchMode) -> Self {
        let meter = Meter::new(profile, batch, region.slot_bytes());
        SimTransport { region, meter }
    }

    /// The server side of this transport.
    pub fn region(&self) -> &Arc<RegionStore> {
        &self.region
    }

}

impl Fork for SimTransport {
    /// A transport over a deep copy of the region, with the same metrics.
    fn fork(&self) -> SimTransport {
        SimTransport { region: Arc::new(self.region.fork()), meter: self.meter.clone() }
    }
}

impl Transport for SimTransport {
    fn region_bytes(&self) -> u64 {
        self.region.size()
    }

    fn slot_bytes(&self) -> usize {
        self.region.slot_bytes()
    }

    fn read_batch(&mut self, ranges: &[(u64, usize)]) -> Result<Vec<Vec<u8>>> {
        let start = Instant::now();
        for &(offset, len) in ranges {
            check_range(self.region.size(), offset, len as u64)?;
        }
        let out = ranges.iter().map(|&(o, l)| self.region.read(o, l)).collect::<Result<Vec<_>>>()?;
        self.meter.charge_read(ranges.iter().map(|r| r.1));
        self.meter.add_elapsed(start.elapsed());
        Ok(out)
    }

    fn write_batch(&mut self, segments: &[(u64, &[u8])]) -> Result<()> {
        let start = Instant::now();
        for (offset, payload) in segments {
            check_write(self.region.size(), self.region.slot_bytes(), *offset, payload.len() as u64)?;
        }
        for (offset, payload) in segments {
            self.region.write(*offset, payload)?;
        }
        self.meter.charge_write(segments.iter().map(|s| s.1.len()));
        self.meter.add_elapsed(start.elapsed());
        Ok(())
    }

    fn metrics(&self) -> &TransportMetrics {
        self.meter.metrics()
    }

    fn set_metrics(&mut self, metrics: TransportMetrics) {
        self.meter.set_metrics(metrics)
    }

    fn profile(&self) -> &NetProfile {
        self.meter.profile()
    }
}
