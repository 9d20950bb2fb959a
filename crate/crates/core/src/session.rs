//! A loaded client on either backend, with the server region at hand for
//! the observer.

use std::sync::Arc;

use crate::client::{OneSidedOram, Route};
use crate::config::{Backend, Config};
use crate::error::{Error, Result};
use crate::observer::{ObservedTransport, Observer, ObserverTrace};
use crate::transport::wire::ServerHandle;
use crate::transport::{Fork, NetProfile, RegionHandle, RegionStore, SimTransport, WireServer, WireTransport};
use crate::workload::Op;

pub type Client = OneSidedOram<ObservedTransport<RegionHandle>>;

#[derive(Debug)]
pub struct Session {
    pub client: Client,
    region: Arc<RegionStore>,
    config: Config,
    // dropped after the client so the connection closes first
    server: Option<ServerHandle>,
}

/// What one operation returned.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum OpResult {
    Put,
    Get { value: Option<Vec<u8>>, route: Route },
}

impl Session {
    /// Formats a fresh region and connects a client charged at `profile`.
    pub fn open(config: &Config, backend: Backend, profile: &NetProfile) -> Result<Session> {
        config.validate()?;
        let layout = config.client.layout()?;
        let region = Arc::new(RegionStore::new(layout.region_bytes(), layout.slot_bytes())?);
        let (handle, server) = match backend {
            Backend::Simulated => (RegionHandle::Simulated(SimTransport::new(Arc::clone(&region), profile.clone(), config.batch)), None),
            Backend::Wire => {
                let server = WireServer::bind("127.0.0.1:0", Arc::clone(&region))?.spawn()?;
                let transport =
                    WireTransport::connect(server.addr(), layout.region_bytes(), layout.slot_bytes(), profile.clone(), config.batch)?;
                (RegionHandle::Wire(transport), Some(server))
            }
        };
        let client = OneSidedOram::init(config.client.clone(), ObservedTransport::new(handle))?;
        Ok(Session { client, region, config: config.clone(), server })
    }

    /// Opens a session and runs the load phase; metrics start at zero.
    pub fn loaded(config: &Config, backend: Backend, profile: &NetProfile, load: &[Op]) -> Result<Session> {
        let mut s = Session::open(config, backend, profile)?;
        for op in load {
            s.apply(op)?;
        }
        s.client.flush_metrics();
        Ok(s)
    }

    pub fn region(&self) -> &Arc<RegionStore> {
        &self.region
    }

    pub fn backend(&self) -> Backend {
        if self.server.is_some() {
            Backend::Wire
        } else {
            Backend::Simulated
        }
    }

    /// Deep copy of a simulated session, detached from any observer.
    pub fn try_fork(&self) -> Result<Session> {
        let RegionHandle::Simulated(_) = self.client.transport().inner() else {
            return Err(Error::argument("only simulated sessions can be forked"));
        };
        let client = self.client.fork();
        let RegionHandle::Simulated(sim) = client.transport().inner() else { unreachable!() };
        let region = Arc::clone(sim.region());
        Ok(Session { client, region, config: self.config.clone(), server: None })
    }

    /// Starts observing with a baseline snapshot taken now.
    pub fn attach(&mut self, snap_every: u64) -> Result<()> {
        let observer = Observer::attach(Arc::clone(&self.region), *self.client.layout(), self.config.granularity, snap_every)?;
        self.client.transport_mut().attach(observer);
        Ok(())
    }

    /// Final snapshot and the trace, if an observer was attached.
    pub fn detach(&mut self) -> Option<ObserverTrace> {
        self.client.transport_mut().detach()
    }

    pub fn apply(&mut self, op: &Op) -> Result<OpResult> {
        match op {
            Op::Put { key, value } => {
                self.client.put(*key, value)?;
                Ok(OpResult::Put)
            }
            Op::Get { key } => {
                let (value, route) = self.client.get_routed(*key)?;
                Ok(OpResult::Get { value, route })
            }
        }
    }
}
