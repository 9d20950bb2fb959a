//! The JSON run configuration shared by the CLI, the sweep and the audit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audit::AuditSpec;
use crate::client::ClientConfig;
use crate::error::{Error, Result};
use crate::observer::DigestGranularity;
use crate::transport::{BatchMode, NetProfile};
use crate::workload::WorkloadSpec;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    /// In-process region with virtual-time charging.
    #[default]
    Simulated,
    /// A loopback TCP server in front of the region.
    Wire,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSpec {
    /// ORAM read percentages.
    pub x_values: Vec<f64>,
    /// Profile names, `ib40` or `ib100`.
    pub profiles: Vec<String>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec { x_values: (1..=10).map(|i| i as f64 * 10.0).collect(), profiles: vec!["ib40".into(), "ib100".into()] }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub workload: WorkloadSpec,
    pub client: ClientConfig,
    /// Profile charged by single runs (verify, audit, backend checks).
    pub profile: NetProfile,
    pub batch: BatchMode,
    pub backend: Backend,
    pub granularity: DigestGranularity,
    pub sweep: SweepSpec,
    pub audit: AuditSpec,
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Config = serde_json::from_str(text).map_err(|e| Error::config(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn profiles(&self) -> Result<Vec<NetProfile>> {
        self.sweep.profiles.iter().map(|p| NetProfile::by_name(p)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.workload.validate()?;
        self.client.validate()?;
        self.profile.validate()?;
        self.audit.validate()?;
        if self.workload.value_bytes != self.client.value_bytes {
            return Err(Error::config(format!(
                "workload value_bytes {} differs from client value_bytes {}",
                self.workload.value_bytes, self.client.value_bytes
            )));
        }
        if self.workload.record_count > self.client.block_count {
            return Err(Error::config(format!(
                "{} records do not fit a tree sized for {} blocks",
                self.workload.record_count, self.client.block_count
            )));
        }
        if let Some(x) = self.sweep.x_values.iter().find(|x| !(0.0..=100.0).contains(*x)) {
            return Err(Error::config(format!("sweep value {x} outside [0, 100]")));
        }
        self.profiles()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let c = Config::default();
        c.validate().unwrap();
        assert_eq!(Config::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c = Config::from_json(r#"{"workload": {"op_count": 10}, "client": {"mix": {"oram_fraction": 25}}}"#).unwrap();
        assert_eq!(c.workload.op_count, 10);
        assert_eq!(c.workload.record_count, 32_000);
        assert_eq!(c.client.mix.oram_fraction, 25.0);
        assert_eq!(c.client.mix.seed, crate::client::MixConfig::default().seed);
    }

    #[test]
    fn rejects_bad_configs() {
        for bad in [
            r#"{"nonsense": 1}"#,
            r#"{"workload": {"read_fraction": 2}}"#,
            r#"{"workload": {"value_bytes": 100}}"#,
            r#"{"workload": {"record_count": 40000}}"#,
            r#"{"sweep": {"profiles": ["ib9"]}}"#,
            r#"{"sweep": {"x_values": [120]}}"#,
            "not json",
        ] {
            assert!(matches!(Config::from_json(bad), Err(Error::InvalidConfig(_))), "{bad}");
        }
    }
}
