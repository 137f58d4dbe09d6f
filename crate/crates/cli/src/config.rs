//! Run configuration files.
//!
//! A config is either a bare network description or a wrapper
//! `{"version": 1, "network": {...}, "experiment": {...}}`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use spinlab::distributions::{DiscreteSizeLaw, SizeLaw};
use spinlab::product_form::RouteCounts;
use spinlab::topology::{Network, NetworkConfig};

pub const SCHEMA_VERSION: u32 = 1;

pub const SCHEMA_HELP: &str = r#"Config file schema (JSON, version 1):

  {
    "version": 1,
    "network": {
      "queues": ["q1", "q2"],
      "routes": {"r0": ["q1", "q2"], "r1": ["q1"], "r2": ["q2"]},
      "nu": {"r0": 0.2, "r1": 0.3, "r2": 0.1},
      "mean_size": {"r0": 1.0, "r1": 1.0, "r2": 1.0},
      "phi": {"q1": {"values": [1.0], "tail": "constant"},
              "q2": {"values": [1.0], "tail": "constant"}},
      "discipline": {"q1": {"kind": "processor_sharing"}}
    },
    "experiment": {
      "replications": 20,          "c": 1,            "c_list": [10, 100, 1000],
      "horizon": 100.0,            "events": 100000,  "burn_in": 0.2,
      "box": [8, 8, 8],            "population": {"r0": 2, "r1": 1, "r2": 1},
      "limit_sizes": [{"kind": "exponential", "params": {"rate": 1.0}}],
      "packet_sizes": [{"kind": "geometric", "params": {"p": 0.5}}],
      "laws": [{"kind": "uniform", "params": {"low": 0.0, "high": 2.0}}],
      "grid_points": 100,          "batches": 30
    }
  }

A bare "network" object is also accepted. Every experiment key is optional.
Size-law lists hold one law per route, or a single law applied to every route.
Disciplines: processor_sharing, fifo, lifo_preemptive, or
{"kind": "custom", "gamma": [[1.0], [0.5, 0.5]], "delta": [[1.0], [0.5, 0.5]]}.
"#;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentBlock {
    pub replications: Option<usize>,
    pub c: Option<u32>,
    pub c_list: Option<Vec<u32>>,
    pub horizon: Option<f64>,
    pub events: Option<u64>,
    pub burn_in: Option<f64>,
    #[serde(rename = "box")]
    pub box_max: Option<Vec<u32>>,
    pub population: Option<BTreeMap<String, u32>>,
    pub limit_sizes: Option<Vec<SizeLaw>>,
    pub packet_sizes: Option<Vec<DiscreteSizeLaw>>,
    pub laws: Option<Vec<SizeLaw>>,
    pub grid_points: Option<usize>,
    pub batches: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "schema_version")]
    pub version: u32,
    pub network: NetworkConfig,
    #[serde(default)]
    pub experiment: ExperimentBlock,
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

/// A loaded, validated config.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: RunConfig,
    pub network: Network,
    pub hash: String,
}

/// Reading or validating the config failed.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn load(path: Option<&Path>) -> Result<Loaded, ConfigError> {
    let path = path.ok_or_else(|| ConfigError("missing --config <FILE>".into()))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
    parse(&text)
}

pub fn parse(text: &str) -> Result<Loaded, ConfigError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| ConfigError(format!("invalid JSON: {e}")))?;
    let config: RunConfig = if value.get("network").is_some() {
        serde_json::from_value(value)
            .map_err(|e| ConfigError(format!("config does not match schema: {e}")))?
    } else {
        let network = serde_json::from_value(value)
            .map_err(|e| ConfigError(format!("network does not match schema: {e}")))?;
        RunConfig {
            version: SCHEMA_VERSION,
            network,
            experiment: ExperimentBlock::default(),
        }
    };
    if config.version != SCHEMA_VERSION {
        return Err(ConfigError(format!(
            "unsupported config version {}",
            config.version
        )));
    }
    let network = Network::build(&config.network).map_err(|e| ConfigError(e.to_string()))?;
    Ok(Loaded {
        hash: config_hash(&config),
        config,
        network,
    })
}

/// SHA-256 of the canonical JSON form (sorted keys, no whitespace).
pub fn config_hash(config: &RunConfig) -> String {
    let canonical = serde_json::to_value(config)
        .and_then(|v| serde_json::to_string(&v))
        .expect("config serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

/// Broadcasts a one-element list to every route.
pub fn per_route<T: Clone>(items: &[T], routes: usize, what: &str) -> Result<Vec<T>, ConfigError> {
    match items.len() {
        1 => Ok(vec![items[0].clone(); routes]),
        n if n == routes => Ok(items.to_vec()),
        n => Err(ConfigError(format!(
            "{what}: {n} entries for {routes} routes"
        ))),
    }
}

/// Route counts from a `route id -> count` map; missing routes count zero.
pub fn population(net: &Network, map: &BTreeMap<String, u32>) -> Result<RouteCounts, ConfigError> {
    let mut n = vec![0u32; net.num_routes()];
    for (id, &k) in map {
        let i = net
            .route_index(id)
            .map_err(|e| ConfigError(e.to_string()))?;
        n[i] = k;
    }
    Ok(RouteCounts(n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use spinlab::topology::two_queue_config;

    #[test]
    fn bare_and_wrapped_configs_hash_alike() {
        let net = two_queue_config([0.2, 0.3, 0.1], [1.0; 3]);
        let bare = serde_json::to_string(&net).unwrap();
        let wrapped = format!(r#"{{"version": 1, "network": {bare}}}"#);
        assert_eq!(parse(&bare).unwrap().hash, parse(&wrapped).unwrap().hash);
    }

    #[test]
    fn hash_ignores_formatting() {
        let net = two_queue_config([0.2, 0.3, 0.1], [1.0; 3]);
        let compact = serde_json::to_string(&net).unwrap();
        let pretty = serde_json::to_string_pretty(&net).unwrap();
        assert_eq!(parse(&compact).unwrap().hash, parse(&pretty).unwrap().hash);
        let other = serde_json::to_string(&two_queue_config([0.2, 0.3, 0.2], [1.0; 3])).unwrap();
        assert_ne!(parse(&compact).unwrap().hash, parse(&other).unwrap().hash);
    }

    #[test]
    fn rejects_unknown_keys_and_versions() {
        let net = serde_json::to_string(&two_queue_config([0.2, 0.3, 0.1], [1.0; 3])).unwrap();
        assert!(parse(&format!(r#"{{"network": {net}, "extra": 1}}"#)).is_err());
        assert!(parse(&format!(r#"{{"version": 2, "network": {net}}}"#)).is_err());
        assert!(parse(&format!(
            r#"{{"network": {net}, "experiment": {{"bogus": 1}}}}"#
        ))
        .is_err());
        assert!(parse("{").is_err());
    }

    #[test]
    fn broadcast_lists() {
        assert_eq!(per_route(&[1], 3, "x").unwrap(), vec![1, 1, 1]);
        assert!(per_route(&[1, 2], 3, "x").is_err());
    }
}
