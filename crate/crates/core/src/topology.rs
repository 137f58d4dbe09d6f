//! Network parameterization shared by the exact engine and both simulators.
//!
//! A [`Network`] is built from a [`NetworkConfig`] (the JSON configuration
//! schema) and is immutable afterwards. Queues and routes are identified by
//! strings and iterated in lexicographic order, so the index of a queue or
//! route is stable for a given configuration.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows of custom kernels checked when a network is built.
pub const DEFAULT_M_CHECK: usize = 64;

const KERNEL_TOL: f64 = 1e-9;

/// How the service rate extends past the end of the table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailRule {
    /// `phi(m) = phi(m_cap)` for `m > m_cap`.
    #[serde(alias = "constant_after_cap")]
    Constant,
    /// `phi(m) = phi(m_cap) * m / m_cap` for `m > m_cap`.
    #[serde(alias = "proportional_after_cap")]
    Proportional,
}

/// Total service rate `phi_j(m)` of a queue holding `m` packets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceProfile {
    pub values: Vec<f64>,
    #[serde(default = "default_tail")]
    pub tail: TailRule,
}

fn default_tail() -> TailRule {
    TailRule::Constant
}

impl ServiceProfile {
    pub fn constant(rate: f64) -> Self {
        ServiceProfile {
            values: vec![rate],
            tail: TailRule::Constant,
        }
    }

    /// Infinite-server profile `phi(m) = rate * m`.
    pub fn proportional(rate: f64) -> Self {
        ServiceProfile {
            values: vec![rate],
            tail: TailRule::Proportional,
        }
    }

    pub fn cap(&self) -> usize {
        self.values.len()
    }

    /// `phi(m)`, with `phi(0) = 0`.
    pub fn rate(&self, m: usize) -> f64 {
        if m == 0 {
            return 0.0;
        }
        let cap = self.values.len();
        if m <= cap {
            return self.values[m - 1];
        }
        let last = self.values[cap - 1];
        match self.tail {
            TailRule::Constant => last,
            TailRule::Proportional => last * m as f64 / cap as f64,
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        ServiceProfile {
            values: self.values.iter().map(|v| v * factor).collect(),
            tail: self.tail,
        }
    }

    fn validate(&self, queue: &str) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Config(format!(
                "phi table of queue `{queue}` is empty"
            )));
        }
        for v in &self.values {
            if !(v.is_finite() && *v > 0.0) {
                return Err(Error::NonPositiveRate {
                    what: "phi",
                    at: queue.to_string(),
                    value: *v,
                });
            }
        }
        Ok(())
    }
}

/// Position kernels of a queue: `gamma(l, m)` splits service among the `m`
/// occupied positions, `delta(l, m)` places an arrival that makes the queue
/// length `m`. Positions are 1-based in the math, 0-based in the API.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Discipline {
    #[default]
    #[serde(alias = "ps")]
    ProcessorSharing,
    Fifo,
    #[serde(alias = "lifo")]
    LifoPreemptive,
    /// Row `r` of each table holds the kernel for `m = r + 1` and has `r + 1` entries.
    Custom {
        gamma: Vec<Vec<f64>>,
        delta: Vec<Vec<f64>>,
    },
}


impl Discipline {
    /// Largest `m` for which both kernels are defined.
    pub fn max_m(&self) -> usize {
        match self {
            Discipline::Custom { gamma, delta } => gamma.len().min(delta.len()),
            _ => usize::MAX,
        }
    }

    /// `gamma(l + 1, m)`.
    pub fn service_share(&self, l: usize, m: usize) -> f64 {
        debug_assert!(l < m);
        match self {
            Discipline::ProcessorSharing => 1.0 / m as f64,
            Discipline::Fifo => (l == 0) as u8 as f64,
            Discipline::LifoPreemptive => (l + 1 == m) as u8 as f64,
            Discipline::Custom { gamma, .. } => gamma
                .get(m - 1)
                .and_then(|row| row.get(l))
                .copied()
                .unwrap_or(0.0),
        }
    }

    /// `delta(l + 1, m)` where `m` is the length after insertion.
    pub fn insert_share(&self, l: usize, m: usize) -> f64 {
        debug_assert!(l < m);
        match self {
            Discipline::ProcessorSharing => 1.0 / m as f64,
            Discipline::Fifo | Discipline::LifoPreemptive => (l + 1 == m) as u8 as f64,
            Discipline::Custom { delta, .. } => delta
                .get(m - 1)
                .and_then(|row| row.get(l))
                .copied()
                .unwrap_or(0.0),
        }
    }

    /// Draws the 0-based position completing service among `m` packets.
    pub fn pick_service(&self, m: usize, u: f64) -> Option<usize> {
        match self {
            Discipline::ProcessorSharing => Some(((u * m as f64) as usize).min(m - 1)),
            Discipline::Fifo => Some(0),
            Discipline::LifoPreemptive => Some(m - 1),
            Discipline::Custom { gamma, .. } => gamma.get(m - 1).map(|row| categorical(row, u)),
        }
    }

    /// Draws the 0-based insertion position for a queue of length `m` after insertion.
    pub fn pick_insert(&self, m: usize, u: f64) -> Option<usize> {
        match self {
            Discipline::ProcessorSharing => Some(((u * m as f64) as usize).min(m - 1)),
            Discipline::Fifo | Discipline::LifoPreemptive => Some(m - 1),
            Discipline::Custom { delta, .. } => delta.get(m - 1).map(|row| categorical(row, u)),
        }
    }

    /// Checks that both kernels are stochastic for `m = 1..=m_check`.
    pub fn validate(&self, queue: &str, m_check: usize) -> Result<()> {
        let Discipline::Custom { gamma, delta } = self else {
            return Ok(());
        };
        if gamma.is_empty() || delta.is_empty() {
            return Err(Error::Config(format!(
                "custom kernels of queue `{queue}` are empty"
            )));
        }
        for (kernel, table) in [("gamma", gamma), ("delta", delta)] {
            for (r, row) in table.iter().enumerate().take(m_check) {
                let m = r + 1;
                let sum: f64 = row.iter().sum();
                let bad_entry = row.iter().any(|w| !(w.is_finite() && *w >= 0.0));
                if row.len() != m || bad_entry || (sum - 1.0).abs() > KERNEL_TOL {
                    return Err(Error::KernelNotStochastic {
                        queue: queue.to_string(),
                        kernel,
                        m,
                        sum,
                    });
                }
            }
        }
        Ok(())
    }
}

fn categorical(weights: &[f64], u: f64) -> usize {
    let total: f64 = weights.iter().sum();
    let target = u * total;
    let mut acc = 0.0;
    for (idx, w) in weights.iter().enumerate() {
        acc += w;
        if target < acc {
            return idx;
        }
    }
    // Rounding can leave `target` at the very top; fall back to the last positive weight.
    weights
        .iter()
        .rposition(|w| *w > 0.0)
        .unwrap_or(weights.len() - 1)
}

/// JSON configuration schema of a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub queues: Vec<String>,
    /// Route id to ordered list of queue ids (repeats allowed).
    pub routes: BTreeMap<String, Vec<String>>,
    /// Document arrival rate per route.
    pub nu: BTreeMap<String, f64>,
    /// Mean document size per route.
    pub mean_size: BTreeMap<String, f64>,
    pub phi: BTreeMap<String, ServiceProfile>,
    /// Defaults to processor sharing for queues not listed.
    #[serde(default)]
    pub discipline: BTreeMap<String, Discipline>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub id: String,
    /// Queue indices in visiting order.
    pub order: Vec<usize>,
}

impl Route {
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stability {
    Stable,
    Unstable,
    /// The geometric tail ratio lies within the tolerance below 1.
    Undetermined,
}

/// Validated, immutable network.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    queues: Vec<String>,
    routes: Vec<Route>,
    arrival_rate: Vec<f64>,
    mean_size: Vec<f64>,
    capacity: Vec<ServiceProfile>,
    discipline: Vec<Discipline>,
    /// `zeta[i][j]`: visits of queue `j` per traversal of route `i`.
    zeta: Vec<Vec<u32>>,
}

impl Network {
    pub fn build(config: &NetworkConfig) -> Result<Network> {
        Self::build_with_m_check(config, DEFAULT_M_CHECK)
    }

    pub fn build_with_m_check(config: &NetworkConfig, m_check: usize) -> Result<Network> {
        let mut queues = config.queues.clone();
        queues.sort();
        if queues.is_empty() {
            return Err(Error::Config("no queues declared".into()));
        }
        if queues.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("duplicate queue id".into()));
        }
        if config.routes.is_empty() {
            return Err(Error::Config("no routes declared".into()));
        }
        let queue_index = |id: &str, context: &str| {
            queues
                .binary_search_by(|q| q.as_str().cmp(id))
                .map_err(|_| Error::UnknownQueue {
                    queue: id.to_string(),
                    context: context.to_string(),
                })
        };

        let mut routes = Vec::with_capacity(config.routes.len());
        for (id, order) in &config.routes {
            if order.is_empty() {
                return Err(Error::EmptyRoute { route: id.clone() });
            }
            let order = order
                .iter()
                .map(|q| queue_index(q, &format!("route `{id}`")))
                .collect::<Result<Vec<_>>>()?;
            routes.push(Route {
                id: id.clone(),
                order,
            });
        }

        let per_route = |map: &BTreeMap<String, f64>, what: &'static str| -> Result<Vec<f64>> {
            for key in map.keys() {
                if !config.routes.contains_key(key) {
                    return Err(Error::UnknownRoute(key.clone()));
                }
            }
            routes
                .iter()
                .map(|r| {
                    let v = *map.get(&r.id).ok_or_else(|| {
                        Error::Config(format!("missing `{what}` for route `{}`", r.id))
                    })?;
                    if !(v.is_finite() && v > 0.0) {
                        return Err(Error::NonPositiveRate {
                            what,
                            at: r.id.clone(),
                            value: v,
                        });
                    }
                    Ok(v)
                })
                .collect()
        };
        let arrival_rate = per_route(&config.nu, "nu")?;
        let mean_size = per_route(&config.mean_size, "mean_size")?;

        for key in config.phi.keys().chain(config.discipline.keys()) {
            queue_index(key, "phi/discipline")?;
        }
        let mut capacity = Vec::with_capacity(queues.len());
        let mut discipline = Vec::with_capacity(queues.len());
        for q in &queues {
            let profile = config
                .phi
                .get(q)
                .ok_or_else(|| Error::Config(format!("missing `phi` for queue `{q}`")))?;
            profile.validate(q)?;
            capacity.push(profile.clone());
            let disc = config.discipline.get(q).cloned().unwrap_or_default();
            disc.validate(q, m_check)?;
            discipline.push(disc);
        }

        let zeta = routes
            .iter()
            .map(|r| {
                let mut row = vec![0u32; queues.len()];
                for &j in &r.order {
                    row[j] += 1;
                }
                row
            })
            .collect();

        Ok(Network {
            queues,
            routes,
            arrival_rate,
            mean_size,
            capacity,
            discipline,
            zeta,
        })
    }

    pub fn from_json(text: &str) -> Result<Network> {
        let config: NetworkConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Network::build(&config)
    }

    pub fn to_config(&self) -> NetworkConfig {
        let route_map = |values: &[f64]| -> BTreeMap<String, f64> {
            self.routes
                .iter()
                .zip(values)
                .map(|(r, v)| (r.id.clone(), *v))
                .collect()
        };
        NetworkConfig {
            queues: self.queues.clone(),
            routes: self
                .routes
                .iter()
                .map(|r| {
                    (
                        r.id.clone(),
                        r.order.iter().map(|&j| self.queues[j].clone()).collect(),
                    )
                })
                .collect(),
            nu: route_map(&self.arrival_rate),
            mean_size: route_map(&self.mean_size),
            phi: self
                .queues
                .iter()
                .cloned()
                .zip(self.capacity.iter().cloned())
                .collect(),
            discipline: self
                .queues
                .iter()
                .cloned()
                .zip(self.discipline.iter().cloned())
                .collect(),
        }
    }

    pub fn num_queues(&self) -> usize {
        self.queues.len()
    }

    pub fn num_routes(&self) -> usize {
        self.routes.len()
    }

    pub fn queue_ids(&self) -> &[String] {
        &self.queues
    }

    pub fn routes(&self) -> &[Route] {
        &self.routes
    }

    pub fn route(&self, i: usize) -> &Route {
        &self.routes[i]
    }

    pub fn queue_index(&self, id: &str) -> Result<usize> {
        self.queues
            .binary_search_by(|q| q.as_str().cmp(id))
            .map_err(|_| Error::UnknownQueue {
                queue: id.to_string(),
                context: String::new(),
            })
    }

    pub fn route_index(&self, id: &str) -> Result<usize> {
        self.routes
            .iter()
            .position(|r| r.id == id)
            .ok_or_else(|| Error::UnknownRoute(id.to_string()))
    }

    pub fn arrival_rates(&self) -> &[f64] {
        &self.arrival_rate
    }

    pub fn mean_sizes(&self) -> &[f64] {
        &self.mean_size
    }

    /// `rho_i = nu_i * E[X_i]`.
    pub fn rho(&self, i: usize) -> f64 {
        self.arrival_rate[i] * self.mean_size[i]
    }

    pub fn capacity(&self, j: usize) -> &ServiceProfile {
        &self.capacity[j]
    }

    pub fn discipline(&self, j: usize) -> &Discipline {
        &self.discipline[j]
    }

    pub fn zeta_idx(&self, j: usize, i: usize) -> u32 {
        self.zeta[i][j]
    }

    /// Multiplicity of queue `j` in the order of route `i`.
    pub fn zeta(&self, queue: &str, route: &str) -> Result<u32> {
        let j = self.queue_index(queue)?;
        let i = self.route_index(route)?;
        Ok(self.zeta[i][j])
    }

    /// Distinct queues visited by route `i`, ascending.
    pub fn route_queues(&self, i: usize) -> Vec<usize> {
        (0..self.queues.len())
            .filter(|&j| self.zeta[i][j] > 0)
            .collect()
    }

    /// Offered packet load `sum_i zeta_ji rho_i` at queue `j`.
    pub fn queue_load(&self, j: usize) -> f64 {
        (0..self.routes.len())
            .map(|i| self.zeta[i][j] as f64 * self.rho(i))
            .sum()
    }

    /// Asymptotic ratio of consecutive terms of the `B_j` series.
    pub fn tail_ratio(&self, j: usize) -> f64 {
        let profile = &self.capacity[j];
        match profile.tail {
            TailRule::Constant => self.queue_load(j) / profile.rate(profile.cap()),
            TailRule::Proportional => 0.0,
        }
    }

    pub fn stability_check(&self, tol: f64) -> Stability {
        let mut verdict = Stability::Stable;
        for j in 0..self.queues.len() {
            let r = self.tail_ratio(j);
            if r >= 1.0 {
                return Stability::Unstable;
            }
            if r > 1.0 - tol {
                verdict = Stability::Undetermined;
            }
        }
        verdict
    }

    /// Returns the first queue whose tail ratio is not below one.
    pub fn require_stable(&self) -> Result<()> {
        for j in 0..self.queues.len() {
            let ratio = self.tail_ratio(j);
            if ratio >= 1.0 {
                return Err(Error::UnstableNetwork {
                    queue: self.queues[j].clone(),
                    ratio,
                });
            }
        }
        Ok(())
    }

    /// Same network with every `phi_j` multiplied by `factor`.
    pub fn with_capacity_scale(&self, factor: f64) -> Network {
        let mut net = self.clone();
        net.capacity = self.capacity.iter().map(|p| p.scaled(factor)).collect();
        net
    }

    /// Same network with new arrival rates; zero rates are allowed here.
    pub fn with_arrival_rates(&self, nu: &[f64]) -> Result<Network> {
        self.check_route_vector(nu, "nu", true)?;
        let mut net = self.clone();
        net.arrival_rate = nu.to_vec();
        Ok(net)
    }

    pub fn with_mean_sizes(&self, mean: &[f64]) -> Result<Network> {
        self.check_route_vector(mean, "mean_size", false)?;
        let mut net = self.clone();
        net.mean_size = mean.to_vec();
        Ok(net)
    }

    fn check_route_vector(
        &self,
        values: &[f64],
        what: &'static str,
        allow_zero: bool,
    ) -> Result<()> {
        if values.len() != self.routes.len() {
            return Err(Error::InvalidParameter(format!(
                "{what} has {} entries for {} routes",
                values.len(),
                self.routes.len()
            )));
        }
        for (r, &v) in self.routes.iter().zip(values) {
            let ok = v.is_finite() && (v > 0.0 || (allow_zero && v == 0.0));
            if !ok {
                return Err(Error::NonPositiveRate {
                    what,
                    at: r.id.clone(),
                    value: v,
                });
            }
        }
        Ok(())
    }
}

/// Two unit-rate processor-sharing queues `q1`, `q2` with routes
/// `r0 = (q1, q2)`, `r1 = (q1)` and `r2 = (q2)`.
pub fn two_queue_config(nu: [f64; 3], mean_size: [f64; 3]) -> NetworkConfig {
    let ids = ["r0", "r1", "r2"];
    NetworkConfig {
        queues: vec!["q1".into(), "q2".into()],
        routes: BTreeMap::from([
            ("r0".into(), vec!["q1".into(), "q2".into()]),
            ("r1".into(), vec!["q1".into()]),
            ("r2".into(), vec!["q2".into()]),
        ]),
        nu: ids.iter().map(|s| s.to_string()).zip(nu).collect(),
        mean_size: ids.iter().map(|s| s.to_string()).zip(mean_size).collect(),
        phi: BTreeMap::from([
            ("q1".into(), ServiceProfile::constant(1.0)),
            ("q2".into(), ServiceProfile::constant(1.0)),
        ]),
        discipline: BTreeMap::new(),
    }
}

pub fn two_queue_network(nu: [f64; 3], mean_size: [f64; 3]) -> Network {
    Network::build(&two_queue_config(nu, mean_size)).expect("canonical two-queue network is valid")
}

/// Network config with routes `r0, r1, ...` following `orders`; every queue
/// named in an order gets `phi = 1` and processor sharing.
pub fn simple_config(orders: &[&[&str]], nu: &[f64], mean_size: &[f64]) -> NetworkConfig {
    let mut queues: Vec<String> = orders
        .iter()
        .flat_map(|o| o.iter().map(|q| q.to_string()))
        .collect();
    queues.sort();
    queues.dedup();
    let ids: Vec<String> = (0..orders.len()).map(|i| format!("r{i}")).collect();
    NetworkConfig {
        phi: queues
            .iter()
            .map(|q| (q.clone(), ServiceProfile::constant(1.0)))
            .collect(),
        queues,
        routes: ids
            .iter()
            .cloned()
            .zip(
                orders
                    .iter()
                    .map(|o| o.iter().map(|q| q.to_string()).collect()),
            )
            .collect(),
        nu: ids.iter().cloned().zip(nu.iter().copied()).collect(),
        mean_size: ids.iter().cloned().zip(mean_size.iter().copied()).collect(),
        discipline: BTreeMap::new(),
    }
}
