//! The stochastic flow-level model.
//!
//! [`FlowSim`] drains every route-`i` residual linearly at `Lambda_i(n)/n_i`
//! and computes departure times in closed form per segment. [`CtmcSim`] is the
//! memoryless fast path for exponential sizes, tracking route counts only.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::distributions::SizeLaw;
use crate::error::{Error, Result};
use crate::feed::ArrivalFeed;
use crate::product_form::{ProductForm, RouteCounts};
use crate::rng::{self, SimRng};

pub const DEFAULT_EVENT_BUDGET: u64 = 100_000_000;
pub const TIE_TOLERANCE: f64 = 1e-12;

static SIMULTANEITY_DETECTIONS: AtomicU64 = AtomicU64::new(0);

/// Number of [`Error::SimultaneityDetected`] raised in this process.
pub fn simultaneity_detections() -> u64 {
    SIMULTANEITY_DETECTIONS.load(Ordering::Relaxed)
}

pub(crate) fn simultaneity(time: f64, gap: f64) -> Error {
    SIMULTANEITY_DETECTIONS.fetch_add(1, Ordering::Relaxed);
    Error::SimultaneityDetected { time, gap }
}

/// Per-route sorted residual sizes.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FlowState {
    routes: Vec<Vec<f64>>,
}

impl FlowState {
    pub fn empty(routes: usize) -> Self {
        FlowState {
            routes: vec![Vec::new(); routes],
        }
    }

    /// Sorts each route; residuals must be positive and finite.
    pub fn from_routes(mut routes: Vec<Vec<f64>>) -> Result<Self> {
        for r in &mut routes {
            if let Some(bad) = r.iter().find(|y| !(y.is_finite() && **y > 0.0)) {
                return Err(Error::InvalidParameter(format!(
                    "residual {bad} is not positive"
                )));
            }
            r.sort_by(f64::total_cmp);
        }
        Ok(FlowState { routes })
    }

    pub fn num_routes(&self) -> usize {
        self.routes.len()
    }

    pub fn route(&self, i: usize) -> &[f64] {
        &self.routes[i]
    }

    pub fn routes(&self) -> &[Vec<f64>] {
        &self.routes
    }

    pub fn counts(&self) -> RouteCounts {
        RouteCounts(self.routes.iter().map(|r| r.len() as u32).collect())
    }

    pub fn total(&self) -> usize {
        self.routes.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }

    pub fn insert(&mut self, i: usize, y: f64) {
        let r = &mut self.routes[i];
        let at = r.partition_point(|&v| v <= y);
        r.insert(at, y);
    }

    /// Every residual multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> FlowState {
        FlowState {
            routes: self
                .routes
                .iter()
                .map(|r| r.iter().map(|y| y * factor).collect())
                .collect(),
        }
    }
}

/// `inf` if route counts differ, else the largest gap between sorted residuals.
pub fn flow_distance(a: &FlowState, b: &FlowState) -> f64 {
    if a.num_routes() != b.num_routes() || a.counts() != b.counts() {
        return f64::INFINITY;
    }
    a.routes
        .iter()
        .zip(&b.routes)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

/// A bandwidth allocation: route counts to per-route total rates.
pub trait AllocationPolicy: Send + Sync {
    fn name(&self) -> String;
    fn num_routes(&self) -> usize;
    fn allocation(&self, n: &[u32]) -> Result<Vec<f64>>;
}

impl AllocationPolicy for ProductForm {
    fn name(&self) -> String {
        "spinning".into()
    }

    fn num_routes(&self) -> usize {
        self.network().num_routes()
    }

    fn allocation(&self, n: &[u32]) -> Result<Vec<f64>> {
        self.allocation_slice(n)
    }
}

/// Processor sharing on one link: `Lambda_i = capacity * n_i / |n|`.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleLinkPs {
    pub routes: usize,
    pub capacity: f64,
}

impl AllocationPolicy for SingleLinkPs {
    fn name(&self) -> String {
        "single_link_ps".into()
    }

    fn num_routes(&self) -> usize {
        self.routes
    }

    fn allocation(&self, n: &[u32]) -> Result<Vec<f64>> {
        let total: u32 = n.iter().sum();
        Ok(n.iter()
            .map(|&k| {
                if total == 0 {
                    0.0
                } else {
                    self.capacity * k as f64 / total as f64
                }
            })
            .collect())
    }
}

/// `Lambda_i = rates[i]` whenever `n_i > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantPolicy {
    pub rates: Vec<f64>,
}

impl AllocationPolicy for ConstantPolicy {
    fn name(&self) -> String {
        "constant".into()
    }

    fn num_routes(&self) -> usize {
        self.rates.len()
    }

    fn allocation(&self, n: &[u32]) -> Result<Vec<f64>> {
        Ok(n.iter()
            .zip(&self.rates)
            .map(|(&k, &r)| if k == 0 { 0.0 } else { r })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FlowEventKind {
    Arrival { route: usize, size: f64 },
    Departure { route: usize },
}

impl FlowEventKind {
    pub fn route(&self) -> usize {
        match *self {
            FlowEventKind::Arrival { route, .. } | FlowEventKind::Departure { route } => route,
        }
    }

    pub fn is_arrival(&self) -> bool {
        matches!(self, FlowEventKind::Arrival { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowEvent {
    pub time: f64,
    #[serde(flatten)]
    pub kind: FlowEventKind,
}

/// Output of [`FlowSim::run`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FlowRun {
    pub events: Vec<FlowEvent>,
    /// Route counts after each document event, starting with the initial state.
    pub counts: Vec<(f64, RouteCounts)>,
    pub grid: Vec<(f64, FlowState)>,
    pub end_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Candidate {
    Arrival(usize),
    Departure(usize),
}

/// Generalized flow-level simulator.
pub struct FlowSim {
    policy: Arc<dyn AllocationPolicy>,
    sizes: Vec<SizeLaw>,
    feed: ArrivalFeed,
    time: f64,
    /// Residual of a route-`i` document is `key - attained[i]`; keys sorted.
    keys: Vec<Vec<f64>>,
    attained: Vec<f64>,
    counts: Vec<u32>,
    rates: Vec<f64>,
    events: u64,
    budget: u64,
}

impl std::fmt::Debug for FlowSim {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FlowSim")
            .field("policy", &self.policy.name())
            .field("time", &self.time)
            .finish()
    }
}

impl FlowSim {
    /// Simulator with Poisson arrivals at rates `nu` drawn from `seed`.
    pub fn new(
        policy: Arc<dyn AllocationPolicy>,
        sizes: Vec<SizeLaw>,
        nu: &[f64],
        seed: u64,
        initial: FlowState,
    ) -> Result<Self> {
        Self::with_feed(policy, sizes, ArrivalFeed::poisson(nu, seed), initial)
    }

    pub fn with_feed(
        policy: Arc<dyn AllocationPolicy>,
        sizes: Vec<SizeLaw>,
        feed: ArrivalFeed,
        initial: FlowState,
    ) -> Result<Self> {
        let routes = policy.num_routes();
        if sizes.len() != routes || feed.num_routes() != routes || initial.num_routes() != routes {
            return Err(Error::InvalidParameter(format!(
                "flow simulator needs {routes} routes throughout"
            )));
        }
        for (route, law) in sizes.iter().enumerate() {
            law.validate()?;
            if law.is_atomic() {
                return Err(Error::AtomicSizeLaw {
                    route,
                    law: law.name().into(),
                });
            }
        }
        let counts: Vec<u32> = initial.routes.iter().map(|r| r.len() as u32).collect();
        let mut sim = FlowSim {
            policy,
            sizes,
            feed,
            time: 0.0,
            keys: initial.routes,
            attained: vec![0.0; routes],
            counts,
            rates: Vec::new(),
            events: 0,
            budget: DEFAULT_EVENT_BUDGET,
        };
        sim.refresh_rates()?;
        Ok(sim)
    }

    pub fn with_budget(mut self, budget: u64) -> Self {
        self.budget = budget;
        self
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn counts(&self) -> RouteCounts {
        RouteCounts(self.counts.clone())
    }

    pub fn events(&self) -> u64 {
        self.events
    }

    pub fn state(&self) -> FlowState {
        FlowState {
            routes: self
                .keys
                .iter()
                .zip(&self.attained)
                .map(|(k, a)| k.iter().map(|key| key - a).collect())
                .collect(),
        }
    }

    fn refresh_rates(&mut self) -> Result<()> {
        self.rates = self.policy.allocation(&self.counts)?;
        for (route, (&n, &r)) in self.counts.iter().zip(&self.rates).enumerate() {
            if n > 0 && !(r > 0.0) {
                return Err(Error::StarvedRoute { route, count: n });
            }
        }
        Ok(())
    }

    fn drain_speed(&self, i: usize) -> f64 {
        self.rates[i] / self.counts[i] as f64
    }

    /// Earliest candidate, rejecting near-ties among the two smallest.
    fn next_candidate(&self) -> Result<Option<(f64, Candidate)>> {
        let mut best: Option<(f64, Candidate)> = None;
        let mut second = f64::INFINITY;
        let mut offer = |t: f64, c: Candidate| {
            if !t.is_finite() {
                return;
            }
            match best {
                Some((b, _)) if t >= b => second = second.min(t),
                _ => {
                    if let Some((b, _)) = best {
                        second = second.min(b);
                    }
                    best = Some((t, c));
                }
            }
        };
        for i in 0..self.keys.len() {
            offer(self.feed.peek(i), Candidate::Arrival(i));
            if self.counts[i] > 0 {
                let speed = self.drain_speed(i);
                let keys = &self.keys[i];
                offer(
                    self.time + (keys[0] - self.attained[i]).max(0.0) / speed,
                    Candidate::Departure(i),
                );
                if keys.len() > 1 {
                    offer(
                        self.time + (keys[1] - self.attained[i]).max(0.0) / speed,
                        Candidate::Departure(i),
                    );
                }
            }
        }
        if let Some((t, _)) = best {
            if second - t < TIE_TOLERANCE {
                return Err(simultaneity(t, second - t));
            }
        }
        Ok(best)
    }

    /// Time of the next event, `inf` if none is pending.
    pub fn peek_time(&self) -> Result<f64> {
        Ok(self.next_candidate()?.map_or(f64::INFINITY, |(t, _)| t))
    }

    /// Drains residuals up to `t`, which must not pass the next event.
    fn drain_to(&mut self, t: f64) {
        let dt = t - self.time;
        for i in 0..self.keys.len() {
            if self.counts[i] > 0 {
                self.attained[i] += dt * self.drain_speed(i);
            }
        }
        self.time = t;
    }

    /// Processes the next event if it falls at or before `horizon`;
    /// otherwise drains to `horizon` and returns `None`.
    pub fn step(&mut self, horizon: f64) -> Result<Option<FlowEvent>> {
        let next = self.next_candidate()?;
        let Some((t, cand)) = next.filter(|(t, _)| *t <= horizon) else {
            if horizon.is_finite() && horizon > self.time {
                self.drain_to(horizon);
            }
            return Ok(None);
        };
        if self.events >= self.budget {
            return Err(Error::EventBudgetExceeded(self.budget));
        }
        if t < self.time {
            return Err(simultaneity(t, self.time - t));
        }
        self.drain_to(t);
        self.events += 1;
        let kind = match cand {
            Candidate::Arrival(i) => {
                let a = self.feed.pop(i).expect("peeked arrival");
                let size = self.sizes[i].sample_with_uniform(a.u);
                let key = size + self.attained[i];
                let keys = &mut self.keys[i];
                let at = keys.partition_point(|&v| v <= key);
                keys.insert(at, key);
                self.counts[i] += 1;
                FlowEventKind::Arrival { route: i, size }
            }
            Candidate::Departure(i) => {
                self.keys[i].remove(0);
                self.counts[i] -= 1;
                if self.counts[i] == 0 {
                    self.attained[i] = 0.0;
                } else if self.attained[i] > 1e3 {
                    let a = self.attained[i];
                    self.keys[i].iter_mut().for_each(|k| *k -= a);
                    self.attained[i] = 0.0;
                }
                FlowEventKind::Departure { route: i }
            }
        };
        self.refresh_rates()?;
        Ok(Some(FlowEvent { time: t, kind }))
    }

    /// Runs to `horizon`, snapshotting the flow state at each (sorted) grid time.
    pub fn run(&mut self, horizon: f64, grid: &[f64]) -> Result<FlowRun> {
        let mut out = FlowRun {
            counts: vec![(self.time, self.counts())],
            ..Default::default()
        };
        let start = self.time;
        let mut g = grid
            .iter()
            .copied()
            .filter(|&t| t >= start && t <= horizon)
            .peekable();
        loop {
            let next = self.peek_time()?;
            while let Some(gt) = g.next_if(|&gt| gt < next) {
                self.drain_to(gt);
                out.grid.push((gt, self.state()));
            }
            match self.step(horizon)? {
                Some(ev) => {
                    out.events.push(ev);
                    out.counts.push((ev.time, self.counts()));
                }
                None => break,
            }
        }
        out.end_time = self.time;
        Ok(out)
    }
}

/// A change of route counts in [`CtmcSim`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountChange {
    pub time: f64,
    pub route: usize,
    pub arrival: bool,
}

/// Birth-death chain on route counts: up at `nu_i`, down at `mu_i * Lambda_i(n)`.
pub struct CtmcSim {
    policy: Arc<dyn AllocationPolicy>,
    nu: Vec<f64>,
    mu: Vec<f64>,
    rng: SimRng,
    time: f64,
    counts: Vec<u32>,
    events: u64,
    budget: u64,
}

impl std::fmt::Debug for CtmcSim {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CtmcSim")
            .field("policy", &self.policy.name())
            .field("time", &self.time)
            .finish()
    }
}

impl CtmcSim {
    pub fn new(
        policy: Arc<dyn AllocationPolicy>,
        nu: &[f64],
        mu: &[f64],
        seed: u64,
        initial: RouteCounts,
    ) -> Result<Self> {
        let routes = policy.num_routes();
        if nu.len() != routes || mu.len() != routes || initial.0.len() != routes {
            return Err(Error::InvalidParameter(format!(
                "CTMC needs {routes} routes throughout"
            )));
        }
        Ok(CtmcSim {
            policy,
            nu: nu.to_vec(),
            mu: mu.to_vec(),
            rng: rng::stream(seed, rng::stream_id(&[0xC7AC])),
            time: 0.0,
            counts: initial.0,
            events: 0,
            budget: DEFAULT_EVENT_BUDGET,
        })
    }

    pub fn with_budget(mut self, budget: u64) -> Self {
        self.budget = budget;
        self
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn counts(&self) -> RouteCounts {
        RouteCounts(self.counts.clone())
    }

    pub fn step(&mut self, horizon: f64) -> Result<Option<CountChange>> {
        let lam = self.policy.allocation(&self.counts)?;
        let routes = self.counts.len();
        let rates: Vec<f64> = (0..routes)
            .map(|i| self.nu[i])
            .chain((0..routes).map(|i| self.mu[i] * lam[i]))
            .collect();
        let total: f64 = rates.iter().sum();
        if total <= 0.0 {
            self.time = self.time.max(horizon);
            return Ok(None);
        }
        let t = self.time + rng::exponential(&mut self.rng, total);
        if t > horizon {
            self.time = horizon;
            return Ok(None);
        }
        if self.events >= self.budget {
            return Err(Error::EventBudgetExceeded(self.budget));
        }
        let mut target = rng::open01(&mut self.rng) * total;
        let mut pick = rates.len() - 1;
        for (k, r) in rates.iter().enumerate() {
            if target < *r {
                pick = k;
                break;
            }
            target -= r;
        }
        // Guard against rounding landing on a zero-rate slot.
        while rates[pick] <= 0.0 {
            pick -= 1;
        }
        self.time = t;
        self.events += 1;
        let (route, arrival) = if pick < routes {
            (pick, true)
        } else {
            (pick - routes, false)
        };
        if arrival {
            self.counts[route] += 1;
        } else {
            self.counts[route] -= 1;
        }
        Ok(Some(CountChange {
            time: t,
            route,
            arrival,
        }))
    }

    /// Count trajectory on `[0, horizon]`, starting with the initial state.
    pub fn run(&mut self, horizon: f64) -> Result<Vec<(f64, RouteCounts)>> {
        let mut out = vec![(self.time, self.counts())];
        while let Some(ev) = self.step(horizon)? {
            out.push((ev.time, self.counts()));
        }
        Ok(out)
    }
}

/// Count trajectory of the exponential-size model.
pub fn run_ctmc(
    policy: Arc<dyn AllocationPolicy>,
    nu: &[f64],
    mu: &[f64],
    seed: u64,
    horizon: f64,
    initial: RouteCounts,
) -> Result<Vec<(f64, RouteCounts)>> {
    CtmcSim::new(policy, nu, mu, seed, initial)?.run(horizon)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_route(rate: f64) -> Arc<dyn AllocationPolicy> {
        Arc::new(ConstantPolicy { rates: vec![rate] })
    }

    fn exp1() -> Vec<SizeLaw> {
        vec![SizeLaw::Exponential { rate: 1.0 }]
    }

    #[test]
    fn linear_drain_examples() {
        let init = FlowState::from_routes(vec![vec![2.0]]).unwrap();
        let mut sim = FlowSim::new(one_route(1.0), exp1(), &[0.0], 1, init).unwrap();
        let run = sim.run(10.0, &[]).unwrap();
        assert_eq!(run.events.len(), 1);
        assert!((run.events[0].time - 2.0).abs() < 1e-12);

        let init = FlowState::from_routes(vec![vec![3.0, 1.0]]).unwrap();
        let mut sim = FlowSim::new(one_route(1.0), exp1(), &[0.0], 1, init).unwrap();
        let run = sim.run(10.0, &[1.0, 3.0]).unwrap();
        let times: Vec<f64> = run.events.iter().map(|e| e.time).collect();
        assert!((times[0] - 2.0).abs() < 1e-12 && (times[1] - 4.0).abs() < 1e-12);
        assert!(run.events.iter().all(|e| !e.kind.is_arrival()));
        assert_eq!(run.grid[0].1.route(0), &[0.5, 2.5]);
        assert!((run.grid[1].1.route(0)[0] - 1.0).abs() < 1e-12);
        assert_eq!(run.end_time, 10.0);
    }

    #[test]
    fn first_event_from_empty_is_an_arrival() {
        let mut sim = FlowSim::new(one_route(1.0), exp1(), &[1.0], 3, FlowState::empty(1)).unwrap();
        let ev = sim.step(f64::INFINITY).unwrap().unwrap();
        assert!(ev.kind.is_arrival() && ev.time > 0.0);
    }

    #[test]
    fn rejections() {
        let det = vec![SizeLaw::Deterministic { value: 1.0 }];
        assert!(matches!(
            FlowSim::new(one_route(1.0), det, &[1.0], 1, FlowState::empty(1)),
            Err(Error::AtomicSizeLaw { route: 0, .. })
        ));
        let init = FlowState::from_routes(vec![vec![1.0]]).unwrap();
        assert!(matches!(
            FlowSim::new(one_route(0.0), exp1(), &[1.0], 1, init),
            Err(Error::StarvedRoute { .. })
        ));
        assert!(FlowState::from_routes(vec![vec![0.0]]).is_err());
    }

    #[test]
    fn equal_residuals_are_a_tie() {
        let init = FlowState::from_routes(vec![vec![1.0, 1.0]]).unwrap();
        let mut sim = FlowSim::new(one_route(1.0), exp1(), &[0.0], 1, init).unwrap();
        let before = simultaneity_detections();
        assert!(matches!(
            sim.step(10.0),
            Err(Error::SimultaneityDetected { .. })
        ));
        assert!(simultaneity_detections() > before);
    }

    #[test]
    fn runs_are_deterministic() {
        let go = || {
            FlowSim::new(one_route(1.0), exp1(), &[0.5], 42, FlowState::empty(1))
                .unwrap()
                .run(200.0, &[])
                .unwrap()
        };
        assert_eq!(go(), go());
    }

    #[test]
    fn distance_examples() {
        let a = FlowState::from_routes(vec![vec![1.0, 3.0]]).unwrap();
        let b = FlowState::from_routes(vec![vec![2.0, 3.0]]).unwrap();
        let c = FlowState::from_routes(vec![vec![2.0]]).unwrap();
        assert_eq!(flow_distance(&a, &a), 0.0);
        assert_eq!(flow_distance(&a, &b), 1.0);
        assert_eq!(flow_distance(&b, &a), 1.0);
        assert_eq!(flow_distance(&a, &c), f64::INFINITY);
    }

    #[test]
    fn ctmc_examples() {
        let stuck = run_ctmc(
            one_route(0.0),
            &[1.0],
            &[1.0],
            5,
            20.0,
            RouteCounts(vec![2]),
        )
        .unwrap();
        assert!(stuck.windows(2).all(|w| w[1].1 .0[0] == w[0].1 .0[0] + 1));

        let quiet = run_ctmc(one_route(1.0), &[0.0], &[1.0], 5, 1e9, RouteCounts(vec![3])).unwrap();
        assert_eq!(quiet.len(), 4);
        assert_eq!(quiet.last().unwrap().1, RouteCounts(vec![0]));
    }

    #[test]
    fn ps_policy_shares_capacity() {
        let ps = SingleLinkPs {
            routes: 2,
            capacity: 2.0,
        };
        assert_eq!(ps.allocation(&[1, 3]).unwrap(), vec![0.5, 1.5]);
        assert_eq!(ps.allocation(&[0, 0]).unwrap(), vec![0.0, 0.0]);
    }
}
