//! Packet-level simulation of the network with spinning.
//!
//! Each document in transfer owns exactly one packet. A packet finishing its
//! last stage either wraps to the first queue with its residual decremented or,
//! at residual 1, leaves with its document. In closed mode packets wrap forever
//! and completed traversals are counted per packet.
//!
//! Service completions come from a single exponential race over queues with
//! total rate `sum_j c * phi_j(m_j)`; the position served and the insertion
//! position are drawn from the queue's kernels. External arrivals come from an
//! [`ArrivalFeed`] of absolute times, so the race is redrawn after each arrival,
//! which is exact by memorylessness.

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::distributions::DiscreteSizeLaw;
use crate::error::{Error, Result};
use crate::feed::ArrivalFeed;
use crate::flow_sim::{simultaneity, FlowState, DEFAULT_EVENT_BUDGET};
use crate::product_form::RouteCounts;
use crate::rng::{self, SimRng};
use crate::topology::Network;

const SERVICE_TAG: u64 = 0x5E7;
const LAYOUT_TAG: u64 = 0x1A7;

/// `(route, stage, residual)`; `stage` runs `1..=k_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PacketClass {
    pub route: usize,
    pub stage: usize,
    pub residual: u64,
}

/// Packets per queue, head first.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExplicitState {
    pub queues: Vec<Vec<PacketClass>>,
}

impl ExplicitState {
    pub fn empty(queues: usize) -> Self {
        ExplicitState {
            queues: vec![Vec::new(); queues],
        }
    }

    /// Places every document's packet at stage 1, appended in route order.
    pub fn at_first_stage(net: &Network, residuals: &[Vec<u64>]) -> Self {
        let mut st = Self::empty(net.num_queues());
        for (i, ys) in residuals.iter().enumerate() {
            let j = net.route(i).order[0];
            st.queues[j].extend(ys.iter().map(|&y| PacketClass {
                route: i,
                stage: 1,
                residual: y,
            }));
        }
        st
    }

    /// Places every document's packet at stage 1 with insertion positions drawn
    /// from the first queue's insertion kernel.
    pub fn sample_layout(net: &Network, residuals: &[Vec<u64>], seed: u64) -> Self {
        let mut rng = rng::stream(seed, rng::stream_id(&[LAYOUT_TAG]));
        let mut st = Self::empty(net.num_queues());
        for (i, ys) in residuals.iter().enumerate() {
            let j = net.route(i).order[0];
            for &y in ys {
                let m = st.queues[j].len() + 1;
                let pos = net
                    .discipline(j)
                    .pick_insert(m, rng::open01(&mut rng))
                    .unwrap_or(m - 1);
                st.queues[j].insert(
                    pos,
                    PacketClass {
                        route: i,
                        stage: 1,
                        residual: y,
                    },
                );
            }
        }
        st
    }

    pub fn counts(&self, routes: usize) -> RouteCounts {
        let mut n = vec![0u32; routes];
        self.queues.iter().flatten().for_each(|p| n[p.route] += 1);
        RouteCounts(n)
    }

    fn validate(&self, net: &Network, open: bool) -> Result<()> {
        let bad = |msg: String| Err(Error::InconsistentInitialState(msg));
        if self.queues.len() != net.num_queues() {
            return bad(format!(
                "{} queues given for {}",
                self.queues.len(),
                net.num_queues()
            ));
        }
        for (j, q) in self.queues.iter().enumerate() {
            for p in q {
                if p.route >= net.num_routes() {
                    return bad(format!("packet on unknown route {}", p.route));
                }
                let route = net.route(p.route);
                if p.stage == 0 || p.stage > route.len() {
                    return bad(format!("stage {} outside route `{}`", p.stage, route.id));
                }
                if route.order[p.stage - 1] != j {
                    return bad(format!(
                        "stage {} of route `{}` sits in the wrong queue",
                        p.stage, route.id
                    ));
                }
                if open && p.residual == 0 {
                    return bad(format!("zero residual on route `{}`", route.id));
                }
            }
            if q.len() > net.discipline(j).max_m() {
                return Err(Error::KernelOutOfRange {
                    queue: net.queue_ids()[j].clone(),
                    m: q.len(),
                });
            }
        }
        Ok(())
    }
}

/// Per-route sorted residuals of the documents in transfer.
pub fn flow_projection(state: &ExplicitState, routes: usize) -> FlowState {
    let mut ys = vec![Vec::new(); routes];
    for p in state.queues.iter().flatten() {
        ys[p.route].push(p.residual as f64);
    }
    FlowState::from_routes(ys).expect("packet residuals are positive")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PacketEventKind {
    ExternalArrival {
        route: usize,
        size: u64,
    },
    /// `from` and `to` are queue indices.
    StageAdvance {
        route: usize,
        from: usize,
        to: usize,
    },
    /// `residual_after` is `None` in closed mode.
    Wrap {
        route: usize,
        residual_after: Option<u64>,
    },
    DocumentDeparture {
        route: usize,
    },
}

impl PacketEventKind {
    pub fn route(&self) -> usize {
        match *self {
            PacketEventKind::ExternalArrival { route, .. }
            | PacketEventKind::StageAdvance { route, .. }
            | PacketEventKind::Wrap { route, .. }
            | PacketEventKind::DocumentDeparture { route } => route,
        }
    }

    /// True for events that change the route counts.
    pub fn is_document_event(&self) -> bool {
        matches!(
            self,
            PacketEventKind::ExternalArrival { .. } | PacketEventKind::DocumentDeparture { .. }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacketEvent {
    pub time: f64,
    #[serde(flatten)]
    pub kind: PacketEventKind,
}

/// Completed traversals per closed-network packet `(i, k)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TraversalCounters {
    pub counts: Vec<Vec<u64>>,
    /// Completion times per packet, when recording was enabled.
    pub times: Option<Vec<Vec<Vec<f64>>>>,
}

impl TraversalCounters {
    /// `A_ik(t)`: traversals completed by time `t`.
    pub fn at(&self, i: usize, k: usize, t: f64) -> Option<u64> {
        let times = &self.times.as_ref()?[i][k];
        Some(times.partition_point(|&s| s <= t) as u64)
    }

    pub fn route_total(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }
}

/// Output of [`PacketSim::run`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PacketRun {
    pub events: Vec<PacketEvent>,
    /// Route counts after each document event, starting with the initial state.
    pub counts: Vec<(f64, RouteCounts)>,
    pub grid: Vec<(f64, RouteCounts, FlowState)>,
    pub end_time: f64,
}

#[derive(Debug, Clone, Copy)]
struct Packet {
    class: PacketClass,
    doc: u32,
}

enum Mode {
    Open {
        sizes: Vec<DiscreteSizeLaw>,
        feed: ArrivalFeed,
    },
    Closed {
        traversals: TraversalCounters,
    },
}

/// Packet-level simulator handle.
pub struct PacketSim {
    net: Arc<Network>,
    scale: f64,
    mode: Mode,
    rng: SimRng,
    queues: Vec<Vec<Packet>>,
    counts: Vec<u32>,
    time: f64,
    events: u64,
    budget: u64,
    pending_service: Option<f64>,
}

impl std::fmt::Debug for PacketSim {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PacketSim")
            .field("scale", &self.scale)
            .field("time", &self.time)
            .finish()
    }
}

impl PacketSim {
    /// Open network with capacities `c * phi`, Poisson arrivals at the
    /// network's rates, and all randomness drawn from `seed`.
    pub fn new_open(
        net: Arc<Network>,
        c: u32,
        sizes: Vec<DiscreteSizeLaw>,
        seed: u64,
        initial: ExplicitState,
    ) -> Result<Self> {
        let feed = ArrivalFeed::poisson(net.arrival_rates(), seed);
        Self::open_with_feed(net, c, sizes, feed, seed, initial)
    }

    /// Open network driven by an external arrival feed; `service_seed` only
    /// feeds the service race and position draws.
    pub fn open_with_feed(
        net: Arc<Network>,
        c: u32,
        sizes: Vec<DiscreteSizeLaw>,
        feed: ArrivalFeed,
        service_seed: u64,
        initial: ExplicitState,
    ) -> Result<Self> {
        if c == 0 {
            return Err(Error::InvalidParameter(
                "capacity scale must be positive".into(),
            ));
        }
        if sizes.len() != net.num_routes() || feed.num_routes() != net.num_routes() {
            return Err(Error::InvalidParameter(
                "one size law and arrival stream per route".into(),
            ));
        }
        for s in &sizes {
            s.validate()?;
        }
        initial.validate(&net, true)?;
        let mut sim = Self::assemble(
            net,
            c as f64,
            Mode::Open { sizes, feed },
            service_seed,
            &initial,
        );
        sim.pending_service = None;
        Ok(sim)
    }

    /// Closed network with population `n`, packets starting at stage 1.
    pub fn new_closed(net: Arc<Network>, n: &RouteCounts, seed: u64) -> Result<Self> {
        Self::new_closed_scaled(net, n, 1, seed)
    }

    pub fn new_closed_scaled(
        net: Arc<Network>,
        n: &RouteCounts,
        c: u32,
        seed: u64,
    ) -> Result<Self> {
        if n.0.len() != net.num_routes() {
            return Err(Error::InconsistentInitialState(format!(
                "{} counts for {} routes",
                n.0.len(),
                net.num_routes()
            )));
        }
        let residuals: Vec<Vec<u64>> = n.0.iter().map(|&k| vec![1; k as usize]).collect();
        let initial = ExplicitState::at_first_stage(&net, &residuals);
        initial.validate(&net, false)?;
        let traversals = TraversalCounters {
            counts: n.0.iter().map(|&k| vec![0; k as usize]).collect(),
            times: None,
        };
        Ok(Self::assemble(
            net,
            c.max(1) as f64,
            Mode::Closed { traversals },
            seed,
            &initial,
        ))
    }

    fn assemble(
        net: Arc<Network>,
        scale: f64,
        mode: Mode,
        seed: u64,
        initial: &ExplicitState,
    ) -> Self {
        let mut next_doc = vec![0u32; net.num_routes()];
        let queues: Vec<Vec<Packet>> = initial
            .queues
            .iter()
            .map(|q| {
                q.iter()
                    .map(|&class| {
                        let doc = next_doc[class.route];
                        next_doc[class.route] += 1;
                        Packet { class, doc }
                    })
                    .collect()
            })
            .collect();
        PacketSim {
            rng: rng::stream(seed, rng::stream_id(&[SERVICE_TAG])),
            counts: next_doc,
            net,
            scale,
            mode,
            queues,
            time: 0.0,
            events: 0,
            budget: DEFAULT_EVENT_BUDGET,
            pending_service: None,
        }
    }

    pub fn with_budget(mut self, budget: u64) -> Self {
        self.budget = budget;
        self
    }

    /// Keeps every traversal completion time (closed mode only).
    pub fn record_traversal_times(mut self) -> Self {
        if let Mode::Closed { traversals } = &mut self.mode {
            traversals.times = Some(
                traversals
                    .counts
                    .iter()
                    .map(|r| vec![Vec::new(); r.len()])
                    .collect(),
            );
        }
        self
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn events(&self) -> u64 {
        self.events
    }

    pub fn counts(&self) -> RouteCounts {
        RouteCounts(self.counts.clone())
    }

    pub fn counts_slice(&self) -> &[u32] {
        &self.counts
    }

    pub fn queue_lengths(&self) -> Vec<usize> {
        self.queues.iter().map(Vec::len).collect()
    }

    pub fn state(&self) -> ExplicitState {
        ExplicitState {
            queues: self
                .queues
                .iter()
                .map(|q| q.iter().map(|p| p.class).collect())
                .collect(),
        }
    }

    pub fn flow_state(&self) -> FlowState {
        flow_projection(&self.state(), self.net.num_routes())
    }

    /// Packets per incidence `(j, i)`, closed-network layout `m`.
    pub fn queue_route_counts(&self) -> Vec<Vec<u32>> {
        let mut m = vec![vec![0u32; self.net.num_routes()]; self.net.num_queues()];
        for (j, q) in self.queues.iter().enumerate() {
            q.iter().for_each(|p| m[j][p.class.route] += 1);
        }
        m
    }

    pub fn traversal_counts(&self) -> Option<&TraversalCounters> {
        match &self.mode {
            Mode::Closed { traversals } => Some(traversals),
            Mode::Open { .. } => None,
        }
    }

    /// Total service completion rate in the current state.
    pub fn service_rate(&self) -> f64 {
        self.queues
            .iter()
            .enumerate()
            .filter(|(_, q)| !q.is_empty())
            .map(|(j, q)| self.scale * self.net.capacity(j).rate(q.len()))
            .sum()
    }

    /// Total event rate: service plus Poisson arrival intensity.
    pub fn total_rate(&self) -> f64 {
        let arrivals: f64 = match self.mode {
            Mode::Open { .. } => self.net.arrival_rates().iter().sum(),
            Mode::Closed { .. } => 0.0,
        };
        arrivals + self.service_rate()
    }

    fn next_arrival(&self) -> Option<(f64, usize)> {
        let Mode::Open { feed, .. } = &self.mode else {
            return None;
        };
        (0..self.net.num_routes())
            .map(|i| (feed.peek(i), i))
            .filter(|(t, _)| t.is_finite())
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }

    fn insert(&mut self, j: usize, packet: Packet) -> Result<()> {
        let m = self.queues[j].len() + 1;
        let u = rng::open01(&mut self.rng);
        let pos =
            self.net
                .discipline(j)
                .pick_insert(m, u)
                .ok_or_else(|| Error::KernelOutOfRange {
                    queue: self.net.queue_ids()[j].clone(),
                    m,
                })?;
        self.queues[j].insert(pos, packet);
        Ok(())
    }

    fn serve(&mut self, t: f64) -> Result<PacketEventKind> {
        let total = self.service_rate();
        let mut target = rng::open01(&mut self.rng) * total;
        let mut j = usize::MAX;
        for (q, packets) in self.queues.iter().enumerate() {
            if packets.is_empty() {
                continue;
            }
            j = q;
            let r = self.scale * self.net.capacity(q).rate(packets.len());
            if target < r {
                break;
            }
            target -= r;
        }
        let m = self.queues[j].len();
        let u = rng::open01(&mut self.rng);
        let pos =
            self.net
                .discipline(j)
                .pick_service(m, u)
                .ok_or_else(|| Error::KernelOutOfRange {
                    queue: self.net.queue_ids()[j].clone(),
                    m,
                })?;
        let mut p = self.queues[j].remove(pos);
        let route = self.net.route(p.class.route);
        let i = p.class.route;
        if p.class.stage < route.len() {
            let to = route.order[p.class.stage];
            p.class.stage += 1;
            self.insert(to, p)?;
            return Ok(PacketEventKind::StageAdvance {
                route: i,
                from: j,
                to,
            });
        }
        let first = route.order[0];
        p.class.stage = 1;
        match &mut self.mode {
            Mode::Open { .. } => {
                if p.class.residual <= 1 {
                    self.counts[i] -= 1;
                    return Ok(PacketEventKind::DocumentDeparture { route: i });
                }
                p.class.residual -= 1;
                let after = p.class.residual;
                self.insert(first, p)?;
                Ok(PacketEventKind::Wrap {
                    route: i,
                    residual_after: Some(after),
                })
            }
            Mode::Closed { traversals } => {
                traversals.counts[i][p.doc as usize] += 1;
                if let Some(times) = &mut traversals.times {
                    times[i][p.doc as usize].push(t);
                }
                self.insert(first, p)?;
                Ok(PacketEventKind::Wrap {
                    route: i,
                    residual_after: None,
                })
            }
        }
    }

    fn arrive(&mut self, i: usize) -> Result<PacketEventKind> {
        let Mode::Open { sizes, feed } = &mut self.mode else {
            unreachable!("arrivals only in open mode");
        };
        let a = feed.pop(i).expect("peeked arrival");
        let size = sizes[i].sample_with_uniforms(a.u, a.v);
        let doc = self.counts[i];
        self.counts[i] += 1;
        let packet = Packet {
            class: PacketClass {
                route: i,
                stage: 1,
                residual: size,
            },
            doc,
        };
        self.insert(self.net.route(i).order[0], packet)?;
        Ok(PacketEventKind::ExternalArrival { route: i, size })
    }

    /// Next event if it falls at or before `horizon`; otherwise the clock
    /// moves to `horizon` and `None` is returned.
    pub fn step(&mut self, horizon: f64) -> Result<Option<PacketEvent>> {
        let service_rate = self.service_rate();
        let service_at = match self.pending_service {
            Some(t) => t,
            None if service_rate > 0.0 => {
                let t = self.time + rng::exponential(&mut self.rng, service_rate);
                self.pending_service = Some(t);
                t
            }
            None => f64::INFINITY,
        };
        let arrival = self.next_arrival();
        let arrival_at = arrival.map_or(f64::INFINITY, |a| a.0);
        let t = service_at.min(arrival_at);
        if t > horizon || t == f64::INFINITY {
            if horizon.is_finite() {
                self.time = self.time.max(horizon);
            }
            return Ok(None);
        }
        if self.events >= self.budget {
            return Err(Error::EventBudgetExceeded(self.budget));
        }
        if t <= self.time && self.events > 0 || service_at == arrival_at {
            return Err(simultaneity(t, (service_at - arrival_at).abs()));
        }
        self.time = t;
        self.events += 1;
        // The service clock is memoryless; any event invalidates it.
        self.pending_service = None;
        let kind = if arrival_at < service_at {
            self.arrive(arrival.unwrap().1)?
        } else {
            self.serve(t)?
        };
        Ok(Some(PacketEvent { time: t, kind }))
    }

    /// Runs to `horizon`, recording document events and grid snapshots.
    pub fn run(&mut self, horizon: f64, grid: &[f64], keep_events: bool) -> Result<PacketRun> {
        let mut out = PacketRun {
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
            let ev = self.step(horizon)?;
            let upto = ev.map_or(horizon, |e| e.time);
            // The state before this event held on [previous time, upto).
            while let Some(gt) = g.next_if(|&gt| gt < upto || (ev.is_none() && gt <= upto)) {
                out.grid
                    .push((gt, self.counts_before(&ev), self.flow_before(&ev)));
            }
            let Some(ev) = ev else { break };
            if ev.kind.is_document_event() {
                out.counts.push((ev.time, self.counts()));
            }
            if keep_events {
                out.events.push(ev);
            }
        }
        out.end_time = self.time;
        Ok(out)
    }

    // Grid snapshots are taken after `step` has already applied the event, so
    // undo its effect on counts and residuals for the pre-event view.
    fn counts_before(&self, ev: &Option<PacketEvent>) -> RouteCounts {
        let mut n = self.counts.clone();
        match ev.map(|e| e.kind) {
            Some(PacketEventKind::ExternalArrival { route, .. }) => n[route] -= 1,
            Some(PacketEventKind::DocumentDeparture { route }) => n[route] += 1,
            _ => {}
        }
        RouteCounts(n)
    }

    fn flow_before(&self, ev: &Option<PacketEvent>) -> FlowState {
        let mut ys: Vec<Vec<f64>> = self.flow_state().routes().to_vec();
        match ev.map(|e| e.kind) {
            Some(PacketEventKind::ExternalArrival { route, size }) => {
                let at = ys[route]
                    .iter()
                    .position(|&y| y == size as f64)
                    .expect("arrived residual present");
                ys[route].remove(at);
            }
            Some(PacketEventKind::DocumentDeparture { route }) => ys[route].push(1.0),
            Some(PacketEventKind::Wrap {
                route,
                residual_after: Some(r),
            }) => {
                let at = ys[route]
                    .iter()
                    .position(|&y| y == r as f64)
                    .expect("wrapped residual present");
                ys[route][at] += 1.0;
            }
            _ => {}
        }
        FlowState::from_routes(ys).expect("positive residuals")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reachability {
    Irreducible,
    Reducible,
    Unknown,
}

type ClassState = Vec<Vec<(u32, u32)>>;

fn ln_multinomial(counts: &[u64]) -> f64 {
    let lf = |k: u64| (2..=k).map(|v| (v as f64).ln()).sum::<f64>();
    lf(counts.iter().sum()) - counts.iter().map(|&k| lf(k)).sum::<f64>()
}

/// Number of packet-level states of the closed network with population `n`.
pub fn packet_state_count(net: &Network, n: &RouteCounts) -> f64 {
    // Distribute each route's packets over its stages, then count the
    // orderings within every queue.
    fn rec(net: &Network, n: &[u32], i: usize, per_queue: &mut Vec<Vec<u64>>) -> f64 {
        if i == n.len() {
            return per_queue.iter().map(|c| ln_multinomial(c).exp()).product();
        }
        let stages = net.route(i).len();
        let mut total = 0.0;
        let mut comp = vec![0u32; stages];
        comp[0] = n[i];
        loop {
            for (k, &cnt) in comp.iter().enumerate() {
                per_queue[net.route(i).order[k]].push(cnt as u64);
            }
            total += rec(net, n, i + 1, per_queue);
            for k in 0..stages {
                per_queue[net.route(i).order[k]].pop();
            }
            if !next_comp(&mut comp) {
                return total;
            }
        }
    }
    fn next_comp(a: &mut [u32]) -> bool {
        let d = a.len();
        if d <= 1 {
            return false;
        }
        if a[0] > 0 {
            a[0] -= 1;
            a[1] += 1;
            return true;
        }
        let Some(p) = (1..d).find(|&p| a[p] > 0) else {
            return false;
        };
        if p + 1 == d {
            return false;
        }
        let t = a[p];
        a[p] = 0;
        a[p + 1] += 1;
        a[0] = t - 1;
        true
    }
    rec(net, &n.0, 0, &mut vec![Vec::new(); net.num_queues()])
}

fn successors(net: &Network, s: &ClassState) -> Vec<ClassState> {
    let mut out = Vec::new();
    for (j, q) in s.iter().enumerate() {
        let m = q.len();
        if m == 0 {
            continue;
        }
        let disc = net.discipline(j);
        for l in 0..m {
            if disc.service_share(l, m) <= 0.0 {
                continue;
            }
            let (i, k) = q[l];
            let route = net.route(i as usize);
            let next_k = if (k as usize) < route.len() { k + 1 } else { 1 };
            let to = route.order[next_k as usize - 1];
            let mut base = s.clone();
            base[j].remove(l);
            let m_to = base[to].len() + 1;
            let to_disc = net.discipline(to);
            for pos in 0..m_to {
                if m_to > to_disc.max_m() || to_disc.insert_share(pos, m_to) <= 0.0 {
                    continue;
                }
                let mut t = base.clone();
                t[to].insert(pos, (i, next_k));
                out.push(t);
            }
        }
    }
    out
}

/// Decides irreducibility of the closed packet-level chain by exploring from
/// the canonical layout (every packet at stage 1, route order).
pub fn reachability_check(net: &Network, n: &RouteCounts, state_cap: usize) -> Reachability {
    let residuals: Vec<Vec<u64>> = n.0.iter().map(|&k| vec![1; k as usize]).collect();
    let start: ClassState = ExplicitState::at_first_stage(net, &residuals)
        .queues
        .iter()
        .map(|q| q.iter().map(|p| (p.route as u32, p.stage as u32)).collect())
        .collect();
    let mut index: HashMap<ClassState, usize> = HashMap::new();
    let mut states = vec![start.clone()];
    let mut edges: Vec<Vec<usize>> = Vec::new();
    index.insert(start, 0);
    let mut frontier = VecDeque::from([0usize]);
    while let Some(a) = frontier.pop_front() {
        let succ = successors(net, &states[a]);
        let mut out = Vec::with_capacity(succ.len());
        for t in succ {
            let b = match index.get(&t) {
                Some(&b) => b,
                None => {
                    if states.len() >= state_cap {
                        return Reachability::Unknown;
                    }
                    let b = states.len();
                    index.insert(t.clone(), b);
                    states.push(t);
                    frontier.push_back(b);
                    b
                }
            };
            out.push(b);
        }
        if edges.len() <= a {
            edges.resize(a + 1, Vec::new());
        }
        edges[a] = out;
    }
    edges.resize(states.len(), Vec::new());
    if (states.len() as f64) < packet_state_count(net, n) - 0.5 {
        return Reachability::Reducible;
    }
    // Everything reachable; now every state must lead back to the start.
    let mut reverse = vec![Vec::new(); states.len()];
    for (a, outs) in edges.iter().enumerate() {
        for &b in outs {
            reverse[b].push(a);
        }
    }
    let mut seen = vec![false; states.len()];
    seen[0] = true;
    let mut stack = vec![0usize];
    while let Some(b) = stack.pop() {
        for &a in &reverse[b] {
            if !seen[a] {
                seen[a] = true;
                stack.push(a);
            }
        }
    }
    if seen.iter().all(|&v| v) {
        Reachability::Irreducible
    } else {
        Reachability::Reducible
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{simple_config, two_queue_network, Discipline};

    fn single_queue(routes: usize, nu: f64, discipline: Discipline) -> Arc<Network> {
        let orders: Vec<&[&str]> = vec![&["q1"]; routes];
        let mut cfg = simple_config(&orders, &vec![0.1; routes], &vec![1.0; routes]);
        cfg.discipline.insert("q1".into(), discipline);
        Arc::new(
            Network::build(&cfg)
                .unwrap()
                .with_arrival_rates(&vec![nu; routes])
                .unwrap(),
        )
    }

    #[test]
    fn empty_without_arrivals_is_silent() {
        let net = Arc::new(
            two_queue_network([0.1; 3], [1.0; 3])
                .with_arrival_rates(&[0.0; 3])
                .unwrap(),
        );
        let sizes = vec![DiscreteSizeLaw::Geometric { p: 0.5 }; 3];
        let mut sim = PacketSim::new_open(net, 1, sizes, 1, ExplicitState::empty(2)).unwrap();
        assert_eq!(sim.step(1e9).unwrap(), None);
    }

    #[test]
    fn single_packet_departs() {
        let net = single_queue(1, 0.0, Discipline::ProcessorSharing);
        let init = ExplicitState {
            queues: vec![vec![PacketClass {
                route: 0,
                stage: 1,
                residual: 1,
            }]],
        };
        let sizes = vec![DiscreteSizeLaw::Geometric { p: 1.0 }];
        let mut sim = PacketSim::new_open(net, 1, sizes, 4, init).unwrap();
        let ev = sim.step(f64::INFINITY).unwrap().unwrap();
        assert_eq!(ev.kind, PacketEventKind::DocumentDeparture { route: 0 });
        assert_eq!(sim.step(f64::INFINITY).unwrap(), None);
    }

    #[test]
    fn total_rate_counts_busy_queues() {
        let net = Arc::new(two_queue_network([0.2, 0.3, 0.1], [1.0; 3]));
        let init = ExplicitState {
            queues: vec![
                vec![PacketClass {
                    route: 1,
                    stage: 1,
                    residual: 2,
                }],
                vec![],
            ],
        };
        let sizes = vec![DiscreteSizeLaw::Geometric { p: 0.5 }; 3];
        let sim = PacketSim::new_open(net, 7, sizes, 1, init).unwrap();
        assert!((sim.total_rate() - (0.6 + 7.0)).abs() < 1e-12);
    }

    #[test]
    fn bad_initial_states() {
        let net = Arc::new(two_queue_network([0.2, 0.3, 0.1], [1.0; 3]));
        let sizes = vec![DiscreteSizeLaw::Geometric { p: 0.5 }; 3];
        let wrong_queue = ExplicitState {
            queues: vec![
                vec![],
                vec![PacketClass {
                    route: 1,
                    stage: 1,
                    residual: 1,
                }],
            ],
        };
        let bad_stage = ExplicitState {
            queues: vec![
                vec![PacketClass {
                    route: 0,
                    stage: 3,
                    residual: 1,
                }],
                vec![],
            ],
        };
        for st in [wrong_queue, bad_stage] {
            let err = PacketSim::new_open(net.clone(), 1, sizes.clone(), 1, st).unwrap_err();
            assert!(matches!(err, Error::InconsistentInitialState(_)));
        }
    }

    #[test]
    fn projection_examples() {
        assert!(flow_projection(&ExplicitState::empty(2), 1).is_empty());
        let st = ExplicitState {
            queues: vec![
                vec![PacketClass {
                    route: 0,
                    stage: 1,
                    residual: 5,
                }],
                vec![PacketClass {
                    route: 0,
                    stage: 2,
                    residual: 2,
                }],
            ],
        };
        assert_eq!(flow_projection(&st, 1).route(0), &[2.0, 5.0]);
    }

    #[test]
    fn wrap_decrements_residual() {
        let net = single_queue(1, 0.0, Discipline::ProcessorSharing);
        let init = ExplicitState {
            queues: vec![vec![PacketClass {
                route: 0,
                stage: 1,
                residual: 3,
            }]],
        };
        let sizes = vec![DiscreteSizeLaw::Geometric { p: 0.5 }];
        let mut sim = PacketSim::new_open(net, 1, sizes, 2, init).unwrap();
        let ev = sim.step(f64::INFINITY).unwrap().unwrap();
        assert_eq!(
            ev.kind,
            PacketEventKind::Wrap {
                route: 0,
                residual_after: Some(2)
            }
        );
        assert_eq!(sim.flow_state().route(0), &[2.0]);
    }

    #[test]
    fn runs_are_deterministic_and_conserve_documents() {
        let net = Arc::new(two_queue_network([0.2, 0.3, 0.1], [1.0; 3]));
        let sizes = vec![DiscreteSizeLaw::Geometric { p: 0.5 }; 3];
        let go = || {
            let mut sim =
                PacketSim::new_open(net.clone(), 3, sizes.clone(), 11, ExplicitState::empty(2))
                    .unwrap();
            let run = sim.run(200.0, &[50.0, 100.0, 200.0], true).unwrap();
            (run, sim.counts(), sim.state())
        };
        let (a, n, st) = go();
        assert_eq!(a, go().0);
        assert_eq!(st.counts(3), n);
        assert!(a.events.windows(2).all(|w| w[0].time < w[1].time));
        assert_eq!(a.grid.len(), 3);
        for (_, counts, flow) in &a.grid {
            assert_eq!(&flow.counts(), counts);
        }
    }

    #[test]
    fn closed_examples() {
        let net = single_queue(1, 0.0, Discipline::ProcessorSharing);
        let mut sim = PacketSim::new_closed(net, &RouteCounts(vec![0]), 1).unwrap();
        assert_eq!(sim.step(1e9).unwrap(), None);

        let cfg = simple_config(&[&["q1", "q2"]], &[0.1], &[1.0]);
        let net = Arc::new(Network::build(&cfg).unwrap());
        let mut sim = PacketSim::new_closed(net, &RouteCounts(vec![1]), 3)
            .unwrap()
            .record_traversal_times();
        sim.run(1e4, &[], false).unwrap();
        let trav = sim.traversal_counts().unwrap();
        let rate = trav.route_total(0) as f64 / 1e4;
        assert!((rate - 0.5).abs() < 0.03, "{rate}");
        assert_eq!(trav.at(0, 0, 1e4), Some(trav.counts[0][0]));
    }

    #[test]
    fn reachability_examples() {
        let ps = single_queue(2, 0.0, Discipline::ProcessorSharing);
        for n in [vec![1, 1], vec![2, 1], vec![3, 0]] {
            assert_eq!(
                reachability_check(&ps, &RouteCounts(n), 10_000),
                Reachability::Irreducible
            );
        }
        let lifo = single_queue(2, 0.0, Discipline::LifoPreemptive);
        assert_eq!(
            reachability_check(&lifo, &RouteCounts(vec![1, 1]), 10_000),
            Reachability::Reducible
        );
        let fifo = single_queue(2, 0.0, Discipline::Fifo);
        assert_eq!(
            reachability_check(&fifo, &RouteCounts(vec![1, 1]), 10_000),
            Reachability::Irreducible
        );
        let net = two_queue_network([0.2, 0.3, 0.1], [1.0; 3]);
        assert_eq!(
            reachability_check(&net, &RouteCounts(vec![2, 1, 1]), 1),
            Reachability::Unknown
        );
        assert_eq!(
            reachability_check(&net, &RouteCounts(vec![2, 1, 1]), 100_000),
            Reachability::Irreducible
        );
    }

    #[test]
    fn state_count_matches_hand_count() {
        // One PS queue, n = (2, 1): orderings of {a, a, b} = 3.
        let ps = single_queue(2, 0.0, Discipline::ProcessorSharing);
        assert!((packet_state_count(&ps, &RouteCounts(vec![2, 1])) - 3.0).abs() < 1e-9);
        // Tandem with one packet: two stages.
        let net = Network::build(&simple_config(&[&["q1", "q2"]], &[0.1], &[1.0])).unwrap();
        assert!((packet_state_count(&net, &RouteCounts(vec![1])) - 2.0).abs() < 1e-9);
    }
}
