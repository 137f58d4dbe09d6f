//! Coupled and stationary experiments over the simulators.
//!
//! The convergence harness shares arrival times, size uniforms and the initial
//! flow state between the limit model and every packet-level scale `c`. Packet
//! service randomness stays independent per `c`, so only marginal laws and
//! event alignment are compared, never a pathwise construction.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::distributions::{round_scaled, DiscreteSizeLaw, SizeLaw};
use crate::error::{Error, Result};
use crate::feed::{poisson_schedule, Arrival, ArrivalFeed};
use crate::flow_sim::{flow_distance, AllocationPolicy, CtmcSim, FlowSim, FlowState};
use crate::packet_sim::{reachability_check, ExplicitState, PacketSim, Reachability};
use crate::product_form::{OpenPmf, ProductForm, RouteCounts};
use crate::rng;
use crate::stats::{
    ci_from_batches, tv_distance, tv_truncated, ConfidenceInterval, EmpiricalPmf,
    OccupancyAccumulator, Pmf,
};
use crate::topology::Network;

pub const DEFAULT_BURN_IN_FRACTION: f64 = 0.2;
pub const DEFAULT_BATCHES: usize = 30;
pub const DEFAULT_BOX_QUANTILE: f64 = 0.999;
const CI_LEVEL: f64 = 0.95;
const COUPLING_TAG: u64 = 0xC0;
const SERVICE_TAG: u64 = 0x5C;

/// Run length, in model time or in simulated events.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Horizon {
    Time(f64),
    Events(u64),
}

impl Horizon {
    fn time_limit(self) -> f64 {
        match self {
            Horizon::Time(t) => t,
            Horizon::Events(_) => f64::INFINITY,
        }
    }

    fn burn_in_events(self, fraction: f64) -> Option<u64> {
        match self {
            Horizon::Events(e) => Some((e as f64 * fraction) as u64),
            Horizon::Time(_) => None,
        }
    }

    fn reached(self, events: u64) -> bool {
        matches!(self, Horizon::Events(e) if events >= e)
    }
}

/// Runs `f` on every seed, concurrently when the `parallel` feature is on;
/// results come back in seed order whatever the completion order.
pub fn fan_out<T, F>(seeds: &[u64], jobs: Option<usize>, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let work = || seeds.par_iter().map(|&s| f(s)).collect::<Result<Vec<T>>>();
        match jobs {
            Some(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?
                .install(work),
            None => work(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = jobs;
        seeds.iter().map(|&s| f(s)).collect()
    }
}

fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

/// Shared randomness of one coupled replication.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingStream {
    pub seed: u64,
    /// Per-route arrivals on `[0, horizon]`.
    pub arrivals: Arc<Vec<Vec<Arrival>>>,
    /// Limit-model initial residuals.
    pub initial: FlowState,
    /// Rounding uniforms for the initial residuals, one per document.
    pub initial_v: Vec<Vec<f64>>,
}

impl CouplingStream {
    pub fn generate(net: &Network, horizon: f64, seed: u64, initial: FlowState) -> Self {
        let arrivals = poisson_schedule(
            net.arrival_rates(),
            horizon,
            rng::stream_id(&[COUPLING_TAG, seed]),
        );
        let mut g = rng::stream(seed, rng::stream_id(&[COUPLING_TAG, 1]));
        let initial_v = initial
            .routes()
            .iter()
            .map(|r| r.iter().map(|_| rng::open01(&mut g)).collect())
            .collect();
        CouplingStream {
            seed,
            arrivals: Arc::new(arrivals),
            initial,
            initial_v,
        }
    }

    pub fn feed(&self) -> ArrivalFeed {
        ArrivalFeed::scheduled(self.arrivals.clone())
    }

    /// Packet counts of the initial documents at scale `c`.
    pub fn initial_scaled(&self, c: u32) -> Vec<Vec<u64>> {
        self.initial
            .routes()
            .iter()
            .zip(&self.initial_v)
            .map(|(r, vs)| {
                r.iter()
                    .zip(vs)
                    .map(|(&y, &v)| round_scaled(c as f64 * y, v))
                    .collect()
            })
            .collect()
    }
}

/// A document event with the flow state right after it.
#[derive(Debug, Clone, PartialEq)]
pub struct DocEvent {
    pub time: f64,
    pub arrival: bool,
    pub route: usize,
    pub flow: FlowState,
}

/// Alignment of one prelimit run against the limit run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledRun {
    pub seed: u64,
    pub full_match: bool,
    pub matched_events: usize,
    pub limit_events: usize,
    pub other_events: usize,
    /// Largest `|tau - tau_limit|` over the matched prefix.
    pub max_time_gap: f64,
    /// Largest flow distance right after matched events.
    pub max_flow_distance: f64,
    pub final_counts: Vec<u32>,
}

/// Compares two document-event sequences token by token on `(kind, route)`.
pub fn align_events(
    seed: u64,
    limit: &[DocEvent],
    other: &[DocEvent],
    final_counts: Vec<u32>,
) -> CoupledRun {
    let matched = limit
        .iter()
        .zip(other)
        .take_while(|(a, b)| a.arrival == b.arrival && a.route == b.route)
        .count();
    let mut max_time_gap: f64 = 0.0;
    let mut max_flow_distance: f64 = 0.0;
    for (a, b) in limit.iter().zip(other).take(matched) {
        max_time_gap = max_time_gap.max((a.time - b.time).abs());
        max_flow_distance = max_flow_distance.max(flow_distance(&a.flow, &b.flow));
    }
    CoupledRun {
        seed,
        full_match: matched == limit.len() && matched == other.len(),
        matched_events: matched,
        limit_events: limit.len(),
        other_events: other.len(),
        max_time_gap,
        max_flow_distance,
        final_counts,
    }
}

/// Limit-model document events up to `horizon`; also returns `N(horizon)`.
pub fn limit_events(
    policy: Arc<dyn AllocationPolicy>,
    sizes: &[SizeLaw],
    stream: &CouplingStream,
    horizon: f64,
) -> Result<(Vec<DocEvent>, Vec<u32>)> {
    let mut sim = FlowSim::with_feed(
        policy,
        sizes.to_vec(),
        stream.feed(),
        stream.initial.clone(),
    )?;
    let mut out = Vec::new();
    while let Some(ev) = sim.step(horizon)? {
        out.push(DocEvent {
            time: ev.time,
            arrival: ev.kind.is_arrival(),
            route: ev.kind.route(),
            flow: sim.state(),
        });
    }
    Ok((out, sim.counts().0))
}

/// Packet-level document events at scale `c`, residuals divided by `c`.
pub fn packet_events(
    net: &Arc<Network>,
    sizes: &[SizeLaw],
    c: u32,
    stream: &CouplingStream,
    horizon: f64,
) -> Result<(Vec<DocEvent>, Vec<u32>)> {
    let discrete: Vec<DiscreteSizeLaw> = sizes.iter().map(|s| s.discretize(c)).collect();
    let service_seed = rng::stream_id(&[SERVICE_TAG, stream.seed, c as u64]);
    let layout = ExplicitState::sample_layout(net, &stream.initial_scaled(c), service_seed);
    let mut sim = PacketSim::open_with_feed(
        net.clone(),
        c,
        discrete,
        stream.feed(),
        service_seed,
        layout,
    )?;
    let mut out = Vec::new();
    let inv_c = 1.0 / c as f64;
    while let Some(ev) = sim.step(horizon)? {
        if ev.kind.is_document_event() {
            out.push(DocEvent {
                time: ev.time,
                arrival: matches!(
                    ev.kind,
                    crate::packet_sim::PacketEventKind::ExternalArrival { .. }
                ),
                route: ev.kind.route(),
                flow: sim.flow_state().scaled(inv_c),
            });
        }
    }
    Ok((out, sim.counts().0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleSummary {
    pub c: u32,
    pub match_fraction: f64,
    pub median_max_time_gap: f64,
    pub median_max_flow_distance: f64,
    /// TV between the across-seed laws of `N^(c)(T)` and `N^(inf)(T)`.
    pub tv_final_counts: f64,
    pub runs: Vec<CoupledRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub horizon: f64,
    pub seeds: Vec<u64>,
    pub scales: Vec<ScaleSummary>,
    pub limit_final_counts: Vec<Vec<u32>>,
}

impl ConvergenceReport {
    pub fn scale(&self, c: u32) -> Option<&ScaleSummary> {
        self.scales.iter().find(|s| s.c == c)
    }
}

fn counts_pmf(samples: &[Vec<u32>]) -> Pmf {
    let mut p = Pmf::new();
    let w = 1.0 / samples.len().max(1) as f64;
    for s in samples {
        *p.entry(s.clone()).or_insert(0.0) += w;
    }
    p
}

/// Coupled prelimit-versus-limit study over `c_list` and `seeds`.
pub fn convergence_experiment(
    net: &Network,
    sizes: &[SizeLaw],
    c_list: &[u32],
    horizon: f64,
    seeds: &[u64],
    initial: &FlowState,
    jobs: Option<usize>,
) -> Result<ConvergenceReport> {
    if sizes.len() != net.num_routes() {
        return Err(Error::InvalidParameter(
            "one limit size law per route".into(),
        ));
    }
    let net = Arc::new(net.clone());
    let policy: Arc<dyn AllocationPolicy> = Arc::new(ProductForm::new(net.clone()));
    let per_seed = fan_out(seeds, jobs, |seed| {
        let stream = CouplingStream::generate(&net, horizon, seed, initial.clone());
        let (limit, limit_final) = limit_events(policy.clone(), sizes, &stream, horizon)?;
        let runs = c_list
            .iter()
            .map(|&c| {
                let (other, fin) = packet_events(&net, sizes, c, &stream, horizon)?;
                Ok(align_events(seed, &limit, &other, fin))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((limit_final, runs))
    })?;
    let limit_final_counts: Vec<Vec<u32>> = per_seed.iter().map(|(f, _)| f.clone()).collect();
    let limit_pmf = counts_pmf(&limit_final_counts);
    let scales = c_list
        .iter()
        .enumerate()
        .map(|(k, &c)| {
            let runs: Vec<CoupledRun> = per_seed.iter().map(|(_, r)| r[k].clone()).collect();
            let gaps: Vec<f64> = runs.iter().map(|r| r.max_time_gap).collect();
            let dists: Vec<f64> = runs.iter().map(|r| r.max_flow_distance).collect();
            let finals: Vec<Vec<u32>> = runs.iter().map(|r| r.final_counts.clone()).collect();
            ScaleSummary {
                c,
                match_fraction: runs.iter().filter(|r| r.full_match).count() as f64
                    / runs.len().max(1) as f64,
                median_max_time_gap: median(&gaps),
                median_max_flow_distance: median(&dists),
                tv_final_counts: tv_distance(&counts_pmf(&finals), &limit_pmf),
                runs,
            }
        })
        .collect();
    Ok(ConvergenceReport {
        horizon,
        seeds: seeds.to_vec(),
        scales,
        limit_final_counts,
    })
}

/// Couples the limit model with itself: same stream, same sizes.
pub fn self_coupling(
    net: &Network,
    sizes: &[SizeLaw],
    horizon: f64,
    seed: u64,
) -> Result<CoupledRun> {
    let policy: Arc<dyn AllocationPolicy> = Arc::new(ProductForm::new(net.clone()));
    let stream = CouplingStream::generate(net, horizon, seed, FlowState::empty(net.num_routes()));
    let (a, fin) = limit_events(policy.clone(), sizes, &stream, horizon)?;
    let (b, _) = limit_events(policy, sizes, &stream, horizon)?;
    Ok(align_events(seed, &a, &b, fin))
}

/// Box-truncated exact law of `N`, with the box taken at the given
/// per-route marginal quantile unless one is supplied.
pub fn exact_reference(
    pf: &ProductForm,
    box_max: Option<&[u32]>,
    quantile: f64,
) -> Result<OpenPmf> {
    if let Some(b) = box_max {
        return pf.open_n_pmf(b);
    }
    let routes = pf.network().num_routes();
    let mut side = 8u32;
    loop {
        let wide = pf.open_n_pmf(&vec![side; routes])?;
        if wide.tail_mass < (1.0 - quantile) * 0.1 || side >= 256 {
            let b = wide.marginal_quantile_box(quantile);
            return pf.open_n_pmf(&b);
        }
        side *= 2;
    }
}

fn exact_pmf_map(exact: &OpenPmf) -> Pmf {
    exact
        .rows
        .iter()
        .map(|r| (r.n.0.clone(), r.probability))
        .collect()
}

/// TV between an empirical occupancy law and the exact box-truncated law.
pub fn tv_to_exact(emp: &EmpiricalPmf, exact: &OpenPmf) -> f64 {
    tv_truncated(
        &emp.normalized(),
        emp.outside_mass(),
        &exact_pmf_map(exact),
        exact.tail_mass,
    )
}

fn box_of(exact: &OpenPmf) -> Vec<u32> {
    let routes = exact.rows.first().map_or(0, |r| r.n.0.len());
    (0..routes)
        .map(|i| exact.rows.iter().map(|r| r.n.0[i]).max().unwrap_or(0))
        .collect()
}

/// Time-average occupancy of the generalized limit model.
pub fn flow_occupancy(
    policy: Arc<dyn AllocationPolicy>,
    sizes: &[SizeLaw],
    nu: &[f64],
    seed: u64,
    horizon: Horizon,
    burn_in_fraction: f64,
    box_max: &[u32],
) -> Result<EmpiricalPmf> {
    let routes = nu.len();
    let mut sim = FlowSim::new(policy, sizes.to_vec(), nu, seed, FlowState::empty(routes))?;
    let limit = horizon.time_limit();
    let burn_events = horizon.burn_in_events(burn_in_fraction);
    let mut acc = OccupancyAccumulator::new(
        if burn_events.is_some() {
            f64::INFINITY
        } else {
            limit * burn_in_fraction
        },
        Some(box_max.to_vec()),
    );
    acc.record(0.0, &sim.counts().0);
    while let Some(ev) = sim.step(limit)? {
        if burn_events == Some(sim.events()) {
            acc.set_burn_in(ev.time);
        }
        acc.record(ev.time, &sim.counts().0);
        if horizon.reached(sim.events()) {
            break;
        }
    }
    acc.finish(sim.time())
}

/// Time-average occupancy of the exponential-size count chain.
pub fn ctmc_occupancy(
    policy: Arc<dyn AllocationPolicy>,
    nu: &[f64],
    mu: &[f64],
    seed: u64,
    horizon: Horizon,
    burn_in_fraction: f64,
    box_max: &[u32],
) -> Result<EmpiricalPmf> {
    let mut sim = CtmcSim::new(policy, nu, mu, seed, RouteCounts::zeros(nu.len()))?;
    let limit = horizon.time_limit();
    let burn_events = horizon.burn_in_events(burn_in_fraction);
    let mut acc = OccupancyAccumulator::new(
        if burn_events.is_some() {
            f64::INFINITY
        } else {
            limit * burn_in_fraction
        },
        Some(box_max.to_vec()),
    );
    acc.record(0.0, &sim.counts().0);
    let mut events = 0u64;
    while let Some(ev) = sim.step(limit)? {
        events += 1;
        if burn_events == Some(events) {
            acc.set_burn_in(ev.time);
        }
        acc.record(ev.time, &sim.counts().0);
        if horizon.reached(events) {
            break;
        }
    }
    acc.finish(sim.time())
}

/// Time-average occupancy of the open packet-level network.
pub fn packet_occupancy(
    net: Arc<Network>,
    c: u32,
    sizes: &[DiscreteSizeLaw],
    seed: u64,
    horizon: Horizon,
    burn_in_fraction: f64,
    box_max: &[u32],
) -> Result<EmpiricalPmf> {
    let empty = ExplicitState::empty(net.num_queues());
    let mut sim = PacketSim::new_open(net, c, sizes.to_vec(), seed, empty)?;
    let limit = horizon.time_limit();
    let burn_events = horizon.burn_in_events(burn_in_fraction);
    let mut acc = OccupancyAccumulator::new(
        if burn_events.is_some() {
            f64::INFINITY
        } else {
            limit * burn_in_fraction
        },
        Some(box_max.to_vec()),
    );
    acc.record(0.0, sim.counts_slice());
    while let Some(ev) = sim.step(limit)? {
        if burn_events == Some(sim.events()) {
            acc.set_burn_in(ev.time);
        }
        if ev.kind.is_document_event() {
            acc.record(ev.time, sim.counts_slice());
        }
        if horizon.reached(sim.events()) {
            break;
        }
    }
    acc.finish(sim.time())
}

/// Empirical stationary law of one size law across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LawEstimate {
    pub law: SizeLaw,
    /// Pooled in-box probabilities.
    pub pmf: Vec<(Vec<u32>, f64)>,
    pub outside_mass: f64,
    /// 95% normal half-width per state from the across-seed spread.
    pub radius: Vec<(Vec<u32>, f64)>,
    pub tv_exact: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InsensitivityReport {
    pub box_max: Vec<u32>,
    pub seeds: Vec<u64>,
    pub laws: Vec<LawEstimate>,
    /// `pairwise_tv[a][b]` between pooled estimates.
    pub pairwise_tv: Vec<Vec<f64>>,
}

impl InsensitivityReport {
    pub fn max_pairwise_tv(&self) -> f64 {
        self.pairwise_tv
            .iter()
            .flatten()
            .copied()
            .fold(0.0, f64::max)
    }
}

/// Stationary `N` under several size laws sharing their means, all under the
/// spinning allocation of `net`. Each entry of `laws` is applied to every route.
pub fn insensitivity_experiment(
    net: &Network,
    laws: &[SizeLaw],
    burn_in_fraction: f64,
    horizon: Horizon,
    box_max: Option<&[u32]>,
    seeds: &[u64],
    jobs: Option<usize>,
) -> Result<InsensitivityReport> {
    if let Some(first) = laws.first() {
        for l in laws {
            if (l.mean() - first.mean()).abs() > 1e-9 * first.mean() {
                return Err(Error::MeanMismatch(format!(
                    "{} has mean {}, {} has {}",
                    l.name(),
                    l.mean(),
                    first.name(),
                    first.mean()
                )));
            }
            if l.is_atomic() {
                return Err(Error::AtomicSizeLaw {
                    route: 0,
                    law: l.name().into(),
                });
            }
        }
    }
    let routes = net.num_routes();
    let net = net.with_mean_sizes(&vec![laws.first().map_or(1.0, SizeLaw::mean); routes])?;
    net.require_stable()?;
    let pf = Arc::new(ProductForm::new(net.clone()));
    let exact = exact_reference(&pf, box_max, DEFAULT_BOX_QUANTILE)?;
    let bx = box_of(&exact);
    let z = crate::stats::normal_quantile(0.5 + CI_LEVEL / 2.0);
    let mut estimates = Vec::new();
    let mut pooled_maps = Vec::new();
    for (k, law) in laws.iter().enumerate() {
        let sizes = vec![law.clone(); routes];
        let policy: Arc<dyn AllocationPolicy> = pf.clone();
        let per_seed = fan_out(seeds, jobs, |seed| {
            flow_occupancy(
                policy.clone(),
                &sizes,
                net.arrival_rates(),
                rng::stream_id(&[seed, k as u64]),
                horizon,
                burn_in_fraction,
                &bx,
            )
        })?;
        let mut pooled = EmpiricalPmf::new(Some(bx.clone()));
        per_seed.iter().for_each(|p| pooled.merge(p));
        let map = pooled.normalized();
        let radius = map
            .keys()
            .map(|n| {
                let xs: Vec<f64> = per_seed.iter().map(|p| p.probability(n)).collect();
                let m = xs.iter().sum::<f64>() / xs.len() as f64;
                let var =
                    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len().max(2) - 1) as f64;
                (n.clone(), z * (var / xs.len() as f64).sqrt())
            })
            .collect();
        estimates.push(LawEstimate {
            law: law.clone(),
            pmf: map.iter().map(|(k, v)| (k.clone(), *v)).collect(),
            outside_mass: pooled.outside_mass(),
            radius,
            tv_exact: tv_to_exact(&pooled, &exact),
        });
        pooled_maps.push((map, pooled.outside_mass()));
    }
    let pairwise_tv = pooled_maps
        .iter()
        .map(|(p, po)| {
            pooled_maps
                .iter()
                .map(|(q, qo)| tv_truncated(p, *po, q, *qo))
                .collect()
        })
        .collect();
    Ok(InsensitivityReport {
        box_max: bx,
        seeds: seeds.to_vec(),
        laws: estimates,
        pairwise_tv,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteThroughput {
    pub route: String,
    pub theoretical: f64,
    pub interval: Option<ConfidenceInterval>,
    pub relative_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub n: Vec<u32>,
    pub horizon: f64,
    pub seeds: Vec<u64>,
    pub reachability: Reachability,
    pub events: u64,
    pub routes: Vec<RouteThroughput>,
}

/// Per-document traversal rates of the closed network versus `Lambda_i / n_i`.
pub fn throughput_experiment(
    net: &Network,
    n: &RouteCounts,
    horizon: f64,
    seeds: &[u64],
    batches: usize,
    jobs: Option<usize>,
) -> Result<ThroughputReport> {
    let net = Arc::new(net.clone());
    let pf = ProductForm::new(net.clone());
    let reachability = reachability_check(&net, n, 100_000);
    let per_seed = fan_out(seeds, jobs, |seed| {
        let mut sim = PacketSim::new_closed(net.clone(), n, seed)?;
        let width = horizon / batches as f64;
        let mut marks = Vec::with_capacity(batches);
        for b in 1..=batches {
            while sim.step(b as f64 * width)?.is_some() {}
            let tr = sim.traversal_counts().expect("closed mode");
            marks.push(
                (0..n.0.len())
                    .map(|i| tr.route_total(i))
                    .collect::<Vec<u64>>(),
            );
        }
        Ok((marks, sim.events()))
    })?;
    let width = horizon / batches as f64;
    let routes = (0..net.num_routes())
        .map(|i| {
            let id = net.route(i).id.clone();
            if n.0[i] == 0 {
                return Ok(RouteThroughput {
                    route: id,
                    theoretical: 0.0,
                    interval: None,
                    relative_error: None,
                });
            }
            let theoretical = pf.theoretical_throughput(n, i)?;
            let mut rates = Vec::new();
            for (marks, _) in &per_seed {
                let mut prev = 0u64;
                for m in marks {
                    rates.push((m[i] - prev) as f64 / (width * n.0[i] as f64));
                    prev = m[i];
                }
            }
            let ci = ci_from_batches(&rates, CI_LEVEL)?;
            Ok(RouteThroughput {
                route: id,
                theoretical,
                relative_error: Some((ci.estimate - theoretical) / theoretical),
                interval: Some(ci),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ThroughputReport {
        n: n.0.clone(),
        horizon,
        seeds: seeds.to_vec(),
        reachability,
        events: per_seed.iter().map(|(_, e)| e).sum(),
        routes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenewalRow {
    pub c: u32,
    /// Per seed: sup over the grid and over packets of the deviation.
    pub deviations: Vec<f64>,
    pub median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenewalReport {
    pub n: Vec<u32>,
    pub horizon: f64,
    pub drift: Vec<f64>,
    pub rows: Vec<RenewalRow>,
}

/// `sup_t |A_ik(t)/c - (Lambda_i/n_i) t|` on `grid` for closed networks with
/// capacities `c * phi`, sup also taken over packets.
pub fn renewal_check(
    net: &Network,
    n: &RouteCounts,
    c_list: &[u32],
    grid: &[f64],
    seeds: &[u64],
    jobs: Option<usize>,
) -> Result<RenewalReport> {
    let net = Arc::new(net.clone());
    let pf = ProductForm::new(net.clone());
    let lam = pf.spinning_allocation(n)?;
    let drift: Vec<f64> = lam
        .iter()
        .zip(&n.0)
        .map(|(l, &k)| if k == 0 { 0.0 } else { l / k as f64 })
        .collect();
    let horizon = grid.iter().copied().fold(0.0, f64::max);
    let rows = c_list
        .iter()
        .map(|&c| {
            let deviations = fan_out(seeds, jobs, |seed| {
                let mut sim = PacketSim::new_closed_scaled(
                    net.clone(),
                    n,
                    c,
                    rng::stream_id(&[seed, c as u64]),
                )?
                .record_traversal_times();
                while sim.step(horizon)?.is_some() {}
                let tr = sim.traversal_counts().expect("closed mode");
                let mut worst: f64 = 0.0;
                for (i, docs) in n.0.iter().enumerate() {
                    for k in 0..*docs as usize {
                        for &t in grid {
                            let a = tr.at(i, k, t).unwrap_or(0) as f64 / c as f64;
                            worst = worst.max((a - drift[i] * t).abs());
                        }
                    }
                }
                Ok(worst)
            })?;
            Ok(RenewalRow {
                c,
                median: median(&deviations),
                deviations,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RenewalReport {
        n: n.0.clone(),
        horizon,
        drift,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarityReport {
    pub c: u32,
    pub sizes: Vec<DiscreteSizeLaw>,
    pub box_max: Vec<u32>,
    pub seeds: Vec<u64>,
    pub empirical: Vec<(Vec<u32>, f64)>,
    pub exact: Vec<(Vec<u32>, f64)>,
    pub outside_mass: f64,
    pub exact_tail_mass: f64,
    pub tv: f64,
}

/// Open packet network at scale `c`; pooled time-average `N` law against the
/// exact one, whose loads use the packet-count means divided by `c`.
#[allow(clippy::too_many_arguments)]
pub fn stationarity_experiment_packet(
    net: &Network,
    c: u32,
    sizes: &[DiscreteSizeLaw],
    burn_in_fraction: f64,
    horizon: Horizon,
    box_max: Option<&[u32]>,
    seeds: &[u64],
    jobs: Option<usize>,
) -> Result<StationarityReport> {
    let means: Vec<f64> = sizes.iter().map(|s| s.mean() / c as f64).collect();
    let net = Arc::new(net.with_mean_sizes(&means)?);
    net.require_stable()?;
    let pf = ProductForm::new(net.clone());
    let exact = exact_reference(&pf, box_max, DEFAULT_BOX_QUANTILE)?;
    let bx = box_of(&exact);
    let per_seed = fan_out(seeds, jobs, |seed| {
        packet_occupancy(net.clone(), c, sizes, seed, horizon, burn_in_fraction, &bx)
    })?;
    let mut pooled = EmpiricalPmf::new(Some(bx.clone()));
    per_seed.iter().for_each(|p| pooled.merge(p));
    Ok(StationarityReport {
        c,
        sizes: sizes.to_vec(),
        box_max: bx,
        seeds: seeds.to_vec(),
        empirical: pooled.normalized().into_iter().collect(),
        exact: exact
            .rows
            .iter()
            .map(|r| (r.n.0.clone(), r.probability))
            .collect(),
        outside_mass: pooled.outside_mass(),
        exact_tail_mass: exact.tail_mass,
        tv: tv_to_exact(&pooled, &exact),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtmcReport {
    pub box_max: Vec<u32>,
    pub seeds: Vec<u64>,
    pub tv: f64,
}

/// Spinning-allocation count chain with `mu_i = 1 / mean_size_i` against the exact law.
pub fn ctmc_stationarity(
    net: &Network,
    burn_in_fraction: f64,
    horizon: Horizon,
    box_max: Option<&[u32]>,
    seeds: &[u64],
    jobs: Option<usize>,
) -> Result<CtmcReport> {
    net.require_stable()?;
    let pf = Arc::new(ProductForm::new(net.clone()));
    let exact = exact_reference(&pf, box_max, DEFAULT_BOX_QUANTILE)?;
    let bx = box_of(&exact);
    let mu: Vec<f64> = net.mean_sizes().iter().map(|m| 1.0 / m).collect();
    let policy: Arc<dyn AllocationPolicy> = pf.clone();
    let per_seed = fan_out(seeds, jobs, |seed| {
        ctmc_occupancy(
            policy.clone(),
            net.arrival_rates(),
            &mu,
            seed,
            horizon,
            burn_in_fraction,
            &bx,
        )
    })?;
    let mut pooled = EmpiricalPmf::new(Some(bx.clone()));
    per_seed.iter().for_each(|p| pooled.merge(p));
    Ok(CtmcReport {
        box_max: bx,
        seeds: seeds.to_vec(),
        tv: tv_to_exact(&pooled, &exact),
    })
}

/// `sup over grid |F_c(c y) - F(y)|` between the discretized equilibrium law
/// rescaled by `1/c` and the limit equilibrium law, per `c`. The grid spans
/// `[0, q99]` of the limit law in `points` equal steps.
pub fn equilibrium_convergence(law: &SizeLaw, c_list: &[u32], points: usize) -> Vec<(u32, f64)> {
    let limit = law.equilibrium();
    let top = limit.quantile(0.99);
    let grid: Vec<f64> = (1..=points)
        .map(|k| top * k as f64 / points as f64)
        .collect();
    c_list
        .iter()
        .map(|&c| {
            let discrete = law.discretize(c).equilibrium();
            let d = crate::stats::cdf_sup_distance(
                |y| discrete.cdf(c as f64 * y),
                |y| limit.cdf(y),
                &grid,
            );
            (c, d)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::two_queue_network;

    fn fig1() -> Network {
        two_queue_network([0.2, 0.3, 0.1], [1.0; 3])
    }

    #[test]
    fn self_coupling_is_exact() {
        let run = self_coupling(
            &fig1(),
            &vec![SizeLaw::Exponential { rate: 1.0 }; 3],
            50.0,
            3,
        )
        .unwrap();
        assert!(run.full_match && run.limit_events > 0);
        assert_eq!((run.max_time_gap, run.max_flow_distance), (0.0, 0.0));
    }

    #[test]
    fn short_horizon_is_trivially_matched() {
        let rep = convergence_experiment(
            &fig1(),
            &vec![SizeLaw::Exponential { rate: 1.0 }; 3],
            &[10],
            1e-9,
            &[1, 2],
            &FlowState::empty(3),
            Some(1),
        )
        .unwrap();
        let s = rep.scale(10).unwrap();
        assert_eq!(
            (s.match_fraction, s.median_max_time_gap, s.tv_final_counts),
            (1.0, 0.0, 0.0)
        );
    }

    #[test]
    fn coupled_arrivals_coincide() {
        let net = Arc::new(fig1());
        let sizes = vec![SizeLaw::Exponential { rate: 1.0 }; 3];
        let stream = CouplingStream::generate(&net, 30.0, 8, FlowState::empty(3));
        let policy: Arc<dyn AllocationPolicy> = Arc::new(ProductForm::new(net.clone()));
        let (limit, _) = limit_events(policy, &sizes, &stream, 30.0).unwrap();
        let (packet, _) = packet_events(&net, &sizes, 100, &stream, 30.0).unwrap();
        let la: Vec<f64> = limit.iter().filter(|e| e.arrival).map(|e| e.time).collect();
        let pa: Vec<f64> = packet
            .iter()
            .filter(|e| e.arrival)
            .map(|e| e.time)
            .collect();
        assert_eq!(la, pa);
    }

    #[test]
    fn throughput_zero_population() {
        let rep =
            throughput_experiment(&fig1(), &RouteCounts(vec![0, 0, 0]), 10.0, &[1], 5, Some(1))
                .unwrap();
        assert!(rep
            .routes
            .iter()
            .all(|r| r.theoretical == 0.0 && r.interval.is_none()));
    }

    #[test]
    fn mean_mismatch_rejected() {
        let laws = [
            SizeLaw::Exponential { rate: 1.0 },
            SizeLaw::Exponential { rate: 2.0 },
        ];
        let err = insensitivity_experiment(
            &fig1(),
            &laws,
            0.2,
            Horizon::Time(10.0),
            None,
            &[1],
            Some(1),
        )
        .unwrap_err();
        assert!(matches!(err, Error::MeanMismatch(_)));
    }

    #[test]
    fn equilibrium_gap_shrinks() {
        let d = equilibrium_convergence(&SizeLaw::Exponential { rate: 1.0 }, &[10, 100, 1000], 100);
        assert!(d[0].1 > d[1].1 && d[1].1 > d[2].1, "{d:?}");
    }

    #[test]
    fn median_examples() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&[]), 0.0);
    }
}
