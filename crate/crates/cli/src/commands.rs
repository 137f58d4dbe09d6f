//! Subcommand bodies.

use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;
use spinlab::distributions::{DiscreteSizeLaw, SizeLaw};
use spinlab::experiments::{
    self, Horizon, DEFAULT_BATCHES, DEFAULT_BOX_QUANTILE, DEFAULT_BURN_IN_FRACTION,
};
use spinlab::flow_sim::{AllocationPolicy, FlowEventKind, FlowSim, FlowState};
use spinlab::packet_sim::{ExplicitState, PacketEventKind, PacketSim};
use spinlab::product_form::{ProductForm, RouteCounts};
use spinlab::rng::stream_id;
use spinlab::topology::{Network, Stability};

use crate::config::{self, ConfigError, ExperimentBlock, Loaded};
use crate::output::{OutputDir, RunManifest};
use crate::{Command, Common, RunLength};

const DEFAULT_REPLICATIONS: usize = 20;
const STABILITY_TOL: f64 = 1e-9;

#[derive(Debug)]
pub enum Failure {
    /// Bad flags or config; exit code 1.
    Usage(String),
    /// The computation itself failed; exit code 2.
    Runtime(anyhow::Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.0)
    }
}

impl From<spinlab::Error> for Failure {
    fn from(e: spinlab::Error) -> Self {
        match e {
            spinlab::Error::UnstableNetwork { .. } => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

type Outcome = Result<u8, Failure>;

pub fn run(command: Command) -> Outcome {
    let name = command.name();
    match command {
        Command::HelpConfig => {
            print!("{}", config::SCHEMA_HELP);
            Ok(0)
        }
        Command::Validate { common } => validate(&common),
        Command::Exact { common, box_max } => {
            with_outputs(name, &common, |ctx| exact(ctx, &box_max))
        }
        Command::SimPacket { common, run, c } => {
            with_outputs(name, &common, |ctx| sim_packet(ctx, run, c))
        }
        Command::SimFlow { common, run } => with_outputs(name, &common, |ctx| sim_flow(ctx, run)),
        Command::Converge { common } => with_outputs(name, &common, converge),
        Command::Insensitivity { common } => with_outputs(name, &common, insensitivity),
        Command::Throughput { common } => with_outputs(name, &common, throughput),
        Command::Renewal { common } => with_outputs(name, &common, renewal),
        Command::Stationarity { common, ctmc } => {
            with_outputs(name, &common, |ctx| stationarity(ctx, ctmc))
        }
    }
}

fn validate(common: &Common) -> Outcome {
    let loaded = config::load(common.config.as_deref())?;
    let verdict = loaded.network.stability_check(STABILITY_TOL);
    for j in 0..loaded.network.num_queues() {
        println!(
            "queue {}: load {:.6}, tail ratio {:.6}",
            loaded.network.queue_ids()[j],
            loaded.network.queue_load(j),
            loaded.network.tail_ratio(j)
        );
    }
    println!("{verdict:?}");
    Ok(if verdict == Stability::Unstable { 1 } else { 0 })
}

/// Everything a subcommand body needs.
struct Ctx {
    loaded: Loaded,
    common: Common,
    out: OutputDir,
    seeds: Vec<u64>,
}

impl Ctx {
    fn net(&self) -> &Network {
        &self.loaded.network
    }

    fn exp(&self) -> &ExperimentBlock {
        &self.loaded.config.experiment
    }

    fn jobs(&self) -> Option<usize> {
        self.common.jobs
    }

    fn replication_seeds(&mut self) -> Vec<u64> {
        let r = self.exp().replications.unwrap_or(DEFAULT_REPLICATIONS);
        self.seeds = (0..r as u64)
            .map(|k| stream_id(&[self.common.seed, k]))
            .collect();
        self.seeds.clone()
    }

    fn route_ids(&self) -> Vec<String> {
        self.net().routes().iter().map(|r| r.id.clone()).collect()
    }

    fn box_max(&self, flag: &[u32]) -> Result<Option<Vec<u32>>, Failure> {
        let given = if flag.is_empty() {
            self.exp().box_max.clone()
        } else {
            Some(flag.to_vec())
        };
        given
            .map(|b| config::per_route(&b, self.net().num_routes(), "box").map_err(Failure::from))
            .transpose()
    }

    fn population(&self) -> Result<RouteCounts, Failure> {
        let map =
            self.exp().population.as_ref().ok_or_else(|| {
                Failure::Usage("this subcommand needs experiment.population".into())
            })?;
        Ok(config::population(self.net(), map)?)
    }

    fn limit_sizes(&self) -> Result<Vec<SizeLaw>, Failure> {
        match &self.exp().limit_sizes {
            Some(l) => Ok(config::per_route(
                l,
                self.net().num_routes(),
                "limit_sizes",
            )?),
            None => Ok(self
                .net()
                .mean_sizes()
                .iter()
                .map(|&m| SizeLaw::exponential_with_mean(m))
                .collect()),
        }
    }

    fn packet_sizes(&self, c: u32) -> Result<Vec<DiscreteSizeLaw>, Failure> {
        match &self.exp().packet_sizes {
            Some(l) => Ok(config::per_route(
                l,
                self.net().num_routes(),
                "packet_sizes",
            )?),
            None => Ok(self
                .net()
                .mean_sizes()
                .iter()
                .map(|&m| DiscreteSizeLaw::geometric_with_mean((m * c as f64).max(1.0)))
                .collect()),
        }
    }

    fn horizon(&self, run: RunLength, default: Horizon) -> Horizon {
        match (
            run.events.or(self.exp().events),
            run.horizon.or(self.exp().horizon),
        ) {
            (Some(e), _) => Horizon::Events(e),
            (None, Some(t)) => Horizon::Time(t),
            (None, None) => default,
        }
    }

    fn burn_in(&self) -> f64 {
        self.exp().burn_in.unwrap_or(DEFAULT_BURN_IN_FRACTION)
    }
}

fn with_outputs(
    name: &str,
    common: &Common,
    body: impl FnOnce(&mut Ctx) -> Result<(), Failure>,
) -> Outcome {
    let started = Instant::now();
    let loaded = config::load(common.config.as_deref())?;
    let out = OutputDir::create(&common.out)?;
    let mut ctx = Ctx {
        loaded,
        common: common.clone(),
        out,
        seeds: vec![common.seed],
    };
    body(&mut ctx)?;
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        subcommand: name.to_string(),
        config_hash: ctx.loaded.hash.clone(),
        seed: common.seed,
        seeds: ctx.seeds.clone(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        outputs: Vec::new(),
    };
    for f in ctx.out.written() {
        println!("wrote {}", common.out.join(f).display());
    }
    ctx.out.finish(manifest)?;
    Ok(0)
}

/// JSON report envelope.
#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    subcommand: &'a str,
    config_hash: &'a str,
    seed: u64,
    seeds: &'a [u64],
    report: T,
}

fn write_report<T: Serialize>(
    ctx: &mut Ctx,
    name: &str,
    file: &str,
    report: T,
) -> Result<(), Failure> {
    let envelope = Report {
        subcommand: name,
        config_hash: &ctx.loaded.hash,
        seed: ctx.common.seed,
        seeds: &ctx.seeds,
        report,
    };
    ctx.out.write_json(file, &envelope)?;
    Ok(())
}

fn f(x: f64) -> String {
    x.to_string()
}

fn header(fixed: &[&str], prefix: &str, ids: &[String]) -> Vec<String> {
    fixed
        .iter()
        .map(|s| s.to_string())
        .chain(ids.iter().map(|id| format!("{prefix}{id}")))
        .collect()
}

fn exact(ctx: &mut Ctx, flag: &[u32]) -> Result<(), Failure> {
    let pf = ProductForm::new(ctx.net().clone());
    let table =
        experiments::exact_reference(&pf, ctx.box_max(flag)?.as_deref(), DEFAULT_BOX_QUANTILE)?;
    let ids = ctx.route_ids();
    let mut head = header(&[], "n_", &ids);
    head.extend(["log_Bn".to_string(), "pmf".to_string()]);
    head.extend(ids.iter().map(|id| format!("lambda_{id}")));
    let mut rows = Vec::with_capacity(table.rows.len());
    for row in &table.rows {
        let lam = pf.spinning_allocation(&row.n)?;
        let mut r: Vec<String> = row.n.0.iter().map(u32::to_string).collect();
        r.push(f(row.log_bn));
        r.push(f(row.probability));
        r.extend(lam.into_iter().map(f));
        rows.push(r);
    }
    ctx.out.write_csv("exact.csv", &head, &rows)?;
    #[derive(Serialize)]
    struct Summary {
        routes: Vec<String>,
        box_max: Vec<u32>,
        log_b: f64,
        in_box_mass: f64,
        tail_mass: f64,
    }
    let box_max = (0..ids.len())
        .map(|i| table.rows.iter().map(|r| r.n.0[i]).max().unwrap_or(0))
        .collect();
    let summary = Summary {
        routes: ids,
        box_max,
        log_b: table.log_b,
        in_box_mass: table.total(),
        tail_mass: table.tail_mass,
    };
    write_report(ctx, "exact", "exact.json", summary)
}

fn sim_packet(ctx: &mut Ctx, run: RunLength, c: Option<u32>) -> Result<(), Failure> {
    let c = c.or(ctx.exp().c).unwrap_or(1);
    let sizes = ctx.packet_sizes(c)?;
    let net = Arc::new(ctx.net().clone());
    let horizon = ctx.horizon(run, Horizon::Time(100.0));
    let empty = ExplicitState::empty(net.num_queues());
    let mut sim = PacketSim::new_open(net.clone(), c, sizes, ctx.common.seed, empty)?;
    let (limit, max_events) = match horizon {
        Horizon::Time(t) => (t, u64::MAX),
        Horizon::Events(e) => (f64::INFINITY, e),
    };
    let ids = ctx.route_ids();
    let queues = net.queue_ids().to_vec();
    let mut events = Vec::new();
    let mut traj = vec![counts_row(0.0, sim.counts_slice())];
    while sim.events() < max_events {
        let Some(ev) = sim.step(limit)? else { break };
        let route = ids[ev.kind.route()].clone();
        let stage_queue =
            |stage: usize| queues[net.route(ev.kind.route()).order[stage - 1]].clone();
        let row = match ev.kind {
            PacketEventKind::ExternalArrival { size, .. } => {
                vec![
                    f(ev.time),
                    "arrival".into(),
                    route,
                    stage_queue(1),
                    String::new(),
                    size.to_string(),
                ]
            }
            PacketEventKind::StageAdvance { from, to, .. } => {
                vec![
                    f(ev.time),
                    "advance".into(),
                    route,
                    queues[from].clone(),
                    queues[to].clone(),
                    String::new(),
                ]
            }
            PacketEventKind::Wrap { residual_after, .. } => {
                let last = net.route(ev.kind.route()).len();
                let residual = residual_after.map_or(String::new(), |r| r.to_string());
                vec![
                    f(ev.time),
                    "wrap".into(),
                    route,
                    stage_queue(last),
                    stage_queue(1),
                    residual,
                ]
            }
            PacketEventKind::DocumentDeparture { .. } => {
                let last = net.route(ev.kind.route()).len();
                vec![
                    f(ev.time),
                    "departure".into(),
                    route,
                    stage_queue(last),
                    String::new(),
                    "0".into(),
                ]
            }
        };
        events.push(row);
        if ev.kind.is_document_event() {
            traj.push(counts_row(ev.time, sim.counts_slice()));
        }
    }
    let head: Vec<String> = ["time", "kind", "route", "queue", "next_queue", "residual"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    ctx.out.write_csv("events.csv", &head, &events)?;
    ctx.out
        .write_csv("trajectory.csv", &header(&["t"], "n_", &ids), &traj)?;
    Ok(())
}

fn counts_row(t: f64, n: &[u32]) -> Vec<String> {
    std::iter::once(f(t))
        .chain(n.iter().map(u32::to_string))
        .collect()
}

fn sim_flow(ctx: &mut Ctx, run: RunLength) -> Result<(), Failure> {
    let sizes = ctx.limit_sizes()?;
    let horizon = ctx.horizon(run, Horizon::Time(100.0));
    let policy: Arc<dyn AllocationPolicy> = Arc::new(ProductForm::new(ctx.net().clone()));
    let routes = ctx.net().num_routes();
    let mut sim = FlowSim::new(
        policy,
        sizes,
        ctx.net().arrival_rates(),
        ctx.common.seed,
        FlowState::empty(routes),
    )?;
    let (limit, max_events) = match horizon {
        Horizon::Time(t) => (t, u64::MAX),
        Horizon::Events(e) => (f64::INFINITY, e),
    };
    let ids = ctx.route_ids();
    let mut events = Vec::new();
    let mut traj = vec![counts_row(0.0, &sim.counts().0)];
    while sim.events() < max_events {
        let Some(ev) = sim.step(limit)? else { break };
        let route = ids[ev.kind.route()].clone();
        events.push(match ev.kind {
            FlowEventKind::Arrival { size, .. } => {
                vec![f(ev.time), "arrival".into(), route, f(size)]
            }
            FlowEventKind::Departure { .. } => {
                vec![f(ev.time), "departure".into(), route, String::new()]
            }
        });
        traj.push(counts_row(ev.time, &sim.counts().0));
    }
    let head: Vec<String> = ["time", "kind", "route", "size"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    ctx.out.write_csv("events.csv", &head, &events)?;
    ctx.out
        .write_csv("trajectory.csv", &header(&["t"], "n_", &ids), &traj)?;
    Ok(())
}

fn converge(ctx: &mut Ctx) -> Result<(), Failure> {
    let sizes = ctx.limit_sizes()?;
    let c_list = ctx
        .exp()
        .c_list
        .clone()
        .unwrap_or_else(|| vec![10, 100, 1000]);
    let horizon = ctx.exp().horizon.unwrap_or(20.0);
    let seeds = ctx.replication_seeds();
    let empty = FlowState::empty(ctx.net().num_routes());
    let report = experiments::convergence_experiment(
        ctx.net(),
        &sizes,
        &c_list,
        horizon,
        &seeds,
        &empty,
        ctx.jobs(),
    )?;
    let head: Vec<String> = [
        "c",
        "match_fraction",
        "median_max_time_gap",
        "median_max_flow_distance",
        "tv_final_counts",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let rows: Vec<Vec<String>> = report
        .scales
        .iter()
        .map(|s| {
            vec![
                s.c.to_string(),
                f(s.match_fraction),
                f(s.median_max_time_gap),
                f(s.median_max_flow_distance),
                f(s.tv_final_counts),
            ]
        })
        .collect();
    ctx.out.write_csv("converge.csv", &head, &rows)?;
    write_report(ctx, "converge", "converge.json", report)
}

fn insensitivity(ctx: &mut Ctx) -> Result<(), Failure> {
    let mean = ctx.net().mean_sizes().first().copied().unwrap_or(1.0);
    let laws = ctx.exp().laws.clone().unwrap_or_else(|| {
        vec![
            SizeLaw::exponential_with_mean(mean),
            SizeLaw::uniform_with_mean(mean),
            SizeLaw::pareto_with_mean(3.0, mean),
        ]
    });
    let horizon = ctx.horizon(
        RunLength {
            horizon: None,
            events: None,
        },
        Horizon::Events(100_000),
    );
    let box_max = ctx.box_max(&[])?;
    let seeds = ctx.replication_seeds();
    let report = experiments::insensitivity_experiment(
        ctx.net(),
        &laws,
        ctx.burn_in(),
        horizon,
        box_max.as_deref(),
        &seeds,
        ctx.jobs(),
    )?;
    let mut head = vec![
        "law".to_string(),
        "tv_exact".to_string(),
        "outside_mass".to_string(),
    ];
    head.extend(report.laws.iter().map(|l| format!("tv_{}", l.law.name())));
    let rows: Vec<Vec<String>> = report
        .laws
        .iter()
        .zip(&report.pairwise_tv)
        .map(|(l, pair)| {
            let mut r = vec![l.law.name().to_string(), f(l.tv_exact), f(l.outside_mass)];
            r.extend(pair.iter().copied().map(f));
            r
        })
        .collect();
    ctx.out.write_csv("insensitivity.csv", &head, &rows)?;
    write_report(ctx, "insensitivity", "insensitivity.json", report)
}

fn throughput(ctx: &mut Ctx) -> Result<(), Failure> {
    let n = ctx.population()?;
    let horizon = ctx.exp().horizon.unwrap_or(10_000.0);
    let batches = ctx.exp().batches.unwrap_or(DEFAULT_BATCHES);
    let seeds = ctx.replication_seeds();
    let report =
        experiments::throughput_experiment(ctx.net(), &n, horizon, &seeds, batches, ctx.jobs())?;
    let head: Vec<String> = [
        "route",
        "n",
        "theoretical",
        "estimate",
        "half_width",
        "relative_error",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let rows: Vec<Vec<String>> = report
        .routes
        .iter()
        .zip(&n.0)
        .map(|(r, k)| {
            vec![
                r.route.clone(),
                k.to_string(),
                f(r.theoretical),
                r.interval.map_or(String::new(), |ci| f(ci.estimate)),
                r.interval.map_or(String::new(), |ci| f(ci.half_width)),
                r.relative_error.map_or(String::new(), f),
            ]
        })
        .collect();
    ctx.out.write_csv("throughput.csv", &head, &rows)?;
    write_report(ctx, "throughput", "throughput.json", report)
}

fn renewal(ctx: &mut Ctx) -> Result<(), Failure> {
    let n = ctx.population()?;
    let c_list = ctx.exp().c_list.clone().unwrap_or_else(|| vec![1, 10, 100]);
    let top = ctx.exp().horizon.unwrap_or(10.0);
    let points = ctx.exp().grid_points.unwrap_or(100).max(1);
    let grid: Vec<f64> = (1..=points)
        .map(|k| top * k as f64 / points as f64)
        .collect();
    let seeds = ctx.replication_seeds();
    let report = experiments::renewal_check(ctx.net(), &n, &c_list, &grid, &seeds, ctx.jobs())?;
    let head: Vec<String> = ["c", "median_sup_deviation"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| vec![r.c.to_string(), f(r.median)])
        .collect();
    ctx.out.write_csv("renewal.csv", &head, &rows)?;
    write_report(ctx, "renewal", "renewal.json", report)
}

fn stationarity(ctx: &mut Ctx, ctmc: bool) -> Result<(), Failure> {
    let horizon = ctx.horizon(
        RunLength {
            horizon: None,
            events: None,
        },
        Horizon::Events(100_000),
    );
    let box_max = ctx.box_max(&[])?;
    let seeds = ctx.replication_seeds();
    let burn = ctx.burn_in();
    if ctmc {
        let report = experiments::ctmc_stationarity(
            ctx.net(),
            burn,
            horizon,
            box_max.as_deref(),
            &seeds,
            ctx.jobs(),
        )?;
        let head = vec!["model".to_string(), "tv".to_string()];
        ctx.out.write_csv(
            "stationarity.csv",
            &head,
            &[vec!["ctmc".into(), f(report.tv)]],
        )?;
        return write_report(ctx, "stationarity", "stationarity.json", report);
    }
    let c = ctx.exp().c.unwrap_or(1);
    let sizes = ctx.packet_sizes(c)?;
    let report = experiments::stationarity_experiment_packet(
        ctx.net(),
        c,
        &sizes,
        burn,
        horizon,
        box_max.as_deref(),
        &seeds,
        ctx.jobs(),
    )?;
    let routes = ctx.net().num_routes();
    let ids = ctx.route_ids();
    let mut head = header(&[], "n_", &ids);
    head.extend(["empirical".to_string(), "exact".to_string()]);
    let empirical: std::collections::BTreeMap<&Vec<u32>, f64> =
        report.empirical.iter().map(|(k, v)| (k, *v)).collect();
    let rows: Vec<Vec<String>> = report
        .exact
        .iter()
        .map(|(n, p)| {
            let mut r: Vec<String> = n.iter().take(routes).map(u32::to_string).collect();
            r.push(f(empirical.get(n).copied().unwrap_or(0.0)));
            r.push(f(*p));
            r
        })
        .collect();
    ctx.out.write_csv("stationarity.csv", &head, &rows)?;
    write_report(ctx, "stationarity", "stationarity.json", report)
}
