//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Each operation takes and returns JSON strings. The plain Rust functions
//! carry the logic; the `#[wasm_bindgen]` wrappers only convert errors.

use std::sync::Arc;

use serde::Serialize;
use spinlab::distributions::SizeLaw;
use spinlab::flow_sim::{AllocationPolicy, FlowSim, FlowState};
use spinlab::product_form::ProductForm;
use spinlab::topology::Network;
use wasm_bindgen::prelude::*;

const MAX_BOX_STATES: u64 = 200_000;
const MAX_EVENTS: u64 = 200_000;

#[derive(Serialize)]
struct Row {
    n: Vec<u32>,
    pmf: f64,
    lambda: Vec<f64>,
}

#[derive(Serialize)]
struct ExactTable {
    routes: Vec<String>,
    stability: String,
    log_b: f64,
    tail_mass: f64,
    /// `marginals[i][k] = P(N_i = k)` restricted to the box.
    marginals: Vec<Vec<f64>>,
    rows: Vec<Row>,
}

fn network(config: &str) -> Result<Network, String> {
    Network::from_json(config).map_err(|e| e.to_string())
}

fn route_ids(net: &Network) -> Vec<String> {
    net.routes().iter().map(|r| r.id.clone()).collect()
}

/// Exact open-network law over the box `{0..side}^I`, with the spinning
/// allocation at every state.
pub fn exact_table_json(config: &str, side: u32) -> Result<String, String> {
    let net = network(config)?;
    let routes = net.num_routes();
    let states = (side as u64 + 1).saturating_pow(routes as u32);
    if states > MAX_BOX_STATES {
        return Err(format!(
            "box has {states} states; the demo allows {MAX_BOX_STATES}"
        ));
    }
    let stability = format!("{:?}", net.stability_check(1e-9));
    let pf = ProductForm::new(net.clone());
    let table = pf
        .open_n_pmf(&vec![side; routes])
        .map_err(|e| e.to_string())?;
    let mut marginals = vec![vec![0.0; side as usize + 1]; routes];
    let mut rows = Vec::with_capacity(table.rows.len());
    for r in &table.rows {
        for (i, &k) in r.n.0.iter().enumerate() {
            marginals[i][k as usize] += r.probability;
        }
        let lambda = pf.spinning_allocation(&r.n).map_err(|e| e.to_string())?;
        rows.push(Row {
            n: r.n.0.clone(),
            pmf: r.probability,
            lambda,
        });
    }
    let out = ExactTable {
        routes: route_ids(&net),
        stability,
        log_b: table.log_b,
        tail_mass: table.tail_mass,
        marginals,
        rows,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

fn law_with_mean(kind: &str, mean: f64) -> Result<SizeLaw, String> {
    match kind {
        "exponential" => Ok(SizeLaw::exponential_with_mean(mean)),
        "uniform" => Ok(SizeLaw::uniform_with_mean(mean)),
        "pareto" => Ok(SizeLaw::pareto_with_mean(3.0, mean)),
        "lognormal" => Ok(SizeLaw::lognormal_with_mean(1.0, mean)),
        other => Err(format!("unknown size law `{other}`")),
    }
}

#[derive(Serialize)]
struct Trajectory {
    routes: Vec<String>,
    times: Vec<f64>,
    counts: Vec<Vec<u32>>,
    end_time: f64,
}

/// One flow-level run from empty under the spinning allocation; sizes follow
/// `law` with each route's configured mean.
pub fn simulate_flow_json(
    config: &str,
    law: &str,
    horizon: f64,
    seed: u64,
) -> Result<String, String> {
    let net = network(config)?;
    net.require_stable().map_err(|e| e.to_string())?;
    let sizes = net
        .mean_sizes()
        .iter()
        .map(|&m| law_with_mean(law, m))
        .collect::<Result<Vec<_>, _>>()?;
    let routes = net.num_routes();
    let policy: Arc<dyn AllocationPolicy> = Arc::new(ProductForm::new(net.clone()));
    let mut sim = FlowSim::new(
        policy,
        sizes,
        net.arrival_rates(),
        seed,
        FlowState::empty(routes),
    )
    .map_err(|e| e.to_string())?
    .with_budget(MAX_EVENTS);
    let mut times = vec![0.0];
    let mut counts = vec![vec![0u32; routes]];
    while let Some(ev) = sim.step(horizon).map_err(|e| e.to_string())? {
        times.push(ev.time);
        counts.push(sim.counts().0);
    }
    let out = Trajectory {
        routes: route_ids(&net),
        times,
        counts,
        end_time: sim.time(),
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Curve {
    c: u32,
    cdf: Vec<f64>,
    sup_distance: f64,
}

#[derive(Serialize)]
struct Curves {
    law: String,
    y: Vec<f64>,
    limit: Vec<f64>,
    curves: Vec<Curve>,
}

/// Equilibrium CDF of the size law next to the rescaled equilibrium CDFs of
/// its `c`-discretizations.
pub fn equilibrium_curves_json(law: &str, c_list: &[u32], points: usize) -> Result<String, String> {
    let base = law_with_mean(law, 1.0)?;
    let limit = base.equilibrium();
    let top = limit.quantile(0.99);
    let points = points.clamp(2, 2_000);
    let y: Vec<f64> = (0..=points)
        .map(|k| top * k as f64 / points as f64)
        .collect();
    let curves = c_list
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let eq = base.discretize(c).equilibrium();
            let cdf: Vec<f64> = y.iter().map(|&v| eq.cdf(c as f64 * v)).collect();
            let sup_distance = y
                .iter()
                .zip(&cdf)
                .map(|(&v, f)| (f - limit.cdf(v)).abs())
                .fold(0.0, f64::max);
            Curve {
                c,
                cdf,
                sup_distance,
            }
        })
        .collect();
    let out = Curves {
        law: law.to_string(),
        limit: y.iter().map(|&v| limit.cdf(v)).collect(),
        y,
        curves,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn exact_table(config: &str, side: u32) -> Result<String, JsValue> {
    exact_table_json(config, side).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn simulate_flow(config: &str, law: &str, horizon: f64, seed: u32) -> Result<String, JsValue> {
    simulate_flow_json(config, law, horizon, seed as u64).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn equilibrium_curves(law: &str, c_list: Vec<u32>, points: u32) -> Result<String, JsValue> {
    equilibrium_curves_json(law, &c_list, points as usize).map_err(|e| JsValue::from_str(&e))
}
