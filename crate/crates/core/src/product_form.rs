//! Exact product-form quantities.
//!
//! `B_n` is the sum over packet placements `m in S(n)` of
//! `prod_j multinomial(m_j; m_ji) * prod_i zeta_ji^m_ji / prod_{l<=m_j} phi_j(l)`.
//! Everything is evaluated in the natural-log domain by enumerating `S(n)`
//! under a size cap; there is no convolution shortcut.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::distributions::DiscreteSizeLaw;
use crate::error::{Error, Result};
use crate::flow_sim::FlowState;
use crate::topology::{Network, TailRule};

/// Largest `|S(n)|` enumerated before giving up.
pub const DEFAULT_ENUMERATION_CAP: u64 = 10_000_000;

/// Relative tolerance for the `B_j` series.
pub const DEFAULT_SERIES_TOL: f64 = 1e-13;

/// Documents in transfer per route.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RouteCounts(pub Vec<u32>);

impl RouteCounts {
    pub fn zeros(routes: usize) -> Self {
        RouteCounts(vec![0; routes])
    }

    pub fn total(&self) -> u64 {
        self.0.iter().map(|&v| v as u64).sum()
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }
}

impl From<Vec<u32>> for RouteCounts {
    fn from(v: Vec<u32>) -> Self {
        RouteCounts(v)
    }
}

/// Packets per queue-route incidence `(j, i)`, in [`Incidences`] order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct QueueRouteCounts(pub Vec<u32>);

/// The incidence set: pairs `(j, i)` with `zeta_ji > 0`, grouped by route,
/// queues ascending within a route.
#[derive(Debug, Clone, PartialEq)]
pub struct Incidences {
    pub pairs: Vec<(usize, usize)>,
    route_start: Vec<usize>,
}

impl Incidences {
    pub fn new(net: &Network) -> Self {
        let mut pairs = Vec::new();
        let mut route_start = Vec::with_capacity(net.num_routes() + 1);
        for i in 0..net.num_routes() {
            route_start.push(pairs.len());
            pairs.extend(net.route_queues(i).into_iter().map(|j| (j, i)));
        }
        route_start.push(pairs.len());
        Incidences { pairs, route_start }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn route_range(&self, i: usize) -> std::ops::Range<usize> {
        self.route_start[i]..self.route_start[i + 1]
    }

    pub fn index_of(&self, j: usize, i: usize) -> Option<usize> {
        self.route_range(i).find(|&k| self.pairs[k].0 == j)
    }
}

/// A non-negative weight stored as its natural log; `-inf` is zero.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct LogWeight(pub f64);

impl LogWeight {
    pub const ZERO: LogWeight = LogWeight(f64::NEG_INFINITY);
    pub const ONE: LogWeight = LogWeight(0.0);

    pub fn ln(self) -> f64 {
        self.0
    }

    pub fn value(self) -> f64 {
        self.0.exp()
    }

    pub fn is_zero(self) -> bool {
        self.0 == f64::NEG_INFINITY
    }
}

/// Streaming log-sum-exp accumulator.
#[derive(Debug, Clone, Copy)]
struct LogSum {
    max: f64,
    scaled: f64,
}

impl LogSum {
    fn new() -> Self {
        LogSum {
            max: f64::NEG_INFINITY,
            scaled: 0.0,
        }
    }

    fn add(&mut self, x: f64) {
        if x == f64::NEG_INFINITY {
            return;
        }
        if x <= self.max {
            self.scaled += (x - self.max).exp();
        } else {
            self.scaled = self.scaled * (self.max - x).exp() + 1.0;
            self.max = x;
        }
    }

    fn ln(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.scaled.ln()
        }
    }
}

fn ln_factorial(k: u64) -> f64 {
    (2..=k).map(|v| (v as f64).ln()).sum()
}

/// Compositions of `total` into `parts` parts, colexicographic order.
fn next_composition(a: &mut [u32]) -> bool {
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

fn binomial_f64(n: u64, k: u64) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, t| acc * (n - t) as f64 / (t + 1) as f64)
}

/// Exact engine for one network. Caches `log B_n` by `n`.
#[derive(Debug)]
pub struct ProductForm {
    net: Arc<Network>,
    inc: Incidences,
    cap: u64,
    ln_zeta: Vec<f64>,
    cache: RwLock<HashMap<Vec<u32>, f64>>,
    alloc_cache: RwLock<HashMap<Vec<u32>, Vec<f64>>>,
    ln_phi_prefix: RwLock<Vec<Vec<f64>>>,
}

impl ProductForm {
    pub fn new(net: impl Into<Arc<Network>>) -> Self {
        let net = net.into();
        let inc = Incidences::new(&net);
        let ln_zeta = inc
            .pairs
            .iter()
            .map(|&(j, i)| (net.zeta_idx(j, i) as f64).ln())
            .collect();
        let ln_phi_prefix = RwLock::new(vec![vec![0.0]; net.num_queues()]);
        ProductForm {
            net,
            inc,
            cap: DEFAULT_ENUMERATION_CAP,
            ln_zeta,
            cache: RwLock::new(HashMap::new()),
            alloc_cache: RwLock::new(HashMap::new()),
            ln_phi_prefix,
        }
    }

    pub fn with_cap(mut self, cap: u64) -> Self {
        self.cap = cap;
        self
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn network_arc(&self) -> Arc<Network> {
        self.net.clone()
    }

    pub fn incidences(&self) -> &Incidences {
        &self.inc
    }

    fn check_counts(&self, n: &[u32]) -> Result<()> {
        if n.len() != self.net.num_routes() {
            return Err(Error::InvalidParameter(format!(
                "route count vector has {} entries for {} routes",
                n.len(),
                self.net.num_routes()
            )));
        }
        Ok(())
    }

    /// `|S(n)|`.
    pub fn s_size(&self, n: &[u32]) -> f64 {
        (0..self.net.num_routes())
            .map(|i| {
                let d = self.inc.route_range(i).len() as u64;
                binomial_f64(n[i] as u64 + d - 1, d - 1)
            })
            .product()
    }

    fn guard(&self, n: &[u32]) -> Result<()> {
        self.check_counts(n)?;
        let size = self.s_size(n);
        if size > self.cap as f64 {
            return Err(Error::ExplosionGuard {
                size,
                cap: self.cap,
            });
        }
        Ok(())
    }

    /// Visits every `m in S(n)`: routes in order with route 0 varying fastest,
    /// compositions colexicographic within each route.
    fn visit_s(&self, n: &[u32], mut f: impl FnMut(&[u32])) {
        let routes = self.net.num_routes();
        let mut m = vec![0u32; self.inc.len()];
        for i in 0..routes {
            let r = self.inc.route_range(i);
            m[r.start] = n[i];
        }
        loop {
            f(&m);
            let mut advanced = false;
            for i in 0..routes {
                let r = self.inc.route_range(i);
                if next_composition(&mut m[r.clone()]) {
                    advanced = true;
                    break;
                }
                m[r.clone()].fill(0);
                m[r.start] = n[i];
            }
            if !advanced {
                return;
            }
        }
    }

    /// All of `S(n)` in deterministic order.
    pub fn enumerate_s(&self, n: &RouteCounts) -> Result<Vec<QueueRouteCounts>> {
        self.guard(&n.0)?;
        let mut out = Vec::with_capacity(self.s_size(&n.0) as usize);
        self.visit_s(&n.0, |m| out.push(QueueRouteCounts(m.to_vec())));
        Ok(out)
    }

    /// `sum_{l <= m} ln phi_j(l)`.
    fn ln_phi_product(&self, j: usize, m: usize) -> f64 {
        if let Some(v) = self
            .ln_phi_prefix
            .read()
            .unwrap()
            .get(j)
            .and_then(|p| p.get(m))
        {
            return *v;
        }
        let mut table = self.ln_phi_prefix.write().unwrap();
        let prefix = &mut table[j];
        while prefix.len() <= m {
            let l = prefix.len();
            let next = prefix[l - 1] + self.net.capacity(j).rate(l).ln();
            prefix.push(next);
        }
        prefix[m]
    }

    /// Per-queue totals `m_j`.
    pub fn queue_totals(&self, m: &[u32]) -> Vec<u32> {
        let mut totals = vec![0u32; self.net.num_queues()];
        for (k, &(j, _)) in self.inc.pairs.iter().enumerate() {
            totals[j] += m[k];
        }
        totals
    }

    /// Log of the unnormalized closed-network weight of `m`.
    pub fn log_weight(&self, m: &[u32]) -> f64 {
        let totals = self.queue_totals(m);
        let mut w = 0.0;
        for (j, &mj) in totals.iter().enumerate() {
            w += ln_factorial(mj as u64) - self.ln_phi_product(j, mj as usize);
        }
        for (k, &mk) in m.iter().enumerate() {
            w += mk as f64 * self.ln_zeta[k] - ln_factorial(mk as u64);
        }
        w
    }

    /// `ln B_n`, memoized.
    pub fn log_bn(&self, n: &RouteCounts) -> Result<LogWeight> {
        self.log_bn_slice(&n.0)
    }

    fn log_bn_slice(&self, n: &[u32]) -> Result<LogWeight> {
        if let Some(v) = self.cache.read().unwrap().get(n) {
            return Ok(LogWeight(*v));
        }
        self.guard(n)?;
        let mut acc = LogSum::new();
        self.visit_s(n, |m| acc.add(self.log_weight(m)));
        let v = acc.ln();
        self.cache.write().unwrap().insert(n.to_vec(), v);
        Ok(LogWeight(v))
    }

    /// `Lambda_i(n) = B_{n - e_i} / B_n`, zero where `n_i = 0`.
    pub fn spinning_allocation(&self, n: &RouteCounts) -> Result<Vec<f64>> {
        self.allocation_slice(&n.0)
    }

    pub(crate) fn allocation_slice(&self, n: &[u32]) -> Result<Vec<f64>> {
        if let Some(v) = self.alloc_cache.read().unwrap().get(n) {
            return Ok(v.clone());
        }
        self.check_counts(n)?;
        let base = self.log_bn_slice(n)?.ln();
        let mut down = n.to_vec();
        let rates = (0..n.len())
            .map(|i| {
                if n[i] == 0 {
                    return Ok(0.0);
                }
                down[i] -= 1;
                let lower = self.log_bn_slice(&down);
                down[i] += 1;
                Ok((lower?.ln() - base).exp())
            })
            .collect::<Result<Vec<f64>>>()?;
        self.alloc_cache
            .write()
            .unwrap()
            .insert(n.to_vec(), rates.clone());
        Ok(rates)
    }

    /// Traversal rate of a single route-`i` packet in the closed network.
    pub fn theoretical_throughput(&self, n: &RouteCounts, i: usize) -> Result<f64> {
        self.check_counts(&n.0)?;
        if n.0[i] == 0 {
            return Err(Error::ZeroCount(self.net.route(i).id.clone()));
        }
        Ok(self.spinning_allocation(n)?[i] / n.0[i] as f64)
    }

    /// Stationary law of `M` in the closed network with population `n`.
    pub fn closed_pmf(&self, n: &RouteCounts) -> Result<Vec<(QueueRouteCounts, f64)>> {
        let lbn = self.log_bn(n)?.ln();
        let mut out = Vec::new();
        self.visit_s(&n.0, |m| {
            out.push((
                QueueRouteCounts(m.to_vec()),
                (self.log_weight(m) - lbn).exp(),
            ))
        });
        Ok(out)
    }

    /// `ln B_j` at an explicit packet load, summing from the empty term.
    fn log_bj_at_load(&self, j: usize, load: f64, tol: f64) -> Result<f64> {
        let profile = self.net.capacity(j);
        if load == 0.0 {
            return Ok(0.0);
        }
        let ln_load = load.ln();
        let cap = profile.cap();
        let ratio_at = |m: usize| load / profile.rate(m);
        if profile.tail == TailRule::Constant && ratio_at(cap) >= 1.0 {
            return Err(Error::UnstableNetwork {
                queue: self.net.queue_ids()[j].clone(),
                ratio: ratio_at(cap),
            });
        }
        let mut acc = LogSum::new();
        acc.add(0.0);
        let mut term = 0.0;
        let mut m = 0usize;
        loop {
            m += 1;
            term += ln_load - profile.rate(m).ln();
            acc.add(term);
            if m < cap {
                continue;
            }
            let r = ratio_at(m + 1);
            if r >= 1.0 {
                // Only reachable for a proportional tail still below its turning point.
                continue;
            }
            // Terms past m are bounded by a geometric series of ratio r (exact
            // for a constant tail, where the ratio no longer changes).
            let ln_rest = term + (r / (1.0 - r)).ln();
            if profile.tail == TailRule::Constant || ln_rest - acc.ln() < tol.ln() {
                acc.add(ln_rest);
                return Ok(acc.ln());
            }
        }
    }

    /// `B_j = sum_{m >= 0} prod_{l <= m} load_j / phi_j(l)`.
    pub fn compute_bj(&self, j: usize, tol: f64) -> Result<f64> {
        Ok(self.log_bj_at_load(j, self.net.queue_load(j), tol)?.exp())
    }

    /// `ln B = sum_j ln B_j` for explicit per-route `rho`.
    pub fn log_b_with_rho(&self, rho: &[f64], tol: f64) -> Result<f64> {
        let mut total = 0.0;
        for j in 0..self.net.num_queues() {
            let load: f64 = (0..self.net.num_routes())
                .map(|i| self.net.zeta_idx(j, i) as f64 * rho[i])
                .sum();
            total += self.log_bj_at_load(j, load, tol)?;
        }
        Ok(total)
    }

    pub fn log_b(&self, tol: f64) -> Result<f64> {
        let rho: Vec<f64> = (0..self.net.num_routes())
            .map(|i| self.net.rho(i))
            .collect();
        self.log_b_with_rho(&rho, tol)
    }

    /// `P(N = n) = B_n prod_i rho_i^n_i / B` for every `n` in the box
    /// `0 <= n_i <= box_max[i]`, rows in lexicographic order of `n`.
    pub fn open_n_pmf(&self, box_max: &[u32]) -> Result<OpenPmf> {
        self.check_counts(box_max)?;
        self.net.require_stable()?;
        let ln_rho: Vec<f64> = (0..self.net.num_routes())
            .map(|i| self.net.rho(i).ln())
            .collect();
        let log_b = self.log_b(DEFAULT_SERIES_TOL)?;
        let mut rows = Vec::new();
        let mut n = vec![0u32; box_max.len()];
        let mut mass = 0.0;
        loop {
            let lbn = self.log_bn_slice(&n)?.ln();
            let ln_p = lbn - log_b
                + n.iter()
                    .zip(&ln_rho)
                    .map(|(&k, lr)| k as f64 * lr)
                    .sum::<f64>();
            let p = ln_p.exp();
            mass += p;
            rows.push(PmfRow {
                n: RouteCounts(n.clone()),
                log_bn: lbn,
                probability: p,
            });
            // Odometer with the last route fastest.
            let mut pos = n.len();
            loop {
                if pos == 0 {
                    let tail_mass = (1.0 - mass).max(0.0);
                    return Ok(OpenPmf {
                        rows,
                        tail_mass,
                        log_b,
                    });
                }
                pos -= 1;
                if n[pos] < box_max[pos] {
                    n[pos] += 1;
                    break;
                }
                n[pos] = 0;
            }
        }
    }

    /// Stationary probability of an integer flow-level state.
    pub fn flow_level_pmf(&self, y: &FlowState, sizes: &[DiscreteSizeLaw]) -> Result<f64> {
        let routes = self.net.num_routes();
        if y.num_routes() != routes || sizes.len() != routes {
            return Err(Error::InvalidParameter(
                "flow state and size laws must cover every route".into(),
            ));
        }
        let nu = self.net.arrival_rates();
        let rho: Vec<f64> = sizes.iter().zip(nu).map(|(s, v)| v * s.mean()).collect();
        let n = y.counts();
        let mut ln_p = self.log_bn(&n)?.ln() - self.log_b_with_rho(&rho, DEFAULT_SERIES_TOL)?;
        for i in 0..routes {
            let residuals = y.route(i);
            ln_p += ln_factorial(residuals.len() as u64);
            let mut run = 0u64;
            for (k, &r) in residuals.iter().enumerate() {
                if !(r >= 1.0 && r.fract() == 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "residual {r} is not a positive integer"
                    )));
                }
                ln_p += (nu[i] * sizes[i].tail(r as u64)).ln();
                run += 1;
                if k + 1 == residuals.len() || residuals[k + 1] != r {
                    ln_p -= ln_factorial(run);
                    run = 0;
                }
            }
        }
        Ok(ln_p.exp())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmfRow {
    pub n: RouteCounts,
    pub log_bn: f64,
    pub probability: f64,
}

/// Box-truncated stationary law of `N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenPmf {
    pub rows: Vec<PmfRow>,
    /// `1 - sum of rows`, clamped at zero.
    pub tail_mass: f64,
    pub log_b: f64,
}

impl OpenPmf {
    pub fn probability(&self, n: &[u32]) -> f64 {
        self.rows
            .iter()
            .find(|r| r.n.0 == n)
            .map_or(0.0, |r| r.probability)
    }

    pub fn total(&self) -> f64 {
        self.rows.iter().map(|r| r.probability).sum()
    }

    /// Per-route box cap covering the given quantile of each route marginal.
    pub fn marginal_quantile_box(&self, q: f64) -> Vec<u32> {
        let routes = self.rows.first().map_or(0, |r| r.n.0.len());
        (0..routes)
            .map(|i| {
                let mut marginal: Vec<f64> = Vec::new();
                for row in &self.rows {
                    let k = row.n.0[i] as usize;
                    if marginal.len() <= k {
                        marginal.resize(k + 1, 0.0);
                    }
                    marginal[k] += row.probability;
                }
                let mut acc = 0.0;
                for (k, p) in marginal.iter().enumerate() {
                    acc += p;
                    if acc >= q {
                        return k as u32;
                    }
                }
                marginal.len().saturating_sub(1) as u32
            })
            .collect()
    }
}

/// `ln B_n` for a network, without keeping the engine.
pub fn log_bn(net: &Network, n: &RouteCounts) -> Result<LogWeight> {
    ProductForm::new(net.clone()).log_bn(n)
}

pub fn spinning_allocation(net: &Network, n: &RouteCounts) -> Result<Vec<f64>> {
    ProductForm::new(net.clone()).spinning_allocation(n)
}

pub fn compute_bj(net: &Network, j: usize, tol: f64) -> Result<f64> {
    ProductForm::new(net.clone()).compute_bj(j, tol)
}
