//! External document arrivals, either drawn on the fly or replayed from a
//! precomputed schedule shared between simulators.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::rng::{self, SimRng};

const ARRIVAL_TAG: u64 = 0xA11;

/// One document arrival: absolute time plus the two uniforms that fix its size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arrival {
    pub time: f64,
    pub u: f64,
    pub v: f64,
}

#[derive(Debug, Clone)]
enum Source {
    Poisson {
        rates: Vec<f64>,
        rngs: Vec<SimRng>,
        next: Vec<Option<Arrival>>,
    },
    Scheduled {
        routes: Arc<Vec<Vec<Arrival>>>,
        cursor: Vec<usize>,
    },
}

#[derive(Debug, Clone)]
pub struct ArrivalFeed(Source);

fn draw(rng: &mut SimRng, rate: f64, after: f64) -> Option<Arrival> {
    if rate <= 0.0 {
        return None;
    }
    let time = after + rng::exponential(rng, rate);
    Some(Arrival {
        time,
        u: rng::open01(rng),
        v: rng::open01(rng),
    })
}

impl ArrivalFeed {
    /// Independent Poisson streams, one generator per route.
    pub fn poisson(rates: &[f64], seed: u64) -> Self {
        let mut rngs: Vec<SimRng> = (0..rates.len())
            .map(|i| rng::stream(seed, rng::stream_id(&[ARRIVAL_TAG, i as u64])))
            .collect();
        let next = rates
            .iter()
            .zip(rngs.iter_mut())
            .map(|(&r, g)| draw(g, r, 0.0))
            .collect();
        ArrivalFeed(Source::Poisson {
            rates: rates.to_vec(),
            rngs,
            next,
        })
    }

    /// Replays per-route arrival lists (each sorted by time).
    pub fn scheduled(routes: Arc<Vec<Vec<Arrival>>>) -> Self {
        let cursor = vec![0; routes.len()];
        ArrivalFeed(Source::Scheduled { routes, cursor })
    }

    pub fn num_routes(&self) -> usize {
        match &self.0 {
            Source::Poisson { rates, .. } => rates.len(),
            Source::Scheduled { routes, .. } => routes.len(),
        }
    }

    /// Time of the next route-`i` arrival, `inf` if none.
    pub fn peek(&self, i: usize) -> f64 {
        match &self.0 {
            Source::Poisson { next, .. } => next[i].map_or(f64::INFINITY, |a| a.time),
            Source::Scheduled { routes, cursor } => {
                routes[i].get(cursor[i]).map_or(f64::INFINITY, |a| a.time)
            }
        }
    }

    pub fn pop(&mut self, i: usize) -> Option<Arrival> {
        match &mut self.0 {
            Source::Poisson { rates, rngs, next } => {
                let a = next[i]?;
                next[i] = draw(&mut rngs[i], rates[i], a.time);
                Some(a)
            }
            Source::Scheduled { routes, cursor } => {
                let a = *routes[i].get(cursor[i])?;
                cursor[i] += 1;
                Some(a)
            }
        }
    }
}

/// Poisson arrivals on `[0, horizon]` for each route, one generator per route.
pub fn poisson_schedule(rates: &[f64], horizon: f64, seed: u64) -> Vec<Vec<Arrival>> {
    let mut feed = ArrivalFeed::poisson(rates, seed);
    (0..rates.len())
        .map(|i| {
            let mut out = Vec::new();
            while feed.peek(i) <= horizon {
                out.extend(feed.pop(i));
            }
            out
        })
        .collect()
}
