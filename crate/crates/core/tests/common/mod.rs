#![allow(dead_code)]

use std::collections::BTreeMap;

use proptest::prelude::*;
use spinlab::topology::{Network, NetworkConfig, ServiceProfile, TailRule};

/// Routes as queue-index sequences plus per-queue service tables.
#[derive(Debug, Clone)]
pub struct SmallNet {
    pub queues: usize,
    pub routes: Vec<Vec<usize>>,
    pub phi: Vec<(Vec<f64>, TailRule)>,
}

impl SmallNet {
    pub fn config(&self, nu: f64) -> NetworkConfig {
        let qid = |j: usize| format!("q{j}");
        let rid = |i: usize| format!("r{i}");
        NetworkConfig {
            queues: (0..self.queues).map(qid).collect(),
            routes: self
                .routes
                .iter()
                .enumerate()
                .map(|(i, r)| (rid(i), r.iter().map(|&j| qid(j)).collect()))
                .collect(),
            nu: (0..self.routes.len()).map(|i| (rid(i), nu)).collect(),
            mean_size: (0..self.routes.len()).map(|i| (rid(i), 1.0)).collect(),
            phi: self
                .phi
                .iter()
                .enumerate()
                .map(|(j, (v, t))| {
                    (
                        qid(j),
                        ServiceProfile {
                            values: v.clone(),
                            tail: *t,
                        },
                    )
                })
                .collect(),
            discipline: BTreeMap::new(),
        }
    }

    pub fn network(&self) -> Network {
        Network::build(&self.config(0.05)).expect("generated network is valid")
    }
}

/// Up to three queues and three routes; every queue is visited.
pub fn small_net() -> impl Strategy<Value = SmallNet> {
    (1usize..=3, 1usize..=3)
        .prop_flat_map(|(queues, routes)| {
            let route = prop::collection::vec(0..queues, 1..=3);
            let profile = (
                prop::collection::vec(0.5f64..2.0, 1..=3),
                prop_oneof![Just(TailRule::Constant), Just(TailRule::Proportional)],
            );
            (
                Just(queues),
                prop::collection::vec(route, routes),
                prop::collection::vec(profile, queues),
            )
        })
        .prop_filter("every queue visited", |(q, r, _)| {
            (0..*q).all(|j| r.iter().any(|x| x.contains(&j)))
        })
        .prop_map(|(queues, routes, phi)| SmallNet {
            queues,
            routes,
            phi,
        })
}

/// Counts with total at most `max_total`, one per route of `net`.
pub fn counts_for(routes: usize, max_total: u32) -> impl Strategy<Value = Vec<u32>> {
    prop::collection::vec(0..=max_total, routes)
        .prop_filter("total bounded", move |n| n.iter().sum::<u32>() <= max_total)
}
