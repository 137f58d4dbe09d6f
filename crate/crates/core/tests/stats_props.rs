use proptest::prelude::*;
use spinlab::product_form::RouteCounts;
use spinlab::rng;
use spinlab::stats::{
    batch_means_ci, normal_quantile, time_average_pmf, tv_distance, EmpiricalPmf, Pmf,
};

fn pmf_strategy() -> impl Strategy<Value = Pmf> {
    prop::collection::btree_map(prop::collection::vec(0u32..3, 2), 0.01f64..1.0, 1..6).prop_map(
        |m| {
            let s: f64 = m.values().sum();
            m.into_iter().map(|(k, v)| (k, v / s)).collect()
        },
    )
}

fn trajectory() -> impl Strategy<Value = Vec<(f64, RouteCounts)>> {
    prop::collection::vec((0.01f64..2.0, 0u32..4, 0u32..4), 1..40).prop_map(|steps| {
        let mut t = 0.0;
        steps
            .into_iter()
            .map(|(dt, a, b)| {
                let at = t;
                t += dt;
                (at, RouteCounts(vec![a, b]))
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn tv_is_a_metric(p in pmf_strategy(), q in pmf_strategy(), r in pmf_strategy()) {
        let pq = tv_distance(&p, &q);
        prop_assert!((0.0..=1.0).contains(&pq));
        prop_assert!(tv_distance(&p, &p) < 1e-15);
        prop_assert!((pq - tv_distance(&q, &p)).abs() < 1e-15);
        prop_assert!(pq <= tv_distance(&p, &r) + tv_distance(&r, &q) + 1e-12);
    }

    /// Splitting a trajectory at any time and merging the two halves gives
    /// the same occupancy law as processing it whole.
    #[test]
    fn rechunking_is_invariant(traj in trajectory(), cut in 0.0f64..1.0, burn in 0.0f64..0.3) {
        let end = traj.last().unwrap().0 + 1.0;
        let burn_in = burn * end;
        let whole = time_average_pmf(&traj, end, burn_in, Some(&[2, 2])).unwrap();
        let split = burn_in + cut * (end - burn_in);
        let head: Vec<_> = traj.iter().filter(|(t, _)| *t < split).cloned().collect();
        let mut left = time_average_pmf(&head, split, burn_in, Some(&[2, 2]));
        let right = time_average_pmf(&traj, end, split, Some(&[2, 2]));
        let mut merged = EmpiricalPmf::new(Some(vec![2, 2]));
        if let Ok(l) = left.as_mut() { merged.merge(l); }
        if let Ok(r) = right.as_ref() { merged.merge(r); }
        prop_assert!((merged.total - whole.total).abs() < 1e-9);
        prop_assert!((merged.outside_mass() - whole.outside_mass()).abs() < 1e-9);
        prop_assert!(tv_distance(&merged.normalized(), &whole.normalized()) < 1e-9);
    }

    #[test]
    fn merge_is_commutative(a in trajectory(), b in trajectory()) {
        let end_a = a.last().unwrap().0 + 1.0;
        let end_b = b.last().unwrap().0 + 1.0;
        let pa = time_average_pmf(&a, end_a, 0.0, Some(&[1, 3])).unwrap();
        let pb = time_average_pmf(&b, end_b, 0.0, Some(&[1, 3])).unwrap();
        let mut ab = pa.clone();
        ab.merge(&pb);
        let mut ba = pb.clone();
        ba.merge(&pa);
        prop_assert!((ab.total - ba.total).abs() < 1e-12);
        prop_assert!(tv_distance(&ab.normalized(), &ba.normalized()) < 1e-12);
    }
}

#[test]
fn batch_means_coverage() {
    // i.i.d. normal(3, 2^2) samples: the 95% interval should cover 3 about
    // 94-95% of the time (normal rather than t quantile with 30 batches).
    let mut rng = rng::stream(99, 0);
    let reps = 2000;
    let mut covered = 0;
    for _ in 0..reps {
        let xs: Vec<f64> = (0..600)
            .map(|_| 3.0 + 2.0 * normal_quantile(rng::open01(&mut rng)))
            .collect();
        if batch_means_ci(&xs, 30, 0.95).unwrap().contains(3.0) {
            covered += 1;
        }
    }
    let rate = covered as f64 / reps as f64;
    assert!((0.925..=0.965).contains(&rate), "coverage {rate}");
}
