//! Occupancy-time pmfs, distances, and batch-means intervals.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc_inv;

use crate::error::{Error, Result};
use crate::product_form::RouteCounts;

/// Sparse pmf keyed by route counts; missing keys have mass zero.
pub type Pmf = BTreeMap<Vec<u32>, f64>;

/// Occupancy time per state inside a box, plus the time spent outside it.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EmpiricalPmf {
    pub weights: Pmf,
    pub outside: f64,
    pub total: f64,
    pub box_max: Option<Vec<u32>>,
}

impl EmpiricalPmf {
    pub fn new(box_max: Option<Vec<u32>>) -> Self {
        EmpiricalPmf {
            box_max,
            ..Default::default()
        }
    }

    fn in_box(&self, n: &[u32]) -> bool {
        self.box_max
            .as_ref()
            .is_none_or(|b| n.iter().zip(b).all(|(k, m)| k <= m))
    }

    /// Adds `dwell` time units spent in state `n`.
    pub fn add(&mut self, n: &[u32], dwell: f64) {
        if dwell <= 0.0 {
            return;
        }
        self.total += dwell;
        if self.in_box(n) {
            *self.weights.entry(n.to_vec()).or_insert(0.0) += dwell;
        } else {
            self.outside += dwell;
        }
    }

    /// Pools another estimate, as if the observation windows were concatenated.
    pub fn merge(&mut self, other: &EmpiricalPmf) {
        for (k, w) in &other.weights {
            *self.weights.entry(k.clone()).or_insert(0.0) += w;
        }
        self.outside += other.outside;
        self.total += other.total;
    }

    /// In-box probabilities; they sum to `1 - outside_mass()`.
    pub fn normalized(&self) -> Pmf {
        self.weights
            .iter()
            .map(|(k, w)| (k.clone(), w / self.total))
            .collect()
    }

    pub fn probability(&self, n: &[u32]) -> f64 {
        self.weights.get(n).map_or(0.0, |w| w / self.total)
    }

    pub fn outside_mass(&self) -> f64 {
        if self.total > 0.0 {
            self.outside / self.total
        } else {
            0.0
        }
    }
}

/// Streams a count trajectory into an [`EmpiricalPmf`], ignoring `[0, burn_in)`.
#[derive(Debug, Clone)]
pub struct OccupancyAccumulator {
    burn_in: f64,
    last: Option<(f64, Vec<u32>)>,
    pmf: EmpiricalPmf,
}

impl OccupancyAccumulator {
    pub fn new(burn_in: f64, box_max: Option<Vec<u32>>) -> Self {
        OccupancyAccumulator {
            burn_in,
            last: None,
            pmf: EmpiricalPmf::new(box_max),
        }
    }

    /// Moves the start of the observation window.
    pub fn set_burn_in(&mut self, t: f64) {
        self.burn_in = t;
    }

    /// The process entered state `n` at time `t`.
    pub fn record(&mut self, t: f64, n: &[u32]) {
        self.close(t);
        self.last = Some((t, n.to_vec()));
    }

    fn close(&mut self, t: f64) {
        if let Some((from, state)) = &self.last {
            let from = from.max(self.burn_in);
            if t > from {
                self.pmf.add(state, t - from);
            }
        }
    }

    pub fn finish(mut self, end: f64) -> Result<EmpiricalPmf> {
        self.close(end);
        if self.pmf.total <= 0.0 {
            return Err(Error::EmptyWindow);
        }
        Ok(self.pmf)
    }
}

/// Time-average pmf of a sorted trajectory whose last state lasts until `end`.
pub fn time_average_pmf(
    trajectory: &[(f64, RouteCounts)],
    end: f64,
    burn_in: f64,
    box_max: Option<&[u32]>,
) -> Result<EmpiricalPmf> {
    let mut acc = OccupancyAccumulator::new(burn_in, box_max.map(<[u32]>::to_vec));
    for (t, n) in trajectory {
        acc.record(*t, &n.0);
    }
    acc.finish(end)
}

/// `1/2 sum |p - q|`, missing keys counting as zero.
pub fn tv_distance(p: &Pmf, q: &Pmf) -> f64 {
    let mut sum = 0.0;
    for (k, a) in p {
        sum += (a - q.get(k).copied().unwrap_or(0.0)).abs();
    }
    for (k, b) in q {
        if !p.contains_key(k) {
            sum += b.abs();
        }
    }
    (0.5 * sum).min(1.0)
}

/// Total variation between two box-truncated laws, treating the mass outside
/// the box as one extra atom.
pub fn tv_truncated(p: &Pmf, p_outside: f64, q: &Pmf, q_outside: f64) -> f64 {
    (tv_distance(p, q) + 0.5 * (p_outside - q_outside).abs()).min(1.0)
}

/// `max over grid |F - G|`.
pub fn cdf_sup_distance(f: impl Fn(f64) -> f64, g: impl Fn(f64) -> f64, grid: &[f64]) -> f64 {
    grid.iter()
        .map(|&x| (f(x) - g(x)).abs())
        .fold(0.0, f64::max)
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub estimate: f64,
    pub half_width: f64,
    pub level: f64,
    pub batches: usize,
}

impl ConfidenceInterval {
    pub fn contains(&self, x: f64) -> bool {
        (x - self.estimate).abs() <= self.half_width
    }
}

/// Normal-quantile interval from per-batch estimates.
pub fn ci_from_batches(batch_means: &[f64], level: f64) -> Result<ConfidenceInterval> {
    let b = batch_means.len();
    if b < 2 {
        return Err(Error::TooFewBatches(b));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "confidence level {level} outside (0, 1)"
        )));
    }
    let mean = batch_means.iter().sum::<f64>() / b as f64;
    let var = batch_means.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (b - 1) as f64;
    let z = normal_quantile(0.5 + level / 2.0);
    Ok(ConfidenceInterval {
        estimate: mean,
        half_width: z * (var / b as f64).sqrt(),
        level,
        batches: b,
    })
}

/// Splits `samples` into `batches` equal contiguous batches (dropping the
/// remainder at the end) and applies [`ci_from_batches`].
pub fn batch_means_ci(samples: &[f64], batches: usize, level: f64) -> Result<ConfidenceInterval> {
    if batches < 2 {
        return Err(Error::TooFewBatches(batches));
    }
    let size = samples.len() / batches;
    if size == 0 {
        return Err(Error::InvalidParameter(format!(
            "{} samples cannot fill {batches} batches",
            samples.len()
        )));
    }
    let means: Vec<f64> = samples
        .chunks_exact(size)
        .take(batches)
        .map(|c| c.iter().sum::<f64>() / size as f64)
        .collect();
    ci_from_batches(&means, level)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pmf(entries: &[(&[u32], f64)]) -> Pmf {
        entries.iter().map(|(k, v)| (k.to_vec(), *v)).collect()
    }

    #[test]
    fn time_average_examples() {
        let traj = vec![(0.0, RouteCounts(vec![2, 1]))];
        let p = time_average_pmf(&traj, 10.0, 0.0, None).unwrap();
        assert_eq!(p.normalized(), pmf(&[(&[2, 1], 1.0)]));

        let traj = vec![(0.0, RouteCounts(vec![0])), (3.0, RouteCounts(vec![1]))];
        let p = time_average_pmf(&traj, 6.0, 0.0, None).unwrap();
        assert_eq!(p.normalized(), pmf(&[(&[0], 0.5), (&[1], 0.5)]));

        // Burn-in cuts into the first dwell; the box drops state 1.
        let p = time_average_pmf(&traj, 6.0, 2.0, Some(&[0])).unwrap();
        assert!((p.probability(&[0]) - 0.25).abs() < 1e-15);
        assert!((p.outside_mass() - 0.75).abs() < 1e-15);

        assert_eq!(
            time_average_pmf(&traj, 6.0, 6.0, None),
            Err(Error::EmptyWindow)
        );
    }

    #[test]
    fn tv_examples() {
        let p = pmf(&[(&[0], 0.5), (&[1], 0.5)]);
        assert_eq!(tv_distance(&p, &p), 0.0);
        assert_eq!(tv_distance(&pmf(&[(&[0], 1.0)]), &pmf(&[(&[1], 1.0)])), 1.0);
        assert!((tv_distance(&p, &pmf(&[(&[0], 0.75), (&[1], 0.25)])) - 0.25).abs() < 1e-15);
        assert!(
            (tv_truncated(&pmf(&[(&[0], 0.9)]), 0.1, &pmf(&[(&[0], 0.8)]), 0.2) - 0.1).abs()
                < 1e-15
        );
    }

    #[test]
    fn cdf_distance_examples() {
        let f = |x: f64| 1.0 - (-x).exp();
        let g = |x: f64| 1.0 - (-2.0 * x).exp();
        assert_eq!(cdf_sup_distance(f, f, &[0.1, 1.0]), 0.0);
        assert!((cdf_sup_distance(f, g, &[2f64.ln()]) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn batch_means_examples() {
        let ci = batch_means_ci(&[3.0; 100], 10, 0.95).unwrap();
        assert_eq!((ci.estimate, ci.half_width), (3.0, 0.0));
        assert_eq!(
            batch_means_ci(&[1.0; 10], 1, 0.95),
            Err(Error::TooFewBatches(1))
        );
        assert!((normal_quantile(0.975) - 1.959963984540054).abs() < 1e-12);
        assert!(normal_quantile(0.5).abs() < 1e-15);
    }
}
