//! Document-size laws.
//!
//! [`SizeLaw`] covers the continuous sizes of the flow-level model,
//! [`DiscreteSizeLaw`] the packet counts of the packet-level model, and
//! [`EquilibriumLaw`] the stationary residual-size law `mu * int_0^y P(X >= z) dz`
//! (or its discrete sum form) of either.
//!
//! Every sampler is an inverse-CDF transform of explicit uniforms, so the
//! same uniforms drive coupled draws across laws and scales.

use rand::RngCore;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};

use crate::error::{Error, Result};
use crate::rng::open01;

const BISECTION_TOL: f64 = 1e-12;

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn std_normal_quantile(p: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

/// Continuous (or, for `Deterministic`, atomic) size distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum SizeLaw {
    Exponential {
        rate: f64,
    },
    Uniform {
        low: f64,
        high: f64,
    },
    /// Pareto with `P(X >= z) = (scale / z)^shape` for `z >= scale`; needs `shape > 1`.
    Pareto {
        shape: f64,
        scale: f64,
    },
    Hyperexponential {
        weights: Vec<f64>,
        rates: Vec<f64>,
    },
    /// `exp(N(mu, sigma^2))`.
    Lognormal {
        mu: f64,
        sigma: f64,
    },
    /// Point mass. Rejected by the flow-level simulator.
    Deterministic {
        value: f64,
    },
}

impl SizeLaw {
    pub fn exponential_with_mean(mean: f64) -> SizeLaw {
        SizeLaw::Exponential { rate: 1.0 / mean }
    }

    pub fn uniform_with_mean(mean: f64) -> SizeLaw {
        SizeLaw::Uniform {
            low: 0.0,
            high: 2.0 * mean,
        }
    }

    pub fn pareto_with_mean(shape: f64, mean: f64) -> SizeLaw {
        SizeLaw::Pareto {
            shape,
            scale: mean * (shape - 1.0) / shape,
        }
    }

    pub fn lognormal_with_mean(sigma: f64, mean: f64) -> SizeLaw {
        SizeLaw::Lognormal {
            mu: mean.ln() - 0.5 * sigma * sigma,
            sigma,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SizeLaw::Exponential { .. } => "exponential",
            SizeLaw::Uniform { .. } => "uniform",
            SizeLaw::Pareto { .. } => "pareto",
            SizeLaw::Hyperexponential { .. } => "hyperexponential",
            SizeLaw::Lognormal { .. } => "lognormal",
            SizeLaw::Deterministic { .. } => "deterministic",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        match self {
            SizeLaw::Exponential { rate } if !(rate.is_finite() && *rate > 0.0) => {
                bad(format!("exponential rate {rate}"))
            }
            SizeLaw::Uniform { low, high } if !(*low >= 0.0 && high > low && high.is_finite()) => {
                bad(format!("uniform bounds [{low}, {high}]"))
            }
            SizeLaw::Pareto { shape, scale }
                if !(*shape > 1.0 && *scale > 0.0 && scale.is_finite()) =>
            {
                bad(format!(
                    "pareto shape {shape}, scale {scale} (finite mean needs shape > 1)"
                ))
            }
            SizeLaw::Hyperexponential { weights, rates } => {
                let sum: f64 = weights.iter().sum();
                if weights.is_empty()
                    || weights.len() != rates.len()
                    || weights.iter().any(|w| !(*w >= 0.0))
                    || rates.iter().any(|r| !(r.is_finite() && *r > 0.0))
                    || (sum - 1.0).abs() > 1e-9
                {
                    bad(format!(
                        "hyperexponential weights {weights:?}, rates {rates:?}"
                    ))
                } else {
                    Ok(())
                }
            }
            SizeLaw::Lognormal { mu, sigma }
                if !(mu.is_finite() && *sigma > 0.0 && sigma.is_finite()) =>
            {
                bad(format!("lognormal mu {mu}, sigma {sigma}"))
            }
            SizeLaw::Deterministic { value } if !(value.is_finite() && *value > 0.0) => {
                bad(format!("deterministic value {value}"))
            }
            _ => Ok(()),
        }
    }

    /// True when the law has an atom (`P(X = x) > 0` for some `x`).
    pub fn is_atomic(&self) -> bool {
        matches!(self, SizeLaw::Deterministic { .. })
    }

    pub fn mean(&self) -> f64 {
        match self {
            SizeLaw::Exponential { rate } => 1.0 / rate,
            SizeLaw::Uniform { low, high } => 0.5 * (low + high),
            SizeLaw::Pareto { shape, scale } => scale * shape / (shape - 1.0),
            SizeLaw::Hyperexponential { weights, rates } => {
                weights.iter().zip(rates).map(|(w, r)| w / r).sum()
            }
            SizeLaw::Lognormal { mu, sigma } => (mu + 0.5 * sigma * sigma).exp(),
            SizeLaw::Deterministic { value } => *value,
        }
    }

    /// `P(X <= x)`.
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        match self {
            SizeLaw::Exponential { rate } => -(-rate * x).exp_m1(),
            SizeLaw::Uniform { low, high } => ((x - low) / (high - low)).clamp(0.0, 1.0),
            SizeLaw::Pareto { shape, scale } => {
                if x < *scale {
                    0.0
                } else {
                    1.0 - (scale / x).powf(*shape)
                }
            }
            SizeLaw::Hyperexponential { weights, rates } => weights
                .iter()
                .zip(rates)
                .map(|(w, r)| -w * (-r * x).exp_m1())
                .sum(),
            SizeLaw::Lognormal { mu, sigma } => std_normal_cdf((x.ln() - mu) / sigma),
            SizeLaw::Deterministic { value } => (x >= *value) as u8 as f64,
        }
    }

    /// `P(X >= z)`.
    pub fn tail(&self, z: f64) -> f64 {
        match self {
            SizeLaw::Deterministic { value } => (z <= *value) as u8 as f64,
            _ if z <= 0.0 => 1.0,
            SizeLaw::Exponential { rate } => (-rate * z).exp(),
            SizeLaw::Pareto { shape, scale } => {
                if z <= *scale {
                    1.0
                } else {
                    (scale / z).powf(*shape)
                }
            }
            SizeLaw::Lognormal { mu, sigma } => std_normal_cdf(-(z.ln() - mu) / sigma),
            _ => 1.0 - self.cdf(z),
        }
    }

    /// `int_0^x P(X >= z) dz = E[min(X, x)]`.
    pub fn integrated_tail(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        match self {
            SizeLaw::Exponential { rate } => -(-rate * x).exp_m1() / rate,
            SizeLaw::Uniform { low, high } => {
                if x <= *low {
                    x
                } else if x >= *high {
                    0.5 * (low + high)
                } else {
                    let d = x - low;
                    low + d - d * d / (2.0 * (high - low))
                }
            }
            SizeLaw::Pareto { shape, scale } => {
                if x <= *scale {
                    x
                } else {
                    scale + scale / (shape - 1.0) * (1.0 - (scale / x).powf(shape - 1.0))
                }
            }
            SizeLaw::Hyperexponential { weights, rates } => weights
                .iter()
                .zip(rates)
                .map(|(w, r)| -w * (-r * x).exp_m1() / r)
                .sum(),
            SizeLaw::Lognormal { mu, sigma } => {
                let lx = x.ln();
                self.mean() * std_normal_cdf((lx - mu - sigma * sigma) / sigma)
                    + x * std_normal_cdf(-(lx - mu) / sigma)
            }
            SizeLaw::Deterministic { value } => x.min(*value),
        }
    }

    /// Inverse CDF.
    pub fn quantile(&self, u: f64) -> f64 {
        match self {
            SizeLaw::Exponential { rate } => -(-u).ln_1p() / rate,
            SizeLaw::Uniform { low, high } => low + u * (high - low),
            SizeLaw::Pareto { shape, scale } => scale * (-(-u).ln_1p() / shape).exp(),
            SizeLaw::Lognormal { mu, sigma } => (mu + sigma * std_normal_quantile(u)).exp(),
            SizeLaw::Deterministic { value } => *value,
            SizeLaw::Hyperexponential { .. } => invert_increasing(|x| self.cdf(x), u, self.mean()),
        }
    }

    pub fn sample_with_uniform(&self, u: f64) -> f64 {
        self.quantile(u)
    }

    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(open01(rng))
    }

    pub fn equilibrium(&self) -> EquilibriumLaw {
        EquilibriumLaw::Continuous(self.clone())
    }

    /// Packet-count law at scale `c`.
    pub fn discretize(&self, c: u32) -> DiscreteSizeLaw {
        DiscreteSizeLaw::Discretized {
            base: Box::new(self.clone()),
            c,
        }
    }
}

/// Solves `f(x) = u` for a continuous non-decreasing `f` on `[0, inf)` by
/// bracketing then bisection.
fn invert_increasing(f: impl Fn(f64) -> f64, u: f64, scale_hint: f64) -> f64 {
    let mut lo = 0.0;
    let mut hi = scale_hint.max(f64::MIN_POSITIVE);
    while f(hi) < u {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return f64::MAX;
        }
    }
    while hi - lo > BISECTION_TOL * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if f(mid) < u {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Integer-valued size law on `{1, 2, ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum DiscreteSizeLaw {
    /// `P(X = k) = (1 - p)^(k - 1) p`.
    Geometric { p: f64 },
    /// Uniform on `{low, ..., high}`.
    DiscreteUniform { low: u64, high: u64 },
    /// `K = max(1, floor(cX) + Bernoulli(frac(cX)))` with `X` drawn from `base`.
    Discretized { base: Box<SizeLaw>, c: u32 },
}

/// Effect of the `max(1, .)` correction in [`DiscreteSizeLaw::Discretized`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundingBias {
    /// `E[K] - c E[X]`.
    pub exact: f64,
    /// `P(X <= 1/c)`, an upper bound on `exact`.
    pub bound: f64,
}

impl DiscreteSizeLaw {
    pub fn geometric_with_mean(mean: f64) -> DiscreteSizeLaw {
        DiscreteSizeLaw::Geometric { p: 1.0 / mean }
    }

    pub fn name(&self) -> String {
        match self {
            DiscreteSizeLaw::Geometric { .. } => "geometric".into(),
            DiscreteSizeLaw::DiscreteUniform { .. } => "discrete_uniform".into(),
            DiscreteSizeLaw::Discretized { base, c } => format!("discretized_{}_c{c}", base.name()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DiscreteSizeLaw::Geometric { p } if !(*p > 0.0 && *p <= 1.0) => {
                Err(Error::InvalidParameter(format!("geometric p = {p}")))
            }
            DiscreteSizeLaw::DiscreteUniform { low, high } if !(*low >= 1 && high >= low) => Err(
                Error::InvalidParameter(format!("discrete uniform {{{low}..{high}}}")),
            ),
            DiscreteSizeLaw::Discretized { c, .. } if *c == 0 => Err(Error::InvalidParameter(
                "discretization scale c must be >= 1".into(),
            )),
            DiscreteSizeLaw::Discretized { base, .. } => base.validate(),
            _ => Ok(()),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            DiscreteSizeLaw::Geometric { p } => 1.0 / p,
            DiscreteSizeLaw::DiscreteUniform { low, high } => 0.5 * (*low + *high) as f64,
            DiscreteSizeLaw::Discretized { base, c } => {
                let c = *c as f64;
                1.0 + c * (base.mean() - base.integrated_tail(1.0 / c))
            }
        }
    }

    /// `P(K >= z)`.
    pub fn tail(&self, z: u64) -> f64 {
        if z <= 1 {
            return 1.0;
        }
        match self {
            DiscreteSizeLaw::Geometric { p } => ((z - 1) as f64 * (-p).ln_1p()).exp(),
            DiscreteSizeLaw::DiscreteUniform { low, high } => {
                if z <= *low {
                    1.0
                } else if z > *high {
                    0.0
                } else {
                    (high - z + 1) as f64 / (high - low + 1) as f64
                }
            }
            DiscreteSizeLaw::Discretized { base, c } => {
                let c = *c as f64;
                (c * (base.integrated_tail(z as f64 / c)
                    - base.integrated_tail((z - 1) as f64 / c)))
                .clamp(0.0, 1.0)
            }
        }
    }

    pub fn pmf(&self, k: u64) -> f64 {
        if k == 0 {
            return 0.0;
        }
        self.tail(k) - self.tail(k + 1)
    }

    /// Draw from `(u, v)`: `u` picks the base quantile, `v` the randomized
    /// rounding of a discretized law (ignored by the other kinds).
    pub fn sample_with_uniforms(&self, u: f64, v: f64) -> u64 {
        match self {
            DiscreteSizeLaw::Geometric { p } => {
                if *p >= 1.0 {
                    return 1;
                }
                let k = ((-u).ln_1p() / (-p).ln_1p()).ceil();
                if k.is_finite() {
                    (k as u64).max(1)
                } else {
                    u64::MAX
                }
            }
            DiscreteSizeLaw::DiscreteUniform { low, high } => {
                let span = high - low + 1;
                low + ((u * span as f64) as u64).min(span - 1)
            }
            DiscreteSizeLaw::Discretized { base, c } => {
                round_scaled(base.quantile(u) * *c as f64, v)
            }
        }
    }

    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> u64 {
        let u = open01(rng);
        let v = open01(rng);
        self.sample_with_uniforms(u, v)
    }

    /// Bias introduced by `max(1, .)`; zero for the non-discretized kinds.
    pub fn rounding_bias(&self) -> RoundingBias {
        match self {
            DiscreteSizeLaw::Discretized { base, c } => {
                let cf = *c as f64;
                RoundingBias {
                    exact: 1.0 - cf * base.integrated_tail(1.0 / cf),
                    bound: base.cdf(1.0 / cf),
                }
            }
            _ => RoundingBias {
                exact: 0.0,
                bound: 0.0,
            },
        }
    }

    /// `sum_{z=1}^{y} P(K >= z)`.
    fn partial_tail_sum(&self, y: u64) -> f64 {
        if y == 0 {
            return 0.0;
        }
        match self {
            DiscreteSizeLaw::Geometric { p } => -((y as f64) * (-p).ln_1p()).exp_m1() / p,
            DiscreteSizeLaw::DiscreteUniform { .. } => (1..=y).map(|z| self.tail(z)).sum(),
            DiscreteSizeLaw::Discretized { base, c } => {
                let cf = *c as f64;
                1.0 + cf * (base.integrated_tail(y as f64 / cf) - base.integrated_tail(1.0 / cf))
            }
        }
    }

    pub fn equilibrium(&self) -> EquilibriumLaw {
        EquilibriumLaw::Discrete(self.clone())
    }
}

/// `max(1, floor(x) + 1{v < frac(x)})`.
pub fn round_scaled(x: f64, v: f64) -> u64 {
    let fl = x.floor();
    let k = fl as u64 + (v < x - fl) as u64;
    k.max(1)
}

/// Stationary residual-size law of a size law.
#[derive(Debug, Clone, PartialEq)]
pub enum EquilibriumLaw {
    Continuous(SizeLaw),
    Discrete(DiscreteSizeLaw),
}

impl EquilibriumLaw {
    /// `P(Xbar <= y)`; for a discrete base, `y` is floored.
    pub fn cdf(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        match self {
            EquilibriumLaw::Continuous(base) => (base.integrated_tail(y) / base.mean()).min(1.0),
            EquilibriumLaw::Discrete(base) => {
                let y = y.floor();
                if y >= u64::MAX as f64 {
                    return 1.0;
                }
                (base.partial_tail_sum(y as u64) / base.mean()).min(1.0)
            }
        }
    }

    pub fn quantile(&self, u: f64) -> f64 {
        match self {
            EquilibriumLaw::Continuous(base @ SizeLaw::Exponential { .. }) => base.quantile(u),
            EquilibriumLaw::Continuous(SizeLaw::Deterministic { value }) => u * value,
            EquilibriumLaw::Continuous(base) => invert_increasing(|y| self.cdf(y), u, base.mean()),
            EquilibriumLaw::Discrete(base) => {
                let mut hi: u64 = base.mean().ceil().max(1.0) as u64;
                while self.cdf(hi as f64) < u {
                    hi = hi.saturating_mul(2);
                }
                let mut lo = 0u64;
                while hi - lo > 1 {
                    let mid = lo + (hi - lo) / 2;
                    if self.cdf(mid as f64) < u {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                hi as f64
            }
        }
    }

    pub fn sample_with_uniform(&self, u: f64) -> f64 {
        self.quantile(u)
    }

    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(open01(rng))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    /// Adaptive Simpson quadrature, test oracle only.
    fn quad(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        fn simpson(f: &impl Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
            let m = 0.5 * (a + b);
            let fm = f(m);
            (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
        }
        #[allow(clippy::too_many_arguments)]
        fn rec(
            f: &impl Fn(f64) -> f64,
            a: f64,
            fa: f64,
            b: f64,
            fb: f64,
            m: f64,
            fm: f64,
            whole: f64,
            tol: f64,
            depth: u32,
        ) -> f64 {
            let (lm, flm, left) = simpson(f, a, fa, m, fm);
            let (rm, frm, right) = simpson(f, m, fm, b, fb);
            let delta = left + right - whole;
            if depth == 0 || delta.abs() <= 15.0 * tol {
                return left + right + delta / 15.0;
            }
            rec(f, a, fa, m, fm, lm, flm, left, tol / 2.0, depth - 1)
                + rec(f, m, fm, b, fb, rm, frm, right, tol / 2.0, depth - 1)
        }
        let (fa, fb) = (f(a), f(b));
        let (m, fm, whole) = simpson(f, a, fa, b, fb);
        rec(f, a, fa, b, fb, m, fm, whole, tol, 50)
    }

    fn laws() -> Vec<SizeLaw> {
        vec![
            SizeLaw::Exponential { rate: 2.0 },
            SizeLaw::Uniform {
                low: 0.0,
                high: 2.0,
            },
            SizeLaw::Uniform {
                low: 0.5,
                high: 1.5,
            },
            SizeLaw::pareto_with_mean(3.0, 1.0),
            SizeLaw::Hyperexponential {
                weights: vec![0.3, 0.7],
                rates: vec![0.5, 3.0],
            },
            SizeLaw::lognormal_with_mean(0.8, 1.0),
        ]
    }

    #[test]
    fn analytic_means() {
        assert_eq!(SizeLaw::Exponential { rate: 2.0 }.mean(), 0.5);
        assert_eq!(
            SizeLaw::Uniform {
                low: 0.0,
                high: 2.0
            }
            .mean(),
            1.0
        );
        let p = SizeLaw::pareto_with_mean(3.0, 1.0);
        assert!((p.mean() - 1.0).abs() < 1e-15);
        assert_eq!(
            p,
            SizeLaw::Pareto {
                shape: 3.0,
                scale: 2.0 / 3.0
            }
        );
    }

    #[test]
    fn tails() {
        assert_eq!(SizeLaw::Exponential { rate: 1.0 }.tail(0.0), 1.0);
        assert_eq!(
            SizeLaw::Uniform {
                low: 0.0,
                high: 2.0
            }
            .tail(1.0),
            0.5
        );
        let g = DiscreteSizeLaw::Geometric { p: 0.3 };
        for z in 1..20u64 {
            // summation oracle: P(X >= z) = sum_{k >= z} (1-p)^(k-1) p
            let oracle: f64 = (z..400).map(|k| 0.7f64.powi(k as i32 - 1) * 0.3).sum();
            assert!((g.tail(z) - oracle).abs() < 1e-12);
            assert!((g.tail(z) - 0.7f64.powi(z as i32 - 1)).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_equals_integral_of_tail() {
        for law in laws() {
            // Integrate on [0, hi] then add the analytic remainder bound, which
            // is below 1e-9 for these ranges.
            let hi = law.quantile(1.0 - 1e-13).min(1e4);
            // Unit pieces keep the adaptive rule from skipping features.
            let pieces = hi.ceil() as usize;
            let total: f64 = (0..pieces)
                .map(|k| {
                    let a = hi * k as f64 / pieces as f64;
                    let b = hi * (k + 1) as f64 / pieces as f64;
                    quad(&|z| law.tail(z), a, b, 1e-12)
                })
                .sum();
            let remainder = law.mean() - law.integrated_tail(hi);
            assert!(remainder >= -1e-12);
            let rel = (total + remainder - law.mean()).abs() / law.mean();
            assert!(rel < 1e-6, "{law:?}: {rel}");
            assert!(
                (law.integrated_tail(hi) - total).abs() / law.mean() < 1e-6,
                "{law:?}"
            );
        }
    }

    #[test]
    fn quantiles_invert_cdf() {
        assert!(
            (SizeLaw::Exponential { rate: 1.0 }.sample_with_uniform(1.0 - (-1.0f64).exp()) - 1.0)
                .abs()
                < 1e-12
        );
        assert_eq!(
            SizeLaw::Uniform {
                low: 0.0,
                high: 2.0
            }
            .sample_with_uniform(0.25),
            0.5
        );
        for law in laws() {
            for u in [0.01, 0.2, 0.5, 0.77, 0.999] {
                let x = law.quantile(u);
                assert!((law.cdf(x) - u).abs() < 1e-9, "{law:?} u={u}");
            }
        }
    }

    #[test]
    fn exponential_is_its_own_equilibrium() {
        for rate in [0.5, 1.0, 3.0] {
            let law = SizeLaw::Exponential { rate };
            let eq = law.equilibrium();
            for k in 0..200 {
                let y = k as f64 * 0.05;
                assert!((eq.cdf(y) - law.cdf(y)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn uniform_equilibrium_closed_form() {
        let mu = 0.8;
        let eq = SizeLaw::Uniform {
            low: 0.0,
            high: 2.0 / mu,
        }
        .equilibrium();
        for k in 0..=50 {
            let y = k as f64 / 50.0 * 2.0 / mu;
            let expect = mu * y - mu * mu * y * y / 4.0;
            assert!((eq.cdf(y) - expect).abs() < 1e-12);
        }
        let u = 0.37;
        assert!((eq.cdf(eq.quantile(u)) - u).abs() < 1e-10);
    }

    #[test]
    fn geometric_is_its_own_discrete_equilibrium() {
        let g = DiscreteSizeLaw::Geometric { p: 0.25 };
        let eq = g.equilibrium();
        for y in 0..40u64 {
            let cdf = 1.0 - g.tail(y + 1);
            assert!((eq.cdf(y as f64) - cdf).abs() < 1e-12);
        }
        assert_eq!(eq.quantile(1.0 - 0.75f64.powi(3)), 3.0);
    }

    #[test]
    fn randomized_rounding_arithmetic() {
        // X = 1.7, c = 10: cX = 17 exactly up to rounding; use 1.75 for a clean fraction.
        assert_eq!(round_scaled(17.0, 0.3), 17);
        assert_eq!(round_scaled(17.5, 0.49), 18);
        assert_eq!(round_scaled(17.5, 0.51), 17);
        assert_eq!(round_scaled(0.2, 0.9), 1);
        // P(K = 18) = 0.7 for cX = 17.7.
        let hits = (0..10_000)
            .filter(|k| round_scaled(17.7, (*k as f64 + 0.5) / 10_000.0) == 18)
            .count();
        assert_eq!(hits, 7_000);
    }

    #[test]
    fn discretized_exponential_coupled_draw() {
        let law = SizeLaw::Exponential { rate: 1.0 }.discretize(10);
        let u = 0.6;
        let x = 10.0 * -(1.0f64 - u).ln();
        for v in [0.1, 0.5, 0.9] {
            assert_eq!(law.sample_with_uniforms(u, v), round_scaled(x, v));
        }
    }

    #[test]
    fn discretized_bias_report() {
        let law = SizeLaw::Exponential { rate: 1.0 }.discretize(1000);
        let bias = law.rounding_bias();
        let cdf = -(-1e-3f64).exp_m1();
        assert!((bias.bound - cdf).abs() < 1e-15);
        assert!(bias.exact >= 0.0 && bias.exact <= bias.bound);
        assert!((law.mean() - (1000.0 + bias.exact)).abs() < 1e-9);
        assert!((bias.exact - 5e-4).abs() < 1e-6);
    }

    #[test]
    fn discretized_tail_and_pmf_are_consistent() {
        for base in laws() {
            let law = base.discretize(7);
            let total: f64 = (1..20_000u64).map(|k| law.pmf(k)).sum();
            assert!((total - 1.0).abs() < 1e-6, "{base:?}: {total}");
            let mean: f64 = (1..20_000u64).map(|z| law.tail(z)).sum();
            assert!((mean - law.mean()).abs() / law.mean() < 1e-4, "{base:?}");
        }
    }

    #[test]
    fn discretized_mean_monte_carlo() {
        let mut rng = stream(11, 0);
        for base in [
            SizeLaw::Exponential { rate: 1.0 },
            SizeLaw::pareto_with_mean(3.0, 1.0),
        ] {
            let law = base.discretize(10);
            let n = 200_000;
            let draws: Vec<f64> = (0..n).map(|_| law.sample(&mut rng) as f64).collect();
            let mean = draws.iter().sum::<f64>() / n as f64;
            let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = (var / n as f64).sqrt();
            let expect = 10.0 * base.mean() + law.rounding_bias().exact;
            assert!(
                (mean - expect).abs() < 3.0 * se + 1e-9,
                "{base:?}: {mean} vs {expect} (se {se})"
            );
        }
    }

    #[test]
    fn scaled_discretization_converges_in_cdf() {
        let base = SizeLaw::Exponential { rate: 1.0 };
        let law = base.discretize(1000);
        let mut rng = stream(5, 3);
        let mut draws: Vec<f64> = (0..100_000)
            .map(|_| law.sample(&mut rng) as f64 / 1000.0)
            .collect();
        draws.sort_by(f64::total_cmp);
        let mut gap: f64 = 0.0;
        for (k, x) in draws.iter().enumerate() {
            let emp_hi = (k + 1) as f64 / draws.len() as f64;
            let emp_lo = k as f64 / draws.len() as f64;
            gap = gap
                .max((emp_hi - base.cdf(*x)).abs())
                .max((emp_lo - base.cdf(*x)).abs());
        }
        assert!(gap < 0.01, "{gap}");
    }

    #[test]
    fn equilibrium_quantile_round_trip() {
        for law in laws() {
            let eq = law.equilibrium();
            for u in [0.05, 0.5, 0.95] {
                let y = eq.quantile(u);
                assert!((eq.cdf(y) - u).abs() < 1e-9, "{law:?}");
            }
        }
    }

    #[test]
    fn serde_shape() {
        let law: SizeLaw =
            serde_json::from_str(r#"{"kind": "pareto", "params": {"shape": 3.0, "scale": 0.5}}"#)
                .unwrap();
        assert_eq!(
            law,
            SizeLaw::Pareto {
                shape: 3.0,
                scale: 0.5
            }
        );
        let d: DiscreteSizeLaw = serde_json::from_str(
            r#"{"kind": "discretized", "params": {"base": {"kind": "exponential", "params": {"rate": 1.0}}, "c": 10}}"#,
        )
        .unwrap();
        assert_eq!(
            d.mean(),
            SizeLaw::Exponential { rate: 1.0 }.discretize(10).mean()
        );
    }

    #[test]
    fn validation() {
        assert!(SizeLaw::Pareto {
            shape: 1.0,
            scale: 1.0
        }
        .validate()
        .is_err());
        assert!(SizeLaw::Uniform {
            low: 1.0,
            high: 1.0
        }
        .validate()
        .is_err());
        assert!(DiscreteSizeLaw::Geometric { p: 0.0 }.validate().is_err());
        assert!(SizeLaw::Deterministic { value: 1.0 }.is_atomic());
        assert!(laws()
            .iter()
            .all(|l| l.validate().is_ok() && !l.is_atomic()));
    }
}
