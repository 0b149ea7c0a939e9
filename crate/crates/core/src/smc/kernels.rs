//! Building blocks of the sampler: prior on rho, effective sample size,
//! adaptive tempering increments, systematic resampling and the reflected
//! random-walk Metropolis-Hastings kernel.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Product prior on `[0, 1]^d` with identical marginals of density
/// proportional to `exp(kappa * rho_i)`. `kappa = 0` is uniform; positive
/// values favour strong frequency correlation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhoPrior {
    pub kappa: f64,
}

impl Default for RhoPrior {
    fn default() -> Self {
        Self { kappa: 3.0 }
    }
}

impl RhoPrior {
    /// log of the normalizing constant `kappa / (e^kappa - 1)`.
    fn log_norm(&self) -> f64 {
        let k = self.kappa;
        if k.abs() < 1e-12 {
            0.0
        } else {
            (k / k.exp_m1()).ln()
        }
    }

    pub fn log_marginal(&self, v: f64) -> f64 {
        if !(0.0..=1.0).contains(&v) {
            return f64::NEG_INFINITY;
        }
        self.log_norm() + self.kappa * v
    }

    pub fn log_density(&self, rho: &[f64]) -> f64 {
        rho.iter().map(|&v| self.log_marginal(v)).sum()
    }

    /// Marginal CDF on [0, 1].
    pub fn cdf(&self, v: f64) -> f64 {
        let v = v.clamp(0.0, 1.0);
        let k = self.kappa;
        if k.abs() < 1e-12 {
            v
        } else {
            (k * v).exp_m1() / k.exp_m1()
        }
    }

    /// One component by rejection against a uniform envelope.
    pub fn sample_marginal(&self, rng: &mut Rng) -> f64 {
        let peak = self.kappa.max(0.0);
        loop {
            let v: f64 = rng.random();
            let u: f64 = rng.random();
            if u.ln() <= self.kappa * v - peak {
                return v;
            }
        }
    }

    pub fn sample(&self, rng: &mut Rng, dim: usize) -> Vec<f64> {
        (0..dim).map(|_| self.sample_marginal(rng)).collect()
    }
}

/// Sum of marginal log-densities; `-inf` outside the unit cube.
pub fn log_prior_rho(rho: &[f64], prior: &RhoPrior) -> f64 {
    prior.log_density(rho)
}

/// `(Σw)² / Σw²` computed from log-weights with max subtraction.
pub fn effective_sample_size(log_weights: &[f64]) -> f64 {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return 0.0;
    }
    let (s1, s2) = log_weights.iter().fold((0.0, 0.0), |(s1, s2), &lw| {
        let w = (lw - max).exp();
        (s1 + w, s2 + w * w)
    });
    s1 * s1 / s2
}

/// Scales log-likelihoods by an exponent, keeping `-inf` at `-inf`.
pub fn tempered(log_lik: &[f64], exponent: f64) -> Vec<f64> {
    log_lik
        .iter()
        .map(|&l| if l == f64::NEG_INFINITY { l } else { exponent * l })
        .collect()
}

pub const MIN_DELTA_ALPHA: f64 = 1e-6;

/// Tempering increment so that weights `exp(Δ·log_lik)` keep an effective
/// sample size of `ess_fraction · N`. Returns `1 - alpha` when even the full
/// step stays above target, and never less than `1e-6` (capped at `1 - alpha`).
pub fn adaptive_delta_alpha(log_lik: &[f64], alpha: f64, ess_fraction: f64) -> f64 {
    let remaining = 1.0 - alpha;
    if remaining <= 0.0 {
        return 0.0;
    }
    let target = ess_fraction * log_lik.len() as f64;
    let ess = |d: f64| effective_sample_size(&tempered(log_lik, d));
    if ess(remaining) >= target {
        return remaining;
    }
    let mut lo = MIN_DELTA_ALPHA.min(remaining);
    if ess(lo) <= target {
        return lo;
    }
    let mut hi = remaining;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ess(mid) >= target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi.max(1e-300) {
            break;
        }
    }
    lo
}

/// Systematic resampling. Returns the ancestor index of each offspring.
pub fn systematic_resample(log_weights: &[f64], rng: &mut Rng) -> Result<Vec<usize>> {
    let n = log_weights.len();
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if n == 0 || max == f64::NEG_INFINITY || max.is_nan() {
        return Err(Error::param("all weights are zero; cannot resample"));
    }
    let weights: Vec<f64> = log_weights.iter().map(|&lw| (lw - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let step = total / n as f64;
    let u0: f64 = rng.random();
    let mut ancestors = Vec::with_capacity(n);
    let mut cumulative = weights[0];
    let mut i = 0;
    for j in 0..n {
        let position = (j as f64 + u0) * step;
        while position >= cumulative && i + 1 < n {
            i += 1;
            cumulative += weights[i];
        }
        ancestors.push(i);
    }
    Ok(ancestors)
}

/// Offspring count of each parent.
pub fn offspring_counts(ancestors: &[usize], n: usize) -> Vec<usize> {
    let mut counts = vec![0; n];
    for &a in ancestors {
        counts[a] += 1;
    }
    counts
}

/// Folds a real number into [0, 1] by repeated reflection at the boundaries.
pub fn reflect_unit(x: f64) -> f64 {
    let t = x.rem_euclid(2.0);
    if t > 1.0 {
        2.0 - t
    } else {
        t
    }
}

/// Uniform box proposal of half-width `window`, reflected into the unit cube.
pub fn propose(current: &[f64], window: f64, rng: &mut Rng) -> Vec<f64> {
    current
        .iter()
        .map(|&x| reflect_unit(x + window * (2.0 * rng.random::<f64>() - 1.0)))
        .collect()
}

#[derive(Debug, Clone)]
pub struct MhOutcome<T> {
    pub state: Vec<f64>,
    pub log_h: f64,
    pub payload: T,
    pub accepted: usize,
}

/// `iterations` Metropolis-Hastings steps targeting `exp(log_h)` with the
/// reflected uniform proposal. `target` returns the log-density of a proposal
/// and a payload cached alongside the accepted state.
pub fn mh_mutate<T, F>(
    start: Vec<f64>,
    start_log_h: f64,
    start_payload: T,
    target: F,
    window: f64,
    iterations: usize,
    rng: &mut Rng,
) -> MhOutcome<T>
where
    F: Fn(&[f64]) -> (f64, T),
{
    let mut out = MhOutcome {
        state: start,
        log_h: start_log_h,
        payload: start_payload,
        accepted: 0,
    };
    for _ in 0..iterations {
        let proposal = propose(&out.state, window, rng);
        let (log_h, payload) = target(&proposal);
        let u: f64 = rng.random();
        let accept = if out.log_h == f64::NEG_INFINITY {
            true
        } else {
            u.ln() < log_h - out.log_h
        };
        if accept {
            out.state = proposal;
            out.log_h = log_h;
            out.payload = payload;
            out.accepted += 1;
        }
    }
    out
}
