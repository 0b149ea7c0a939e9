//! Sequential Monte Carlo over the frequency-correlation parameter rho.
//!
//! The sampler moves a cloud from the prior `p(rho)` to the posterior
//! `p(rho | y) ∝ p(rho) Π_k J_k(rho)` through a sequence of intermediate
//! targets. Each generation reweights by the ratio of consecutive targets,
//! resamples systematically, then mutates every particle with reflected
//! random-walk Metropolis-Hastings moves whose window shrinks geometrically
//! until the batch acceptance rate falls in a band.
//!
//! Three bridging schemes are available:
//! - annealed: `p(rho) p(y|rho)^alpha` with adaptive alpha increments;
//! - data-tempered: one observation `J_n` per generation;
//! - hybrid: observations one at a time, each tempered adaptively.
//!
//! Every random draw comes from a substream keyed by (seed, generation,
//! stage, particle), so results are independent of thread scheduling.

mod context;
pub mod kernels;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use context::{InversionProblem, LikelihoodModel};
pub use kernels::{
    adaptive_delta_alpha, effective_sample_size, log_prior_rho, mh_mutate, offspring_counts,
    reflect_unit, systematic_resample, RhoPrior,
};

use crate::error::{Error, Result};
use crate::rng::substream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Annealed,
    #[serde(rename = "tempered")]
    DataTempered,
    Hybrid,
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "annealed" => Ok(Scheme::Annealed),
            "tempered" | "data_tempered" | "data-tempered" => Ok(Scheme::DataTempered),
            "hybrid" => Ok(Scheme::Hybrid),
            other => Err(Error::param(format!(
                "unknown scheme {other:?}; expected annealed, tempered or hybrid"
            ))),
        }
    }
}

/// Position along the bridge from prior to posterior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum TemperingState {
    Annealed { alpha: f64 },
    #[serde(rename = "tempered")]
    DataTempered { assimilated: usize },
    /// `assimilated` observations fully included, the next one at `alpha`.
    Hybrid { assimilated: usize, alpha: f64 },
}

impl TemperingState {
    pub fn initial(scheme: Scheme) -> Self {
        match scheme {
            Scheme::Annealed => TemperingState::Annealed { alpha: 0.0 },
            Scheme::DataTempered => TemperingState::DataTempered { assimilated: 0 },
            Scheme::Hybrid => TemperingState::Hybrid {
                assimilated: 0,
                alpha: 0.0,
            },
        }
    }

    pub fn final_state(scheme: Scheme, num_stages: usize) -> Self {
        match scheme {
            Scheme::Annealed => TemperingState::Annealed { alpha: 1.0 },
            Scheme::DataTempered => TemperingState::DataTempered {
                assimilated: num_stages,
            },
            Scheme::Hybrid => TemperingState::Hybrid {
                assimilated: num_stages,
                alpha: 0.0,
            },
        }
    }

    pub fn is_complete(&self, num_stages: usize) -> bool {
        match *self {
            TemperingState::Annealed { alpha } => alpha >= 1.0,
            TemperingState::DataTempered { assimilated } => assimilated >= num_stages,
            TemperingState::Hybrid { assimilated, .. } => assimilated >= num_stages,
        }
    }

    /// log h_n(rho), up to a constant shared by all rho at fixed n.
    pub fn log_target(&self, log_prior: f64, log_increments: &[f64]) -> f64 {
        if log_prior == f64::NEG_INFINITY {
            return log_prior;
        }
        let partial = |r: usize| -> f64 { log_increments[..r.min(log_increments.len())].iter().sum() };
        match *self {
            TemperingState::Annealed { alpha } => {
                if alpha == 0.0 {
                    log_prior
                } else {
                    let total: f64 = partial(log_increments.len());
                    log_prior + alpha * total
                }
            }
            TemperingState::DataTempered { assimilated } => log_prior + partial(assimilated),
            TemperingState::Hybrid { assimilated, alpha } => {
                let mut v = log_prior + partial(assimilated);
                if alpha > 0.0 && assimilated < log_increments.len() {
                    v += alpha * log_increments[assimilated];
                }
                v
            }
        }
    }

    fn alpha(&self) -> Option<f64> {
        match *self {
            TemperingState::Annealed { alpha } | TemperingState::Hybrid { alpha, .. } => Some(alpha),
            TemperingState::DataTempered { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MutationConfig {
    /// MH steps per particle at each window size.
    pub steps_per_stage: usize,
    pub window_start: f64,
    pub window_decay: f64,
    pub window_floor: f64,
    pub max_stages: usize,
    /// Stop shrinking once the batch acceptance rate reaches this level;
    /// a smaller window only raises it further.
    pub accept_low: f64,
    /// Upper edge of the target acceptance band.
    pub accept_high: f64,
}

impl Default for MutationConfig {
    fn default() -> Self {
        Self {
            steps_per_stage: 5,
            window_start: 1.0,
            window_decay: 0.5,
            window_floor: 1e-3,
            max_stages: 20,
            accept_low: 0.2,
            accept_high: 0.5,
        }
    }
}

impl MutationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.window_decay > 0.0 && self.window_decay < 1.0) {
            return Err(Error::param("window decay must lie in (0, 1)"));
        }
        if !(self.window_floor > 0.0 && self.window_start >= self.window_floor) {
            return Err(Error::param("window floor must be positive and below the start"));
        }
        if !(0.0 < self.accept_low && self.accept_low < self.accept_high && self.accept_high <= 1.0) {
            return Err(Error::param("acceptance band must satisfy 0 < low < high <= 1"));
        }
        if self.max_stages == 0 || self.steps_per_stage == 0 {
            return Err(Error::param("mutation needs at least one stage and one step"));
        }
        Ok(())
    }

    pub fn window(&self, stage: usize) -> f64 {
        (self.window_start * self.window_decay.powi(stage as i32)).max(self.window_floor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmcConfig {
    pub num_particles: usize,
    pub scheme: Scheme,
    /// ESS kept by each adaptive selection, as a fraction of the cloud.
    pub ess_fraction: f64,
    pub prior: RhoPrior,
    pub mutation: MutationConfig,
}

impl Default for SmcConfig {
    fn default() -> Self {
        Self {
            num_particles: 100,
            scheme: Scheme::Annealed,
            ess_fraction: 0.75,
            prior: RhoPrior::default(),
            mutation: MutationConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub rho: Vec<f64>,
    pub log_prior: f64,
    /// Cached `log J_k(rho)`; all `-inf` if the filter failed.
    pub log_increments: Vec<f64>,
}

impl Particle {
    pub fn log_likelihood(&self) -> f64 {
        self.log_increments.iter().sum()
    }
}

#[derive(Debug, Clone)]
pub struct ParticleCloud {
    pub particles: Vec<Particle>,
    /// Normalized log-weights; uniform after every selection.
    pub log_weights: Vec<f64>,
    pub generation: usize,
    pub tempering: TemperingState,
}

impl ParticleCloud {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn rho_dim(&self) -> usize {
        self.particles.first().map_or(0, |p| p.rho.len())
    }

    /// Weighted mean and standard deviation of each rho component.
    pub fn rho_moments(&self) -> (Vec<f64>, Vec<f64>) {
        let max = self.log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = self.log_weights.iter().map(|&l| (l - max).exp()).collect();
        let total: f64 = w.iter().sum();
        let d = self.rho_dim();
        let mut mean = vec![0.0; d];
        for (p, wi) in self.particles.iter().zip(&w) {
            for (m, v) in mean.iter_mut().zip(&p.rho) {
                *m += wi * v / total;
            }
        }
        let mut var = vec![0.0; d];
        for (p, wi) in self.particles.iter().zip(&w) {
            for j in 0..d {
                var[j] += wi * (p.rho[j] - mean[j]).powi(2) / total;
            }
        }
        (mean, var.into_iter().map(f64::sqrt).collect())
    }
}

/// One line of the diagnostics trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    pub state: TemperingState,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_alpha: Option<f64>,
    pub ess: f64,
    pub kill_fraction: f64,
    pub windows: Vec<f64>,
    pub acceptance_rates: Vec<f64>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct SmcOutput {
    pub cloud: ParticleCloud,
    pub trace: Vec<GenerationRecord>,
}

const STREAM_INIT: u64 = 1;
const STREAM_SELECT: u64 = 2;
const STREAM_MUTATE: u64 = 3;

fn evaluate<L: LikelihoodModel>(model: &L, prior: &RhoPrior, rho: Vec<f64>) -> Particle {
    let log_prior = prior.log_density(&rho);
    let log_increments = model
        .log_increments(&rho)
        .unwrap_or_else(|_| vec![f64::NEG_INFINITY; model.num_stages()]);
    Particle {
        rho,
        log_prior,
        log_increments,
    }
}

/// Draws the initial cloud from the prior.
pub fn initial_cloud<L: LikelihoodModel>(model: &L, config: &SmcConfig, seed: u64) -> ParticleCloud {
    let d = model.rho_dim();
    let particles: Vec<Particle> = (0..config.num_particles)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, &[STREAM_INIT, i as u64]);
            evaluate(model, &config.prior, config.prior.sample(&mut rng, d))
        })
        .collect();
    ParticleCloud {
        log_weights: vec![0.0; particles.len()],
        particles,
        generation: 0,
        tempering: TemperingState::initial(config.scheme),
    }
}

/// Systematic resampling of a whole cloud by `log_weights`; the result has
/// uniform weights. Fails with [`Error::Degenerate`] if every weight is zero.
pub fn select_resample(cloud: &ParticleCloud, log_weights: &[f64], seed: u64) -> Result<ParticleCloud> {
    if log_weights.len() != cloud.len() {
        return Err(Error::dim(format!(
            "{} weights for {} particles",
            log_weights.len(),
            cloud.len()
        )));
    }
    let mut rng = substream(seed, &[STREAM_SELECT, cloud.generation as u64]);
    let ancestors = systematic_resample(log_weights, &mut rng).map_err(|_| Error::Degenerate {
        generation: cloud.generation,
        trace: Vec::new(),
    })?;
    Ok(ParticleCloud {
        particles: ancestors.iter().map(|&a| cloud.particles[a].clone()).collect(),
        log_weights: vec![0.0; cloud.len()],
        generation: cloud.generation,
        tempering: cloud.tempering,
    })
}

/// Incremental log-weights of the next selection and the resulting state.
fn next_selection(
    state: TemperingState,
    particles: &[Particle],
    ess_fraction: f64,
) -> (Vec<f64>, TemperingState, Option<f64>) {
    match state {
        TemperingState::Annealed { alpha } => {
            let ll: Vec<f64> = particles.iter().map(Particle::log_likelihood).collect();
            let delta = adaptive_delta_alpha(&ll, alpha, ess_fraction);
            let next = if delta >= 1.0 - alpha { 1.0 } else { alpha + delta };
            (
                kernels::tempered(&ll, delta),
                TemperingState::Annealed { alpha: next },
                Some(delta),
            )
        }
        TemperingState::DataTempered { assimilated } => (
            particles.iter().map(|p| p.log_increments[assimilated]).collect(),
            TemperingState::DataTempered {
                assimilated: assimilated + 1,
            },
            None,
        ),
        TemperingState::Hybrid { assimilated, alpha } => {
            let ll: Vec<f64> = particles.iter().map(|p| p.log_increments[assimilated]).collect();
            let delta = adaptive_delta_alpha(&ll, alpha, ess_fraction);
            let next = if delta >= 1.0 - alpha {
                TemperingState::Hybrid {
                    assimilated: assimilated + 1,
                    alpha: 0.0,
                }
            } else {
                TemperingState::Hybrid {
                    assimilated,
                    alpha: alpha + delta,
                }
            };
            (kernels::tempered(&ll, delta), next, Some(delta))
        }
    }
}

/// Mutates every particle with shrinking windows; returns (windows, rates).
fn mutate<L: LikelihoodModel>(
    model: &L,
    config: &SmcConfig,
    state: TemperingState,
    particles: &mut Vec<Particle>,
    seed: u64,
    generation: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mc = &config.mutation;
    let mut windows = Vec::new();
    let mut rates = Vec::new();
    for stage in 0..mc.max_stages {
        let window = mc.window(stage);
        let moved: Vec<(Particle, usize)> = std::mem::take(particles)
            .into_par_iter()
            .enumerate()
            .map(|(i, p)| {
                let mut rng = substream(
                    seed,
                    &[STREAM_MUTATE, generation as u64, stage as u64, i as u64],
                );
                let start_log_h = state.log_target(p.log_prior, &p.log_increments);
                let out = mh_mutate(
                    p.rho,
                    start_log_h,
                    (p.log_prior, p.log_increments),
                    |rho| {
                        let cand = evaluate(model, &config.prior, rho.to_vec());
                        (
                            state.log_target(cand.log_prior, &cand.log_increments),
                            (cand.log_prior, cand.log_increments),
                        )
                    },
                    window,
                    mc.steps_per_stage,
                    &mut rng,
                );
                let (log_prior, log_increments) = out.payload;
                (
                    Particle {
                        rho: out.state,
                        log_prior,
                        log_increments,
                    },
                    out.accepted,
                )
            })
            .collect();
        let accepted: usize = moved.iter().map(|(_, a)| a).sum();
        *particles = moved.into_iter().map(|(p, _)| p).collect();
        let rate = accepted as f64 / (particles.len() * mc.steps_per_stage) as f64;
        windows.push(window);
        rates.push(rate);
        if rate >= mc.accept_low {
            break;
        }
    }
    (windows, rates)
}

/// Runs the sampler to completion.
pub fn smc_run<L: LikelihoodModel>(model: &L, config: &SmcConfig, seed: u64) -> Result<SmcOutput> {
    smc_run_with(model, config, seed, |_| {})
}

/// As [`smc_run`], calling `on_generation` after every generation.
pub fn smc_run_with<L, F>(model: &L, config: &SmcConfig, seed: u64, mut on_generation: F) -> Result<SmcOutput>
where
    L: LikelihoodModel,
    F: FnMut(&GenerationRecord),
{
    if config.num_particles < 2 {
        return Err(Error::param("the particle cloud needs at least 2 particles"));
    }
    if !(config.ess_fraction > 0.0 && config.ess_fraction < 1.0) {
        return Err(Error::param("ESS fraction must lie in (0, 1)"));
    }
    config.mutation.validate()?;

    let k_f = model.num_stages();
    let n = config.num_particles;
    let mut cloud = initial_cloud(model, config, seed);
    let mut trace = Vec::new();

    while !cloud.tempering.is_complete(k_f) {
        let started = Instant::now();
        let generation = cloud.generation + 1;
        let (log_w, next_state, delta_alpha) =
            next_selection(cloud.tempering, &cloud.particles, config.ess_fraction);
        let ess = effective_sample_size(&log_w);
        let mut rng = substream(seed, &[STREAM_SELECT, generation as u64]);
        let ancestors = match systematic_resample(&log_w, &mut rng) {
            Ok(a) => a,
            Err(_) => return Err(Error::Degenerate { generation, trace }),
        };
        let counts = offspring_counts(&ancestors, n);
        let kill_fraction = counts.iter().filter(|&&c| c == 0).count() as f64 / n as f64;
        let mut particles: Vec<Particle> = ancestors.iter().map(|&a| cloud.particles[a].clone()).collect();

        let (windows, acceptance_rates) = mutate(model, config, next_state, &mut particles, seed, generation);

        cloud = ParticleCloud {
            particles,
            log_weights: vec![0.0; n],
            generation,
            tempering: next_state,
        };
        let record = GenerationRecord {
            generation,
            state: next_state,
            delta_alpha,
            ess,
            kill_fraction,
            windows,
            acceptance_rates,
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        on_generation(&record);
        trace.push(record);
    }
    Ok(SmcOutput { cloud, trace })
}

/// Alpha values of a trace, for annealed or hybrid runs.
pub fn alpha_sequence(trace: &[GenerationRecord]) -> Vec<f64> {
    trace.iter().filter_map(|r| r.state.alpha()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Toy {
        stages: usize,
    }

    impl LikelihoodModel for Toy {
        fn rho_dim(&self) -> usize {
            1
        }
        fn num_stages(&self) -> usize {
            self.stages
        }
        fn log_increments(&self, rho: &[f64]) -> Result<Vec<f64>> {
            Ok((0..self.stages)
                .map(|k| -0.5 * ((rho[0] - 0.3) / 0.1).powi(2) * (k as f64 + 1.0) / self.stages as f64)
                .collect())
        }
    }

    #[test]
    fn annealed_alpha_zero_is_prior() {
        let s = TemperingState::Annealed { alpha: 0.0 };
        assert_eq!(s.log_target(-1.25, &[f64::NEG_INFINITY, 3.0]), -1.25);
    }

    #[test]
    fn scheme_endpoints_coincide() {
        let lj = [0.3, -12.5, 7.125, -0.001];
        let lp = -0.7;
        let a = TemperingState::final_state(Scheme::Annealed, 4).log_target(lp, &lj);
        let t = TemperingState::final_state(Scheme::DataTempered, 4).log_target(lp, &lj);
        let h = TemperingState::final_state(Scheme::Hybrid, 4).log_target(lp, &lj);
        let direct = lp + lj.iter().sum::<f64>();
        assert!((a - direct).abs() < 1e-12);
        assert!((t - direct).abs() < 1e-12);
        assert!((h - direct).abs() < 1e-12);
    }

    #[test]
    fn too_few_particles_is_an_error() {
        let cfg = SmcConfig {
            num_particles: 1,
            ..SmcConfig::default()
        };
        assert!(smc_run(&Toy { stages: 2 }, &cfg, 0).is_err());
    }

    #[test]
    fn every_scheme_terminates_inside_the_unit_interval() {
        for scheme in [Scheme::Annealed, Scheme::DataTempered, Scheme::Hybrid] {
            let cfg = SmcConfig {
                num_particles: 50,
                scheme,
                ..SmcConfig::default()
            };
            let out = smc_run(&Toy { stages: 3 }, &cfg, 4).unwrap();
            assert!(out.cloud.tempering.is_complete(3));
            for p in &out.cloud.particles {
                assert!((0.0..=1.0).contains(&p.rho[0]));
            }
            let alphas = alpha_sequence(&out.trace);
            if scheme == Scheme::Annealed {
                assert!(alphas.windows(2).all(|w| w[1] > w[0]));
                assert_eq!(*alphas.last().unwrap(), 1.0);
            }
        }
    }

    #[test]
    fn scheme_parses_from_cli_names() {
        assert_eq!("tempered".parse::<Scheme>().unwrap(), Scheme::DataTempered);
        assert!("simulated".parse::<Scheme>().is_err());
    }
}
