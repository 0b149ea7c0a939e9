//! Rao-Blackwellized posterior summaries.
//!
//! Each particle `rho_i` carries an exact Gaussian smoothing posterior
//! `N(x̂_k(rho_i), Σ_k(rho_i))`. The posterior of `x_k` is the mixture over the
//! cloud, whose mean and covariance are
//!
//! ```text
//! x̂_k = Σ_i w_i x̂_k(rho_i)
//! Σ̂_k = Σ_i w_i Σ_k(rho_i) + Σ_i w_i (x̂_k(rho_i) - x̂_k)(x̂_k(rho_i) - x̂_k)ᵀ
//! ```
//!
//! with `w_i = 1/N_p` after resampling.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::armodel::{AreaLayout, FrequencyGrid, Property};
use crate::error::{Error, Result};
use crate::io;
use crate::lgss::{kalman_filter, kalman_smoother, sample_trajectory_with, SmootherOutput};
use crate::linalg::symmetrize;
use crate::rng::substream;
use crate::smc::{InversionProblem, ParticleCloud};

/// Smoother output for every particle of the cloud, in cloud order.
pub fn smooth_particles(problem: &InversionProblem, cloud: &ParticleCloud) -> Result<Vec<SmootherOutput>> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    cloud
        .particles
        .par_iter()
        .map(|p| problem.smooth(&p.rho))
        .collect()
}

fn normalized_weights(n: usize, weights: Option<&[f64]>) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::EmptyCloud);
    }
    match weights {
        None => Ok(vec![1.0 / n as f64; n]),
        Some(w) => {
            if w.len() != n {
                return Err(Error::dim(format!("{} weights for {n} particles", w.len())));
            }
            if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::param("weights must be finite and nonnegative"));
            }
            let total: f64 = w.iter().sum();
            if total <= 0.0 {
                return Err(Error::param("weights sum to zero"));
            }
            Ok(w.iter().map(|v| v / total).collect())
        }
    }
}

/// Mixture mean per stage. Weights are normalized internally; `None` means uniform.
pub fn rb_mean(smoothed: &[SmootherOutput], weights: Option<&[f64]>) -> Result<Vec<DVector<f64>>> {
    let w = normalized_weights(smoothed.len(), weights)?;
    let k_f = smoothed[0].smoothed.len();
    Ok((0..k_f)
        .map(|k| {
            let mut acc = DVector::zeros(smoothed[0].smoothed[k].mean.len());
            for (s, wi) in smoothed.iter().zip(&w) {
                acc.axpy(*wi, &s.smoothed[k].mean, 1.0);
            }
            acc
        })
        .collect())
}

/// Law-of-total-variance split of the mixture covariance.
#[derive(Debug, Clone)]
pub struct RbCovariance {
    /// Mean of the per-particle smoothing covariances.
    pub within: Vec<DMatrix<f64>>,
    /// Spread of the per-particle smoothed means around `x̂`.
    pub between: Vec<DMatrix<f64>>,
    pub total: Vec<DMatrix<f64>>,
}

pub fn rb_cov(
    smoothed: &[SmootherOutput],
    weights: Option<&[f64]>,
    xhat: &[DVector<f64>],
) -> Result<RbCovariance> {
    let w = normalized_weights(smoothed.len(), weights)?;
    let k_f = smoothed[0].smoothed.len();
    if xhat.len() != k_f {
        return Err(Error::dim(format!("xhat has {} stages, smoother {k_f}", xhat.len())));
    }
    let mut within = Vec::with_capacity(k_f);
    let mut between = Vec::with_capacity(k_f);
    let mut total = Vec::with_capacity(k_f);
    for (k, mean) in xhat.iter().enumerate() {
        let n = mean.len();
        let mut a = DMatrix::zeros(n, n);
        let mut b = DMatrix::zeros(n, n);
        for (s, wi) in smoothed.iter().zip(&w) {
            let g = &s.smoothed[k];
            a += &g.cov * *wi;
            let d = &g.mean - mean;
            b.ger(*wi, &d, &d, 1.0);
        }
        let a = symmetrize(&a);
        let b = symmetrize(&b);
        total.push(&a + &b);
        within.push(a);
        between.push(b);
    }
    Ok(RbCovariance {
        within,
        between,
        total,
    })
}

/// Posterior point estimates and marginal uncertainties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    /// `4N × K_f` posterior means.
    #[serde(with = "io::matrix")]
    pub xhat: DMatrix<f64>,
    /// `4N × K_f` marginal standard deviations.
    #[serde(with = "io::matrix")]
    pub sigma_hat: DMatrix<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariances: Option<Vec<Vec<Vec<f64>>>>,
    /// Rho values of the particles used.
    pub particles: Vec<Vec<f64>>,
}

impl PosteriorSummary {
    pub fn covariance(&self, stage: usize) -> Option<DMatrix<f64>> {
        let rows = self.covariances.as_ref()?.get(stage)?;
        io::rows_to_matrix(rows).ok()
    }

    pub fn rho_mean(&self) -> Vec<f64> {
        let d = self.particles.first().map_or(0, Vec::len);
        let n = self.particles.len() as f64;
        (0..d)
            .map(|j| self.particles.iter().map(|p| p[j]).sum::<f64>() / n)
            .collect()
    }
}

/// Combines per-particle smoother outputs into a summary.
pub fn summarize_smoothed(
    cloud: &ParticleCloud,
    smoothed: &[SmootherOutput],
    keep_covariances: bool,
) -> Result<PosteriorSummary> {
    let max = cloud.log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = cloud.log_weights.iter().map(|l| (l - max).exp()).collect();
    let xhat = rb_mean(smoothed, Some(&w))?;
    let cov = rb_cov(smoothed, Some(&w), &xhat)?;
    let sigma_cols: Vec<DVector<f64>> = cov
        .total
        .iter()
        .map(|c| c.diagonal().map(|v| v.max(0.0).sqrt()))
        .collect();
    Ok(PosteriorSummary {
        xhat: DMatrix::from_columns(&xhat),
        sigma_hat: DMatrix::from_columns(&sigma_cols),
        covariances: keep_covariances.then(|| cov.total.iter().map(io::matrix_to_rows).collect()),
        particles: cloud.particles.iter().map(|p| p.rho.clone()).collect(),
    })
}

pub fn summarize(problem: &InversionProblem, cloud: &ParticleCloud, keep_covariances: bool) -> Result<PosteriorSummary> {
    let smoothed = smooth_particles(problem, cloud)?;
    summarize_smoothed(cloud, &smoothed, keep_covariances)
}

/// Trajectory draws from the posterior: a uniformly chosen particle, then a
/// backward-sampled path given that particle's rho.
pub fn posterior_samples(
    problem: &InversionProblem,
    cloud: &ParticleCloud,
    count: usize,
    seed: u64,
) -> Result<Vec<Vec<DVector<f64>>>> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if count == 0 {
        return Err(Error::param("sample count must be at least 1"));
    }
    let picks: Vec<usize> = (0..count)
        .map(|j| substream(seed, &[0, j as u64]).random_range(0..cloud.len()))
        .collect();
    let mut needed = picks.clone();
    needed.sort_unstable();
    needed.dedup();
    let filters: Vec<_> = needed
        .par_iter()
        .map(|&i| {
            let model = problem.lgss(&cloud.particles[i].rho)?;
            let f = kalman_filter(&model, &problem.observations)?;
            Ok((model, f))
        })
        .collect::<Result<_>>()?;
    picks
        .par_iter()
        .enumerate()
        .map(|(j, i)| {
            let slot = needed.binary_search(i).expect("pick is in the needed set");
            let (model, f) = &filters[slot];
            let mut rng = substream(seed, &[1, j as u64]);
            sample_trajectory_with(model, f, &mut rng)
        })
        .collect()
}

/// Smoothed moments for one rho, exposed for quadrature checks.
pub fn smoothed_at(problem: &InversionProblem, rho: &[f64]) -> Result<SmootherOutput> {
    let model = problem.lgss(rho)?;
    let f = kalman_filter(&model, &problem.observations)?;
    kalman_smoother(&model, &f)
}

/// `eps_real_z0, …, mu_imag_z{N-1}` in state order.
pub fn state_labels(layout: &AreaLayout) -> Vec<String> {
    Property::ALL
        .iter()
        .flat_map(|p| (0..layout.num_zones()).map(move |z| format!("{}_z{z}", p.label())))
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct SummaryHeader {
    state_dim: usize,
    num_stages: usize,
    num_particles: usize,
    frequencies_ghz: Vec<f64>,
    labels: Vec<String>,
    rho_mean: Vec<f64>,
    files: Vec<String>,
}

/// Writes `summary.json`, `xhat.csv`, `sigma.csv` and `particles.csv` into `dir`.
pub fn write_summary(
    dir: impl AsRef<Path>,
    summary: &PosteriorSummary,
    layout: &AreaLayout,
    frequencies: &FrequencyGrid,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let labels = state_labels(layout);
    if labels.len() != summary.xhat.nrows() || frequencies.len() != summary.xhat.ncols() {
        return Err(Error::dim("summary does not match the layout and frequency grid"));
    }
    let mut header = vec!["component".to_string()];
    header.extend(frequencies.values().iter().map(|f| io::fmt_f64(*f)));
    io::write_csv_matrix(dir.join("xhat.csv"), Some(&header), Some(&labels), &summary.xhat)?;
    io::write_csv_matrix(dir.join("sigma.csv"), Some(&header), Some(&labels), &summary.sigma_hat)?;

    let d = summary.particles.first().map_or(0, Vec::len);
    let particles = DMatrix::from_fn(summary.particles.len(), d, |i, j| summary.particles[i][j]);
    let rho_header: Vec<String> = (0..d).map(|j| format!("rho{j}")).collect();
    io::write_csv_matrix(dir.join("particles.csv"), Some(&rho_header), None, &particles)?;

    let mut files = vec!["xhat.csv".into(), "sigma.csv".into(), "particles.csv".into()];
    if let Some(covs) = &summary.covariances {
        io::write_json(dir.join("covariances.json"), covs)?;
        files.push("covariances.json".into());
    }
    io::write_json(
        dir.join("summary.json"),
        &SummaryHeader {
            state_dim: summary.xhat.nrows(),
            num_stages: summary.xhat.ncols(),
            num_particles: summary.particles.len(),
            frequencies_ghz: frequencies.values().to_vec(),
            labels,
            rho_mean: summary.rho_mean(),
            files,
        },
    )
}

/// Reads back what [`write_summary`] wrote.
pub fn read_summary(dir: impl AsRef<Path>) -> Result<PosteriorSummary> {
    let dir = dir.as_ref();
    let header: SummaryHeader = io::read_json(dir.join("summary.json"))?;
    let xhat = io::read_csv_matrix(dir.join("xhat.csv"), true, 1)?;
    let sigma_hat = io::read_csv_matrix(dir.join("sigma.csv"), true, 1)?;
    let particles = io::matrix_to_rows(&io::read_csv_matrix(dir.join("particles.csv"), true, 0)?);
    let covariances = if header.files.iter().any(|f| f == "covariances.json") {
        Some(io::read_json(dir.join("covariances.json"))?)
    } else {
        None
    };
    Ok(PosteriorSummary {
        xhat,
        sigma_hat,
        covariances,
        particles,
    })
}
