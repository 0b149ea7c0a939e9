//! Linear-Gaussian state-space models.
//!
//! The model is
//!
//! ```text
//! x_1     ~ N(m_1, P_1)
//! x_{k+1} = M_k x_k + b_k + w_k,   w_k ~ N(0, Q_k)
//! y_k     = A_k x_k + y0_k + v_k,  v_k ~ N(0, R_k)
//! ```
//!
//! with a Kalman filter (Joseph-form update) producing the predictive
//! log-likelihood increments `log p(y_k | y_1..y_{k-1})`, a fixed-interval RTS
//! smoother, a backward sampler for whole trajectories, and a brute-force
//! joint-Gaussian oracle used to validate all three.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{
    gaussian_log_density, max_abs, psd_factor, robust_cholesky, standard_normal_vector, symmetrize,
};
use crate::rng::{self, Rng};

/// Mean and covariance of a Gaussian vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianMoments {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::dim(format!(
                "covariance {}x{} does not match mean of length {}",
                cov.nrows(),
                cov.ncols(),
                mean.len()
            )));
        }
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Checks symmetry (1e-12 relative) and positive semidefiniteness
    /// (min eigenvalue >= -1e-10 * max eigenvalue).
    pub fn check_invariants(&self) -> Result<()> {
        let scale = max_abs(&self.cov).max(f64::MIN_POSITIVE);
        let asym = max_abs(&(&self.cov - self.cov.transpose()));
        if asym > 1e-12 * scale {
            return Err(Error::param(format!("covariance not symmetric ({asym:.3e})")));
        }
        let eig = symmetrize(&self.cov).symmetric_eigen();
        let max = eig.eigenvalues.max();
        let min = eig.eigenvalues.min();
        if min < -1e-10 * max.abs() {
            return Err(Error::NotPositiveDefinite {
                min_eigenvalue: min,
                max_eigenvalue: max,
            });
        }
        Ok(())
    }

    /// Marginal standard deviations (square root of the clamped diagonal).
    pub fn std_devs(&self) -> DVector<f64> {
        self.cov.diagonal().map(|v| v.max(0.0).sqrt())
    }
}

/// Observation equation of one stage: `y = matrix * x + offset + N(0, noise_cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationStage {
    pub matrix: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub noise_cov: DMatrix<f64>,
}

/// Transition from stage k to k+1: `x' = matrix * x + offset + N(0, noise_cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub matrix: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub noise_cov: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LgssModel {
    pub init: GaussianMoments,
    /// One entry per stage (length K_f).
    pub observations: Vec<ObservationStage>,
    /// One entry per transition (length K_f - 1).
    pub transitions: Vec<Transition>,
}

impl LgssModel {
    pub fn new(
        init: GaussianMoments,
        observations: Vec<ObservationStage>,
        transitions: Vec<Transition>,
    ) -> Result<Self> {
        let model = Self {
            init,
            observations,
            transitions,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn num_stages(&self) -> usize {
        self.observations.len()
    }

    pub fn state_dim(&self) -> usize {
        self.init.dim()
    }

    pub fn obs_dim(&self) -> usize {
        self.observations.first().map_or(0, |o| o.matrix.nrows())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.state_dim();
        let k = self.num_stages();
        if k == 0 {
            return Err(Error::dim("model needs at least one stage"));
        }
        if self.init.cov.nrows() != n || self.init.cov.ncols() != n {
            return Err(Error::dim("initial covariance does not match state dimension"));
        }
        if self.transitions.len() + 1 != k {
            return Err(Error::dim(format!(
                "{} stages need {} transitions, got {}",
                k,
                k - 1,
                self.transitions.len()
            )));
        }
        let p = self.obs_dim();
        for (s, o) in self.observations.iter().enumerate() {
            if o.matrix.nrows() != p || o.matrix.ncols() != n {
                return Err(Error::dim(format!(
                    "stage {s}: observation matrix is {}x{}, expected {p}x{n}",
                    o.matrix.nrows(),
                    o.matrix.ncols()
                )));
            }
            if o.offset.len() != p || o.noise_cov.nrows() != p || o.noise_cov.ncols() != p {
                return Err(Error::dim(format!("stage {s}: observation offset/noise size")));
            }
        }
        for (s, t) in self.transitions.iter().enumerate() {
            if t.matrix.shape() != (n, n) || t.offset.len() != n || t.noise_cov.shape() != (n, n) {
                return Err(Error::dim(format!("transition {s}: expected {n}x{n} system")));
            }
        }
        Ok(())
    }

    fn check_observations(&self, ys: &[DVector<f64>]) -> Result<()> {
        if ys.len() != self.num_stages() {
            return Err(Error::dim(format!(
                "expected {} observation vectors, got {}",
                self.num_stages(),
                ys.len()
            )));
        }
        let p = self.obs_dim();
        for (k, y) in ys.iter().enumerate() {
            if y.len() != p {
                return Err(Error::dim(format!(
                    "observation {k} has length {}, expected {p}",
                    y.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterStage {
    pub predicted: GaussianMoments,
    pub filtered: GaussianMoments,
    /// log p(y_k | y_1..y_{k-1}).
    pub log_increment: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutput {
    pub stages: Vec<FilterStage>,
}

impl FilterOutput {
    pub fn log_increments(&self) -> Vec<f64> {
        self.stages.iter().map(|s| s.log_increment).collect()
    }

    pub fn log_likelihood(&self) -> f64 {
        self.stages.iter().map(|s| s.log_increment).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmootherOutput {
    pub smoothed: Vec<GaussianMoments>,
}

pub fn kalman_filter(model: &LgssModel, ys: &[DVector<f64>]) -> Result<FilterOutput> {
    model.validate()?;
    model.check_observations(ys)?;
    let n = model.state_dim();
    let identity = DMatrix::<f64>::identity(n, n);

    let mut stages: Vec<FilterStage> = Vec::with_capacity(ys.len());
    for (k, (y, obs)) in ys.iter().zip(&model.observations).enumerate() {
        let predicted = match stages.last() {
            None => model.init.clone(),
            Some(prev) => {
                let t = &model.transitions[k - 1];
                let mean = &t.matrix * &prev.filtered.mean + &t.offset;
                let cov = symmetrize(&(&t.matrix * &prev.filtered.cov * t.matrix.transpose() + &t.noise_cov));
                GaussianMoments { mean, cov }
            }
        };

        let a = &obs.matrix;
        let pa_t = &predicted.cov * a.transpose();
        let innovation_cov = symmetrize(&(a * &pa_t + &obs.noise_cov));
        let chol = robust_cholesky(&innovation_cov)
            .map_err(|condition| Error::SingularInnovation { stage: k, condition })?;
        let innovation = y - (a * &predicted.mean + &obs.offset);
        let log_increment = gaussian_log_density(&innovation, &chol);

        // K = P Aᵀ S⁻¹, obtained as (S⁻¹ A P)ᵀ.
        let gain = chol.solve(&pa_t.transpose()).transpose();
        let mean = &predicted.mean + &gain * &innovation;
        let i_ka = &identity - &gain * a;
        let cov = symmetrize(
            &(&i_ka * &predicted.cov * i_ka.transpose() + &gain * &obs.noise_cov * gain.transpose()),
        );

        stages.push(FilterStage {
            predicted,
            filtered: GaussianMoments { mean, cov },
            log_increment,
        });
    }
    Ok(FilterOutput { stages })
}

/// Smoother gain G_k = F_k M_kᵀ (P_{k+1|k})⁻¹.
fn smoother_gain(model: &LgssModel, filter_out: &FilterOutput, k: usize) -> Result<DMatrix<f64>> {
    let m = &model.transitions[k].matrix;
    let predicted_next = &filter_out.stages[k + 1].predicted.cov;
    let chol = robust_cholesky(predicted_next).map_err(|_| Error::SingularGain { stage: k })?;
    Ok(chol
        .solve(&(m * &filter_out.stages[k].filtered.cov))
        .transpose())
}

/// Fixed-interval Rauch-Tung-Striebel smoother.
pub fn kalman_smoother(model: &LgssModel, filter_out: &FilterOutput) -> Result<SmootherOutput> {
    let k_f = model.num_stages();
    if filter_out.stages.len() != k_f {
        return Err(Error::dim("filter output does not match model stage count"));
    }
    let mut smoothed = vec![filter_out.stages[k_f - 1].filtered.clone(); k_f];
    for k in (0..k_f - 1).rev() {
        let gain = smoother_gain(model, filter_out, k)?;
        let filtered = &filter_out.stages[k].filtered;
        let predicted_next = &filter_out.stages[k + 1].predicted;
        let next = &smoothed[k + 1];
        let mean = &filtered.mean + &gain * (&next.mean - &predicted_next.mean);
        let cov = symmetrize(
            &(&filtered.cov + &gain * (&next.cov - &predicted_next.cov) * gain.transpose()),
        );
        smoothed[k] = GaussianMoments { mean, cov };
    }
    Ok(SmootherOutput { smoothed })
}

/// Filter and smoother in one call.
pub fn smooth(model: &LgssModel, ys: &[DVector<f64>]) -> Result<(FilterOutput, SmootherOutput)> {
    let f = kalman_filter(model, ys)?;
    let s = kalman_smoother(model, &f)?;
    Ok((f, s))
}

/// Backward sampling of one trajectory from p(x_1..x_K | y) given a filter pass.
pub fn sample_trajectory_with(
    model: &LgssModel,
    filter_out: &FilterOutput,
    rng: &mut Rng,
) -> Result<Vec<DVector<f64>>> {
    let k_f = model.num_stages();
    let n = model.state_dim();
    let mut path = vec![DVector::zeros(n); k_f];

    let last = &filter_out.stages[k_f - 1].filtered;
    path[k_f - 1] = &last.mean + psd_factor(&last.cov) * standard_normal_vector(rng, n);
    for k in (0..k_f - 1).rev() {
        let gain = smoother_gain(model, filter_out, k)?;
        let filtered = &filter_out.stages[k].filtered;
        let predicted_next = &filter_out.stages[k + 1].predicted;
        let mean = &filtered.mean + &gain * (&path[k + 1] - &predicted_next.mean);
        let cov = symmetrize(&(&filtered.cov - &gain * &predicted_next.cov * gain.transpose()));
        path[k] = mean + psd_factor(&cov) * standard_normal_vector(rng, n);
    }
    Ok(path)
}

/// One draw from p(x_1..x_K | y), deterministic in `seed`.
pub fn sample_conditional_trajectory(
    model: &LgssModel,
    ys: &[DVector<f64>],
    seed: u64,
) -> Result<Vec<DVector<f64>>> {
    let f = kalman_filter(model, ys)?;
    let mut rng = rng::from_seed(seed);
    sample_trajectory_with(model, &f, &mut rng)
}

/// Largest stacked dimension the joint-Gaussian oracle accepts.
pub const ORACLE_LIMIT: usize = 2000;

/// Exact moments obtained by conditioning the stacked joint Gaussian.
#[derive(Debug, Clone)]
pub struct OracleOutput {
    /// p(x_k | y_1..y_K) for every k.
    pub smoothed: Vec<GaussianMoments>,
    /// p(x_k | y_1..y_k) for every k.
    pub filtered: Vec<GaussianMoments>,
    /// log p(y_1..y_k) for every prefix length k = 1..K.
    pub prefix_log_likelihood: Vec<f64>,
}

impl OracleOutput {
    pub fn log_likelihood(&self) -> f64 {
        *self.prefix_log_likelihood.last().expect("at least one stage")
    }
}

/// Builds the joint Gaussian over all states and observations and conditions
/// on observation prefixes by block formulas.
pub fn joint_gaussian_oracle(model: &LgssModel, ys: &[DVector<f64>]) -> Result<OracleOutput> {
    model.validate()?;
    model.check_observations(ys)?;
    let n = model.state_dim();
    let p = model.obs_dim();
    let k_f = model.num_stages();
    let size = n * k_f;
    if size > ORACLE_LIMIT {
        return Err(Error::SizeGuard {
            size,
            limit: ORACLE_LIMIT,
        });
    }

    // Prior moments of the stacked state.
    let mut means = vec![model.init.mean.clone()];
    let mut marginals = vec![model.init.cov.clone()];
    for t in &model.transitions {
        let prev_mean = means.last().unwrap();
        let prev_cov = marginals.last().unwrap();
        means.push(&t.matrix * prev_mean + &t.offset);
        marginals.push(&t.matrix * prev_cov * t.matrix.transpose() + &t.noise_cov);
    }
    let mut sxx = DMatrix::<f64>::zeros(size, size);
    for j in 0..k_f {
        let mut block = marginals[j].clone();
        sxx.view_mut((j * n, j * n), (n, n)).copy_from(&block);
        for i in j + 1..k_f {
            block = &model.transitions[i - 1].matrix * block;
            sxx.view_mut((i * n, j * n), (n, n)).copy_from(&block);
            sxx.view_mut((j * n, i * n), (n, n)).copy_from(&block.transpose());
        }
    }
    let mut mu_x = DVector::<f64>::zeros(size);
    for (k, m) in means.iter().enumerate() {
        mu_x.rows_mut(k * n, n).copy_from(m);
    }

    let mut a_big = DMatrix::<f64>::zeros(p * k_f, size);
    let mut r_big = DMatrix::<f64>::zeros(p * k_f, p * k_f);
    let mut mu_y = DVector::<f64>::zeros(p * k_f);
    let mut y_big = DVector::<f64>::zeros(p * k_f);
    for (k, o) in model.observations.iter().enumerate() {
        a_big.view_mut((k * p, k * n), (p, n)).copy_from(&o.matrix);
        r_big.view_mut((k * p, k * p), (p, p)).copy_from(&o.noise_cov);
        mu_y.rows_mut(k * p, p)
            .copy_from(&(&o.matrix * &means[k] + &o.offset));
        y_big.rows_mut(k * p, p).copy_from(&ys[k]);
    }
    let sxy = &sxx * a_big.transpose();
    let syy = symmetrize(&(&a_big * &sxy + &r_big));

    let condition_on = |rows: usize| -> Result<(DVector<f64>, DMatrix<f64>, f64)> {
        let syy_r = syy.view((0, 0), (rows, rows)).into_owned();
        let sxy_r = sxy.columns(0, rows).into_owned();
        let resid = y_big.rows(0, rows) - mu_y.rows(0, rows);
        let chol = syy_r.cholesky().ok_or_else(|| {
            let eig = syy.view((0, 0), (rows, rows)).into_owned().symmetric_eigen();
            Error::NotPositiveDefinite {
                min_eigenvalue: eig.eigenvalues.min(),
                max_eigenvalue: eig.eigenvalues.max(),
            }
        })?;
        let log_py = gaussian_log_density(&resid, &chol);
        let mean = &mu_x + &sxy_r * chol.solve(&resid);
        let cov = symmetrize(&(&sxx - &sxy_r * chol.solve(&sxy_r.transpose())));
        Ok((mean, cov, log_py))
    };
    let block = |mean: &DVector<f64>, cov: &DMatrix<f64>, k: usize| GaussianMoments {
        mean: mean.rows(k * n, n).into_owned(),
        cov: cov.view((k * n, k * n), (n, n)).into_owned(),
    };

    let mut filtered = Vec::with_capacity(k_f);
    let mut prefix_log_likelihood = Vec::with_capacity(k_f);
    let mut smoothed = Vec::new();
    for k in 0..k_f {
        let (mean, cov, log_py) = condition_on((k + 1) * p)?;
        filtered.push(block(&mean, &cov, k));
        prefix_log_likelihood.push(log_py);
        if k + 1 == k_f {
            smoothed = (0..k_f).map(|j| block(&mean, &cov, j)).collect();
        }
    }
    Ok(OracleOutput {
        smoothed,
        filtered,
        prefix_log_likelihood,
    })
}
