//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;

use rbsmc::armodel::RhoMode;
use rbsmc::lgss::{GaussianMoments, LgssModel, ObservationStage, Transition};
use rbsmc::rng::{from_seed, Rng};
use rbsmc::scenario::{Scenario, ScenarioSpec};
use rbsmc::smc::{InversionProblem, LikelihoodModel, RhoPrior};

pub fn normal_matrix(rng: &mut Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

pub fn normal_vector(rng: &mut Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// `L Lᵀ + floor I` with a random `L`.
pub fn random_spd(rng: &mut Rng, n: usize, floor: f64) -> DMatrix<f64> {
    let l = normal_matrix(rng, n, n);
    &l * l.transpose() / n as f64 + DMatrix::identity(n, n) * floor
}

/// Random stable model with `k_f` stages, state `n`, observation `p`, plus a draw of data.
pub fn random_model(seed: u64, k_f: usize, n: usize, p: usize) -> (LgssModel, Vec<DVector<f64>>) {
    let mut rng = from_seed(seed);
    let init = GaussianMoments {
        mean: normal_vector(&mut rng, n),
        cov: random_spd(&mut rng, n, 0.2),
    };
    let transitions = (0..k_f - 1)
        .map(|_| {
            let m = normal_matrix(&mut rng, n, n);
            let norm = m.norm() / (n as f64).sqrt();
            Transition {
                matrix: m * (0.9 / norm.max(1e-9)),
                offset: normal_vector(&mut rng, n) * 0.3,
                noise_cov: random_spd(&mut rng, n, 0.1),
            }
        })
        .collect();
    let observations = (0..k_f)
        .map(|_| ObservationStage {
            matrix: normal_matrix(&mut rng, p, n),
            offset: normal_vector(&mut rng, p),
            noise_cov: random_spd(&mut rng, p, 0.05),
        })
        .collect();
    let ys = (0..k_f).map(|_| normal_vector(&mut rng, p) * 2.0).collect();
    (LgssModel::new(init, observations, transitions).unwrap(), ys)
}

/// Dense conditioning oracle, written independently of the library.
pub struct DenseOracle {
    pub smoothed: Vec<(DVector<f64>, DMatrix<f64>)>,
    pub filtered: Vec<(DVector<f64>, DMatrix<f64>)>,
    pub log_likelihood: f64,
}

pub fn dense_oracle(model: &LgssModel, ys: &[DVector<f64>]) -> DenseOracle {
    let k_f = model.num_stages();
    let n = model.state_dim();
    let p = model.obs_dim();
    // Stage moments, then cross-covariances Cov(x_i, x_j) = Φ_{i←j} P_j for i ≥ j.
    let mut mean = vec![model.init.mean.clone()];
    let mut cov = vec![model.init.cov.clone()];
    for t in &model.transitions {
        let m = &t.matrix * mean.last().unwrap() + &t.offset;
        let c = &t.matrix * cov.last().unwrap() * t.matrix.transpose() + &t.noise_cov;
        mean.push(m);
        cov.push(c);
    }
    let big = n * k_f;
    let mut sx = DMatrix::zeros(big, big);
    for j in 0..k_f {
        let mut phi = DMatrix::<f64>::identity(n, n);
        for i in j..k_f {
            if i > j {
                phi = &model.transitions[i - 1].matrix * phi;
            }
            let c = &phi * &cov[j];
            sx.view_mut((i * n, j * n), (n, n)).copy_from(&c);
            sx.view_mut((j * n, i * n), (n, n)).copy_from(&c.transpose());
        }
    }
    let mx = DVector::from_iterator(big, mean.iter().flat_map(|m| m.iter().copied()));
    let condition = |stages: usize| {
        let q = p * stages;
        let mut h = DMatrix::zeros(q, big);
        let mut r = DMatrix::zeros(q, q);
        let mut resid = DVector::zeros(q);
        for k in 0..stages {
            let o = &model.observations[k];
            h.view_mut((k * p, k * n), (p, n)).copy_from(&o.matrix);
            r.view_mut((k * p, k * p), (p, p)).copy_from(&o.noise_cov);
            let pred = &o.matrix * &mean[k] + &o.offset;
            resid.rows_mut(k * p, p).copy_from(&(&ys[k] - pred));
        }
        let s = &h * &sx * h.transpose() + r;
        let s = (&s + s.transpose()) * 0.5;
        let s_inv = s.clone().try_inverse().expect("invertible innovation");
        let gain = &sx * h.transpose() * &s_inv;
        let post_mean = &mx + &gain * &resid;
        let post_cov = &sx - &gain * &h * &sx;
        let logdet = s.determinant().ln();
        let quad = (resid.transpose() * &s_inv * &resid)[(0, 0)];
        let ll = -0.5 * (q as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + quad);
        (post_mean, post_cov, ll)
    };
    let block = |m: &DVector<f64>, c: &DMatrix<f64>, k: usize| {
        (
            m.rows(k * n, n).into_owned(),
            c.view((k * n, k * n), (n, n)).into_owned(),
        )
    };
    let (sm, sc, ll) = condition(k_f);
    let smoothed = (0..k_f).map(|k| block(&sm, &sc, k)).collect();
    let filtered = (0..k_f)
        .map(|k| {
            let (m, c, _) = condition(k + 1);
            block(&m, &c, k)
        })
        .collect();
    DenseOracle {
        smoothed,
        filtered,
        log_likelihood: ll,
    }
}

pub fn rel_err_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1.0)
}

pub fn rel_err_mat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1.0)
}

/// Symmetric square root by eigendecomposition, written for the tests.
pub fn oracle_sqrt(p: &DMatrix<f64>) -> DMatrix<f64> {
    let e = p.clone().symmetric_eigen();
    &e.eigenvectors * DMatrix::from_diagonal(&e.eigenvalues.map(f64::sqrt)) * e.eigenvectors.transpose()
}

/// Desk scenario with one shared rho, its simulated data and the inversion problem.
pub fn desk_scalar_problem(particles: usize) -> (Scenario, InversionProblem) {
    let mut spec = ScenarioSpec::desk();
    spec.rho_mode = RhoMode::Scalar;
    spec.smc.num_particles = particles;
    let scenario = Scenario::new(spec).unwrap();
    let surrogate = scenario.train_surrogate().unwrap();
    let ys = scenario.simulate(&scenario.truth(), scenario.spec.seeds.observation).unwrap();
    let problem = scenario.problem(&surrogate, ys).unwrap();
    (scenario, problem)
}

/// Midpoint-rule posterior of a scalar rho on `points` cells of [0, 1].
pub struct Quadrature {
    pub nodes: Vec<f64>,
    /// Normalized so that they sum to one.
    pub weights: Vec<f64>,
}

impl Quadrature {
    pub fn posterior<L: LikelihoodModel>(model: &L, prior: &RhoPrior, points: usize) -> Self {
        let nodes: Vec<f64> = (0..points).map(|i| (i as f64 + 0.5) / points as f64).collect();
        let log_post: Vec<f64> = nodes
            .iter()
            .map(|&r| {
                prior.log_density(&[r]) + model.log_increments(&[r]).unwrap().iter().sum::<f64>()
            })
            .collect();
        Self::from_log(nodes, &log_post)
    }

    pub fn from_log(nodes: Vec<f64>, log_w: &[f64]) -> Self {
        let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = w.iter().sum();
        Self {
            nodes,
            weights: w.into_iter().map(|v| v / total).collect(),
        }
    }

    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&r, &w)| w * f(r)).sum()
    }

    pub fn mean_sd(&self) -> (f64, f64) {
        let m = self.expect(|r| r);
        (m, self.expect(|r| (r - m) * (r - m)).sqrt())
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let h = 0.5 / self.nodes.len() as f64;
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&r, &w)| w * ((x - (r - h)) / (2.0 * h)).clamp(0.0, 1.0))
            .sum()
    }
}

pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt())
}
