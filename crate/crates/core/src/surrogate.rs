//! Per-frequency linear surrogate of the forward model.
//!
//! A training set is drawn from the prior and pushed through a forward model;
//! a least-squares fit `y ≈ A x + y0` (via QR of the design `[1 x]`) gives the
//! surrogate, and the held-out residual covariance `R_l` is added to the
//! measurement covariance `σ_n² I`.
//!
//! The shipped forward model is synthetic: `y = A* x + y0* + γ g(x)` with
//! seeded ground truth `A*`, `y0*` and a bounded smooth nonlinearity `g`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::armodel::{PriorSpec, PriorStructure, Property};
use crate::error::{Error, Result};
use crate::io;
use crate::lgss::ObservationStage;
use crate::linalg::{standard_normal_vector, symmetrize};
use crate::rng::{self, substream};

/// Deterministic map from state to noiseless observation, one per stage.
pub trait ForwardModel: Sync {
    fn num_stages(&self) -> usize;
    fn state_dim(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn evaluate(&self, stage: usize, x: &DVector<f64>) -> DVector<f64>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticForwardConfig {
    pub seed: u64,
    /// Weight of the nonlinearity; zero gives an exactly linear model.
    #[serde(default)]
    pub gamma: f64,
    /// Blend of eps'' columns into mu' (and eps' into mu''), in [0, 1).
    /// Larger values make the observation matrices ill-conditioned.
    #[serde(default)]
    pub coupling: f64,
    /// Typical magnitude of observation-matrix entries times sqrt(state_dim).
    #[serde(default = "default_gain")]
    pub gain: f64,
}

fn default_gain() -> f64 {
    0.05
}

impl SyntheticForwardConfig {
    pub fn linear(seed: u64) -> Self {
        Self {
            seed,
            gamma: 0.0,
            coupling: 0.0,
            gain: default_gain(),
        }
    }
}

#[derive(Debug, Clone)]
struct SyntheticStage {
    matrix: DMatrix<f64>,
    offset: DVector<f64>,
    warp: DMatrix<f64>,
    warp_offset: DVector<f64>,
    warp_scale: f64,
}

/// Synthetic stand-in for the electromagnetic solver.
#[derive(Debug, Clone)]
pub struct SyntheticForward {
    gamma: f64,
    obs_dim: usize,
    state_dim: usize,
    stages: Vec<SyntheticStage>,
}

/// Prior draws used to normalize the nonlinearity to unit RMS.
const WARP_CALIBRATION_DRAWS: usize = 64;

impl SyntheticForward {
    pub fn new(config: &SyntheticForwardConfig, prior: &PriorStructure, obs_dim: usize) -> Result<Self> {
        if !(0.0..1.0).contains(&config.coupling) {
            return Err(Error::param("coupling must lie in [0, 1)"));
        }
        if config.gamma < 0.0 {
            return Err(Error::param("gamma must be non-negative"));
        }
        let n = prior.state_dim();
        let zones = prior.layout.num_zones();
        let stages = (0..prior.num_stages())
            .map(|k| {
                let mut rng = substream(config.seed, &[0x5EED, k as u64]);
                let entry = config.gain / (n as f64).sqrt();
                let mut matrix = DMatrix::from_fn(obs_dim, n, |_, _| {
                    entry * rng.sample::<f64, _>(StandardNormal)
                });
                if config.coupling > 0.0 {
                    let c = config.coupling;
                    for (target, source) in [
                        (Property::MuReal, Property::EpsImag),
                        (Property::MuImag, Property::EpsReal),
                    ] {
                        for z in 0..zones {
                            let t = target.index() * zones + z;
                            let s = source.index() * zones + z;
                            let blended = matrix.column(t) * (1.0 - c) + matrix.column(s) * c;
                            matrix.set_column(t, &blended);
                        }
                    }
                }
                let offset = standard_normal_vector(&mut rng, obs_dim) * config.gain;
                let sigma = prior.covs[k].diagonal().map(f64::sqrt);
                let warp = DMatrix::from_fn(obs_dim, n, |_, j| {
                    rng.sample::<f64, _>(StandardNormal) / ((n as f64).sqrt() * sigma[j])
                });
                let warp_offset = -(&warp * &prior.means[k]) + standard_normal_vector(&mut rng, obs_dim) * 0.5;
                let mut sq = 0.0;
                for _ in 0..WARP_CALIBRATION_DRAWS {
                    let x = &prior.means[k] + &prior.roots[k] * standard_normal_vector(&mut rng, n);
                    let g = (&warp * x + &warp_offset).map(f64::tanh);
                    sq += g.norm_squared();
                }
                let rms = (sq / (WARP_CALIBRATION_DRAWS * obs_dim) as f64).sqrt();
                SyntheticStage {
                    matrix,
                    offset,
                    warp,
                    warp_offset,
                    warp_scale: if rms > 0.0 { 1.0 / rms } else { 0.0 },
                }
            })
            .collect();
        Ok(Self {
            gamma: config.gamma,
            obs_dim,
            state_dim: n,
            stages,
        })
    }

    /// Ground-truth linear part `(A*, y0*)` of one stage.
    pub fn linear_part(&self, stage: usize) -> (&DMatrix<f64>, &DVector<f64>) {
        (&self.stages[stage].matrix, &self.stages[stage].offset)
    }

    /// Unit-RMS nonlinearity g_k(x).
    pub fn nonlinearity(&self, stage: usize, x: &DVector<f64>) -> DVector<f64> {
        let s = &self.stages[stage];
        (&s.warp * x + &s.warp_offset).map(|v| v.tanh() * s.warp_scale)
    }
}

impl ForwardModel for SyntheticForward {
    fn num_stages(&self) -> usize {
        self.stages.len()
    }

    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    fn evaluate(&self, stage: usize, x: &DVector<f64>) -> DVector<f64> {
        let s = &self.stages[stage];
        let mut y = &s.matrix * x + &s.offset;
        if self.gamma != 0.0 {
            y += self.nonlinearity(stage, x) * self.gamma;
        }
        y
    }
}

/// Samples of one stage, one row per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSamples {
    #[serde(with = "io::matrix")]
    pub inputs: DMatrix<f64>,
    #[serde(with = "io::matrix")]
    pub outputs: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    pub num_samples: usize,
    pub stages: Vec<StageSamples>,
}

/// Default training size `10 (4N + 1)`.
pub fn default_num_samples(state_dim: usize) -> usize {
    10 * (state_dim + 1)
}

/// Draws `x ~ N(m_k, P_k)` and evaluates the forward model at every stage.
pub fn sample_training_set(
    fwd: &dyn ForwardModel,
    prior: &PriorSpec,
    num_samples: usize,
    seed: u64,
) -> Result<TrainingSet> {
    let structure = PriorStructure::new(prior)?;
    sample_training_set_with(fwd, &structure, num_samples, seed)
}

pub fn sample_training_set_with(
    fwd: &dyn ForwardModel,
    prior: &PriorStructure,
    num_samples: usize,
    seed: u64,
) -> Result<TrainingSet> {
    let n = prior.state_dim();
    if num_samples <= n + 1 {
        return Err(Error::TooFewSamples {
            required: n + 1,
            got: num_samples,
        });
    }
    if fwd.state_dim() != n || fwd.num_stages() != prior.num_stages() {
        return Err(Error::dim("forward model does not match the prior"));
    }
    let p = fwd.obs_dim();
    let stages = (0..prior.num_stages())
        .map(|k| {
            let rows: Vec<(DVector<f64>, DVector<f64>)> = (0..num_samples)
                .into_par_iter()
                .map(|i| {
                    let mut rng = substream(seed, &[k as u64, i as u64]);
                    let x = &prior.means[k] + &prior.roots[k] * standard_normal_vector(&mut rng, n);
                    let y = fwd.evaluate(k, &x);
                    (x, y)
                })
                .collect();
            StageSamples {
                inputs: DMatrix::from_fn(num_samples, n, |i, j| rows[i].0[j]),
                outputs: DMatrix::from_fn(num_samples, p, |i, j| rows[i].1[j]),
            }
        })
        .collect();
    Ok(TrainingSet {
        num_samples,
        stages,
    })
}

/// Least-squares coefficients of one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    /// A (obs_dim × state_dim); pruned columns are zero.
    pub matrix: DMatrix<f64>,
    pub offset: DVector<f64>,
    /// Training residuals, one row per sample.
    pub residuals: DMatrix<f64>,
    /// State columns retained by the fit.
    pub kept: Vec<bool>,
}

impl LinearFit {
    pub fn predict(&self, inputs: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = inputs * self.matrix.transpose();
        for mut row in out.row_iter_mut() {
            row += self.offset.transpose();
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Drop state columns whose largest |t|-statistic over outputs is below
    /// this threshold, then refit. `None` keeps every column.
    pub prune_t: Option<f64>,
}

/// Relative size of an R diagonal entry below which a design column is
/// declared linearly dependent.
const RANK_TOL: f64 = 1e-10;

fn design(inputs: &DMatrix<f64>, columns: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(inputs.nrows(), columns.len() + 1, |i, j| {
        if j == 0 {
            1.0
        } else {
            inputs[(i, columns[j - 1])]
        }
    })
}

/// QR least squares of `design · coef ≈ outputs`; never forms `XᵀX`.
fn qr_solve(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let qr = x.clone().qr();
    let r = qr.r();
    let scale = (0..r.ncols()).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    let deficient: Vec<usize> = (0..r.ncols())
        .filter(|&i| r[(i, i)].abs() <= RANK_TOL * scale)
        .collect();
    if !deficient.is_empty() {
        return Err(Error::RankDeficient { columns: deficient });
    }
    let qty = qr.q().transpose() * y;
    let coef = r
        .solve_upper_triangular(&qty)
        .ok_or(Error::RankDeficient { columns: vec![] })?;
    Ok((coef, r))
}

pub fn fit_stage(samples: &StageSamples) -> Result<LinearFit> {
    fit_stage_with(samples, FitOptions::default())
}

pub fn fit_stage_with(samples: &StageSamples, options: FitOptions) -> Result<LinearFit> {
    let (rows, n) = samples.inputs.shape();
    if samples.outputs.nrows() != rows {
        return Err(Error::dim("inputs and outputs have different sample counts"));
    }
    if rows <= n + 1 {
        return Err(Error::TooFewSamples {
            required: n + 1,
            got: rows,
        });
    }
    let all: Vec<usize> = (0..n).collect();
    let x = design(&samples.inputs, &all);
    let (mut coef, r) = qr_solve(&x, &samples.outputs)?;
    let mut columns = all;

    if let Some(threshold) = options.prune_t {
        let dof = (rows - x.ncols()) as f64;
        let resid = &samples.outputs - &x * &coef;
        let s2: Vec<f64> = resid.column_iter().map(|c| c.norm_squared() / dof).collect();
        let r_inv = r
            .solve_upper_triangular(&DMatrix::identity(r.nrows(), r.ncols()))
            .ok_or(Error::RankDeficient { columns: vec![] })?;
        // diag((XᵀX)⁻¹) = squared row norms of R⁻¹
        let keep: Vec<usize> = (0..n)
            .filter(|&j| {
                let v = r_inv.row(j + 1).norm_squared();
                (0..coef.ncols()).any(|o| {
                    let se = (s2[o] * v).sqrt();
                    let t = if se > 0.0 {
                        coef[(j + 1, o)].abs() / se
                    } else {
                        f64::INFINITY
                    };
                    t >= threshold
                })
            })
            .collect();
        if keep.len() < n {
            let (c, _) = qr_solve(&design(&samples.inputs, &keep), &samples.outputs)?;
            coef = c;
            columns = keep;
        }
    }

    let p = samples.outputs.ncols();
    let mut matrix = DMatrix::zeros(p, n);
    for (jj, &j) in columns.iter().enumerate() {
        matrix.set_column(j, &coef.row(jj + 1).transpose());
    }
    let offset = coef.row(0).transpose();
    let mut kept = vec![false; n];
    for &j in &columns {
        kept[j] = true;
    }
    let mut fit = LinearFit {
        matrix,
        offset,
        residuals: DMatrix::zeros(0, 0),
        kept,
    };
    fit.residuals = &samples.outputs - fit.predict(&samples.inputs);
    Ok(fit)
}

pub fn fit_linear(train: &TrainingSet) -> Result<Vec<LinearFit>> {
    train.stages.iter().map(fit_stage).collect()
}

/// Unbiased sample covariance of residual rows, symmetrized.
pub fn residual_covariance(residuals: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = residuals.nrows();
    if m < 2 {
        return Err(Error::TooFewResiduals(m));
    }
    let mean = residuals.row_mean();
    let mut centered = residuals.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    Ok(symmetrize(&(centered.transpose() * &centered / (m - 1) as f64)))
}

/// Fraction of samples used for fitting; the rest estimate `R_l`.
pub const TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateStage {
    #[serde(with = "io::matrix")]
    pub matrix: DMatrix<f64>,
    #[serde(with = "io::vector")]
    pub offset: DVector<f64>,
    /// `R_m + R_l`.
    #[serde(with = "io::matrix")]
    pub noise_cov: DMatrix<f64>,
    /// Held-out linearization covariance `R_l` alone.
    #[serde(with = "io::matrix")]
    pub linearization_cov: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateModel {
    pub noise_sigma: f64,
    pub stages: Vec<SurrogateStage>,
}

impl SurrogateModel {
    pub fn state_dim(&self) -> usize {
        self.stages[0].matrix.ncols()
    }

    pub fn obs_dim(&self) -> usize {
        self.stages[0].matrix.nrows()
    }

    pub fn observation_stages(&self) -> Vec<ObservationStage> {
        self.stages
            .iter()
            .map(|s| ObservationStage {
                matrix: s.matrix.clone(),
                offset: s.offset.clone(),
                noise_cov: s.noise_cov.clone(),
            })
            .collect()
    }

    /// Surrogate that is exactly the linear part of a synthetic forward model,
    /// with measurement noise only.
    pub fn exact(fwd: &SyntheticForward, noise_sigma: f64) -> Self {
        let p = fwd.obs_dim();
        let stages = (0..fwd.num_stages())
            .map(|k| {
                let (a, y0) = fwd.linear_part(k);
                SurrogateStage {
                    matrix: a.clone(),
                    offset: y0.clone(),
                    noise_cov: DMatrix::from_diagonal_element(p, p, noise_sigma * noise_sigma),
                    linearization_cov: DMatrix::zeros(p, p),
                }
            })
            .collect();
        Self { noise_sigma, stages }
    }
}

/// Fits every stage on the first 80% of samples and estimates `R_l` from the
/// held-out 20%; `R_k = σ_n² I + R_l`.
pub fn train_surrogate(train: &TrainingSet, noise_sigma: f64, options: FitOptions) -> Result<SurrogateModel> {
    let stages = train
        .stages
        .iter()
        .map(|s| {
            let rows = s.inputs.nrows();
            let cut = ((rows as f64) * TRAIN_FRACTION).floor() as usize;
            let fit_part = StageSamples {
                inputs: s.inputs.rows(0, cut).into_owned(),
                outputs: s.outputs.rows(0, cut).into_owned(),
            };
            let holdout_inputs = s.inputs.rows(cut, rows - cut).into_owned();
            let holdout_outputs = s.outputs.rows(cut, rows - cut).into_owned();
            let fit = fit_stage_with(&fit_part, options)?;
            let residuals = holdout_outputs - fit.predict(&holdout_inputs);
            let linearization_cov = residual_covariance(&residuals)?;
            let p = linearization_cov.nrows();
            let noise_cov = symmetrize(
                &(DMatrix::from_diagonal_element(p, p, noise_sigma * noise_sigma) + &linearization_cov),
            );
            Ok(SurrogateStage {
                matrix: fit.matrix,
                offset: fit.offset,
                noise_cov,
                linearization_cov,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SurrogateModel { noise_sigma, stages })
}

const BINARY_MAGIC: &[u8; 8] = b"RBSMSURR";
const BINARY_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct BinaryHeader {
    num_stages: usize,
    state_dim: usize,
    obs_dim: usize,
    noise_sigma: f64,
    layout: String,
}

const BINARY_LAYOUT: &str =
    "per stage: matrix, offset, noise_cov, linearization_cov; row-major little-endian f64";

/// Binary layout: 8-byte magic `RBSMSURR`, u32 LE version, u64 LE header
/// length, JSON header, then the raw f64 payload described in the header.
pub fn write_surrogate_binary(path: impl AsRef<Path>, model: &SurrogateModel) -> Result<()> {
    let header = serde_json::to_vec(&BinaryHeader {
        num_stages: model.stages.len(),
        state_dim: model.state_dim(),
        obs_dim: model.obs_dim(),
        noise_sigma: model.noise_sigma,
        layout: BINARY_LAYOUT.to_string(),
    })?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(BINARY_MAGIC)?;
    w.write_all(&BINARY_VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    let mut put = |m: &DMatrix<f64>| -> std::io::Result<()> {
        for row in m.row_iter() {
            for v in row.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    };
    for s in &model.stages {
        put(&s.matrix)?;
        put(&DMatrix::from_column_slice(1, s.offset.len(), s.offset.as_slice()))?;
        put(&s.noise_cov)?;
        put(&s.linearization_cov)?;
    }
    drop(put);
    w.flush()?;
    Ok(())
}

pub fn read_surrogate_binary(path: impl AsRef<Path>) -> Result<SurrogateModel> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != BINARY_MAGIC {
        return Err(Error::param("not a surrogate binary file"));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    if u32::from_le_bytes(word) != BINARY_VERSION {
        return Err(Error::param("unsupported surrogate binary version"));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let mut header = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut header)?;
    let header: BinaryHeader = serde_json::from_slice(&header)?;
    let mut take = |rows: usize, cols: usize| -> Result<DMatrix<f64>> {
        let mut buf = vec![0u8; rows * cols * 8];
        r.read_exact(&mut buf)?;
        let vals: Vec<f64> = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(DMatrix::from_row_slice(rows, cols, &vals))
    };
    let (n, p) = (header.state_dim, header.obs_dim);
    let stages = (0..header.num_stages)
        .map(|_| {
            let matrix = take(p, n)?;
            let offset = DVector::from_iterator(p, take(1, p)?.iter().copied());
            let noise_cov = take(p, p)?;
            let linearization_cov = take(p, p)?;
            Ok(SurrogateStage {
                matrix,
                offset,
                noise_cov,
                linearization_cov,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SurrogateModel {
        noise_sigma: header.noise_sigma,
        stages,
    })
}

/// Reads a surrogate from JSON or from the binary format, by magic bytes.
pub fn read_surrogate(path: impl AsRef<Path>) -> Result<SurrogateModel> {
    let mut magic = [0u8; 8];
    let is_binary = File::open(path.as_ref())
        .and_then(|mut f| f.read_exact(&mut magic))
        .map(|_| &magic == BINARY_MAGIC)
        .unwrap_or(false);
    if is_binary {
        read_surrogate_binary(path)
    } else {
        io::read_json(path)
    }
}

/// Noiseless observation at one stage plus `σ_n` white noise.
pub fn noisy_observation(
    fwd: &dyn ForwardModel,
    stage: usize,
    x: &DVector<f64>,
    noise_sigma: f64,
    rng: &mut rng::Rng,
) -> DVector<f64> {
    fwd.evaluate(stage, x) + standard_normal_vector(rng, fwd.obs_dim()) * noise_sigma
}
