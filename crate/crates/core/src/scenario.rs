//! Synthetic nondestructive-testing experiment and its statistical harness.
//!
//! A scenario fixes a prior, a synthetic forward model, a perturbed ground
//! truth `x_true(f) = x_ref(f) + c(area) Λ(f)` and the measurement noise. The
//! two studies repeat the full inversion either on one dataset with fresh
//! sampler seeds (stochastic variation) or on independent datasets (average
//! precision).

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::armodel::{
    build_prior_mean, AreaLayout, CorrelationParam, FrequencyGrid, PriorSpec, PriorStructure, Property,
    ReferenceTable, RhoMode, SigmaRule, NUM_PROPERTIES,
};
use crate::error::{Error, Result};
use crate::estimator::{summarize, PosteriorSummary};
use crate::io;
use crate::linalg::{psd_factor, standard_normal_vector};
use crate::rng::{derive_seed, substream, Rng};
use crate::smc::{smc_run_with, GenerationRecord, InversionProblem, ParticleCloud, SmcConfig};
use crate::surrogate::{
    default_num_samples, noisy_observation, sample_training_set_with, train_surrogate, FitOptions,
    ForwardModel, SurrogateModel, SyntheticForward, SyntheticForwardConfig,
};

/// Perturbation profile as a function of normalized frequency `t ∈ [0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Constant { value: f64 },
    /// `amplitude · sin(2π · cycles · t + phase)`.
    Sinusoid { amplitude: f64, cycles: f64, phase: f64 },
    /// `amplitude` for `t ≥ at`, zero before.
    Step { amplitude: f64, at: f64 },
    /// Linear from `start` at `t = 0` to `end` at `t = 1`.
    Ramp { start: f64, end: f64 },
    /// Sum of the parts.
    Composite { parts: Vec<Shape> },
}

impl Shape {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Shape::Constant { value } => *value,
            Shape::Sinusoid {
                amplitude,
                cycles,
                phase,
            } => amplitude * (2.0 * PI * cycles * t + phase).sin(),
            Shape::Step { amplitude, at } => {
                if t >= *at {
                    *amplitude
                } else {
                    0.0
                }
            }
            Shape::Ramp { start, end } => start + (end - start) * t,
            Shape::Composite { parts } => parts.iter().map(|p| p.eval(t)).sum(),
        }
    }

    /// `±amplitude` alternating at every grid point of a `count`-point grid.
    pub fn alternating(amplitude: f64, count: usize) -> Self {
        Shape::Sinusoid {
            amplitude,
            cycles: (count.max(2) - 1) as f64 / 2.0,
            phase: PI / 2.0,
        }
    }
}

/// Replaces the shape of one area, for one property or for all of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeOverride {
    pub area: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub property: Option<Property>,
    pub shape: Shape,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    /// One shape per property, in property order.
    pub shapes: Vec<Shape>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub overrides: Vec<ShapeOverride>,
}

impl Perturbation {
    pub fn shape(&self, property: Property, area: usize) -> &Shape {
        self.overrides
            .iter()
            .rev()
            .find(|o| o.area == area && o.property.is_none_or(|p| p == property))
            .map_or(&self.shapes[property.index()], |o| &o.shape)
    }

    pub fn presets() -> Self {
        Self {
            shapes: vec![
                Shape::Sinusoid {
                    amplitude: 1.0,
                    cycles: 1.0,
                    phase: 0.0,
                },
                Shape::Step {
                    amplitude: 1.0,
                    at: 0.5,
                },
                Shape::Ramp { start: -1.0, end: 1.0 },
                Shape::Composite {
                    parts: vec![
                        Shape::Sinusoid {
                            amplitude: 0.5,
                            cycles: 2.0,
                            phase: 0.0,
                        },
                        Shape::Ramp { start: 0.0, end: 1.0 },
                    ],
                },
            ],
            overrides: Vec::new(),
        }
    }
}

/// Ground truth used when datasets are simulated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TruthMode {
    /// `x_ref + c Λ`, the same for every dataset.
    Fixed,
    /// A fresh draw per dataset from the AR prior with every rho component
    /// equal to `rho`.
    PriorDraw { rho: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub training: u64,
    pub observation: u64,
    pub truth: u64,
    pub smc: u64,
}

impl Seeds {
    pub fn from_base(seed: u64) -> Self {
        Self {
            training: derive_seed(seed, &[1]),
            observation: derive_seed(seed, &[2]),
            truth: derive_seed(seed, &[3]),
            smc: derive_seed(seed, &[4]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub prior: PriorSpec,
    /// Number of incidence angles; observations have `4 K_θ` components.
    pub k_theta: usize,
    pub forward: SyntheticForwardConfig,
    pub perturbation: Perturbation,
    /// Perturbation scale per area.
    pub scale: Vec<f64>,
    pub noise_sigma: f64,
    pub rho_mode: RhoMode,
    /// Training samples for the surrogate; `None` uses `10 (4N + 1)`.
    #[serde(default)]
    pub training_samples: Option<usize>,
    #[serde(default)]
    pub fit: FitOptions,
    pub smc: SmcConfig,
    #[serde(default = "default_truth")]
    pub truth: TruthMode,
    pub seeds: Seeds,
}

fn default_truth() -> TruthMode {
    TruthMode::Fixed
}

impl ScenarioSpec {
    /// Small scenario that keeps every structural feature: 4 zones in 2
    /// areas, 6 frequencies, 12 observation components, 100 particles.
    pub fn desk() -> Self {
        let layout = AreaLayout::even(4, 2).expect("valid desk layout");
        let (f0, f1) = (0.2, 8.0);
        let mut smc = SmcConfig::default();
        smc.num_particles = 100;
        Self {
            prior: PriorSpec {
                reference: ReferenceTable::default_profiles(layout.num_areas(), f0, f1),
                layout,
                frequencies_ghz: FrequencyGrid::regular(f0, f1, 6).expect("valid grid"),
                rho_s: 0.95,
                sigma_rule: SigmaRule::default(),
            },
            k_theta: 3,
            forward: SyntheticForwardConfig {
                gamma: 0.01,
                ..SyntheticForwardConfig::linear(11)
            },
            perturbation: Perturbation::presets(),
            scale: vec![0.5, 1.0],
            noise_sigma: 1e-3,
            rho_mode: RhoMode::PerArea,
            training_samples: None,
            fit: FitOptions::default(),
            smc,
            truth: TruthMode::Fixed,
            seeds: Seeds::from_base(2024),
        }
    }

    /// Full-size configuration: 19 zones in 5 areas, 20 frequencies over
    /// 0.2–8 GHz, 23 angles, c = (0.5, 1, 2, 4, 8), σ_n = 1e-3, ρ_S = 0.95,
    /// 100 particles and one rho per (property, area).
    pub fn full_scale() -> Self {
        let layout = AreaLayout::even(19, 5).expect("valid layout");
        let (f0, f1) = (0.2, 8.0);
        Self {
            prior: PriorSpec {
                reference: ReferenceTable::default_profiles(layout.num_areas(), f0, f1),
                layout,
                frequencies_ghz: FrequencyGrid::regular(f0, f1, 20).expect("valid grid"),
                rho_s: 0.95,
                sigma_rule: SigmaRule::default(),
            },
            k_theta: 23,
            forward: SyntheticForwardConfig {
                gamma: 0.01,
                ..SyntheticForwardConfig::linear(11)
            },
            perturbation: Perturbation::presets(),
            scale: vec![0.5, 1.0, 2.0, 4.0, 8.0],
            noise_sigma: 1e-3,
            rho_mode: RhoMode::PerAreaProperty,
            training_samples: None,
            fit: FitOptions::default(),
            smc: SmcConfig::default(),
            truth: TruthMode::Fixed,
            seeds: Seeds::from_base(2024),
        }
    }

    pub fn obs_dim(&self) -> usize {
        NUM_PROPERTIES * self.k_theta
    }

    pub fn num_stages(&self) -> usize {
        self.prior.num_stages()
    }

    pub fn validate(&self) -> Result<()> {
        self.prior.validate()?;
        let na = self.prior.layout.num_areas();
        if self.scale.len() != na {
            return Err(Error::param(format!("{} scale factors for {na} areas", self.scale.len())));
        }
        if !(self.noise_sigma > 0.0) {
            return Err(Error::param("noise sigma must be positive"));
        }
        if self.k_theta == 0 {
            return Err(Error::param("need at least one angle"));
        }
        if self.perturbation.shapes.len() != NUM_PROPERTIES {
            return Err(Error::param("perturbation needs one shape per property"));
        }
        if let Some(o) = self.perturbation.overrides.iter().find(|o| o.area >= na) {
            return Err(Error::param(format!("override for area {} of {na}", o.area)));
        }
        if let TruthMode::PriorDraw { rho } = self.truth {
            if !(0.0..=1.0).contains(&rho) {
                return Err(Error::param("truth rho must lie in [0, 1]"));
            }
        }
        Ok(())
    }
}

/// `x_ref(f_k) + c(area) Λ(f_k)` as a `4N × K_f` matrix.
pub fn build_truth(spec: &ScenarioSpec) -> DMatrix<f64> {
    let layout = &spec.prior.layout;
    let grid = &spec.prior.frequencies_ghz;
    let mut x = DMatrix::zeros(layout.state_dim(), grid.len());
    for k in 0..grid.len() {
        let mut col = build_prior_mean(&spec.prior, k);
        let t = grid.normalized(k);
        for (p, a, rows) in layout.blocks() {
            let delta = spec.scale[a] * spec.perturbation.shape(p, a).eval(t);
            for i in rows {
                col[i] += delta;
            }
        }
        x.set_column(k, &col);
    }
    x
}

/// One path of the AR prior with the given correlation.
pub fn sample_prior_path(structure: &PriorStructure, rho: &CorrelationParam, rng: &mut Rng) -> Result<DMatrix<f64>> {
    let n = structure.state_dim();
    let transitions = structure.dynamics(rho)?;
    let mut x = DMatrix::zeros(n, structure.num_stages());
    let mut cur = &structure.means[0] + &structure.roots[0] * standard_normal_vector(rng, n);
    x.set_column(0, &cur);
    for (k, t) in transitions.iter().enumerate() {
        cur = &t.matrix * &cur + &t.offset + psd_factor(&t.noise_cov) * standard_normal_vector(rng, n);
        x.set_column(k + 1, &cur);
    }
    Ok(x)
}

/// `y_k = F_k(x_true[:, k]) + N(0, σ_n² I)`, deterministic in `seed`.
pub fn simulate_observations(
    fwd: &dyn ForwardModel,
    x_true: &DMatrix<f64>,
    noise_sigma: f64,
    seed: u64,
) -> Result<Vec<DVector<f64>>> {
    if x_true.nrows() != fwd.state_dim() || x_true.ncols() != fwd.num_stages() {
        return Err(Error::dim(format!(
            "truth is {}×{}, forward model expects {}×{}",
            x_true.nrows(),
            x_true.ncols(),
            fwd.state_dim(),
            fwd.num_stages()
        )));
    }
    Ok((0..fwd.num_stages())
        .map(|k| {
            let mut rng = substream(seed, &[k as u64]);
            noisy_observation(fwd, k, &x_true.column(k).into_owned(), noise_sigma, &mut rng)
        })
        .collect())
}

/// Prior structure and synthetic forward model of a validated spec.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub structure: PriorStructure,
    pub forward: SyntheticForward,
}

/// Result of one inversion.
#[derive(Debug, Clone)]
pub struct Inversion {
    pub summary: PosteriorSummary,
    pub cloud: ParticleCloud,
    pub trace: Vec<GenerationRecord>,
}

impl Scenario {
    pub fn new(spec: ScenarioSpec) -> Result<Self> {
        spec.validate()?;
        let structure = PriorStructure::new(&spec.prior)?;
        let forward = SyntheticForward::new(&spec.forward, &structure, spec.obs_dim())?;
        Ok(Self {
            spec,
            structure,
            forward,
        })
    }

    pub fn train_surrogate(&self) -> Result<SurrogateModel> {
        let n = self
            .spec
            .training_samples
            .unwrap_or_else(|| default_num_samples(self.structure.state_dim()));
        let train = sample_training_set_with(&self.forward, &self.structure, n, self.spec.seeds.training)?;
        train_surrogate(&train, self.spec.noise_sigma, self.spec.fit)
    }

    pub fn truth(&self) -> DMatrix<f64> {
        build_truth(&self.spec)
    }

    /// Truth of dataset `index` under the spec's truth mode.
    pub fn truth_for(&self, index: usize) -> Result<DMatrix<f64>> {
        match self.spec.truth {
            TruthMode::Fixed => Ok(self.truth()),
            TruthMode::PriorDraw { rho } => {
                let rho = CorrelationParam::constant(self.spec.rho_mode, &self.structure.layout, rho)?;
                let mut rng = substream(self.spec.seeds.truth, &[index as u64]);
                sample_prior_path(&self.structure, &rho, &mut rng)
            }
        }
    }

    pub fn simulate(&self, x_true: &DMatrix<f64>, seed: u64) -> Result<Vec<DVector<f64>>> {
        simulate_observations(&self.forward, x_true, self.spec.noise_sigma, seed)
    }

    pub fn prior_mean(&self) -> DMatrix<f64> {
        DMatrix::from_columns(&self.structure.means)
    }

    pub fn problem(&self, surrogate: &SurrogateModel, observations: Vec<DVector<f64>>) -> Result<InversionProblem> {
        InversionProblem::new(self.structure.clone(), surrogate, observations, self.spec.rho_mode)
    }

    pub fn invert(&self, problem: &InversionProblem, seed: u64, keep_covariances: bool) -> Result<Inversion> {
        self.invert_with(problem, seed, keep_covariances, |_| {})
    }

    pub fn invert_with<F: FnMut(&GenerationRecord)>(
        &self,
        problem: &InversionProblem,
        seed: u64,
        keep_covariances: bool,
        on_generation: F,
    ) -> Result<Inversion> {
        let out = smc_run_with(problem, &self.spec.smc, seed, on_generation)?;
        let summary = summarize(problem, &out.cloud, keep_covariances)?;
        Ok(Inversion {
            summary,
            cloud: out.cloud,
            trace: out.trace,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    StochasticVariation,
    AveragePrecision,
}

/// Mean and maximum over all cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub mean: f64,
    pub max: f64,
}

impl CellStats {
    pub fn of(m: &DMatrix<f64>) -> Self {
        Self {
            mean: m.mean(),
            max: m.max(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub kind: StudyKind,
    pub repetitions: usize,
    /// Cellwise mean of x̂ over runs.
    #[serde(with = "io::matrix")]
    pub mean_xhat: DMatrix<f64>,
    /// Cellwise mean of σ̂ over runs.
    #[serde(with = "io::matrix")]
    pub mean_sigma: DMatrix<f64>,
    /// Spread of x̂ around its mean over runs.
    #[serde(default, skip_serializing_if = "Option::is_none", with = "opt_matrix")]
    pub rms_xhat: Option<DMatrix<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "opt_matrix")]
    pub rms_sigma: Option<DMatrix<f64>>,
    /// Error of x̂ against the truth over datasets.
    #[serde(default, skip_serializing_if = "Option::is_none", with = "opt_matrix")]
    pub rmse: Option<DMatrix<f64>>,
    /// Error of the prior mean against the truth over datasets.
    #[serde(default, skip_serializing_if = "Option::is_none", with = "opt_matrix")]
    pub prior_rmse: Option<DMatrix<f64>>,
    /// Scalar statistics keyed by name, e.g. `mean_rms_xhat_ratio`.
    pub statistics: std::collections::BTreeMap<String, f64>,
    /// Posterior mean of rho for each run.
    pub rho_means: Vec<Vec<f64>>,
}

mod opt_matrix {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Option<DMatrix<f64>>, s: S) -> Result<S::Ok, S::Error> {
        m.as_ref().map(crate::io::matrix_to_rows).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DMatrix<f64>>, D::Error> {
        Option::<Vec<Vec<f64>>>::deserialize(d)?
            .map(|rows| crate::io::rows_to_matrix(&rows).map_err(serde::de::Error::custom))
            .transpose()
    }
}

fn check_runs(mats: &[DMatrix<f64>], what: &str) -> Result<(usize, usize)> {
    if mats.len() < 2 {
        return Err(Error::param(format!("need at least 2 {what}, got {}", mats.len())));
    }
    let shape = mats[0].shape();
    if mats.iter().any(|m| m.shape() != shape) {
        return Err(Error::dim(format!("{what} differ in shape")));
    }
    Ok(shape)
}

fn cell_mean(mats: &[DMatrix<f64>]) -> DMatrix<f64> {
    let mut acc = DMatrix::zeros(mats[0].nrows(), mats[0].ncols());
    for m in mats {
        acc += m;
    }
    acc / mats.len() as f64
}

/// `(1/R Σ_r (a_r - b_r)²)^{1/2}` cellwise.
fn cell_rms(mats: &[DMatrix<f64>], centers: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let mut acc = DMatrix::zeros(mats[0].nrows(), mats[0].ncols());
    for (m, c) in mats.iter().zip(centers) {
        acc += (m - *c).map(|v| v * v);
    }
    (acc / mats.len() as f64).map(f64::sqrt)
}

/// `a / b` cellwise, with `0/0 = 0`.
fn cell_ratio(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.zip_map(b, |x, y| if x == 0.0 { 0.0 } else { x / y })
}

/// Spread statistics of repeated inversions of one dataset.
pub fn stochastic_report(xhats: &[DMatrix<f64>], sigmas: &[DMatrix<f64>]) -> Result<AnalysisReport> {
    let shape = check_runs(xhats, "runs")?;
    if sigmas.len() != xhats.len() || sigmas.iter().any(|s| s.shape() != shape) {
        return Err(Error::dim("x̂ and σ̂ runs do not match"));
    }
    let mean_xhat = cell_mean(xhats);
    let mean_sigma = cell_mean(sigmas);
    let rms_xhat = cell_rms(xhats, &vec![&mean_xhat; xhats.len()]);
    let rms_sigma = cell_rms(sigmas, &vec![&mean_sigma; sigmas.len()]);
    let ratio_x = cell_ratio(&rms_xhat, &mean_sigma);
    let ratio_s = cell_ratio(&rms_sigma, &mean_sigma);
    let mut statistics = std::collections::BTreeMap::new();
    for (name, m) in [
        ("rms_xhat", &rms_xhat),
        ("rms_xhat_ratio", &ratio_x),
        ("rms_sigma", &rms_sigma),
        ("rms_sigma_ratio", &ratio_s),
        ("sigma", &mean_sigma),
    ] {
        let s = CellStats::of(m);
        statistics.insert(format!("mean_{name}"), s.mean);
        statistics.insert(format!("max_{name}"), s.max);
    }
    Ok(AnalysisReport {
        kind: StudyKind::StochasticVariation,
        repetitions: xhats.len(),
        mean_xhat,
        mean_sigma,
        rms_xhat: Some(rms_xhat),
        rms_sigma: Some(rms_sigma),
        rmse: None,
        prior_rmse: None,
        statistics,
        rho_means: Vec::new(),
    })
}

/// Error statistics of inversions of independent datasets against their truths.
pub fn precision_report(
    xhats: &[DMatrix<f64>],
    sigmas: &[DMatrix<f64>],
    truths: &[DMatrix<f64>],
    prior_mean: &DMatrix<f64>,
) -> Result<AnalysisReport> {
    let shape = check_runs(xhats, "datasets")?;
    if sigmas.len() != xhats.len()
        || truths.len() != xhats.len()
        || sigmas.iter().chain(truths).any(|s| s.shape() != shape)
        || prior_mean.shape() != shape
    {
        return Err(Error::dim("x̂, σ̂ and truths do not match"));
    }
    let mean_xhat = cell_mean(xhats);
    let mean_sigma = cell_mean(sigmas);
    let centers: Vec<&DMatrix<f64>> = truths.iter().collect();
    let rmse = cell_rms(xhats, &centers);
    let priors = vec![prior_mean.clone(); truths.len()];
    let prior_rmse = cell_rms(&priors, &centers);
    let ratio = cell_ratio(&rmse, &mean_sigma);
    let within = ratio.iter().filter(|&&r| (0.5..=2.0).contains(&r)).count() as f64 / ratio.len() as f64;
    let mut statistics = std::collections::BTreeMap::new();
    for (name, m) in [
        ("rmse", &rmse),
        ("rmse_ratio", &ratio),
        ("prior_rmse", &prior_rmse),
        ("sigma", &mean_sigma),
    ] {
        let s = CellStats::of(m);
        statistics.insert(format!("mean_{name}"), s.mean);
        statistics.insert(format!("max_{name}"), s.max);
    }
    statistics.insert("fraction_within_factor_2".into(), within);
    Ok(AnalysisReport {
        kind: StudyKind::AveragePrecision,
        repetitions: xhats.len(),
        mean_xhat,
        mean_sigma,
        rms_xhat: None,
        rms_sigma: None,
        rmse: Some(rmse),
        prior_rmse: Some(prior_rmse),
        statistics,
        rho_means: Vec::new(),
    })
}

/// Inverts one simulated dataset `repetitions` times with independent sampler seeds.
pub fn run_stochastic_variation_study(spec: &ScenarioSpec, repetitions: usize) -> Result<AnalysisReport> {
    if repetitions < 2 {
        return Err(Error::param("the stochastic study needs at least 2 repetitions"));
    }
    let scenario = Scenario::new(spec.clone())?;
    let surrogate = scenario.train_surrogate()?;
    let ys = scenario.simulate(&scenario.truth_for(0)?, spec.seeds.observation)?;
    let problem = scenario.problem(&surrogate, ys)?;
    let runs: Vec<Inversion> = (0..repetitions)
        .into_par_iter()
        .map(|r| scenario.invert(&problem, derive_seed(spec.seeds.smc, &[r as u64]), false))
        .collect::<Result<_>>()?;
    let xhats: Vec<_> = runs.iter().map(|r| r.summary.xhat.clone()).collect();
    let sigmas: Vec<_> = runs.iter().map(|r| r.summary.sigma_hat.clone()).collect();
    let mut report = stochastic_report(&xhats, &sigmas)?;
    report.rho_means = runs.iter().map(|r| r.summary.rho_mean()).collect();
    Ok(report)
}

/// Inverts `num_datasets` independently simulated datasets.
pub fn run_average_precision_study(spec: &ScenarioSpec, num_datasets: usize) -> Result<AnalysisReport> {
    if num_datasets < 2 {
        return Err(Error::param("the precision study needs at least 2 datasets"));
    }
    let scenario = Scenario::new(spec.clone())?;
    let surrogate = scenario.train_surrogate()?;
    let runs: Vec<(DMatrix<f64>, Inversion)> = (0..num_datasets)
        .into_par_iter()
        .map(|r| {
            let truth = scenario.truth_for(r)?;
            let ys = scenario.simulate(&truth, derive_seed(spec.seeds.observation, &[r as u64]))?;
            let problem = scenario.problem(&surrogate, ys)?;
            let inv = scenario.invert(&problem, derive_seed(spec.seeds.smc, &[r as u64]), false)?;
            Ok((truth, inv))
        })
        .collect::<Result<_>>()?;
    let xhats: Vec<_> = runs.iter().map(|(_, r)| r.summary.xhat.clone()).collect();
    let sigmas: Vec<_> = runs.iter().map(|(_, r)| r.summary.sigma_hat.clone()).collect();
    let truths: Vec<_> = runs.iter().map(|(t, _)| t.clone()).collect();
    let mut report = precision_report(&xhats, &sigmas, &truths, &scenario.prior_mean())?;
    report.rho_means = runs.iter().map(|(_, r)| r.summary.rho_mean()).collect();
    Ok(report)
}

/// Observation file: one vector per frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    pub frequencies_ghz: Vec<f64>,
    #[serde(with = "io::vectors")]
    pub y: Vec<DVector<f64>>,
}

pub fn write_report(path: impl AsRef<Path>, report: &AnalysisReport) -> Result<()> {
    io::write_json(path, report)
}
