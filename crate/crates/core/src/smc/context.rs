use nalgebra::DVector;

use crate::armodel::{CorrelationParam, PriorStructure, RhoMode};
use crate::error::{Error, Result};
use crate::lgss::{kalman_filter, smooth, FilterOutput, LgssModel, ObservationStage, SmootherOutput};
use crate::surrogate::SurrogateModel;

/// Anything that maps a correlation parameter to per-stage log-likelihood
/// increments `log J_k(rho)`.
pub trait LikelihoodModel: Sync {
    fn rho_dim(&self) -> usize;
    fn num_stages(&self) -> usize;
    fn log_increments(&self, rho: &[f64]) -> Result<Vec<f64>>;
}

/// Prior structure, surrogate observation model and data: everything needed to
/// turn a rho into a linear-Gaussian state-space model.
#[derive(Debug, Clone)]
pub struct InversionProblem {
    pub prior: PriorStructure,
    pub observation_stages: Vec<ObservationStage>,
    pub observations: Vec<DVector<f64>>,
    pub mode: RhoMode,
}

impl InversionProblem {
    pub fn new(
        prior: PriorStructure,
        surrogate: &SurrogateModel,
        observations: Vec<DVector<f64>>,
        mode: RhoMode,
    ) -> Result<Self> {
        Self::from_stages(prior, surrogate.observation_stages(), observations, mode)
    }

    pub fn from_stages(
        prior: PriorStructure,
        observation_stages: Vec<ObservationStage>,
        observations: Vec<DVector<f64>>,
        mode: RhoMode,
    ) -> Result<Self> {
        if observation_stages.len() != prior.num_stages() {
            return Err(Error::dim(format!(
                "surrogate has {} stages, prior has {}",
                observation_stages.len(),
                prior.num_stages()
            )));
        }
        let problem = Self {
            prior,
            observation_stages,
            observations,
            mode,
        };
        // validates every dimension once, with a neutral rho
        let rho = vec![0.5; problem.rho_dim()];
        let model = problem.lgss(&rho)?;
        if problem.observations.len() != model.num_stages()
            || problem.observations.iter().any(|y| y.len() != model.obs_dim())
        {
            return Err(Error::dim("observations do not match the surrogate"));
        }
        Ok(problem)
    }

    pub fn lgss(&self, rho: &[f64]) -> Result<LgssModel> {
        let rho = CorrelationParam::new(self.mode, rho.to_vec())?;
        LgssModel::new(
            self.prior.init(),
            self.observation_stages.clone(),
            self.prior.dynamics(&rho)?,
        )
    }

    pub fn filter(&self, rho: &[f64]) -> Result<FilterOutput> {
        kalman_filter(&self.lgss(rho)?, &self.observations)
    }

    pub fn smooth(&self, rho: &[f64]) -> Result<SmootherOutput> {
        Ok(smooth(&self.lgss(rho)?, &self.observations)?.1)
    }

    /// Same problem with different data.
    pub fn with_observations(&self, observations: Vec<DVector<f64>>) -> Result<Self> {
        Self::from_stages(
            self.prior.clone(),
            self.observation_stages.clone(),
            observations,
            self.mode,
        )
    }
}

impl LikelihoodModel for InversionProblem {
    fn rho_dim(&self) -> usize {
        self.mode.dim(&self.prior.layout)
    }

    fn num_stages(&self) -> usize {
        self.prior.num_stages()
    }

    fn log_increments(&self, rho: &[f64]) -> Result<Vec<f64>> {
        Ok(self.filter(rho)?.log_increments())
    }
}
