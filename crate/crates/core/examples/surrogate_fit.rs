//! Fits the linear-Gaussian surrogate of the synthetic forward model and
//! reports how much of the model the linear part explains.

use rbsmc::scenario::{Scenario, ScenarioSpec};
use rbsmc::surrogate::{read_surrogate, write_surrogate_binary};

fn main() -> rbsmc::Result<()> {
    for gamma in [0.0, 0.01, 0.1] {
        let mut spec = ScenarioSpec::desk();
        spec.forward.gamma = gamma;
        let scenario = Scenario::new(spec)?;
        let model = scenario.train_surrogate()?;
        let lin: Vec<f64> = model.stages.iter().map(|s| s.linearization_cov.trace()).collect();
        let noise = model.noise_sigma.powi(2) * model.obs_dim() as f64;
        println!(
            "gamma {gamma:5.2}: trace of held-out residual covariance {:.2e} .. {:.2e} (noise {:.2e})",
            lin.iter().copied().fold(f64::INFINITY, f64::min),
            lin.iter().copied().fold(0.0, f64::max),
            noise
        );
    }

    let scenario = Scenario::new(ScenarioSpec::desk())?;
    let model = scenario.train_surrogate()?;
    let path = std::env::temp_dir().join("rbsmc_surrogate.bin");
    write_surrogate_binary(&path, &model)?;
    let back = read_surrogate(&path)?;
    println!(
        "{} stages, {} x {} gains, binary round trip exact: {}",
        back.stages.len(),
        back.obs_dim(),
        back.state_dim(),
        back == model
    );
    std::fs::remove_file(path)?;
    Ok(())
}
