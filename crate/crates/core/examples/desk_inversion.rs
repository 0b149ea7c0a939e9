//! End-to-end inversion on the desk scenario: train the surrogate, simulate
//! one dataset, run the sampler and compare the posterior with the truth.

use std::time::Instant;

use rbsmc::scenario::{Scenario, ScenarioSpec};

fn main() -> rbsmc::Result<()> {
    let scenario = Scenario::new(ScenarioSpec::desk())?;
    let surrogate = scenario.train_surrogate()?;
    let truth = scenario.truth();
    let ys = scenario.simulate(&truth, scenario.spec.seeds.observation)?;
    let problem = scenario.problem(&surrogate, ys)?;

    let started = Instant::now();
    let inv = scenario.invert_with(&problem, scenario.spec.seeds.smc, false, |g| {
        println!(
            "generation {:3}  ess {:6.1}  kill {:.2}  windows {}  last acceptance {:.2}",
            g.generation,
            g.ess,
            g.kill_fraction,
            g.windows.len(),
            g.acceptance_rates.last().copied().unwrap_or(0.0)
        );
    })?;
    println!("sampler finished in {:.2} s", started.elapsed().as_secs_f64());

    let (rho_mean, rho_sd) = inv.cloud.rho_moments();
    println!("posterior rho mean {rho_mean:.3?} sd {rho_sd:.3?}");

    let err = (&inv.summary.xhat - &truth).abs();
    let covered = err
        .iter()
        .zip(inv.summary.sigma_hat.iter())
        .filter(|(e, s)| **e <= 2.0 * **s)
        .count();
    println!(
        "mean |x̂ - x_true| {:.3e}, mean σ̂ {:.3e}, {covered}/{} cells inside ±2σ̂",
        err.mean(),
        inv.summary.sigma_hat.mean(),
        err.len()
    );
    Ok(())
}
