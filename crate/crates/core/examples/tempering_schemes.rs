//! Runs the three tempering schemes on the same scalar-rho problem and
//! compares their rho posteriors and generation counts.

use std::time::Instant;

use rbsmc::armodel::RhoMode;
use rbsmc::scenario::{Scenario, ScenarioSpec};
use rbsmc::smc::{smc_run, Scheme};

fn main() -> rbsmc::Result<()> {
    let mut spec = ScenarioSpec::desk();
    spec.rho_mode = RhoMode::Scalar;
    spec.smc.num_particles = 200;
    let scenario = Scenario::new(spec)?;
    let surrogate = scenario.train_surrogate()?;
    let ys = scenario.simulate(&scenario.truth(), scenario.spec.seeds.observation)?;
    let problem = scenario.problem(&surrogate, ys)?;

    for scheme in [Scheme::Annealed, Scheme::DataTempered, Scheme::Hybrid] {
        let mut config = scenario.spec.smc.clone();
        config.scheme = scheme;
        let started = Instant::now();
        let out = smc_run(&problem, &config, scenario.spec.seeds.smc)?;
        let (mean, sd) = out.cloud.rho_moments();
        let min_ess = out.trace.iter().map(|g| g.ess).fold(f64::INFINITY, f64::min);
        println!(
            "{:>12}: rho {:.4} ± {:.4}, {} generations, min ess {:.0}, {:.1} s",
            format!("{scheme:?}"),
            mean[0],
            sd[0],
            out.trace.len(),
            min_ess,
            started.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
