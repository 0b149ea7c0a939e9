//! Small versions of the two repeated-inversion studies: sampler variability
//! on one dataset, and accuracy over independent datasets.

use rbsmc::scenario::{run_average_precision_study, run_stochastic_variation_study, ScenarioSpec};

fn main() -> rbsmc::Result<()> {
    let mut spec = ScenarioSpec::desk();
    spec.smc.num_particles = 60;

    let stochastic = run_stochastic_variation_study(&spec, 5)?;
    println!("sampler variability over {} seeds", stochastic.repetitions);
    for (name, value) in &stochastic.statistics {
        println!("  {name:26} {value:.3e}");
    }

    let precision = run_average_precision_study(&spec, 5)?;
    println!("accuracy over {} datasets", precision.repetitions);
    for (name, value) in &precision.statistics {
        println!("  {name:26} {value:.3e}");
    }
    Ok(())
}
