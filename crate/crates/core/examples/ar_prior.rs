//! Draws prior paths of the frequency-correlated AR process and shows how
//! rho controls the lag-one correlation while the marginals stay fixed.

use rbsmc::armodel::{CorrelationParam, PriorStructure, RhoMode};
use rbsmc::rng::substream;
use rbsmc::scenario::{sample_prior_path, ScenarioSpec};

fn main() -> rbsmc::Result<()> {
    let spec = ScenarioSpec::desk().prior;
    let structure = PriorStructure::new(&spec)?;
    let (n, k_f) = (structure.state_dim(), structure.num_stages());
    let draws = 4000;
    println!("{n} state components over {k_f} frequencies");
    println!("  rho  lag-1 corr  marginal sd ratio (last stage)");
    for rho in [0.0, 0.5, 0.9, 0.99] {
        let param = CorrelationParam::new(RhoMode::Scalar, vec![rho])?;
        let mut corr = 0.0;
        let mut var_last = 0.0;
        for d in 0..draws {
            let x = sample_prior_path(&structure, &param, &mut substream(3, &[d]))?;
            for i in 0..n {
                let z = |k: usize| (x[(i, k)] - structure.means[k][i]) / structure.covs[k][(i, i)].sqrt();
                corr += (0..k_f - 1).map(|k| z(k) * z(k + 1)).sum::<f64>() / ((k_f - 1) * n) as f64;
                var_last += z(k_f - 1).powi(2) / n as f64;
            }
        }
        println!(
            "{rho:5.2}  {:10.3}  {:.3}",
            corr / draws as f64,
            (var_last / draws as f64).sqrt()
        );
    }
    Ok(())
}
