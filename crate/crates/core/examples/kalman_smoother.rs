//! A noisy random walk smoothed by the Kalman/RTS pass and checked against
//! direct conditioning of the joint Gaussian.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use rbsmc::lgss::{joint_gaussian_oracle, smooth, GaussianMoments, LgssModel, ObservationStage, Transition};
use rbsmc::rng::from_seed;

fn main() -> rbsmc::Result<()> {
    let k_f = 30;
    let (q, r): (f64, f64) = (0.05, 0.4);
    let mut rng = from_seed(7);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };

    let mut x = 0.0;
    let mut truth = Vec::with_capacity(k_f);
    let mut ys = Vec::with_capacity(k_f);
    for k in 0..k_f {
        if k > 0 {
            x += q.sqrt() * normal();
        }
        truth.push(x);
        ys.push(DVector::from_element(1, x + r.sqrt() * normal()));
    }

    let scalar = |v: f64| DMatrix::from_element(1, 1, v);
    let model = LgssModel::new(
        GaussianMoments::new(DVector::zeros(1), scalar(1.0))?,
        (0..k_f)
            .map(|_| ObservationStage {
                matrix: scalar(1.0),
                offset: DVector::zeros(1),
                noise_cov: scalar(r),
            })
            .collect(),
        (0..k_f - 1)
            .map(|_| Transition {
                matrix: scalar(1.0),
                offset: DVector::zeros(1),
                noise_cov: scalar(q),
            })
            .collect(),
    )?;

    let (filtered, smoothed) = smooth(&model, &ys)?;
    let oracle = joint_gaussian_oracle(&model, &ys)?;
    println!(" k      y   truth  filtered  smoothed     sd");
    for k in 0..k_f {
        let s = &smoothed.smoothed[k];
        println!(
            "{k:2} {:6.3} {:7.3} {:9.3} {:9.3} {:6.3}",
            ys[k][0],
            truth[k],
            filtered.stages[k].filtered.mean[0],
            s.mean[0],
            s.cov[(0, 0)].sqrt()
        );
    }
    let worst = smoothed
        .smoothed
        .iter()
        .zip(&oracle.smoothed)
        .map(|(a, b)| (a.mean[0] - b.mean[0]).abs().max((a.cov[(0, 0)] - b.cov[(0, 0)]).abs()))
        .fold(0.0, f64::max);
    println!("log-likelihood {:.6} (direct {:.6})", filtered.log_likelihood(), oracle.log_likelihood());
    println!("largest gap to direct conditioning {worst:.2e}");
    Ok(())
}
