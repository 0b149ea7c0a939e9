mod common;

use nalgebra::{DMatrix, DVector};

use common::*;
use rbsmc::armodel::{AreaLayout, FrequencyGrid, PriorSpec, PriorStructure, ReferenceTable, RhoMode, SigmaRule};
use rbsmc::estimator::{posterior_samples, rb_cov, rb_mean, read_summary, smooth_particles, summarize, write_summary};
use rbsmc::lgss::ObservationStage;
use rbsmc::smc::{smc_run, InversionProblem, Particle, ParticleCloud, Scheme, TemperingState};

#[test]
fn posterior_samples_match_the_rb_moments() {
    let (scenario, problem) = desk_scalar_problem(100);
    let out = smc_run(&problem, &scenario.spec.smc, 5).unwrap();
    let summary = summarize(&problem, &out.cloud, false).unwrap();
    let count = 10_000;
    let draws = posterior_samples(&problem, &out.cloud, count, 13).unwrap();
    let (n, k_f) = summary.xhat.shape();
    for k in 0..k_f {
        let mean = draws.iter().fold(DVector::zeros(n), |a, d| a + &d[k]) / count as f64;
        let var = draws.iter().fold(DVector::zeros(n), |a, d| a + (&d[k] - &mean).map(|v| v * v)) / count as f64;
        for i in 0..n {
            let s2 = summary.sigma_hat[(i, k)].powi(2);
            let se_mean = (s2 / count as f64).sqrt();
            assert!((mean[i] - summary.xhat[(i, k)]).abs() < 4.0 * se_mean, "mean ({i}, {k})");
            let se_var = s2 * (2.0 / count as f64).sqrt();
            assert!((var[i] - s2).abs() < 4.0 * se_var, "variance ({i}, {k})");
        }
    }
}

#[test]
fn total_covariance_dominates_the_within_part() {
    let (scenario, problem) = desk_scalar_problem(60);
    let out = smc_run(&problem, &scenario.spec.smc, 8).unwrap();
    let smoothed = smooth_particles(&problem, &out.cloud).unwrap();
    let xhat = rb_mean(&smoothed, None).unwrap();
    let cov = rb_cov(&smoothed, None, &xhat).unwrap();
    for k in 0..xhat.len() {
        let gap = &cov.total[k] - &cov.within[k];
        let min = gap.symmetric_eigen().eigenvalues.min();
        assert!(min > -1e-12 * cov.total[k].amax(), "stage {k}: {min}");
        assert!(cov.total[k].diagonal().iter().all(|&v| v > 0.0));
    }
}

#[test]
fn degenerate_model_samples_are_the_smoothed_path() {
    let layout = AreaLayout::new(vec![1]).unwrap();
    let spec = PriorSpec {
        reference: ReferenceTable::default_profiles(1, 0.2, 8.0),
        layout,
        frequencies_ghz: FrequencyGrid::regular(0.2, 8.0, 3).unwrap(),
        rho_s: 0.9,
        sigma_rule: SigmaRule::default(),
    };
    let structure = PriorStructure::new(&spec).unwrap();
    let n = structure.state_dim();
    let stages: Vec<ObservationStage> = (0..3)
        .map(|_| ObservationStage {
            matrix: DMatrix::identity(n, n),
            offset: DVector::zeros(n),
            noise_cov: DMatrix::identity(n, n) * 1e-20,
        })
        .collect();
    let ys: Vec<DVector<f64>> = (0..3).map(|k| &structure.means[k] + DVector::from_element(n, 0.3)).collect();
    let problem = InversionProblem::from_stages(structure, stages, ys, RhoMode::Scalar).unwrap();
    let particle = Particle {
        rho: vec![1.0],
        log_prior: 0.0,
        log_increments: vec![0.0; 3],
    };
    let cloud = ParticleCloud {
        particles: vec![particle],
        log_weights: vec![0.0],
        generation: 0,
        tempering: TemperingState::initial(Scheme::Annealed),
    };
    let summary = summarize(&problem, &cloud, false).unwrap();
    for path in posterior_samples(&problem, &cloud, 50, 1).unwrap() {
        for (k, x) in path.iter().enumerate() {
            assert!((x - summary.xhat.column(k)).amax() < 1e-8);
        }
    }
}

#[test]
fn summaries_round_trip_through_files() {
    let (scenario, problem) = desk_scalar_problem(30);
    let out = smc_run(&problem, &scenario.spec.smc, 2).unwrap();
    let summary = summarize(&problem, &out.cloud, true).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_summary(dir.path(), &summary, &scenario.spec.prior.layout, &scenario.spec.prior.frequencies_ghz).unwrap();
    assert_eq!(read_summary(dir.path()).unwrap(), summary);
    let c = summary.covariance(2).unwrap();
    for i in 0..c.nrows() {
        assert!((c[(i, i)].sqrt() - summary.sigma_hat[(i, 2)]).abs() < 1e-12 * c[(i, i)].sqrt());
    }
    let header = std::fs::read_to_string(dir.path().join("xhat.csv")).unwrap();
    assert!(header.lines().nth(1).unwrap().starts_with("eps_real_z0,"));
}
