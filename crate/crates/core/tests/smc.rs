mod common;

use common::*;
use rbsmc::rng::{from_seed, substream};
use rbsmc::smc::{
    adaptive_delta_alpha, effective_sample_size, initial_cloud, mh_mutate, offspring_counts, reflect_unit,
    select_resample, smc_run, systematic_resample, LikelihoodModel, RhoPrior, Scheme, SmcConfig,
};
use rbsmc::{Error, Result};

/// Product of Gaussian bumps in rho, split over `stages` pieces.
struct Bumps {
    stages: usize,
    centre: f64,
    width: f64,
}

impl LikelihoodModel for Bumps {
    fn rho_dim(&self) -> usize {
        1
    }
    fn num_stages(&self) -> usize {
        self.stages
    }
    fn log_increments(&self, rho: &[f64]) -> Result<Vec<f64>> {
        let z = (rho[0] - self.centre) / self.width;
        Ok((0..self.stages).map(|k| -0.5 * z * z * (k + 1) as f64 / self.total()).collect())
    }
}

impl Bumps {
    fn total(&self) -> f64 {
        (self.stages * (self.stages + 1) / 2) as f64
    }
}

struct Flat;

impl LikelihoodModel for Flat {
    fn rho_dim(&self) -> usize {
        1
    }
    fn num_stages(&self) -> usize {
        3
    }
    fn log_increments(&self, _: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![0.0; 3])
    }
}

struct Hostile;

impl LikelihoodModel for Hostile {
    fn rho_dim(&self) -> usize {
        1
    }
    fn num_stages(&self) -> usize {
        2
    }
    fn log_increments(&self, _: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![f64::NEG_INFINITY; 2])
    }
}

/// Filter failure below 0.2.
struct Fragile;

impl LikelihoodModel for Fragile {
    fn rho_dim(&self) -> usize {
        1
    }
    fn num_stages(&self) -> usize {
        2
    }
    fn log_increments(&self, rho: &[f64]) -> Result<Vec<f64>> {
        if rho[0] < 0.2 {
            Err(Error::SingularGain { stage: 0 })
        } else {
            Ok(vec![-rho[0]; 2])
        }
    }
}

fn config(n: usize, scheme: Scheme) -> SmcConfig {
    SmcConfig {
        num_particles: n,
        scheme,
        ..SmcConfig::default()
    }
}

#[test]
fn prior_density_is_normalized() {
    let prior = RhoPrior::default();
    let m = 100_000;
    let integral: f64 = (0..m)
        .map(|i| prior.log_density(&[(i as f64 + 0.5) / m as f64]).exp() / m as f64)
        .sum();
    assert!((integral - 1.0).abs() < 1e-6);
    let uniform = RhoPrior { kappa: 0.0 };
    assert_eq!(uniform.log_density(&[0.37]), 0.0);
    assert!(prior.log_density(&[0.0]).is_finite() && prior.log_density(&[1.0]).is_finite());
    assert_eq!(prior.log_density(&[1.01]), f64::NEG_INFINITY);
}

#[test]
fn flat_likelihood_leaves_the_prior() {
    let prior = RhoPrior::default();
    let critical = 1.628 / (500f64).sqrt();
    for scheme in [Scheme::Annealed, Scheme::DataTempered, Scheme::Hybrid] {
        let out = smc_run(&Flat, &config(500, scheme), 3).unwrap();
        let mut xs: Vec<f64> = out.cloud.particles.iter().map(|p| p.rho[0]).collect();
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        let d = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = prior.cdf(x);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(d < critical, "{scheme:?}: KS statistic {d:.4} >= {critical:.4}");
    }
}

#[test]
fn long_mh_chain_matches_the_quadrature_mean() {
    let prior = RhoPrior::default();
    let target = |r: &[f64]| (prior.log_density(r), ());
    let mut rng = from_seed(11);
    let mut state = vec![0.5];
    let mut log_h = prior.log_density(&state);
    let (batches, size) = (100, 1000);
    let mut means = Vec::with_capacity(batches);
    for _ in 0..batches {
        let mut acc = 0.0;
        for _ in 0..size {
            let out = mh_mutate(state, log_h, (), target, 0.3, 1, &mut rng);
            state = out.state;
            log_h = out.log_h;
            acc += state[0];
        }
        means.push(acc / size as f64);
    }
    let (m, sd) = mean_sd(&means);
    let se = sd / (batches as f64).sqrt();
    let k = prior.kappa;
    let exact = 1.0 / (1.0 - (-k).exp()) - 1.0 / k;
    assert!((m - exact).abs() < 3.0 * se, "{m} vs {exact} (se {se})");
}

#[test]
fn mh_kernel_leaves_its_target_invariant() {
    let prior = RhoPrior::default();
    let bins = 20;
    let n = 20_000;
    let mut counts = vec![0usize; bins];
    for i in 0..n {
        let mut rng = substream(4, &[i]);
        let start = prior.sample(&mut rng, 1);
        let lh = prior.log_density(&start);
        let out = mh_mutate(start, lh, (), |r| (prior.log_density(r), ()), 0.4, 5, &mut rng);
        counts[((out.state[0] * bins as f64) as usize).min(bins - 1)] += 1;
    }
    let chi2: f64 = (0..bins)
        .map(|b| {
            let p = prior.cdf((b + 1) as f64 / bins as f64) - prior.cdf(b as f64 / bins as f64);
            let e = p * n as f64;
            (counts[b] as f64 - e).powi(2) / e
        })
        .sum();
    // 0.1% critical value of chi-square with 19 degrees of freedom.
    assert!(chi2 < 43.82, "chi-square {chi2:.2}");
}

#[test]
fn constant_target_accepts_every_proposal_and_stays_inside() {
    let mut rng = from_seed(2);
    let out = mh_mutate(vec![0.01, 0.99], 0.0, (), |_| (0.0, ()), 5.0, 1000, &mut rng);
    assert_eq!(out.accepted, 1000);
    for x in [-3.7, -0.2, 0.0, 0.5, 1.0, 1.3, 7.9] {
        assert!((0.0..=1.0).contains(&reflect_unit(x)));
    }
}

#[test]
fn two_atom_increment_matches_the_closed_form() {
    for &(n1, n2, c) in &[(30usize, 70usize, 4.0), (50, 50, 40.0), (10, 90, 1000.0)] {
        let ll: Vec<f64> = std::iter::repeat_n(0.0, n1).chain(std::iter::repeat_n(-c, n2)).collect();
        let t = 0.75 * (n1 + n2) as f64;
        let (a, b, cc) = ((n2 * n2) as f64 - t * n2 as f64, 2.0 * (n1 * n2) as f64, (n1 * n1) as f64 - t * n1 as f64);
        let disc = (b * b - 4.0 * a * cc).sqrt();
        let q = [(-b + disc) / (2.0 * a), (-b - disc) / (2.0 * a)]
            .into_iter()
            .find(|q| (0.0..1.0).contains(q))
            .unwrap();
        let exact = -q.ln() / c;
        let got = adaptive_delta_alpha(&ll, 0.0, 0.75);
        assert!((got - exact).abs() < 1e-6, "{got} vs {exact}");
        assert!((effective_sample_size(&ll.iter().map(|l| got * l).collect::<Vec<_>>()) - t).abs() < 0.02 * (n1 + n2) as f64);
    }
    let equal = vec![-3.0; 40];
    assert_eq!(adaptive_delta_alpha(&equal, 0.25, 0.75), 0.75);
}

#[test]
fn systematic_resampling_is_unbiased() {
    let reps = 10_000;
    let mut log_w = vec![f64::NEG_INFINITY; 10];
    log_w[0] = 0.5f64.ln();
    log_w[1] = 0.3f64.ln();
    log_w[2] = 0.2f64.ln();
    let irregular: Vec<f64> = (0..10).map(|i| (1.0 + (i * i % 7) as f64).ln()).collect();
    let total: f64 = irregular.iter().map(|l| l.exp()).sum();
    for (weights, expected) in [
        (&log_w, vec![5.0, 3.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
        (&irregular, irregular.iter().map(|l| 10.0 * l.exp() / total).collect()),
    ] {
        let mut sums = vec![0.0; 10];
        for r in 0..reps {
            let a = systematic_resample(weights, &mut substream(6, &[r])).unwrap();
            for (s, c) in sums.iter_mut().zip(offspring_counts(&a, 10)) {
                *s += c as f64;
            }
        }
        for (s, e) in sums.iter().zip(&expected) {
            let m = s / reps as f64;
            assert!((m - e).abs() <= 0.02 * e.max(0.5), "{m} vs {e}");
        }
    }
}

#[test]
fn resampling_edge_cases() {
    let cloud = initial_cloud(&Flat, &config(8, Scheme::Annealed), 1);
    let same = select_resample(&cloud, &[0.0; 8], 5).unwrap();
    assert_eq!(same.particles, cloud.particles);
    let mut one = vec![f64::NEG_INFINITY; 8];
    one[3] = 0.0;
    let copies = select_resample(&cloud, &one, 5).unwrap();
    assert!(copies.particles.iter().all(|p| p == &cloud.particles[3]));
    assert!(matches!(
        select_resample(&cloud, &[f64::NEG_INFINITY; 8], 5),
        Err(Error::Degenerate { .. })
    ));
}

#[test]
fn schemes_agree_and_respect_the_tempering_invariants() {
    let model = Bumps {
        stages: 4,
        centre: 0.62,
        width: 0.05,
    };
    let n = 1000;
    let mut moments = Vec::new();
    for scheme in [Scheme::Annealed, Scheme::DataTempered, Scheme::Hybrid] {
        let out = smc_run(&model, &config(n, scheme), 9).unwrap();
        let rhos: Vec<f64> = out.cloud.particles.iter().map(|p| p.rho[0]).collect();
        assert!(rhos.iter().all(|r| (0.0..=1.0).contains(r)));
        moments.push(mean_sd(&rhos));
        if scheme != Scheme::DataTempered {
            for g in &out.trace {
                assert!(g.ess >= 0.70 * n as f64, "{scheme:?} generation {} ess {}", g.generation, g.ess);
            }
        }
        if scheme == Scheme::Annealed {
            let alphas = rbsmc::smc::alpha_sequence(&out.trace);
            assert!(alphas.windows(2).all(|w| w[1] > w[0]));
            assert_eq!(*alphas.last().unwrap(), 1.0);
        }
    }
    for i in 0..3 {
        for j in i + 1..3 {
            let ((m1, s1), (m2, s2)) = (moments[i], moments[j]);
            let se = ((s1 * s1 + s2 * s2) / n as f64).sqrt();
            assert!((m1 - m2).abs() < 3.0 * se, "{moments:?}");
        }
    }
}

#[test]
fn runs_are_deterministic_in_the_seed() {
    let model = Bumps {
        stages: 3,
        centre: 0.4,
        width: 0.1,
    };
    let a = smc_run(&model, &config(64, Scheme::Hybrid), 21).unwrap();
    let b = smc_run(&model, &config(64, Scheme::Hybrid), 21).unwrap();
    let c = smc_run(&model, &config(64, Scheme::Hybrid), 22).unwrap();
    assert_eq!(a.cloud.particles, b.cloud.particles);
    assert_eq!(a.trace.len(), b.trace.len());
    for (x, y) in a.trace.iter().zip(&b.trace) {
        assert_eq!((x.ess, &x.state, &x.acceptance_rates), (y.ess, &y.state, &y.acceptance_rates));
    }
    assert_ne!(a.cloud.particles, c.cloud.particles);
}

#[test]
fn failures_are_reported_or_contained() {
    assert!(matches!(
        smc_run(&Hostile, &config(20, Scheme::DataTempered), 0),
        Err(Error::Degenerate { generation: 1, .. })
    ));
    assert!(matches!(smc_run(&Hostile, &config(20, Scheme::Annealed), 0), Err(Error::Degenerate { .. })));
    assert!(smc_run(&Flat, &config(1, Scheme::Annealed), 0).is_err());
    let out = smc_run(&Fragile, &config(200, Scheme::Annealed), 0).unwrap();
    assert!(out.cloud.particles.iter().all(|p| p.rho[0] >= 0.2));
}
