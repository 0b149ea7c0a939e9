mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use common::*;
use rbsmc::lgss::{
    joint_gaussian_oracle, kalman_filter, sample_conditional_trajectory, sample_trajectory_with, smooth,
};
use rbsmc::rng::substream;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn filter_and_smoother_match_dense_conditioning(
        seed in 0u64..10_000, k_f in 1usize..=6, n in 1usize..=6, p in 1usize..=5,
    ) {
        let (model, ys) = random_model(seed, k_f, n, p);
        let (f, s) = smooth(&model, &ys).unwrap();
        let o = dense_oracle(&model, &ys);
        for k in 0..k_f {
            prop_assert!(rel_err_vec(&f.stages[k].filtered.mean, &o.filtered[k].0) < 1e-8);
            prop_assert!(rel_err_mat(&f.stages[k].filtered.cov, &o.filtered[k].1) < 1e-8);
            prop_assert!(rel_err_vec(&s.smoothed[k].mean, &o.smoothed[k].0) < 1e-8);
            prop_assert!(rel_err_mat(&s.smoothed[k].cov, &o.smoothed[k].1) < 1e-8);
        }
        prop_assert!((f.log_likelihood() - o.log_likelihood).abs() < 1e-8 * o.log_likelihood.abs().max(1.0));
    }

    #[test]
    fn covariances_stay_symmetric_positive_definite(seed in 0u64..10_000, k_f in 1usize..=6) {
        let (model, ys) = random_model(seed, k_f, 4, 3);
        let (f, s) = smooth(&model, &ys).unwrap();
        for g in f.stages.iter().map(|st| &st.filtered).chain(s.smoothed.iter()) {
            prop_assert!(g.check_invariants().is_ok());
            prop_assert_eq!(&g.cov, &g.cov.transpose());
        }
    }

    #[test]
    fn library_oracle_prefix_likelihoods_match_filter(seed in 0u64..10_000, k_f in 1usize..=5) {
        let (model, ys) = random_model(seed, k_f, 3, 2);
        let f = kalman_filter(&model, &ys).unwrap();
        let o = joint_gaussian_oracle(&model, &ys).unwrap();
        let mut acc = 0.0;
        for (k, inc) in f.log_increments().iter().enumerate() {
            acc += inc;
            prop_assert!((acc - o.prefix_log_likelihood[k]).abs() < 1e-8 * acc.abs().max(1.0));
        }
    }
}

#[test]
fn backward_samples_reproduce_smoothed_moments() {
    let (model, ys) = random_model(77, 4, 3, 2);
    let (f, s) = smooth(&model, &ys).unwrap();
    let count = 10_000;
    let draws: Vec<Vec<DVector<f64>>> = (0..count)
        .map(|i| sample_trajectory_with(&model, &f, &mut substream(5, &[i])).unwrap())
        .collect();
    for k in 0..4 {
        let g = &s.smoothed[k];
        let mean = draws.iter().fold(DVector::zeros(3), |a, d| a + &d[k]) / count as f64;
        let mut cov = DMatrix::zeros(3, 3);
        for d in &draws {
            let c = &d[k] - &mean;
            cov += &c * c.transpose();
        }
        cov /= count as f64;
        for i in 0..3 {
            let sd = g.cov[(i, i)].sqrt();
            let se_mean = sd / (count as f64).sqrt();
            assert!((mean[i] - g.mean[i]).abs() < 4.0 * se_mean, "stage {k} mean {i}");
            let se_var = g.cov[(i, i)] * (2.0 / count as f64).sqrt();
            assert!((cov[(i, i)] - g.cov[(i, i)]).abs() < 4.0 * se_var, "stage {k} var {i}");
        }
    }
}

#[test]
fn trajectory_sampling_is_bitwise_deterministic() {
    let (model, ys) = random_model(3, 5, 4, 2);
    let a = sample_conditional_trajectory(&model, &ys, 42).unwrap();
    let b = sample_conditional_trajectory(&model, &ys, 42).unwrap();
    let c = sample_conditional_trajectory(&model, &ys, 43).unwrap();
    for k in 0..5 {
        for i in 0..4 {
            assert_eq!(a[k][i].to_bits(), b[k][i].to_bits());
        }
    }
    assert_ne!(a[0], c[0]);
}
