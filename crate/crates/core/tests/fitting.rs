//! Fitting-driver behaviour on simulated data.

use nalgebra::{DMatrix, DVector};
use stmoe::dist::lambda_from_delta;
use stmoe::ecm::{fit, initialize, multi_start_fit, weighted_least_squares, FitConfig};
use stmoe::estep::latent_moments;
use stmoe::model::*;
use stmoe::mstep::*;
use stmoe::select::select_k;
use stmoe::sim::{generate, reference_truth, SimConfig};

fn reference_data(family: Family, n: usize, seed: u64) -> Dataset {
    generate(&SimConfig { truth: reference_truth(family), n, outlier_rate: 0.0, seed }).unwrap().data
}

/// Runs the CM-steps by hand and checks that each one does not decrease
/// its own part of the Q-function.
#[test]
fn every_cm_step_improves_its_q_component() {
    let data = reference_data(Family::Stmoe, 300, 12);
    let mut psi = initialize(&data, 2, Family::Stmoe, Constraints::default(), 5, true).unwrap();
    let irls = IrlsConfig::default();
    for iter in 0..40 {
        let m = latent_moments(&data, &psi).unwrap();
        let before = q1_value(&psi.gating, &m.tau, data.r()).unwrap();
        let gate = irls_update_gating(&m.tau, data.r(), &psi.gating, &irls).unwrap().alpha_new;
        let after = q1_value(&gate, &m.tau, data.r()).unwrap();
        assert!(after >= before - 1e-10 * before.abs().max(1.0), "iter {iter}: Q1 {before} -> {after}");

        let mut next = psi.clone();
        next.gating = gate;
        for k in 0..2 {
            let e = &psi.experts[k];
            let delta = e.delta();
            let q2_old = q2_value(&data, &m, k, &e.beta, e.sigma2, delta).unwrap();
            let (beta, s2) = update_expert_regression(&data, &m, k, delta, 0.0).unwrap();
            let q2_mid = q2_value(&data, &m, k, &beta, s2, delta).unwrap();
            assert!(q2_mid >= q2_old - 1e-10 * q2_old.abs().max(1.0), "iter {iter} k {k}: Q2 {q2_old} -> {q2_mid}");
            let skew = solve_skewness(&data, &m, k, &beta, s2, delta).unwrap();
            assert!(skew.delta.abs() < 1.0 - 1e-9);
            let q2_new = q2_value(&data, &m, k, &beta, s2, skew.delta).unwrap();
            assert!(q2_new >= q2_mid - 1e-10 * q2_mid.abs().max(1.0), "iter {iter} k {k}: Q2 {q2_mid} -> {q2_new}");
            let nu = solve_dof(&m, k, 0.5, 200.0).unwrap();
            let q3_old = q3_value(&m, k, e.nu).unwrap();
            let q3_new = q3_value(&m, k, nu).unwrap();
            assert!(q3_new >= q3_old - 1e-10 * q3_old.abs().max(1.0), "iter {iter} k {k}: Q3 {q3_old} -> {q3_new}");
            next.experts[k] = ExpertParams::skew_t(beta, s2, lambda_from_delta(skew.delta), nu);
        }
        psi = next;
    }
}

#[test]
fn skew_update_with_unit_weights_is_the_normal_update() {
    let data = reference_data(Family::Nmoe, 200, 3);
    let tau = DMatrix::from_fn(200, 2, |i, k| if (i % 3 == 0) == (k == 0) { 0.8 } else { 0.2 });
    let m = stmoe::estep::EStepMoments::normal(tau.clone(), DMatrix::zeros(200, 2));
    for k in 0..2 {
        let (b_skew, half) = update_expert_regression(&data, &m, k, 0.0, 0.0).unwrap();
        let (b_norm, s2) = update_normal_expert(&data, &tau, k, 0.0).unwrap();
        assert!((b_skew - &b_norm).amax() < 1e-12);
        assert!((2.0 * half - s2).abs() < 1e-12 * s2);
        let weights: Vec<f64> = tau.column(k).iter().copied().collect();
        assert!((weighted_least_squares(&data, &weights).unwrap() - b_norm).amax() < 1e-10);
    }
}

#[test]
fn fits_are_bitwise_deterministic() {
    let data = reference_data(Family::Stmoe, 300, 9);
    let cfg = FitConfig { n_starts: 3, seed: 4, ..Default::default() };
    let a = multi_start_fit(&data, 2, Family::Stmoe, &cfg).unwrap();
    let b = multi_start_fit(&data, 2, Family::Stmoe, &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn every_initialization_has_a_finite_loglik() {
    let data = reference_data(Family::Stmoe, 500, 1);
    for seed in 0..10 {
        for null_gate in [true, false] {
            let psi = initialize(&data, 2, Family::Stmoe, Constraints::default(), seed, null_gate).unwrap();
            assert!(log_likelihood(&data, &psi).unwrap().is_finite());
        }
    }
}

#[test]
fn constraints_are_reported_exactly() {
    let data = reference_data(Family::Stmoe, 300, 2);
    let constraints = Constraints { fix_lambda_zero: true, fix_nu: Some(4.0) };
    let cfg = FitConfig { constraints, n_starts: 2, ..Default::default() };
    let f = multi_start_fit(&data, 2, Family::Stmoe, &cfg).unwrap();
    for e in &f.params.experts {
        assert_eq!(e.lambda, 0.0);
        assert_eq!(e.nu, 4.0);
    }
}

#[test]
fn single_expert_normal_fit_is_least_squares() {
    let data = reference_data(Family::Nmoe, 250, 8);
    let f = fit(&data, 1, Family::Nmoe, &FitConfig::default()).unwrap();
    let ols = weighted_least_squares(&data, &[1.0; 250]).unwrap();
    assert!((&f.params.experts[0].beta - ols).amax() < 1e-10);
}

/// Skew-t fits on i.i.d. standard-normal noise with an intercept-only design
/// should prefer one expert under BIC.
#[test]
fn bic_prefers_one_expert_on_pure_noise() {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let mut wins = 0;
    for seed in 0..20u64 {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1000 + seed);
        let y: Vec<f64> = (0..200).map(|_| StandardNormal.sample(&mut rng)).collect();
        let ones = DMatrix::from_element(200, 1, 1.0);
        let data = Dataset::new(DVector::from_vec(y), ones.clone(), ones).unwrap();
        let cfg = FitConfig { n_starts: 2, seed, ..Default::default() };
        let sel = select_k(&data, Family::Stmoe, 1..=2, &cfg).unwrap();
        let bic = |k: usize| sel.rows.iter().find(|r| r.k == k).map_or(f64::NEG_INFINITY, |r| r.bic);
        if bic(1) > bic(2) {
            wins += 1;
        }
    }
    assert!(wins >= 16, "BIC preferred K = 1 in only {wins}/20 runs");
}

/// Ten starts should usually reach the best optimum found by thirty.
#[test]
#[ignore = "long-running stability study; run with --ignored"]
fn ten_starts_match_thirty() {
    let mut gaps = Vec::new();
    for rep in 0..10u64 {
        let data = reference_data(Family::Stmoe, 500, 500 + rep);
        let ten = multi_start_fit(&data, 2, Family::Stmoe, &FitConfig { n_starts: 10, seed: rep, ..Default::default() }).unwrap();
        let thirty =
            multi_start_fit(&data, 2, Family::Stmoe, &FitConfig { n_starts: 30, seed: 7_000 + rep, ..Default::default() })
                .unwrap();
        gaps.push((thirty.loglik - ten.loglik) / thirty.loglik.abs());
    }
    let hits = gaps.iter().filter(|&&g| g <= 1e-6).count();
    assert!(hits >= 8, "{hits}/10, relative gaps {gaps:?}");
}
