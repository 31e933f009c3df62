//! Randomized invariants.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use stmoe::dist::{skew_t_pdf, SkewTParams};
use stmoe::estep::latent_moments;
use stmoe::io::ModelFile;
use stmoe::model::*;
use stmoe::predict::{map_partition, predict};
use stmoe::select::criteria_from_parts;
use stmoe::sim::{generate, inject_outliers, mse_mean_function, reference_truth, SimConfig};
use stmoe::specfun::{student_t_cdf, student_t_pdf};

fn finite() -> impl Strategy<Value = f64> {
    -5.0..5.0f64
}

fn expert(family: Family, p: usize) -> impl Strategy<Value = ExpertParams> {
    (
        prop::collection::vec(finite(), p),
        0.01..4.0f64,
        -20.0..20.0f64,
        prop_oneof![0.6..200.0f64, 2.1..10.0f64],
    )
        .prop_map(move |(beta, s2, lam, nu)| match family {
            Family::Nmoe => ExpertParams::normal(DVector::from_vec(beta), s2),
            Family::Stmoe => ExpertParams::skew_t(DVector::from_vec(beta), s2, lam, nu),
        })
}

fn model_pq(max_k: usize, p: usize, q: usize) -> impl Strategy<Value = ModelParams> {
    (prop_oneof![Just(Family::Nmoe), Just(Family::Stmoe)], 1..=max_k).prop_flat_map(move |(family, k)| {
        (
            prop::collection::vec(expert(family, p), k),
            prop::collection::vec(finite(), (k - 1) * q),
            any::<bool>(),
            prop::option::of(1.0..50.0f64),
        )
            .prop_map(move |(experts, alpha, fix_lambda_zero, fix_nu)| {
                let gating = GatingParams::new(DMatrix::from_row_slice(k - 1, q, &alpha)).unwrap();
                let constraints = Constraints { fix_lambda_zero, fix_nu };
                ModelParams::new(family, gating, experts, constraints).unwrap()
            })
    })
}

fn model(max_k: usize) -> impl Strategy<Value = ModelParams> {
    (1..4usize, 1..4usize).prop_flat_map(move |(p, q)| model_pq(max_k, p, q))
}

fn design(p: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(finite(), p - 1).prop_map(|mut v| {
        v.insert(0, 1.0);
        v
    })
}

proptest! {
    #[test]
    fn gate_probabilities_sum_to_one(
        (alpha, r) in (1..5usize, 1..4usize).prop_flat_map(|(km1, q)|
            (prop::collection::vec(-30.0..30.0f64, km1 * q).prop_map(move |a| DMatrix::from_row_slice(km1, q, &a)),
             prop::collection::vec(-10.0..10.0f64, q)))
    ) {
        let pi = gating_probs(&r, &GatingParams::new(alpha).unwrap()).unwrap();
        prop_assert!((pi.iter().sum::<f64>() - 1.0).abs() <= 1e-14);
        prop_assert!(pi.iter().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn gate_rescaling_a_covariate_is_absorbed(a in prop::collection::vec(finite(), 4), x in finite(), s in 0.1..10.0f64) {
        let g = GatingParams::new(DMatrix::from_row_slice(2, 2, &a)).unwrap();
        let scaled = GatingParams::new(DMatrix::from_row_slice(2, 2, &[a[0], a[1] / s, a[2], a[3] / s])).unwrap();
        let p0 = gating_probs(&[1.0, x], &g).unwrap();
        let p1 = gating_probs(&[1.0, x * s], &scaled).unwrap();
        for (u, v) in p0.iter().zip(&p1) {
            prop_assert!((u - v).abs() <= 1e-12);
        }
    }

    #[test]
    fn splitting_a_component_leaves_the_mixture_unchanged(
        psi in model(3).prop_filter("needs K >= 2", |m| m.k() >= 2),
        y in finite(),
    ) {
        let (p, q) = (psi.p(), psi.q());
        let x: Vec<f64> = (0..p).map(|j| if j == 0 { 1.0 } else { 0.3 * j as f64 }).collect();
        let r: Vec<f64> = (0..q).map(|j| if j == 0 { 1.0 } else { -0.2 * j as f64 }).collect();
        // Duplicate the first component with half its gate mass on each copy.
        let mut rows = psi.gating.alpha.clone().insert_row(0, 0.0);
        let first = psi.gating.alpha.row(0).clone_owned();
        rows.set_row(0, &first);
        rows.set_row(1, &first);
        rows[(0, 0)] -= std::f64::consts::LN_2;
        rows[(1, 0)] -= std::f64::consts::LN_2;
        let mut experts = psi.experts.clone();
        experts.insert(0, psi.experts[0].clone());
        let split = ModelParams::new(psi.family, GatingParams::new(rows).unwrap(), experts, psi.constraints).unwrap();
        let a = mixture_logpdf(y, &x, &r, &psi).unwrap();
        let b = mixture_logpdf(y, &x, &r, &split).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{} vs {}", a, b);
    }

    #[test]
    fn t_distribution_symmetry_and_monotone_cdf(x in -50.0..50.0f64, h in 0.0..5.0f64, nu in 0.3..300.0f64) {
        prop_assert_eq!(student_t_pdf(x, nu).unwrap(), student_t_pdf(-x, nu).unwrap());
        prop_assert!(student_t_cdf(x + h, nu).unwrap() >= student_t_cdf(x, nu).unwrap());
        prop_assert!((student_t_cdf(x, nu).unwrap() + student_t_cdf(-x, nu).unwrap() - 1.0).abs() <= 1e-14);
    }

    #[test]
    fn skew_flip(u in -20.0..20.0f64, mu in finite(), s2 in 0.01..4.0f64, lam in -20.0..20.0f64, nu in 0.5..100.0f64) {
        let pos = skew_t_pdf(mu + u, &SkewTParams::new(mu, s2, lam, nu).unwrap()).unwrap();
        let neg = skew_t_pdf(mu - u, &SkewTParams::new(mu, s2, -lam, nu).unwrap()).unwrap();
        prop_assert!(pos >= 0.0);
        prop_assert!((pos - neg).abs() <= 1e-13 * pos.max(1e-300));
    }

    #[test]
    fn latent_moments_are_scale_equivariant(
        psi in model_pq(3, 2, 2).prop_filter("skew-t", |m| m.family == Family::Stmoe),
        seed in 0..1000u64,
        a in 0.2..5.0f64,
    ) {
        let data = generate(&SimConfig { truth: reference_truth(Family::Stmoe), n: 30, outlier_rate: 0.0, seed }).unwrap().data;
        let mut scaled_psi = psi.clone();
        for e in &mut scaled_psi.experts {
            e.beta *= a;
            e.sigma2 *= a * a;
        }
        let scaled_data = data.with_response(data.y() * a).unwrap();
        let m0 = latent_moments(&data, &psi).unwrap();
        let m1 = latent_moments(&scaled_data, &scaled_psi).unwrap();
        for i in 0..data.n() {
            prop_assert!((m0.tau.row(i).sum() - 1.0).abs() <= 1e-10);
            for k in 0..psi.k() {
                let rel = |u: f64, v: f64| (u - v).abs() <= 1e-8 * u.abs().max(v.abs()).max(1e-12);
                prop_assert!(rel(m0.tau[(i, k)], m1.tau[(i, k)]) || (m0.tau[(i, k)] - m1.tau[(i, k)]).abs() < 1e-14);
                prop_assert!(rel(m0.w[(i, k)], m1.w[(i, k)]));
                prop_assert!((m0.e3[(i, k)] - m1.e3[(i, k)]).abs() <= 1e-8 * m0.e3[(i, k)].abs().max(1.0));
                prop_assert!(rel(a * m0.e1[(i, k)], m1.e1[(i, k)]));
                prop_assert!(rel(a * a * m0.e2[(i, k)], m1.e2[(i, k)]));
            }
        }
    }

    #[test]
    fn map_labels_ignore_row_scaling(rows in prop::collection::vec((prop::collection::vec(0.0..1.0f64, 3), 0.01..100.0f64), 1..20)) {
        let n = rows.len();
        let tau = DMatrix::from_fn(n, 3, |i, k| rows[i].0[k]);
        let scaled = DMatrix::from_fn(n, 3, |i, k| rows[i].0[k] * rows[i].1);
        prop_assert_eq!(map_partition(&tau), map_partition(&scaled));
    }

    #[test]
    fn mixture_variance_is_nonnegative_and_order_free(
        psi in model(4).prop_filter("defined variance", |m| m.experts.iter().all(|e| e.nu > 2.1)),
        xs in design(3), rs in design(3),
    ) {
        let x = &xs[..psi.p()];
        let r = &rs[..psi.q()];
        let pred = predict(x, r, &psi).unwrap();
        prop_assert!(pred.variance.unwrap() >= 0.0);
        let perm: Vec<usize> = (0..psi.k()).rev().collect();
        let other = predict(x, r, &psi.permuted(&perm).unwrap()).unwrap();
        prop_assert!((pred.mean - other.mean).abs() <= 1e-10 * pred.mean.abs().max(1.0));
        prop_assert!((pred.variance.unwrap() - other.variance.unwrap()).abs() <= 1e-9 * pred.variance.unwrap().max(1.0));
    }

    #[test]
    fn bic_is_aic_minus_the_extra_penalty(ll in -1e5..1e5f64, eta in 1..100usize, n in 2..100_000usize) {
        let row = criteria_from_parts(2, ll, ll, eta, n);
        let extra = eta as f64 * (0.5 * (n as f64).ln() - 1.0);
        prop_assert!((row.bic - (row.aic - extra)).abs() <= 1e-9 * ll.abs().max(1.0));
    }

    #[test]
    fn outliers_leave_other_rows_intact(seed in 0..500u64, c in 0.0..0.5f64) {
        let data = generate(&SimConfig { truth: reference_truth(Family::Nmoe), n: 80, outlier_rate: 0.0, seed }).unwrap().data;
        let (noisy, mask) = inject_outliers(&data, c, seed + 1).unwrap();
        for i in 0..data.n() {
            if !mask[i] {
                prop_assert_eq!(noisy.y()[i].to_bits(), data.y()[i].to_bits());
                prop_assert_eq!(noisy.x_row(i), data.x_row(i));
                prop_assert_eq!(noisy.r_row(i), data.r_row(i));
            }
        }
    }

    #[test]
    fn mean_function_error_is_symmetric(a in model_pq(3, 2, 2), b in model_pq(3, 2, 2)) {
        prop_assume!(a.experts.iter().chain(&b.experts).all(|e| e.nu > 1.0));
        let data = generate(&SimConfig { truth: reference_truth(Family::Nmoe), n: 25, outlier_rate: 0.0, seed: 3 }).unwrap().data;
        let ab = mse_mean_function(&a, &b, &data).unwrap();
        prop_assert_eq!(ab, mse_mean_function(&b, &a, &data).unwrap());
        prop_assert_eq!(mse_mean_function(&a, &a, &data).unwrap(), 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn model_file_round_trip(psi in model(5)) {
        let json = ModelFile::from_params(&psi).to_json().unwrap();
        let back = ModelFile::from_json(&json).unwrap().to_params().unwrap();
        prop_assert_eq!(back, psi);
    }
}
