mod common;

use common::*;
use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::Rng;
use robust_ot::measures::{DisplacementMoment, MomentKind};
use robust_ot::metric_solvers::{
    adversarial_value, ds_metric, feature_selection_objective, feature_weights, kl_metric, pnorm_metric, Family,
    MetricSolverConfig, Prior,
};
use robust_ot::Error;

fn moment(v: Array2<f64>) -> DisplacementMoment {
    DisplacementMoment::new(v, MomentKind::Full).unwrap()
}

fn entry_pnorm(m: &Array2<f64>, p: f64) -> f64 {
    m.iter().map(|x| x.abs().powf(p)).sum::<f64>().powf(1.0 / p)
}

/// `m − 2m ln(m/0.6) − 2(1−m) ln((1−m)/0.4)`: the 2×2 doubly-stochastic
/// objective for `V = diag(1, 0)`, `λ = 1`.
fn ds_objective(m: f64) -> f64 {
    m - 2.0 * m * (m / 0.6).ln() - 2.0 * (1.0 - m) * ((1.0 - m) / 0.4).ln()
}

fn ds_oracle() -> (f64, f64) {
    // grid to bracket, then golden-section refinement
    let grid = (1..1000).map(|i| i as f64 / 1000.0);
    let start = grid.fold((0.0, f64::NEG_INFINITY), |best, m| {
        let v = ds_objective(m);
        if v > best.1 {
            (m, v)
        } else {
            best
        }
    });
    let (mut lo, mut hi) = (start.0 - 1e-3, start.0 + 1e-3);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let a = hi - phi * (hi - lo);
        let b = lo + phi * (hi - lo);
        if ds_objective(a) > ds_objective(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    let m = 0.5 * (lo + hi);
    (m, ds_objective(m))
}

#[test]
fn pnorm_zero_moment() {
    let out = pnorm_metric(&moment(Array2::zeros((3, 3))), 1).unwrap();
    assert_eq!(out.value, 0.0);
    assert!(out.matrix.iter().all(|&x| x == 0.0));
}

#[test]
fn pnorm_diagonal_example() {
    let out = pnorm_metric(&moment(array![[0.5, 0.0], [0.0, 0.5]]), 1).unwrap();
    let s = 0.5f64.sqrt();
    assert!((out.value - s).abs() < 1e-15);
    assert!((out.matrix[[0, 0]] - 1.0 / 2f64.sqrt()).abs() < 1e-15);
    assert_eq!(out.matrix[[0, 1]], 0.0);
    let via_dispatch =
        adversarial_value(&moment(array![[0.5, 0.0], [0.0, 0.5]]), &MetricSolverConfig::pnorm(1)).unwrap();
    assert_eq!(via_dispatch.value, out.value);
}

#[test]
fn pnorm_rank_one_value_is_squared_norm() {
    let mut r = rng(30);
    let v = gaussian(&mut r, 5, 1);
    let vv = v.dot(&v.t());
    let out = pnorm_metric(&moment(vv), 1).unwrap();
    let sq: f64 = v.iter().map(|x| x * x).sum();
    assert!((out.value - sq).abs() < 1e-12 * sq);
}

#[test]
fn pnorm_handles_large_k_without_overflow() {
    let v = array![[1e100, 3e99], [3e99, 2e99]];
    let out = pnorm_metric(&moment(v.clone()), 40).unwrap();
    assert!(out.value.is_finite() && out.matrix.iter().all(|x| x.is_finite()));
    let p = 80.0 / 79.0;
    assert!((entry_pnorm(&out.matrix, p) - 1.0).abs() < 1e-9);
    assert!((frobenius(v.view(), out.matrix.view()) / out.value - 1.0).abs() < 1e-9);
}

#[test]
fn pnorm_beats_random_feasible_metrics() {
    let mut r = rng(31);
    for k in [1u32, 2, 3] {
        let p = 2.0 * k as f64 / (2.0 * k as f64 - 1.0);
        let v = random_psd(&mut r, 4);
        let best = pnorm_metric(&moment(v.clone()), k).unwrap().value;
        for _ in 0..2000 {
            let m = random_psd(&mut r, 4);
            let m = &m / entry_pnorm(&m, p);
            assert!(frobenius(v.view(), m.view()) <= best + 1e-9);
        }
    }
}

#[test]
fn kl_zero_moment_returns_prior() {
    let m0 = Prior::Mixed.resolve(3).unwrap();
    let out = kl_metric(&moment(Array2::zeros((3, 3))), m0.view(), 1.0).unwrap();
    assert_eq!(out.value, 0.0);
    assert_eq!(out.matrix, m0);
}

#[test]
fn kl_diagonal_example_matches_numerical_maximization() {
    let v = array![[0.5, 0.0], [0.0, 0.5]];
    let out = kl_metric(&moment(v), Array2::eye(2).view(), 1.0).unwrap();
    let e = 0.5f64.exp();
    assert!((out.matrix[[0, 0]] - e).abs() < 1e-14 && (out.matrix[[1, 1]] - e).abs() < 1e-14);
    assert_eq!(out.matrix[[0, 1]], 0.0);
    assert!((out.value - 2.0 * (e - 1.0)).abs() < 1e-14);
    assert!((out.value - 1.29744).abs() < 1e-5);
    // per coordinate: maximize 0.5 m − (m ln m − m + 1) over a fine grid
    let best = (1..400_000)
        .map(|i| {
            let m = i as f64 * 1e-5;
            0.5 * m - (m * m.ln() - m + 1.0)
        })
        .fold(f64::NEG_INFINITY, f64::max);
    assert!((2.0 * best - out.value).abs() < 1e-8);
}

#[test]
fn kl_identity_prior_gives_diagonal_exponentials() {
    let mut r = rng(32);
    let v = random_psd(&mut r, 5);
    let out = kl_metric(&moment(v.clone()), Array2::eye(5).view(), 0.7).unwrap();
    for i in 0..5 {
        for j in 0..5 {
            let expected = if i == j { (v[[i, i]] / 0.7).exp() } else { 0.0 };
            assert!((out.matrix[[i, j]] - expected).abs() < 1e-12 * expected.max(1.0));
        }
    }
}

#[test]
fn kl_beats_perturbations() {
    let mut r = rng(33);
    let v = random_psd(&mut r, 3);
    let m0 = Prior::Mixed.resolve(3).unwrap();
    let lambda = 0.8;
    let out = kl_metric(&moment(v.clone()), m0.view(), lambda).unwrap();
    let objective = |m: &Array2<f64>| {
        let kl: f64 = m.iter().zip(m0.iter()).map(|(&a, &b)| a * (a / b).ln() - a + b).sum();
        frobenius(v.view(), m.view()) - lambda * kl
    };
    let at_opt = objective(&out.matrix);
    assert!((at_opt - out.value).abs() < 1e-12);
    for _ in 0..1000 {
        let noise = random_symmetric(&mut r, 3) * 0.05;
        let perturbed = Array2::from_shape_fn((3, 3), |(i, j)| out.matrix[[i, j]] * noise[[i, j]].exp());
        assert!(objective(&perturbed) <= at_opt + 1e-12);
    }
}

#[test]
fn kl_overflow_is_an_error() {
    let v = array![[800.0, 0.0], [0.0, 0.0]];
    assert!(matches!(
        kl_metric(&moment(v.clone()), Array2::eye(2).view(), 1.0),
        Err(Error::Overflow { .. })
    ));
    assert!(kl_metric(&moment(v), Array2::eye(2).view(), 10.0).is_ok());
}

#[test]
fn kl_rejects_bad_priors_and_lambda() {
    let v = moment(Array2::eye(2));
    assert!(kl_metric(&v, array![[1.0, -0.1], [-0.1, 1.0]].view(), 1.0).is_err());
    assert!(kl_metric(&v, Array2::eye(3).view(), 1.0).is_err());
    assert!(kl_metric(&v, Array2::eye(2).view(), 0.0).is_err());
}

#[test]
fn ds_two_by_two_matches_oracle() {
    let (m_star, best) = ds_oracle();
    assert!((m_star - 0.71207).abs() < 1e-5);
    let m0 = array![[0.6, 0.4], [0.4, 0.6]];
    let out = ds_metric(&moment(array![[1.0, 0.0], [0.0, 0.0]]), m0.view(), 1.0, 1e-12, 100_000).unwrap();
    assert!((out.matrix[[0, 0]] - m_star).abs() < 1e-6);
    assert!((out.matrix[[1, 1]] - m_star).abs() < 1e-6);
    assert!((out.matrix[[0, 1]] - (1.0 - m_star)).abs() < 1e-6);
    assert!((out.value - best).abs() < 1e-8);
    assert!(out.scaling_residual.unwrap() <= 1e-12);
}

#[test]
fn ds_zero_moment_with_doubly_stochastic_prior() {
    let m0 = array![[0.6, 0.4], [0.4, 0.6]];
    let out = ds_metric(&moment(Array2::zeros((2, 2))), m0.view(), 1.0, 1e-12, 100).unwrap();
    for (a, b) in out.matrix.iter().zip(m0.iter()) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!(out.value.abs() < 1e-12);
}

#[test]
fn ds_constant_moment_matches_zero_moment() {
    let m0 = Prior::Mixed.resolve(3).unwrap();
    let a = ds_metric(&moment(Array2::from_elem((3, 3), 2.5)), m0.view(), 1.0, 1e-12, 10_000).unwrap();
    let b = ds_metric(&moment(Array2::zeros((3, 3))), m0.view(), 1.0, 1e-12, 10_000).unwrap();
    for (x, y) in a.matrix.iter().zip(b.matrix.iter()) {
        assert!((x - y).abs() < 1e-10);
    }
}

#[test]
fn ds_requires_positive_prior() {
    let v = moment(Array2::eye(2));
    assert!(ds_metric(&v, Array2::eye(2).view(), 1.0, 1e-8, 100).is_err());
}

#[test]
fn ds_reports_non_convergence() {
    let mut r = rng(34);
    let v = moment(random_psd(&mut r, 4) * 20.0);
    let m0 = Prior::Mixed.resolve(4).unwrap();
    assert!(matches!(
        ds_metric(&v, m0.view(), 0.5, 1e-15, 2),
        Err(Error::NotConverged { .. })
    ));
}

#[test]
fn feature_weight_examples() {
    let w = feature_weights(&moment(Array2::eye(3) * 2.0), 0.3).unwrap();
    assert!(w.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));

    let w = feature_weights(&moment(array![[1.0, 0.0], [0.0, 0.0]]), 1.0).unwrap();
    let e = 1f64.exp();
    assert!((w[0] - e / (e + 1.0)).abs() < 1e-15);
    assert!((w[0] - 0.73106).abs() < 1e-5 && (w[1] - 0.26894).abs() < 1e-5);

    let mut r = rng(35);
    let v = random_psd(&mut r, 4);
    let mx = v.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
    let w = feature_weights(&moment(v), 1e6 * mx).unwrap();
    assert!(w.iter().all(|&x| (x - 0.25).abs() < 1e-6));
}

#[test]
fn feature_weights_are_stable_for_large_entries() {
    let w = feature_weights(&moment(array![[1e4, 0.0], [0.0, 1e4 - 1.0]]), 1.0).unwrap();
    assert!(w.iter().all(|x| x.is_finite()));
    assert!((w.sum() - 1.0).abs() < 1e-12);
}

#[test]
fn family_names_and_defaults() {
    assert_eq!(MetricSolverConfig::default(), MetricSolverConfig::pnorm(1));
    assert_eq!(MetricSolverConfig::kl(2.0).family(), Family::Kl);
    assert_eq!(MetricSolverConfig::ds(1.0).family().name(), "ds");
    let mixed = Prior::Mixed.resolve(2).unwrap();
    assert_eq!(mixed, array![[2.0, 1.0], [1.0, 2.0]] / 3.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pnorm_feasible_and_tight(seed in 0u64..10_000, d in 1usize..8, k in 1u32..4) {
        let mut r = rng(seed);
        let v = random_psd(&mut r, d);
        let out = pnorm_metric(&moment(v.clone()), k).unwrap();
        let p = 2.0 * k as f64 / (2.0 * k as f64 - 1.0);
        prop_assert!((entry_pnorm(&out.matrix, p) - 1.0).abs() < 1e-9);
        prop_assert!((frobenius(v.view(), out.matrix.view()) - out.value).abs() < 1e-9 * out.value.max(1.0));
        let q = 2.0 * k as f64;
        prop_assert!((out.value - entry_pnorm(&v, q)).abs() < 1e-10 * out.value.max(1.0));
        prop_assert!(min_eigenvalue(out.matrix.view()) >= -1e-8 * out.matrix.diag().sum().abs().max(1.0));
    }

    #[test]
    fn pnorm_scale_covariance(seed in 0u64..10_000, c in 0.01f64..100.0, k in 1u32..4) {
        let mut r = rng(seed);
        let v = random_psd(&mut r, 4);
        let a = pnorm_metric(&moment(v.clone()), k).unwrap();
        let b = pnorm_metric(&moment(&v * c), k).unwrap();
        prop_assert!((b.value - c * a.value).abs() < 1e-10 * b.value);
        for (x, y) in a.matrix.iter().zip(b.matrix.iter()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn kl_stationarity_and_symmetry(seed in 0u64..10_000, d in 1usize..7, lambda in 0.2f64..5.0) {
        let mut r = rng(seed);
        let v = random_psd(&mut r, d);
        let m0 = Prior::Mixed.resolve(d).unwrap();
        let out = kl_metric(&moment(v.clone()), m0.view(), lambda).unwrap();
        for i in 0..d {
            for j in 0..d {
                prop_assert!((v[[i, j]] - lambda * (out.matrix[[i, j]] / m0[[i, j]]).ln()).abs() < 1e-9);
                prop_assert_eq!(out.matrix[[i, j]], out.matrix[[j, i]]);
            }
        }
    }

    #[test]
    fn ds_doubly_stochastic_symmetric_positive(seed in 0u64..10_000, d in 1usize..7, lambda in 0.3f64..5.0) {
        let mut r = rng(seed);
        let v = random_psd(&mut r, d);
        let cfg = MetricSolverConfig::Ds { prior: Prior::Mixed, lambda_m: lambda, sinkhorn_tol: 1e-10, sinkhorn_max_iter: 100_000 };
        let out = adversarial_value(&moment(v), &cfg).unwrap();
        for i in 0..d {
            prop_assert!((out.matrix.row(i).sum() - 1.0).abs() < 1e-10);
            for j in 0..d {
                prop_assert!(out.matrix[[i, j]] > 0.0);
                prop_assert!((out.matrix[[i, j]] - out.matrix[[j, i]]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn feature_selection_identity(seed in 0u64..10_000, d in 1usize..9, lambda in 0.2f64..5.0) {
        let mut r = rng(seed);
        let v = moment(random_psd(&mut r, d));
        let kl = kl_metric(&v, Array2::eye(d).view(), lambda).unwrap().value;
        let lhs = lambda * (kl / lambda + d as f64).ln() - lambda * (d as f64 - 1.0);
        let rhs = feature_selection_objective(&v, lambda).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-9);
        let w = feature_weights(&v, lambda).unwrap();
        prop_assert!((w.sum() - 1.0).abs() < 1e-12);
        prop_assert!(w.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn objective_is_convex_in_moment(seed in 0u64..10_000, t in 0.0f64..1.0, family in 0usize..3) {
        let mut r = rng(seed);
        let a = random_psd(&mut r, 3);
        let b = random_psd(&mut r, 3);
        let cfg = [MetricSolverConfig::pnorm(1 + r.random_range(0..3)), MetricSolverConfig::kl(1.0), MetricSolverConfig::ds(1.0)][family].clone();
        let f = |m: Array2<f64>| adversarial_value(&moment(m), &cfg).unwrap().value;
        let mixed = f(&a * t + &b * (1.0 - t));
        prop_assert!(mixed <= t * f(a.clone()) + (1.0 - t) * f(b.clone()) + 1e-9);
    }
}
