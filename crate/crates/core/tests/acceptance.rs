//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on failure.

mod common;

use std::time::Instant;

use ndarray::{array, Array1, Array2};
use rand::Rng;

use common::*;
use robust_ot::classifier::{evaluate, sgd_train, sgd_train_with, LossKind, TrainConfig};
use robust_ot::cli::{contour_grid, FamilyArg};
use robust_ot::data_io::{make_grouping, Dataset};
use robust_ot::frank_wolfe::{gradient_wrt_plan, rot_distance, rot_objective, w22_distance, FwConfig};
use robust_ot::measures::{
    grouped_second_moment, make_measure, DisplacementMoment, FeatureGrouping, MomentKind, TransportPlan,
};
use robust_ot::metric_solvers::{
    ds_metric, feature_selection_objective, kl_metric, pnorm_metric, MetricSolverConfig, Prior,
};
use robust_ot::rot_loss::{rot_loss, rot_loss_gradient, LabelSpace, RotLossConfig};
use robust_ot::sinkhorn::SinkhornConfig;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn moment(v: Array2<f64>) -> DisplacementMoment {
    DisplacementMoment::new(v, MomentKind::Full).unwrap()
}

fn square_instance() -> (
    robust_ot::measures::DiscreteMeasure,
    robust_ot::measures::DiscreteMeasure,
) {
    let s = make_measure(&[vec![0.0, 0.0], vec![1.0, 1.0]], &[1.0, 1.0]).unwrap();
    let t = make_measure(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[1.0, 1.0]).unwrap();
    (s, t)
}

/// 1. `W₂²/d^{1/p} ≤ W_P ≤ W₂²` on random instances.
fn w22_sandwich_bounds() -> Outcome {
    let mut r = rng(1);
    let sinkhorn = SinkhornConfig::new(0.02, 2000).with_tol(1e-11);
    let mut worst_upper = f64::NEG_INFINITY;
    let mut worst_lower = f64::NEG_INFINITY;
    let mut failures = 0;
    for _ in 0..50 {
        let src = random_measure(&mut r, 5, 10);
        let tgt = random_measure(&mut r, 5, 10);
        let w22 = w22_distance(&src, &tgt, &sinkhorn).unwrap();
        for k in [1u32, 2] {
            let p = 2.0 * k as f64 / (2.0 * k as f64 - 1.0);
            let cfg = FwConfig {
                max_iter: 100,
                gap_tol: 1e-9,
                sinkhorn,
                metric: MetricSolverConfig::pnorm(k),
                ..FwConfig::default()
            };
            let wp = rot_distance(&src, &tgt, &cfg).unwrap().value;
            let lower = w22 / 10f64.powf(1.0 / p);
            worst_upper = worst_upper.max(wp - w22);
            worst_lower = worst_lower.max(lower - wp);
            if wp > w22 + 1e-6 || wp < lower - 1e-6 {
                failures += 1;
            }
        }
    }
    outcome(
        failures == 0,
        format!(
            "100 runs, {failures} violations; max(W_P - W22) = {worst_upper:.3e}, max(lower - W_P) = {worst_lower:.3e}"
        ),
    )
}

/// 2. Derived 2×2 optimum against a grid over the plan parameter.
fn square_optimum() -> Outcome {
    let (s, t) = square_instance();
    // grid oracle: V = diag(2θ, 1 − 2θ), minimize its Frobenius norm
    let oracle = (0..=50_000)
        .map(|i| {
            let theta = 0.5 * i as f64 / 50_000.0;
            ((2.0 * theta).powi(2) + (1.0 - 2.0 * theta).powi(2)).sqrt()
        })
        .fold(f64::INFINITY, f64::min);
    let wp = rot_distance(&s, &t, &FwConfig::default()).unwrap().value;
    let w22 = w22_distance(&s, &t, &SinkhornConfig::default()).unwrap();
    let pass = (wp - oracle).abs() <= 1e-3
        && (wp - std::f64::consts::FRAC_1_SQRT_2).abs() <= 1e-3
        && (w22 - 1.0).abs() <= 1e-3;
    outcome(pass, format!("W_P = {wp:.6} (grid oracle {oracle:.6}), W22 = {w22:.6}"))
}

/// 3. Optimality of the three closed forms.
fn closed_forms() -> Outcome {
    let mut r = rng(3);
    // p-norm against random feasible metrics
    let mut worst_gap = f64::INFINITY;
    for k in [1u32, 2] {
        let p = 2.0 * k as f64 / (2.0 * k as f64 - 1.0);
        let v = moment(random_psd(&mut r, 5));
        let best = pnorm_metric(&v, k).unwrap().value;
        for _ in 0..10_000 {
            let m = random_psd(&mut r, 5);
            let norm = m.iter().map(|x| x.abs().powf(p)).sum::<f64>().powf(1.0 / p);
            let m = m / norm;
            worst_gap = worst_gap.min(best - frobenius(v.matrix(), m.view()));
        }
    }
    // KL stationarity on the support of a positive prior
    let mut kl_residual: f64 = 0.0;
    for _ in 0..20 {
        let v = random_psd(&mut r, 6);
        let lambda = r.random_range(0.3..3.0);
        let m0 = Prior::Mixed.resolve(6).unwrap();
        let out = kl_metric(&moment(v.clone()), m0.view(), lambda).unwrap();
        for ((&vij, &mij), &pij) in v.iter().zip(out.matrix.iter()).zip(m0.iter()) {
            kl_residual = kl_residual.max((vij - lambda * (mij / pij).ln()).abs());
        }
    }
    // doubly stochastic 2×2 against a 1-D oracle
    let derivative = |m: f64| 1.0 - 2.0 * (m / 0.6).ln() + 2.0 * ((1.0 - m) / 0.4).ln();
    let (mut lo, mut hi) = (1e-9, 1.0 - 1e-9);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if derivative(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let oracle = 0.5 * (lo + hi);
    let m0 = array![[0.6, 0.4], [0.4, 0.6]];
    let ds = ds_metric(&moment(array![[1.0, 0.0], [0.0, 0.0]]), m0.view(), 1.0, 1e-8, 10_000).unwrap();
    let row_residual = ds
        .matrix
        .rows()
        .into_iter()
        .map(|row| (row.sum() - 1.0).abs())
        .fold(0.0, f64::max);
    let m_star = ds.matrix[[0, 0]];
    let pass = worst_gap >= -1e-9
        && kl_residual < 1e-9
        && (m_star - oracle).abs() <= 1e-5
        && (m_star - 0.71207).abs() <= 1e-5
        && row_residual < 1e-8;
    outcome(
        pass,
        format!(
            "p-norm min gap {worst_gap:.3e}; KL stationarity {kl_residual:.3e}; DS m* = {m_star:.6} (oracle {oracle:.6}), row residual {row_residual:.3e}"
        ),
    )
}

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

/// 4. Plan gradients and loss gradients against finite differences.
fn gradients() -> Outcome {
    let mut r = rng(4);
    let families = [
        MetricSolverConfig::pnorm(1),
        MetricSolverConfig::pnorm(2),
        MetricSolverConfig::kl(1.0),
        MetricSolverConfig::Ds {
            prior: Prior::Mixed,
            lambda_m: 1.0,
            sinkhorn_tol: 1e-14,
            sinkhorn_max_iter: 100_000,
        },
    ];
    let h = 1e-6;
    let mut worst_fw: f64 = 0.0;
    for _ in 0..20 {
        let src = random_measure(&mut r, 4, 3);
        let tgt = random_measure(&mut r, 5, 3);
        let p = src.weights().to_owned();
        let q = tgt.weights().to_owned();
        let plan = random_plan(&mut r, &p, &q);
        let other = random_plan(&mut r, &p, &q);
        let delta = &other.matrix() - &plan.matrix();
        for family in &families {
            let base = rot_objective(&plan, &src, &tgt, family, None).unwrap();
            let grad = gradient_wrt_plan(&plan, &src, &tgt, &base, None).unwrap();
            let moved = TransportPlan::from_matrix(&plan.matrix() + &(&delta * h)).unwrap();
            let f1 = rot_objective(&moved, &src, &tgt, family, None).unwrap().value;
            let fd = (f1 - base.value) / h;
            let analytic = frobenius(grad.view(), delta.view());
            worst_fw = worst_fw.max(relative_error(fd, analytic));
        }
    }

    let mut worst_tangent: f64 = 0.0;
    let mut worst_loss: f64 = 0.0;
    for (l, d) in [(3usize, 4usize), (10, 6)] {
        for _ in 0..3 {
            let labels = LabelSpace::normalized(gaussian(&mut r, l, d), None).unwrap();
            let cfg = RotLossConfig {
                metric: MetricSolverConfig::pnorm(1),
                lambda_gamma: 0.1,
                fw_iters: 3000,
                sinkhorn: SinkhornConfig::new(0.1, 2000).with_tol(1e-14),
                target_smoothing_alpha: 0.0,
            };
            let hp = simplex_point(&mut r, l);
            let yp = simplex_point(&mut r, l);
            let g = rot_loss_gradient(hp.view(), yp.view(), &labels, &cfg).unwrap();
            worst_tangent = worst_tangent.max(g.sum().abs());
            let eps = 1e-4;
            for (i, j) in [(0usize, 1usize), (1, 2), (0, l - 1)] {
                let mut dir = Array1::<f64>::zeros(l);
                dir[i] = 1.0 / 2f64.sqrt();
                dir[j] = -1.0 / 2f64.sqrt();
                let plus = &hp + &(&dir * eps);
                let minus = &hp - &(&dir * eps);
                let lp = rot_loss(plus.view(), yp.view(), &labels, &cfg).unwrap().value;
                let lm = rot_loss(minus.view(), yp.view(), &labels, &cfg).unwrap().value;
                let fd = (lp - lm) / (2.0 * eps);
                worst_loss = worst_loss.max(relative_error(fd, g.dot(&dir)));
            }
        }
    }
    let pass = worst_fw <= 1e-4 && worst_tangent <= 1e-12 && worst_loss <= 1e-3;
    outcome(
        pass,
        format!(
            "plan gradient max rel err {worst_fw:.3e}; loss gradient 1'g max {worst_tangent:.3e}, FD max rel err {worst_loss:.3e}"
        ),
    )
}

/// 5. Grouped path with `d1 = 1` against the full path, and the Kronecker identity.
fn kronecker() -> Outcome {
    let mut r = rng(5);
    let mut worst_iterate: f64 = 0.0;
    for family in [
        MetricSolverConfig::pnorm(1),
        MetricSolverConfig::kl(1.0),
        MetricSolverConfig::ds(1.0),
    ] {
        let src = random_measure(&mut r, 5, 4);
        let tgt = random_measure(&mut r, 6, 4);
        let full = FwConfig {
            max_iter: 30,
            gap_tol: 0.0,
            metric: family,
            ..FwConfig::default()
        };
        let grouped = FwConfig {
            grouping: Some(FeatureGrouping::identity(4).unwrap()),
            ..full.clone()
        };
        let a = rot_distance(&src, &tgt, &full).unwrap();
        let b = rot_distance(&src, &tgt, &grouped).unwrap();
        for (x, y) in a.value_history.iter().zip(&b.value_history) {
            worst_iterate = worst_iterate.max((x - y).abs());
        }
        for (x, y) in a.plan.matrix().iter().zip(b.plan.matrix().iter()) {
            worst_iterate = worst_iterate.max((x - y).abs());
        }
        if a.value_history.len() != b.value_history.len() {
            worst_iterate = f64::INFINITY;
        }
    }
    let mut worst_identity: f64 = 0.0;
    for (d, groups) in [(4usize, 2usize), (5, 2)] {
        let src = random_measure(&mut r, 3, d);
        let tgt = random_measure(&mut r, 3, d);
        let plan = random_plan(&mut r, &src.weights().to_owned(), &tgt.weights().to_owned());
        let g = make_grouping(d, groups, 11).unwrap();
        let u = grouped_second_moment(&plan, &src, &tgt, &g).unwrap();
        // oracle: V on permuted, zero-padded points
        let pad = |pts: ndarray::ArrayView2<'_, f64>| {
            let mut out = Array2::zeros((pts.nrows(), g.padded_dim()));
            for (i, row) in pts.outer_iter().enumerate() {
                for (k, &orig) in g.permutation().iter().enumerate() {
                    if orig < d {
                        out[[i, k]] = row[orig];
                    }
                }
            }
            out
        };
        let v = outer_product_moment(plan.matrix(), pad(src.points()).view(), pad(tgt.points()).view());
        let d1 = g.group_size();
        for _ in 0..100 {
            let b = random_symmetric(&mut r, groups);
            let kron = Array2::from_shape_fn((d1 * groups, d1 * groups), |(x, y)| {
                if x % d1 == y % d1 {
                    b[[x / d1, y / d1]]
                } else {
                    0.0
                }
            });
            let lhs = frobenius(v.view(), kron.view());
            let rhs = frobenius(u.matrix(), b.view());
            worst_identity = worst_identity.max((lhs - rhs).abs());
        }
    }
    outcome(
        worst_iterate <= 1e-9 && worst_identity <= 1e-10,
        format!("per-iterate max diff {worst_iterate:.3e}; <V, B (x) I> vs <U, B> max diff {worst_identity:.3e}"),
    )
}

/// 6. KL with identity prior against the simplex feature-selection objective.
fn feature_selection() -> Outcome {
    let mut r = rng(6);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let d = r.random_range(2..9);
        let lambda = r.random_range(0.2..5.0);
        let v = moment(random_psd(&mut r, d));
        let kl = kl_metric(&v, Array2::eye(d).view(), lambda).unwrap().value;
        let transformed = lambda * (kl / lambda + d as f64).ln() - lambda * (d as f64 - 1.0);
        let diag = v.matrix().diag().to_owned();
        let lse = diag.iter().map(|x| (x / lambda).exp()).sum::<f64>().ln();
        let direct = lambda * (lse - (d as f64 - 1.0));
        let library = feature_selection_objective(&v, lambda).unwrap();
        worst = worst.max((transformed - direct).abs()).max((library - direct).abs());
    }
    outcome(worst <= 1e-9, format!("50 moments, max deviation {worst:.3e}"))
}

fn blob_task(seed: u64) -> (Dataset, Dataset, LabelSpace) {
    let mut r = rng(seed);
    let train = blobs(&mut r, 3, 100, 10, 3.0);
    let test = blobs(&mut r, 3, 100, 10, 3.0);
    let labels = LabelSpace::new(Array2::eye(3), None).unwrap();
    (train, test, labels)
}

/// 7. End-to-end training on Gaussian blobs.
fn training() -> Outcome {
    let (train, test, labels) = blob_task(7);
    let cfg = TrainConfig {
        loss: LossKind::Rot(RotLossConfig::default()),
        ..TrainConfig::default()
    };
    let report = sgd_train(&train, &cfg, &labels).unwrap();
    let eval = evaluate(&report.model, &test).unwrap();
    let last = report.epochs.last().unwrap().mean_loss;
    outcome(
        eval.auc >= 0.95,
        format!(
            "{} epochs, final train loss {last:.4}, test AUC {:.4}, mAP {:.4}",
            report.epochs.len(),
            eval.auc,
            eval.map
        ),
    )
}

/// 8. Per-epoch time against `a + b r²`.
fn scaling() -> Outcome {
    let mut r = rng(8);
    let (l, d, features, n) = (30usize, 60usize, 20usize, 150usize);
    let x = gaussian(&mut r, n, features);
    let sets = (0..n).map(|i| vec![i % l, (i * 7 + 3) % l]).collect();
    let names = (0..l).map(|p| p.to_string()).collect();
    let data = Dataset::new(x, sets, names).unwrap();
    let emb = gaussian(&mut r, l, d);
    let mut points = Vec::new();
    for groups in [5usize, 10, 20] {
        let labels = LabelSpace::normalized(emb.clone(), Some(make_grouping(d, groups, 1).unwrap())).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        let mut best = f64::INFINITY;
        sgd_train_with(&data, &cfg, &labels, |s| best = best.min(s.seconds)).unwrap();
        points.push(((groups * groups) as f64, best));
    }
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / 3.0;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / 3.0;
    let sxy: f64 = points.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let b = sxy / sxx;
    let a = mean_y - b * mean_x;
    let ss_res: f64 = points.iter().map(|p| (p.1 - a - b * p.0).powi(2)).sum();
    let ss_tot: f64 = points.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    let r2 = 1.0 - ss_res / ss_tot;
    let times: Vec<String> = points.iter().map(|p| format!("{:.4}s", p.1)).collect();
    outcome(
        r2 >= 0.9 && b > 0.0,
        format!(
            "epoch times at r = 5, 10, 20: {}; fit a = {a:.3e}, b = {b:.3e}, R^2 = {r2:.4}",
            times.join(", ")
        ),
    )
}

/// 9. Contour grids: the closer wrong label is penalized less.
fn contours() -> Outcome {
    let c: Array1<f64> = array![0.0, 0.0, 1.0];
    let a: Array1<f64> = array![0.4, 0.2, 1.0];
    let b: Array1<f64> = array![1.0, -0.3, 0.1];
    let mut emb = Array2::zeros((3, 3));
    for (row, v) in [a, b, c].iter().enumerate() {
        emb.row_mut(row).assign(&(v / v.dot(v).sqrt()));
    }
    let labels = LabelSpace::new(emb.clone(), None).unwrap();
    let dist = |i: usize| {
        let diff = &emb.row(i) - &emb.row(2);
        diff.dot(&diff).sqrt()
    };
    assert!(dist(0) < dist(1));
    let cases = [
        ("pnorm k=1", FamilyArg::Pnorm, Some(MetricSolverConfig::pnorm(1))),
        ("pnorm k=2", FamilyArg::Pnorm, Some(MetricSolverConfig::pnorm(2))),
        ("kl", FamilyArg::Kl, Some(MetricSolverConfig::kl(1.0))),
        ("ds", FamilyArg::Ds, Some(MetricSolverConfig::ds(1.0))),
        ("w22", FamilyArg::W22, None),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, family, metric) in cases {
        let cfg = metric.map(|metric| RotLossConfig {
            metric,
            target_smoothing_alpha: 0.0,
            ..RotLossConfig::default()
        });
        let grid = contour_grid(&labels, family, cfg.as_ref(), &SinkhornConfig::new(0.02, 10), 101).unwrap();
        let at = |x: f64, y: f64| {
            grid.iter()
                .find(|r| (r.0 - x).abs() < 1e-12 && (r.1 - y).abs() < 1e-12)
                .unwrap()
                .2
        };
        let (la, lb) = (at(1.0, 0.0), at(0.0, 1.0));
        let max = grid.iter().map(|r| r.2).fold(f64::NEG_INFINITY, f64::max);
        let min = grid.iter().map(|r| r.2).fold(f64::INFINITY, f64::min);
        let ok = la < lb && max == 1.0 && at(0.0, 0.0) == min;
        pass &= ok;
        parts.push(format!("{name}: e_A {la:.4} < e_B {lb:.4}"));
    }
    outcome(pass, parts.join("; "))
}

/// Name, time budget in seconds, check.
type Criterion = (&'static str, f64, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        ("W2^2 sandwich bounds", 30.0, w22_sandwich_bounds),
        ("2x2 derived optimum", 1.0, square_optimum),
        ("closed-form optimality", 30.0, closed_forms),
        ("gradient suites", 60.0, gradients),
        ("Kronecker equivalence", 10.0, kronecker),
        ("feature-selection identity", 5.0, feature_selection),
        ("end-to-end training", 60.0, training),
        ("O(r^2) epoch scaling", 300.0, scaling),
        ("contour ordering", 30.0, contours),
    ];
    let mut failed = 0;
    for (i, (name, budget, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let out = run();
        let secs = start.elapsed().as_secs_f64();
        let pass = out.pass && secs < *budget;
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {}: {} {name} ({secs:.2}s of {budget:.0}s): {}",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            out.detail
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
