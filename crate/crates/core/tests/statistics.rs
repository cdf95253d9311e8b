//! Monte-Carlo checks with fixed seeds.

#![allow(clippy::needless_range_loop, clippy::type_complexity)]

use nalgebra::DMatrix;

use smartnet::baselines::{least_squares_fit, ridge_fit, LagAggregation};
use smartnet::covariance::{stationary_covariance, sub_cov, CovarianceMethod};
use smartnet::evaluation::{cross_validate, recovery_trial, spearman, CvOptions};
use smartnet::model::{
    circle_pattern, draw_random_model, simulate, winterhalder_network, Init, MarModel, TimeSeries,
    DEFAULT_MAX_ATTEMPTS,
};
use smartnet::seed;
use smartnet::solver::{build_design, solve, GroupLayout, Problem, RegressionDesign, SolverConfig};
use smartnet::Variant;

#[test]
fn empirical_lag_covariances_match_stationary_solution() {
    let m = winterhalder_network();
    let gamma = stationary_covariance(&m, CovarianceMethod::Kronecker).unwrap();
    let s = simulate(&m, 200_000, 1, Init::Stationary).unwrap();
    let v = s.values();
    let n = v.nrows();
    for tau in 0..3 {
        let g = gamma.lag_cov(tau);
        // Gamma(tau) = E[x(t) x(t - tau)^T]
        let emp = DMatrix::from_fn(4, 4, |i, j| {
            (tau..n).map(|t| v[(t, i)] * v[(t - tau, j)]).sum::<f64>() / (n - tau) as f64
        });
        let scale = (0..4).map(|i| gamma.lag_cov(0)[(i, i)]).fold(0.0, f64::max);
        assert!((emp - &g).amax() / scale < 0.03, "lag {tau}");
    }
}

#[test]
fn design_gram_matches_sub_cov() {
    let m = winterhalder_network();
    let gamma = stationary_covariance(&m, CovarianceMethod::Kronecker).unwrap();
    let s = simulate(&m, 100_000, 2, Init::Stationary).unwrap();
    let d = build_design(&s, 0, 5).unwrap();
    let gram = d.x().tr_mul(d.x()) / d.n_rows() as f64;
    let nodes = [0, 1, 2, 3];
    let r = sub_cov(&gamma, &nodes, &nodes).unwrap();
    let rel = (&gram - &r).norm() / r.norm();
    assert!(rel < 0.05, "relative gap {rel}");
}

#[test]
fn stationary_start_has_no_transient() {
    // first-sample variance across realizations equals the stationary variance
    let m = winterhalder_network();
    let g0 = stationary_covariance(&m, CovarianceMethod::Kronecker)
        .unwrap()
        .lag_cov(0);
    let reps = 4000;
    let mut acc = [0.0; 4];
    for k in 0..reps {
        let s = simulate(&m, 6, seed::derive(3, &[k]), Init::Stationary).unwrap();
        for (i, a) in acc.iter_mut().enumerate() {
            *a += s.get(0, i).powi(2) / reps as f64;
        }
    }
    for i in 0..4 {
        assert!(
            (acc[i] / g0[(i, i)] - 1.0).abs() < 0.1,
            "node {i}: {} vs {}",
            acc[i],
            g0[(i, i)]
        );
    }
}

#[test]
fn least_squares_on_white_noise_matches_permutation_baseline() {
    // node 0 is white noise; compare its statistics with those obtained after
    // randomly permuting the target in time
    use rand::seq::SliceRandom;
    let m = winterhalder_network();
    let (mut observed, mut permuted) = (Vec::new(), Vec::new());
    for k in 0..40u64 {
        let s = simulate(&m, 400, seed::derive(10, &[k]), Init::Stationary).unwrap();
        let mut v = s.values().clone();
        let mut rng = seed::rng(seed::derive(11, &[k]));
        let noise: Vec<f64> = (0..v.nrows())
            .map(|_| rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng))
            .collect();
        v.set_column(0, &nalgebra::DVector::from_vec(noise));
        let s = TimeSeries::new(v).unwrap();
        let d = build_design(&s, 0, 5).unwrap();
        observed.extend(
            least_squares_fit(&d, LagAggregation::L2)
                .unwrap()
                .stats
                .into_iter()
                .skip(1),
        );
        let mut order: Vec<usize> = (0..d.n_rows()).collect();
        order.shuffle(&mut rng);
        let y = nalgebra::DVector::from_fn(d.n_rows(), |r, _| d.y()[order[r]]);
        let dp = RegressionDesign::new(0, 5, d.x().clone(), y).unwrap();
        permuted.extend(
            least_squares_fit(&dp, LagAggregation::L2)
                .unwrap()
                .stats
                .into_iter()
                .skip(1),
        );
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let (a, b) = (median(&mut observed), median(&mut permuted));
    assert!(a / b < 2.0 && b / a < 2.0, "{a} vs {b}");
}

#[test]
fn ridge_ranking_is_stable_across_penalties() {
    let m = winterhalder_network();
    let s = simulate(&m, 600, 12, Init::Stationary)
        .unwrap()
        .normalized()
        .unwrap();
    let stats = |rho: f64| -> Vec<f64> {
        (0..4)
            .flat_map(|i| {
                ridge_fit(&build_design(&s, i, 5).unwrap(), rho, LagAggregation::L2)
                    .unwrap()
                    .stats
            })
            .collect()
    };
    let base = stats(1e-4);
    for rho in [1e-3, 1e-2] {
        let rho_s = spearman(&base, &stats(rho));
        assert!(rho_s > 0.9, "rho={rho}: {rho_s}");
    }
}

#[test]
fn least_squares_parametric_bootstrap() {
    let m = winterhalder_network();
    let s = simulate(&m, 5000, 13, Init::Stationary).unwrap();
    let fit_model = |s: &TimeSeries| -> MarModel {
        let mut lags = vec![DMatrix::zeros(4, 4); 5];
        for i in 0..4 {
            let f = least_squares_fit(&build_design(s, i, 5).unwrap(), LagAggregation::L2).unwrap();
            for j in 0..4 {
                for r in 0..5 {
                    lags[r][(i, j)] = f.coeffs[j * 5 + r];
                }
            }
        }
        MarModel::new(lags, DMatrix::identity(4, 4)).unwrap()
    };
    let fitted = fit_model(&s);
    let refit = fit_model(&simulate(&fitted, 5000, 14, Init::Stationary).unwrap());
    for r in 1..=5 {
        // coefficient standard errors at n = 5000 are about 0.01 to 0.03
        assert!((fitted.lag(r) - refit.lag(r)).amax() < 0.15, "lag {r}");
    }
}

#[test]
fn cv_on_pure_noise_selects_near_lambda_max() {
    let m = MarModel::zeros(4, 3, DMatrix::identity(4, 4)).unwrap();
    let mut at_top = 0;
    for k in 0..10u64 {
        let s = simulate(&m, 300, seed::derive(20, &[k]), Init::Stationary).unwrap();
        let cv = cross_validate(&s, 0, 3, Variant::Sg, &CvOptions::default()).unwrap();
        if cv.selected_lambda >= 0.5 * cv.lambda_max {
            at_top += 1;
        }
    }
    assert!(at_top >= 7, "{at_top}/10");
}

#[test]
fn cv_on_driven_target_keeps_truth() {
    let m = winterhalder_network();
    let s = simulate(&m, 2000, 21, Init::Stationary).unwrap();
    let opts = CvOptions::default();
    for i in 0..4 {
        let cv = cross_validate(&s, i, 5, Variant::Scsg, &opts).unwrap();
        let d = build_design(&s, i, 5).unwrap();
        let sol = Problem::new(&d, GroupLayout::for_variant(&d, Variant::Scsg))
            .solve(cv.selected_lambda, &opts.solver, None)
            .unwrap();
        for j in m.parents(i).into_iter().filter(|&j| j != i) {
            assert!(sol.active_nodes().contains(&j), "node {i} lost parent {j}");
            assert!(cv.selected_index > 0, "node {i} selected lambda_max");
        }
    }
}

#[test]
fn circle_network_ring_edges_found_in_majority() {
    let m = draw_random_model(
        &circle_pattern(),
        4,
        0.2,
        DMatrix::identity(4, 4),
        1,
        DEFAULT_MAX_ATTEMPTS,
    )
    .unwrap();
    let t = recovery_trial(&m, 150, 30, Variant::Scsg, 2, &CvOptions::default()).unwrap();
    for &(i, j) in &t.true_edges {
        assert!(
            t.count(i, j) > 15,
            "{} -> {}: {}/30",
            j + 1,
            i + 1,
            t.count(i, j)
        );
    }
}

#[test]
fn zero_coupling_false_positive_rate_recorded() {
    let m = MarModel::from_triples(
        3,
        2,
        &[(0, 0, 1, 0.5), (1, 1, 1, -0.4), (2, 2, 2, 0.3)],
        DMatrix::identity(3, 3),
    )
    .unwrap();
    let t = recovery_trial(&m, 150, 10, Variant::Scsg, 3, &CvOptions::default()).unwrap();
    assert!(t.true_edges.is_empty());
    let worst = t.false_edges().first().map_or(0, |e| e.1);
    println!("zero coupling: worst false edge in {worst}/10 trials");
    assert!(t.counts.values().all(|&c| c <= 10));
}

#[test]
fn sg_path_solutions_certify() {
    let m = winterhalder_network();
    let s = simulate(&m, 150, 30, Init::Stationary).unwrap();
    let cfg = SolverConfig::default();
    for i in 0..4 {
        let d = build_design(&s, i, 5).unwrap();
        for lambda in [0.0, 0.01, 0.1, 1.0] {
            let sol = solve(&d, lambda, Variant::Sg, &cfg).unwrap();
            assert!(smartnet::solver::kkt_residual(&d, &sol, lambda) < 1e-6);
        }
    }
}
