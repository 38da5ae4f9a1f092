use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::simulate::simulate;

fn two_process_truth() -> ModelParams {
    ModelParams::new(
        vec![vec![0.0, 0.0], vec![0.6, 0.0]],
        vec![vec![0, 0], vec![2, 0]],
        vec![-0.8, -1.5],
        vec![1.0, 2.0],
    )
    .unwrap()
}

/// Per-observation likelihood straight from the model definition.
fn direct_log_likelihood(data: &Trajectory, p: &ModelParams) -> f64 {
    let mut total = 0.0;
    for i in 0..data.n_processes() {
        let lambda = p.noise_rates()[i];
        for t in 0..data.horizon() {
            let mut eta = p.theta()[i];
            for j in 0..data.n_processes() {
                let lag = p.lag(i, j);
                let active = (1..=lag)
                    .filter(|&s| t >= s && data.is_active(j, t - s))
                    .count();
                eta += p.coupling(i, j) * active as f64;
            }
            let l = data.get(i, t);
            total += if l > 0.0 {
                lambda.ln() - lambda * (l - eta)
            } else {
                (1.0 - (lambda * eta).exp()).ln()
            };
        }
    }
    total
}

fn theta_j_problem(data: Trajectory, truth: &ModelParams) -> EstimationProblem {
    EstimationProblem::new(
        data,
        truth.lags().to_vec(),
        Mode::ThetaJ {
            lambda: truth.noise_rates().to_vec(),
        },
        ConstraintConfig::default(),
    )
    .unwrap()
}

#[test]
fn pooled_likelihood_matches_direct_sum() {
    let truth = two_process_truth();
    let data = simulate(&truth, 2_000, 5).unwrap();
    let problem = theta_j_problem(data.clone(), &truth);
    let pooled = log_likelihood(&problem, &truth).unwrap();
    let direct = direct_log_likelihood(&data, &truth);
    assert!((pooled - direct).abs() < 1e-9 * direct.abs(), "{pooled} vs {direct}");
}

#[test]
fn gradient_matches_finite_differences() {
    let truth = two_process_truth();
    let data = simulate(&truth, 2_000, 9).unwrap();
    let problem = theta_j_problem(data, &truth);
    let pd = problem.process_data(1);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h = 1e-6;
    for _ in 0..100 {
        let x = vec![rng.random_range(-3.0..-0.5), rng.random_range(0.0..0.2)];
        let lambda = rng.random_range(0.5..3.0);
        let (g, hess) = pd.derivatives(&x, lambda);
        let f = |x: &[f64], l: f64| pd.log_likelihood(x, l).unwrap();
        for k in 0..3 {
            let shift = |sign: f64| {
                let mut xs = x.clone();
                let mut l = lambda;
                if k < 2 {
                    xs[k] += sign * h;
                } else {
                    l += sign * h;
                }
                (xs, l)
            };
            let (xp, lp) = shift(1.0);
            let (xm, lm) = shift(-1.0);
            let fd = (f(&xp, lp) - f(&xm, lm)) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-5 * g[k].abs().max(1.0), "grad {k}: {fd} vs {}", g[k]);
            let gp = pd.derivatives(&xp, lp).0;
            let gm = pd.derivatives(&xm, lm).0;
            for m in 0..3 {
                let fd2 = (gp[m] - gm[m]) / (2.0 * h);
                assert!(
                    (fd2 - hess[m][k]).abs() <= 1e-5 * hess[m][k].abs().max(1.0),
                    "hess {m}{k}: {fd2} vs {}",
                    hess[m][k]
                );
            }
        }
    }
}

#[test]
fn public_gradient_reports_columns() {
    let truth = two_process_truth();
    let problem = theta_j_problem(simulate(&truth, 500, 2).unwrap(), &truth);
    let g = log_likelihood_gradient(&problem, &truth).unwrap();
    assert!(g[0].couplings.is_empty());
    assert_eq!(g[1].couplings.len(), 1);
    assert_eq!(g[1].couplings[0].0, 0);
}

#[test]
fn infeasible_candidate_is_rejected() {
    let truth = two_process_truth();
    let problem = theta_j_problem(simulate(&truth, 500, 2).unwrap(), &truth);
    let bad = ModelParams::new(
        truth.couplings().to_vec(),
        truth.lags().to_vec(),
        vec![0.1, -1.5],
        truth.noise_rates().to_vec(),
    )
    .unwrap();
    match log_likelihood(&problem, &bad) {
        Err(Error::InfeasibleCandidate { process: 0, max_eta }) => assert!(max_eta >= 0.0),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn isolated_threshold_has_closed_form() {
    let truth = ModelParams::isolated(vec![-1.2], vec![1.5]).unwrap();
    let data = simulate(&truth, 50_000, 3).unwrap();
    let n_pos = data.row(0).iter().filter(|&&l| l > 0.0).count() as f64;
    let fit = fit(&theta_j_problem(data, &truth)).unwrap();
    let expected = (n_pos / 50_000.0).ln() / 1.5;
    assert!((fit.params.theta()[0] - expected).abs() < 1e-8);
    assert!(fit.processes[0].converged);
}

#[test]
fn isolated_joint_fit_matches_grid_search() {
    let truth = ModelParams::isolated(vec![-0.7], vec![2.0]).unwrap();
    let data = simulate(&truth, 20_000, 11).unwrap();
    let problem = EstimationProblem::new(
        data,
        vec![vec![0]],
        Mode::Full { initial_lambda: None },
        ConstraintConfig::default(),
    )
    .unwrap();
    let result = fit(&problem).unwrap();
    let pd = problem.process_data(0);
    // refine a grid around the best cell three times
    let (mut tc, mut lc, mut width) = (-1.0, 1.0, 2.0);
    for _ in 0..6 {
        let mut best = (f64::NEG_INFINITY, tc, lc);
        for a in 0..=40 {
            for b in 0..=40 {
                let th = tc + width * (a as f64 / 40.0 - 0.5);
                let la = lc + width * (b as f64 / 40.0 - 0.5);
                if th >= 0.0 || la <= 0.0 {
                    continue;
                }
                let v = pd.log_likelihood(&[th], la).unwrap();
                if v > best.0 {
                    best = (v, th, la);
                }
            }
        }
        tc = best.1;
        lc = best.2;
        width /= 8.0;
    }
    let p = &result.params;
    assert!((p.theta()[0] - tc).abs() < 1e-4, "{} vs {tc}", p.theta()[0]);
    assert!((p.noise_rates()[0] - lc).abs() < 1e-4, "{} vs {lc}", p.noise_rates()[0]);
    let h = &result.processes[0].history;
    assert!(h.windows(2).all(|w| w[1] >= w[0] - 1e-9 * w[0].abs()));
}

#[test]
fn fit_beats_truth() {
    let truth = two_process_truth();
    let data = simulate(&truth, 5_000, 21).unwrap();
    for mode in [
        Mode::ThetaJ {
            lambda: truth.noise_rates().to_vec(),
        },
        Mode::Full { initial_lambda: None },
    ] {
        let problem =
            EstimationProblem::new(data.clone(), truth.lags().to_vec(), mode, ConstraintConfig::default())
                .unwrap();
        let fitted = fit(&problem).unwrap();
        let at_truth = log_likelihood(&problem, &truth).unwrap();
        assert!(fitted.log_likelihood >= at_truth, "{} < {at_truth}", fitted.log_likelihood);
        let recomputed = log_likelihood(&problem, &fitted.params).unwrap();
        assert!((recomputed - fitted.log_likelihood).abs() < 1e-9 * recomputed.abs());
    }
}

#[test]
fn cyclic_support_rejected_for_rate_fit() {
    let data = Trajectory::zeros(2, 10).unwrap();
    let err = EstimationProblem::new(
        data.clone(),
        vec![vec![0, 1], vec![1, 0]],
        Mode::Full { initial_lambda: None },
        ConstraintConfig::default(),
    );
    assert!(matches!(err, Err(Error::Mode(_))));
    // the known-rate mode accepts loops
    assert!(EstimationProblem::new(
        data,
        vec![vec![0, 1], vec![1, 0]],
        Mode::ThetaJ { lambda: vec![1.0, 1.0] },
        ConstraintConfig::default(),
    )
    .is_ok());
}

#[test]
fn all_zero_process_is_unidentifiable() {
    let data = Trajectory::from_rows(vec![vec![0.0; 50], vec![0.3; 50]]).unwrap();
    let problem = EstimationProblem::new(
        data,
        vec![vec![0, 1], vec![0, 0]],
        Mode::ThetaJ { lambda: vec![1.0, 1.0] },
        ConstraintConfig::default(),
    )
    .unwrap();
    let r = fit(&problem).unwrap();
    let p0 = &r.processes[0];
    assert!(!p0.identifiable);
    assert!(!p0.warnings.is_empty());
    assert_eq!(r.params.theta()[0], -FEASIBILITY_MARGIN);
    assert_eq!(r.params.coupling(0, 1), 0.0);
}

#[test]
fn never_silent_process_pins_threshold_at_margin() {
    let data = Trajectory::from_rows(vec![vec![0.5, 1.0, 0.2, 0.7]]).unwrap();
    let problem = EstimationProblem::new(
        data,
        vec![vec![0]],
        Mode::ThetaJ { lambda: vec![2.0] },
        ConstraintConfig::default(),
    )
    .unwrap();
    let r = fit(&problem).unwrap();
    let f = &r.processes[0];
    assert!((r.params.theta()[0] + FEASIBILITY_MARGIN / 2.0).abs() < 1e-18);
    assert!(f.active_constraints.iter().any(|(k, _)| *k == ConstraintKind::Theta));
    assert!(f.warnings.iter().any(|w| w.contains("censored")));
}

#[test]
fn silent_source_column_fixed_at_zero() {
    // source 0 never active: its coupling cannot be learned
    let data = Trajectory::from_rows(vec![vec![0.0; 20], vec![0.0, 1.0].repeat(10)]).unwrap();
    let problem = EstimationProblem::new(
        data,
        vec![vec![0, 0], vec![3, 0]],
        Mode::ThetaJ { lambda: vec![1.0, 1.0] },
        ConstraintConfig::default(),
    )
    .unwrap();
    assert!(problem.fitted_columns(1).is_empty());
    let r = fit(&problem).unwrap();
    assert_eq!(r.params.coupling(1, 0), 0.0);
    assert!(r.processes[1].warnings.iter().any(|w| w.contains("process 1")));
}

#[test]
fn feasibility_bound_constrains_fit() {
    let truth = ModelParams::new(
        vec![vec![0.0, 0.0], vec![0.9, 0.0]],
        vec![vec![0, 0], vec![3, 0]],
        vec![-0.3, -2.0],
        vec![1.0, 1.0],
    )
    .unwrap();
    let data = simulate(&truth, 5_000, 4).unwrap();
    let bounded = EstimationProblem::new(
        data,
        truth.lags().to_vec(),
        Mode::ThetaJ { lambda: vec![1.0, 1.0] },
        ConstraintConfig { feasibility_bound: true },
    )
    .unwrap();
    let r = fit(&bounded).unwrap();
    let p = &r.params;
    assert!(p.theta()[1] + 3.0 * p.coupling(1, 0) < 0.0);
}

#[test]
fn permutation_equivariance() {
    let truth = ModelParams::new(
        vec![
            vec![0.0, 0.0, 0.0],
            vec![0.4, 0.0, 0.0],
            vec![0.3, 0.2, 0.0],
        ],
        vec![vec![0, 0, 0], vec![2, 0, 0], vec![1, 2, 0]],
        vec![-0.9, -1.2, -1.5],
        vec![1.0, 1.5, 0.8],
    )
    .unwrap();
    let data = simulate(&truth, 4_000, 8).unwrap();
    let perm = [2, 0, 1];
    let base = fit(&EstimationProblem::new(
        data.clone(),
        truth.lags().to_vec(),
        Mode::Full { initial_lambda: None },
        ConstraintConfig::default(),
    )
    .unwrap())
    .unwrap();
    let permuted_truth = truth.permuted(&perm).unwrap();
    let other = fit(&EstimationProblem::new(
        data.permuted(&perm).unwrap(),
        permuted_truth.lags().to_vec(),
        Mode::Full { initial_lambda: None },
        ConstraintConfig::default(),
    )
    .unwrap())
    .unwrap();
    let expected = base.params.permuted(&perm).unwrap();
    for i in 0..3 {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(1.0);
        assert!(close(expected.theta()[i], other.params.theta()[i]));
        assert!(close(expected.noise_rates()[i], other.params.noise_rates()[i]));
        for j in 0..3 {
            assert!(close(expected.coupling(i, j), other.params.coupling(i, j)));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn likelihood_concave_for_fixed_rate(
        seed in 0u64..1000,
        a in prop::collection::vec(-3.0f64..-0.3, 2),
        b in prop::collection::vec(0.0f64..0.1, 2),
        w in 0.0f64..1.0,
    ) {
        let truth = two_process_truth();
        let problem = theta_j_problem(simulate(&truth, 400, seed).unwrap(), &truth);
        let pd = problem.process_data(1);
        let x = [a[0], b[0]];
        let y = [a[1], b[1]];
        let mid = [w * x[0] + (1.0 - w) * y[0], w * x[1] + (1.0 - w) * y[1]];
        let (fx, fy) = (pd.log_likelihood(&x, 2.0), pd.log_likelihood(&y, 2.0));
        if let (Some(fx), Some(fy)) = (fx, fy) {
            let fm = pd.log_likelihood(&mid, 2.0).unwrap();
            prop_assert!(fm >= w * fx + (1.0 - w) * fy - 1e-9 * fm.abs());
        }
    }
}

#[test]
fn uncensored_rate_is_inverse_mean_excess() {
    let losses = vec![0.5, 1.0, 0.2, 0.7, 2.5, 0.05];
    let data = Trajectory::from_rows(vec![losses.clone()]).unwrap();
    let problem = EstimationProblem::new(
        data,
        vec![vec![0]],
        Mode::Full { initial_lambda: Some(vec![1.0]) },
        ConstraintConfig::default(),
    )
    .unwrap();
    let r = fit(&problem).unwrap();
    let theta = r.params.theta()[0];
    let expected = losses.len() as f64 / losses.iter().map(|l| l - theta).sum::<f64>();
    let lambda = r.params.noise_rates()[0];
    assert!((lambda - expected).abs() < 1e-9 * expected, "{lambda} vs {expected}");
}
