//! Censored maximum-likelihood fitting of thresholds, couplings and rates.
//!
//! Two modes, both with known lags `t*`:
//!
//! * [`Mode::ThetaJ`]: rates known; every coupling with a positive lag is
//!   fitted together with the thresholds.
//! * [`Mode::Full`]: the support (positive lags) must be acyclic; thresholds,
//!   supported couplings and rates are fitted by alternating maximization.
//!
//! The likelihood separates across processes, and for fixed rate it is
//! concave in `(theta_i, J[i][.])`, so each process is solved independently
//! by an active-set Newton method on the polyhedron
//! `{theta <= -eps, J >= 0, theta + J.c(t) <= -eps for every observed c(t)}`,
//! optionally intersected with the feasibility bound
//! `theta + sum_j J[i][j] t*[i][j] <= -eps`.

mod likelihood;
mod optimizer;

pub use likelihood::{design_features, log1m_exp, Pattern, ProcessData, ProcessFeatures};
pub use optimizer::{maximize, LinearConstraint, Options, Solution};

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::CouplingGraph;
use crate::model::{ModelParams, Trajectory};

/// Relative margin kept between the linear predictor and zero.
pub const FEASIBILITY_MARGIN: f64 = 1e-9;
pub const LAMBDA_BRACKET: (f64, f64) = (1e-8, 1e8);
/// Relative log-likelihood improvement that stops the alternating loop.
pub const OUTER_TOLERANCE: f64 = 1e-10;
const MAX_OUTER_ITERATIONS: usize = 20_000;

#[derive(Debug, Clone, PartialEq)]
pub enum Mode {
    /// Rates known; fit thresholds and couplings.
    ThetaJ { lambda: Vec<f64> },
    /// Acyclic support known; fit thresholds, couplings and rates (joint MLE).
    Full { initial_lambda: Option<Vec<f64>> },
}

impl Mode {
    pub fn label(&self) -> &'static str {
        match self {
            Mode::ThetaJ { .. } => "theta-j",
            Mode::Full { .. } => "full-joint-mle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConstraintConfig {
    /// Enforce `theta_i + sum_j J[i][j] t*[i][j] < 0` on the fit.
    pub feasibility_bound: bool,
}

#[derive(Debug, Clone)]
pub struct EstimationProblem {
    data: Trajectory,
    lags: Vec<Vec<usize>>,
    mode: Mode,
    constraints: ConstraintConfig,
    features: Vec<ProcessFeatures>,
    pooled: Vec<ProcessData>,
    /// Sources whose activity never reaches process `i` within its lag.
    silent_sources: Vec<Vec<usize>>,
}

impl EstimationProblem {
    pub fn new(
        data: Trajectory,
        lags: Vec<Vec<usize>>,
        mode: Mode,
        constraints: ConstraintConfig,
    ) -> Result<Self> {
        let n = data.n_processes();
        if lags.len() != n || lags.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension(format!("lag matrix must be {n}x{n}")));
        }
        match &mode {
            Mode::ThetaJ { lambda } => check_rates(lambda, n)?,
            Mode::Full { initial_lambda } => {
                if let Some(l) = initial_lambda {
                    check_rates(l, n)?;
                }
                let edges: Vec<(usize, usize)> = (0..n)
                    .flat_map(|i| {
                        let row = &lags[i];
                        (0..n).filter(move |&j| row[j] > 0).map(move |j| (j, i))
                    })
                    .collect();
                if CouplingGraph::from_edges(n, &edges).has_causal_loops() {
                    return Err(Error::Mode(
                        "rate estimation needs an acyclic coupling support".into(),
                    ));
                }
            }
        }
        let mut features = design_features(&data, &lags);
        let mut silent_sources = vec![Vec::new(); n];
        for (i, f) in features.iter_mut().enumerate() {
            let k = f.columns.len();
            let keep: Vec<bool> = (0..k)
                .map(|col| (0..f.horizon()).any(|t| f.counts[t * k + col] > 0))
                .collect();
            if keep.iter().all(|&b| b) {
                continue;
            }
            silent_sources[i] = f
                .columns
                .iter()
                .zip(&keep)
                .filter(|(_, &kp)| !kp)
                .map(|(&j, _)| j)
                .collect();
            let counts = (0..f.horizon())
                .flat_map(|t| {
                    let row = &f.counts[t * k..(t + 1) * k];
                    row.iter()
                        .zip(&keep)
                        .filter(|(_, &kp)| kp)
                        .map(|(&c, _)| c)
                        .collect::<Vec<_>>()
                })
                .collect();
            let columns = f.columns.iter().zip(&keep).filter(|(_, &kp)| kp).map(|(&c, _)| c).collect();
            let col_lags = f.lags.iter().zip(&keep).filter(|(_, &kp)| kp).map(|(&c, _)| c).collect();
            *f = ProcessFeatures::from_parts(columns, col_lags, counts, f.horizon());
        }
        let pooled = features
            .iter()
            .enumerate()
            .map(|(i, f)| ProcessData::new(data.row(i), f))
            .collect();
        Ok(Self {
            data,
            lags,
            mode,
            constraints,
            features,
            pooled,
            silent_sources,
        })
    }

    pub fn data(&self) -> &Trajectory {
        &self.data
    }

    pub fn lags(&self) -> &[Vec<usize>] {
        &self.lags
    }

    pub fn mode(&self) -> &Mode {
        &self.mode
    }

    pub fn n_processes(&self) -> usize {
        self.data.n_processes()
    }

    /// Pooled sufficient statistics of process `i` (fitted columns only).
    pub fn process_data(&self, i: usize) -> &ProcessData {
        &self.pooled[i]
    }

    pub fn fitted_columns(&self, i: usize) -> &[usize] {
        &self.features[i].columns
    }

    /// `(theta, J over fitted columns)` of `params` for process `i`.
    fn candidate_vector(&self, params: &ModelParams, i: usize) -> Vec<f64> {
        std::iter::once(params.theta()[i])
            .chain(self.features[i].columns.iter().map(|&j| params.coupling(i, j)))
            .collect()
    }
}

fn check_rates(lambda: &[f64], n: usize) -> Result<()> {
    if lambda.len() != n {
        return Err(Error::Dimension(format!("{} rates for {n} processes", lambda.len())));
    }
    if lambda.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
        return Err(Error::InvalidValue("rates must be positive".into()));
    }
    Ok(())
}

/// Training log-likelihood of `candidate`. Couplings on sources with a zero
/// lag in the problem do not enter.
pub fn log_likelihood(problem: &EstimationProblem, candidate: &ModelParams) -> Result<f64> {
    (0..problem.n_processes())
        .map(|i| process_log_likelihood(problem, candidate, i))
        .sum()
}

pub fn process_log_likelihood(
    problem: &EstimationProblem,
    candidate: &ModelParams,
    i: usize,
) -> Result<f64> {
    let x = problem.candidate_vector(candidate, i);
    let data = &problem.pooled[i];
    data.log_likelihood(&x, candidate.noise_rates()[i])
        .ok_or(Error::InfeasibleCandidate {
            process: i,
            max_eta: data.max_eta(&x),
        })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessGradient {
    pub theta: f64,
    /// `(source j, dLL/dJ[i][j])` over fitted columns.
    pub couplings: Vec<(usize, f64)>,
    pub lambda: f64,
}

pub fn log_likelihood_gradient(
    problem: &EstimationProblem,
    candidate: &ModelParams,
) -> Result<Vec<ProcessGradient>> {
    (0..problem.n_processes())
        .map(|i| {
            process_log_likelihood(problem, candidate, i)?;
            let x = problem.candidate_vector(candidate, i);
            let (g, _) = problem.pooled[i].derivatives(&x, candidate.noise_rates()[i]);
            Ok(ProcessGradient {
                theta: g[0],
                couplings: problem.features[i]
                    .columns
                    .iter()
                    .zip(&g[1..g.len() - 1])
                    .map(|(&j, &d)| (j, d))
                    .collect(),
                lambda: g[g.len() - 1],
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConstraintKind {
    Theta,
    Coupling(usize),
    ObservedField,
    FeasibilityBound,
}

#[derive(Debug, Clone)]
pub struct ProcessFit {
    pub process: usize,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
    /// Active constraints with their KKT multipliers.
    pub active_constraints: Vec<(ConstraintKind, f64)>,
    pub identifiable: bool,
    pub warnings: Vec<String>,
    pub theta_se: f64,
    pub coupling_se: Vec<(usize, f64)>,
    pub lambda_se: Option<f64>,
    /// Log-likelihood after each outer iteration (alternating mode only;
    /// entry 0 is the starting point).
    pub history: Vec<f64>,
}

impl ProcessFit {
    pub fn coupling_at_bound(&self, j: usize) -> Option<f64> {
        self.active_constraints
            .iter()
            .find(|(k, _)| *k == ConstraintKind::Coupling(j))
            .map(|&(_, m)| m)
    }
}

#[derive(Debug, Clone)]
pub struct EstimationResult {
    pub params: ModelParams,
    pub log_likelihood: f64,
    pub processes: Vec<ProcessFit>,
    pub approach: &'static str,
}

/// Dispatches on the problem's mode.
pub fn fit(problem: &EstimationProblem) -> Result<EstimationResult> {
    match problem.mode {
        Mode::ThetaJ { .. } => fit_theta_j(problem),
        Mode::Full { .. } => fit_full(problem),
    }
}

pub fn fit_theta_j(problem: &EstimationProblem) -> Result<EstimationResult> {
    let Mode::ThetaJ { lambda } = &problem.mode else {
        return Err(Error::Mode("fit_theta_j needs known rates".into()));
    };
    let fits: Vec<(Vec<f64>, f64, ProcessFit)> = (0..problem.n_processes())
        .into_par_iter()
        .map(|i| {
            let mut solver = ProcessSolver::new(problem, i, lambda[i]);
            let fit = solver.solve_fixed_rate();
            (solver.x, solver.lambda, fit)
        })
        .collect();
    assemble(problem, fits)
}

pub fn fit_full(problem: &EstimationProblem) -> Result<EstimationResult> {
    let Mode::Full { initial_lambda } = &problem.mode else {
        return Err(Error::Mode("fit_full needs the acyclic-support mode".into()));
    };
    let fits: Vec<(Vec<f64>, f64, ProcessFit)> = (0..problem.n_processes())
        .into_par_iter()
        .map(|i| {
            let data = &problem.pooled[i];
            let lambda0 = match initial_lambda {
                Some(l) => l[i],
                None if data.n_positive > 0.0 => data.n_positive / data.sum_positive,
                None => 1.0,
            };
            let mut solver = ProcessSolver::new(problem, i, lambda0);
            let fit = solver.solve_alternating();
            (solver.x, solver.lambda, fit)
        })
        .collect();
    assemble(problem, fits)
}

fn assemble(
    problem: &EstimationProblem,
    fits: Vec<(Vec<f64>, f64, ProcessFit)>,
) -> Result<EstimationResult> {
    let n = problem.n_processes();
    let mut couplings = vec![vec![0.0; n]; n];
    let mut theta = vec![0.0; n];
    let mut lambda = vec![0.0; n];
    let mut processes = Vec::with_capacity(n);
    for (i, (x, rate, fit)) in fits.into_iter().enumerate() {
        theta[i] = x[0];
        lambda[i] = rate;
        for (&j, &c) in problem.features[i].columns.iter().zip(&x[1..]) {
            couplings[i][j] = c;
        }
        processes.push(fit);
    }
    let params = ModelParams::new(couplings, problem.lags.clone(), theta, lambda)?;
    let log_likelihood = processes.iter().map(|p| p.log_likelihood).sum();
    if !f64::is_finite(log_likelihood) {
        return Err(Error::Estimation {
            process: processes.iter().position(|p| !p.log_likelihood.is_finite()).unwrap_or(0),
            reason: "log-likelihood is not finite".into(),
        });
    }
    Ok(EstimationResult {
        params,
        log_likelihood,
        processes,
        approach: problem.mode.label(),
    })
}

struct ProcessSolver<'a> {
    problem: &'a EstimationProblem,
    process: usize,
    data: &'a ProcessData,
    constraints: Vec<LinearConstraint>,
    kinds: Vec<ConstraintKind>,
    eps: f64,
    x: Vec<f64>,
    lambda: f64,
    warnings: Vec<String>,
}

impl<'a> ProcessSolver<'a> {
    fn new(problem: &'a EstimationProblem, i: usize, lambda: f64) -> Self {
        let data = &problem.pooled[i];
        let features = &problem.features[i];
        let dim = data.dim().max(1 + features.columns.len());
        let eps = FEASIBILITY_MARGIN / lambda;
        let unit = |k: usize, v: f64| {
            let mut c = vec![0.0; dim];
            c[k] = v;
            c
        };
        let mut constraints = vec![LinearConstraint {
            coeffs: unit(0, 1.0),
            bound: -eps,
        }];
        let mut kinds = vec![ConstraintKind::Theta];
        for (k, &j) in features.columns.iter().enumerate() {
            constraints.push(LinearConstraint {
                coeffs: unit(k + 1, -1.0),
                bound: 0.0,
            });
            kinds.push(ConstraintKind::Coupling(j));
        }
        for p in &data.patterns {
            if p.features.iter().all(|&c| c == 0.0) {
                continue;
            }
            constraints.push(LinearConstraint {
                coeffs: std::iter::once(1.0).chain(p.features.iter().copied()).collect(),
                bound: -eps,
            });
            kinds.push(ConstraintKind::ObservedField);
        }
        if problem.constraints.feasibility_bound && !features.columns.is_empty() {
            constraints.push(LinearConstraint {
                coeffs: std::iter::once(1.0)
                    .chain(features.lags.iter().map(|&l| l as f64))
                    .collect(),
                bound: -eps,
            });
            kinds.push(ConstraintKind::FeasibilityBound);
        }

        let mut warnings: Vec<String> = problem.silent_sources[i]
            .iter()
            .map(|j| {
                format!(
                    "coupling from process {} is not identifiable: the source is never active within the lag",
                    j + 1
                )
            })
            .collect();
        let theta0 = if data.n_positive == 0.0 {
            -eps
        } else if data.n_zero == 0.0 {
            warnings.push("no censored steps: threshold sits on its upper bound".into());
            -2.0 * eps
        } else {
            ((data.n_positive / (data.n_positive + data.n_zero)).ln() / lambda).min(-2.0 * eps)
        };
        let mut x = vec![0.0; dim];
        x[0] = theta0;
        Self {
            problem,
            process: i,
            data,
            constraints,
            kinds,
            eps,
            x,
            lambda,
            warnings,
        }
    }

    fn identifiable(&self) -> bool {
        self.data.n_positive > 0.0
    }

    fn maximize_fixed_rate(&mut self) -> Solution {
        let data = self.data;
        let lambda = self.lambda;
        let dim = self.x.len();
        let sol = maximize(
            |x| data.log_likelihood(x, lambda),
            |x| {
                let (g, h) = data.derivatives(x, lambda);
                (
                    g[..dim].to_vec(),
                    h[..dim].iter().map(|r| r[..dim].to_vec()).collect(),
                )
            },
            &self.constraints,
            self.x.clone(),
            &Options::default(),
        );
        self.x = sol.x.clone();
        sol
    }

    fn solve_fixed_rate(&mut self) -> ProcessFit {
        if !self.identifiable() {
            return self.unidentifiable_fit();
        }
        let sol = self.maximize_fixed_rate();
        if !sol.converged {
            self.warnings.push(format!(
                "optimizer stopped before convergence (projected gradient {:e})",
                sol.grad_norm
            ));
        }
        self.report(&sol, sol.grad_norm, Vec::new(), false)
    }

    /// Golden-section search of the rate on a log scale, thresholds fixed.
    fn best_rate(&self) -> f64 {
        let data = self.data;
        let x = &self.x;
        let ll = |s: f64| data.log_likelihood(x, s.exp()).unwrap_or(f64::NEG_INFINITY);
        let (mut a, mut b) = (LAMBDA_BRACKET.0.ln(), LAMBDA_BRACKET.1.ln());
        let ratio = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = b - ratio * (b - a);
        let mut d = a + ratio * (b - a);
        let (mut fc, mut fd) = (ll(c), ll(d));
        while b - a > 1e-13 * (1.0 + a.abs().max(b.abs())) {
            if fc >= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - ratio * (b - a);
                fc = ll(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + ratio * (b - a);
                fd = ll(d);
            }
        }
        // The objective is flat to rounding near its peak, so the bracket only
        // locates the rate to about sqrt(machine eps); polish on the score.
        let mut rate = (0.5 * (a + b)).exp();
        let last = data.dim();
        for _ in 0..50 {
            let (g, h) = data.derivatives(x, rate);
            let (score, curvature) = (g[last], h[last][last]);
            if !(curvature < 0.0) {
                break;
            }
            let next = rate - score / curvature;
            if !(next > 0.0) || (next - rate).abs() > 0.5 * rate {
                break;
            }
            let done = (next - rate).abs() <= 4.0 * f64::EPSILON * rate;
            rate = next;
            if done {
                break;
            }
        }
        rate.clamp(LAMBDA_BRACKET.0, LAMBDA_BRACKET.1)
    }

    fn solve_alternating(&mut self) -> ProcessFit {
        if !self.identifiable() {
            return self.unidentifiable_fit();
        }
        let mut ll = self
            .data
            .log_likelihood(&self.x, self.lambda)
            .expect("start is feasible");
        let mut history = vec![ll];
        let mut sol = None;
        for _ in 0..MAX_OUTER_ITERATIONS {
            let s = self.maximize_fixed_rate();
            let candidate = self.best_rate();
            let current = self.data.log_likelihood(&self.x, self.lambda).unwrap();
            if self.data.log_likelihood(&self.x, candidate).unwrap_or(f64::NEG_INFINITY) > current {
                self.lambda = candidate;
            }
            let next = self.data.log_likelihood(&self.x, self.lambda).unwrap();
            history.push(next);
            sol = Some(s);
            let improved = next - ll;
            ll = next;
            if improved <= OUTER_TOLERANCE * ll.abs() {
                break;
            }
        }
        let (lo, hi) = LAMBDA_BRACKET;
        if self.lambda < lo * 1.0001 || self.lambda > hi * 0.9999 {
            self.warnings.push(format!(
                "rate estimate {} is at the search bracket edge; rescale the money unit",
                self.lambda
            ));
        }
        // Final point: re-solve the face at the final rate for multipliers.
        let sol = sol.map(|_| self.maximize_fixed_rate()).expect("at least one outer iteration");
        let (g, _) = self.data.derivatives(&self.x, self.lambda);
        let grad_norm = sol.grad_norm.hypot(g[g.len() - 1]);
        self.report(&sol, grad_norm, history, true)
    }

    fn unidentifiable_fit(&mut self) -> ProcessFit {
        self.x = vec![0.0; self.x.len()];
        self.x[0] = -self.eps;
        self.warnings.push(
            "no positive losses: threshold only bounded above, reported at the constraint boundary"
                .into(),
        );
        let ll = self.data.log_likelihood(&self.x, self.lambda).unwrap_or(f64::NAN);
        ProcessFit {
            process: self.process,
            log_likelihood: ll,
            iterations: 0,
            grad_norm: f64::NAN,
            converged: false,
            active_constraints: vec![(ConstraintKind::Theta, f64::NAN)],
            identifiable: false,
            warnings: std::mem::take(&mut self.warnings),
            theta_se: f64::NAN,
            coupling_se: self.problem.features[self.process]
                .columns
                .iter()
                .map(|&j| (j, f64::NAN))
                .collect(),
            lambda_se: None,
            history: Vec::new(),
        }
    }

    fn report(&mut self, sol: &Solution, grad_norm: f64, history: Vec<f64>, with_rate: bool) -> ProcessFit {
        let (_, h) = self.data.derivatives(&self.x, self.lambda);
        let dim = if with_rate { h.len() } else { h.len() - 1 };
        let info = DMatrix::from_fn(dim, dim, |r, c| -h[r][c]);
        let se: Vec<f64> = match info.try_inverse() {
            Some(cov) => (0..dim).map(|k| cov[(k, k)].max(0.0).sqrt()).collect(),
            None => vec![f64::NAN; dim],
        };
        let columns = &self.problem.features[self.process].columns;
        ProcessFit {
            process: self.process,
            log_likelihood: sol.value.max(self.data.log_likelihood(&self.x, self.lambda).unwrap()),
            iterations: sol.iterations,
            grad_norm,
            converged: sol.converged,
            active_constraints: sol
                .active
                .iter()
                .map(|&(k, mu)| (self.kinds[k], mu))
                .collect(),
            identifiable: true,
            warnings: std::mem::take(&mut self.warnings),
            theta_se: se[0],
            coupling_se: columns.iter().zip(&se[1..]).map(|(&j, &s)| (j, s)).collect(),
            lambda_se: with_rate.then(|| se[dim - 1]),
            history,
        }
    }
}

#[cfg(test)]
mod tests;
