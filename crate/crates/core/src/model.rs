//! Parameter set and trajectory data model.
//!
//! Each of the `N` processes carries a loss `l_i(t) >= 0` per time step. The
//! update rule is
//!
//! ```text
//! l_i(t) = Ramp( sum_j J[i][j] * #{ s in 1..=t*[i][j] : l_j(t - s) > 0 } + theta_i + xi_i(t) )
//! ```
//!
//! with `xi_i(t) ~ Exp(lambda_i)` independent across processes and time.
//! Processes and time columns are zero-based everywhere in the library; file
//! formats use one-based labels.

use std::fmt;

use crate::error::{Error, Result};
use crate::graph::CouplingGraph;

/// Full parameter set of the interacting-process model.
///
/// Construction checks shapes and finiteness only. Domain rules (signs,
/// feasibility bound) are reported by [`validate_params`] so that the
/// simulator can still run parameter sets outside the estimation regime.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    couplings: Vec<Vec<f64>>,
    lags: Vec<Vec<usize>>,
    theta: Vec<f64>,
    noise_rates: Vec<f64>,
}

impl ModelParams {
    /// Builds a parameter set; lags where the coupling is zero are normalized
    /// to zero.
    pub fn new(
        couplings: Vec<Vec<f64>>,
        lags: Vec<Vec<usize>>,
        theta: Vec<f64>,
        noise_rates: Vec<f64>,
    ) -> Result<Self> {
        let n = theta.len();
        if n == 0 {
            return Err(Error::Dimension("at least one process is required".into()));
        }
        check_square("J", &couplings, n)?;
        check_square("t_star", &lags, n)?;
        if noise_rates.len() != n {
            return Err(Error::Dimension(format!(
                "lambda has {} entries, expected {n}",
                noise_rates.len()
            )));
        }
        let all_finite = couplings.iter().flatten().all(|x| x.is_finite())
            && theta.iter().all(|x| x.is_finite())
            && noise_rates.iter().all(|x| x.is_finite());
        if !all_finite {
            return Err(Error::InvalidValue("parameters must be finite".into()));
        }
        let mut lags = lags;
        for (lag_row, j_row) in lags.iter_mut().zip(&couplings) {
            for (lag, &coupling) in lag_row.iter_mut().zip(j_row) {
                if coupling == 0.0 {
                    *lag = 0;
                }
            }
        }
        Ok(Self {
            couplings,
            lags,
            theta,
            noise_rates,
        })
    }

    /// `N` isolated processes (no couplings).
    pub fn isolated(theta: Vec<f64>, noise_rates: Vec<f64>) -> Result<Self> {
        let n = theta.len();
        Self::new(vec![vec![0.0; n]; n], vec![vec![0; n]; n], theta, noise_rates)
    }

    pub fn n_processes(&self) -> usize {
        self.theta.len()
    }

    pub fn couplings(&self) -> &[Vec<f64>] {
        &self.couplings
    }

    pub fn coupling(&self, i: usize, j: usize) -> f64 {
        self.couplings[i][j]
    }

    pub fn lags(&self) -> &[Vec<usize>] {
        &self.lags
    }

    pub fn lag(&self, i: usize, j: usize) -> usize {
        self.lags[i][j]
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn noise_rates(&self) -> &[f64] {
        &self.noise_rates
    }

    /// Couplings `(j, J[i][j], t*[i][j])` acting on process `i`.
    pub fn incoming(&self, i: usize) -> impl Iterator<Item = (usize, f64, usize)> + '_ {
        self.couplings[i]
            .iter()
            .zip(&self.lags[i])
            .enumerate()
            .filter(|(_, (&c, _))| c != 0.0)
            .map(|(j, (&c, &lag))| (j, c, lag))
    }

    /// Largest interaction field process `i` can receive: `sum_j J[i][j] t*[i][j]`.
    pub fn max_field(&self, i: usize) -> f64 {
        self.incoming(i).map(|(_, c, lag)| c * lag as f64).sum()
    }

    /// Window width needed to evaluate every interaction term.
    pub fn max_lag(&self) -> usize {
        (0..self.n_processes())
            .flat_map(|i| self.incoming(i).map(|(_, _, lag)| lag))
            .max()
            .unwrap_or(0)
    }

    pub fn coupling_graph(&self) -> CouplingGraph {
        CouplingGraph::from_couplings(&self.couplings)
    }

    /// Multiplies every money-valued quantity (J, theta, 1/lambda) by `scale`.
    pub fn rescaled(&self, scale: f64) -> Result<Self> {
        Self::new(
            self.couplings
                .iter()
                .map(|row| row.iter().map(|c| c * scale).collect())
                .collect(),
            self.lags.clone(),
            self.theta.iter().map(|t| t * scale).collect(),
            self.noise_rates.iter().map(|l| l / scale).collect(),
        )
    }

    /// Relabels processes: process `k` of the result is process `perm[k]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n_processes();
        if perm.len() != n {
            return Err(Error::Dimension("permutation length differs from N".into()));
        }
        Self::new(
            perm.iter()
                .map(|&a| perm.iter().map(|&b| self.couplings[a][b]).collect())
                .collect(),
            perm.iter()
                .map(|&a| perm.iter().map(|&b| self.lags[a][b]).collect())
                .collect(),
            perm.iter().map(|&a| self.theta[a]).collect(),
            perm.iter().map(|&a| self.noise_rates[a]).collect(),
        )
    }
}

fn check_square<T>(name: &str, m: &[Vec<T>], n: usize) -> Result<()> {
    if m.len() != n {
        return Err(Error::Dimension(format!("{name} has {} rows, expected {n}", m.len())));
    }
    if let Some((row, r)) = m.iter().enumerate().find(|(_, r)| r.len() != n) {
        return Err(Error::Dimension(format!(
            "{name} row {} has {} entries, expected {n}",
            row + 1,
            r.len()
        )));
    }
    Ok(())
}

/// Which domain rule a parameter set breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    NonNegativeCoupling,
    PositiveRate,
    NegativeTheta,
    MissingLag,
    FeasibilityBound,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub field: String,
    pub rule: Rule,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    /// Feasibility-bound breaches when the bound is not enforced strictly.
    pub warnings: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks the sign rules and the feasibility bound
/// `theta_i + sum_j J[i][j] t*[i][j] < 0`.
pub fn validate_params(params: &ModelParams, strict_bound: bool) -> ValidationReport {
    let mut report = ValidationReport::default();
    let n = params.n_processes();
    let mut push = |field: String, rule: Rule, message: String| {
        let v = Violation {
            field,
            rule,
            message,
        };
        if rule == Rule::FeasibilityBound && !strict_bound {
            report.warnings.push(v);
        } else {
            report.violations.push(v);
        }
    };

    for i in 0..n {
        for j in 0..n {
            let c = params.coupling(i, j);
            if c < 0.0 {
                push(
                    format!("J[{}][{}]", i + 1, j + 1),
                    Rule::NonNegativeCoupling,
                    format!("coupling must be nonnegative, got {c}"),
                );
            }
            if c > 0.0 && params.lag(i, j) == 0 {
                push(
                    format!("t_star[{}][{}]", i + 1, j + 1),
                    Rule::MissingLag,
                    "lag must be at least 1 where the coupling is positive".into(),
                );
            }
        }
        let lambda = params.noise_rates()[i];
        if lambda <= 0.0 {
            push(
                format!("lambda[{}]", i + 1),
                Rule::PositiveRate,
                format!("noise rate must be positive, got {lambda}"),
            );
        }
        let theta = params.theta()[i];
        if theta >= 0.0 {
            push(
                format!("theta[{}]", i + 1),
                Rule::NegativeTheta,
                format!("theta must be negative, got {theta}"),
            );
        }
        let bound = theta + params.max_field(i);
        if bound >= 0.0 {
            push(
                format!("process {}", i + 1),
                Rule::FeasibilityBound,
                format!("theta + sum_j J*t_star = {bound} must be negative"),
            );
        }
    }
    report
}

/// `N x T` matrix of nonnegative per-step losses.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    n_processes: usize,
    horizon: usize,
    losses: Vec<f64>,
}

impl Trajectory {
    /// `losses` is row-major: row `i` holds `l_i(1..=T)`.
    pub fn new(n_processes: usize, horizon: usize, losses: Vec<f64>) -> Result<Self> {
        if n_processes == 0 || horizon == 0 {
            return Err(Error::Dimension("trajectory needs N >= 1 and T >= 1".into()));
        }
        if losses.len() != n_processes * horizon {
            return Err(Error::Dimension(format!(
                "{} loss values for N={n_processes}, T={horizon}",
                losses.len()
            )));
        }
        if let Some(bad) = losses.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
            return Err(Error::InvalidValue(format!("loss {bad} is not a nonnegative number")));
        }
        Ok(Self {
            n_processes,
            horizon,
            losses,
        })
    }

    pub fn zeros(n_processes: usize, horizon: usize) -> Result<Self> {
        Self::new(n_processes, horizon, vec![0.0; n_processes * horizon])
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let horizon = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != horizon) {
            return Err(Error::Dimension("rows have different lengths".into()));
        }
        Self::new(n, horizon, rows.into_iter().flatten().collect())
    }

    pub fn n_processes(&self) -> usize {
        self.n_processes
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.losses[i * self.horizon..(i + 1) * self.horizon]
    }

    /// Loss of process `i` at zero-based step `t`.
    pub fn get(&self, i: usize, t: usize) -> f64 {
        self.losses[i * self.horizon + t]
    }

    pub fn is_active(&self, i: usize, t: usize) -> bool {
        self.get(i, t) > 0.0
    }

    /// First `steps` time steps.
    pub fn prefix(&self, steps: usize) -> Result<Self> {
        if steps == 0 || steps > self.horizon {
            return Err(Error::Dimension(format!(
                "prefix of {steps} steps from a horizon of {}",
                self.horizon
            )));
        }
        let losses = (0..self.n_processes)
            .flat_map(|i| self.row(i)[..steps].iter().copied())
            .collect();
        Self::new(self.n_processes, steps, losses)
    }

    /// Rows reordered so that row `k` is row `perm[k]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        Self::from_rows(perm.iter().map(|&p| self.row(p).to_vec()).collect())
    }

    /// Cumulative losses `z_i(t) = sum_{s <= t} l_i(s)`, row-major like the
    /// trajectory itself.
    pub fn cumulative(&self) -> Vec<Vec<f64>> {
        (0..self.n_processes)
            .map(|i| {
                self.row(i)
                    .iter()
                    .scan(0.0, |acc, &l| {
                        *acc += l;
                        Some(*acc)
                    })
                    .collect()
            })
            .collect()
    }
}
