//! Censored exponential likelihood of one process.
//!
//! With `eta(t) = theta_i + sum_j J[i][j] c_ij(t)` the contribution of step
//! `t` is `log lambda - lambda (l - eta)` when `l > 0` and
//! `log(1 - e^{lambda eta})` when `l = 0`. Steps with identical feature
//! vectors are pooled, so every evaluation costs one pass over the distinct
//! patterns rather than over time.

use std::collections::BTreeMap;

use crate::model::Trajectory;

/// Active-lag counts `c_ij(t)` of one process for the sources `j` with a
/// positive lag.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessFeatures {
    /// Source processes `j` with `t*[i][j] >= 1`, ascending.
    pub columns: Vec<usize>,
    /// Lag `t*[i][j]` of each column.
    pub lags: Vec<usize>,
    /// Row-major `T x columns.len()`.
    pub counts: Vec<u32>,
    horizon: usize,
}

impl ProcessFeatures {
    pub(crate) fn from_parts(
        columns: Vec<usize>,
        lags: Vec<usize>,
        counts: Vec<u32>,
        horizon: usize,
    ) -> Self {
        debug_assert_eq!(counts.len(), horizon * columns.len());
        Self {
            columns,
            lags,
            counts,
            horizon,
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// `c_ij(t)` for zero-based `t`; zero when `j` is not a column.
    pub fn get(&self, t: usize, j: usize) -> u32 {
        match self.columns.iter().position(|&c| c == j) {
            Some(k) => self.counts[t * self.columns.len() + k],
            None => 0,
        }
    }

    pub fn row(&self, t: usize) -> &[u32] {
        let k = self.columns.len();
        &self.counts[t * k..(t + 1) * k]
    }
}

/// Features for every process, using the cold-start convention.
pub fn design_features(data: &Trajectory, lags: &[Vec<usize>]) -> Vec<ProcessFeatures> {
    let n = data.n_processes();
    let horizon = data.horizon();
    // active_before[j][t] = number of active steps of j among 0..t
    let active_before: Vec<Vec<u32>> = (0..n)
        .map(|j| {
            let mut acc = Vec::with_capacity(horizon + 1);
            acc.push(0u32);
            for t in 0..horizon {
                acc.push(acc[t] + u32::from(data.is_active(j, t)));
            }
            acc
        })
        .collect();
    (0..n)
        .map(|i| {
            let (columns, col_lags): (Vec<usize>, Vec<usize>) = (0..n)
                .filter(|&j| lags[i][j] > 0)
                .map(|j| (j, lags[i][j]))
                .unzip();
            let mut counts = Vec::with_capacity(horizon * columns.len());
            for t in 0..horizon {
                for (&j, &lag) in columns.iter().zip(&col_lags) {
                    let a = &active_before[j];
                    counts.push(a[t] - a[t.saturating_sub(lag)]);
                }
            }
            ProcessFeatures {
                columns,
                lags: col_lags,
                counts,
                horizon,
            }
        })
        .collect()
}

/// Pooled observations sharing one feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Pattern {
    pub features: Vec<f64>,
    pub n_zero: f64,
    pub n_positive: f64,
    pub sum_positive: f64,
}

#[derive(Debug, Clone)]
pub struct ProcessData {
    pub patterns: Vec<Pattern>,
    pub n_zero: f64,
    pub n_positive: f64,
    pub sum_positive: f64,
}

impl ProcessData {
    pub fn new(losses: &[f64], features: &ProcessFeatures) -> Self {
        let mut pooled: BTreeMap<&[u32], (f64, f64, f64)> = BTreeMap::new();
        for (t, &l) in losses.iter().enumerate() {
            let entry = pooled.entry(features.row(t)).or_insert((0.0, 0.0, 0.0));
            if l > 0.0 {
                entry.1 += 1.0;
                entry.2 += l;
            } else {
                entry.0 += 1.0;
            }
        }
        let patterns: Vec<Pattern> = pooled
            .into_iter()
            .map(|(c, (n_zero, n_positive, sum_positive))| Pattern {
                features: c.iter().map(|&x| x as f64).collect(),
                n_zero,
                n_positive,
                sum_positive,
            })
            .collect();
        let n_zero = patterns.iter().map(|p| p.n_zero).sum();
        let n_positive = patterns.iter().map(|p| p.n_positive).sum();
        let sum_positive = patterns.iter().map(|p| p.sum_positive).sum();
        Self {
            patterns,
            n_zero,
            n_positive,
            sum_positive,
        }
    }

    pub fn dim(&self) -> usize {
        1 + self.patterns.first().map_or(0, |p| p.features.len())
    }

    /// `eta = theta + J . c` for `x = (theta, J...)`.
    pub fn eta(&self, pattern: &Pattern, x: &[f64]) -> f64 {
        let mut eta = x[0];
        for (c, j) in pattern.features.iter().zip(&x[1..]) {
            eta += j * c;
        }
        eta
    }

    /// Largest linear predictor over observed patterns.
    pub fn max_eta(&self, x: &[f64]) -> f64 {
        self.patterns
            .iter()
            .map(|p| self.eta(p, x))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Log-likelihood, or `None` when some observed `eta >= 0`.
    pub fn log_likelihood(&self, x: &[f64], lambda: f64) -> Option<f64> {
        let log_lambda = lambda.ln();
        let mut total = 0.0;
        for p in &self.patterns {
            let eta = self.eta(p, x);
            if eta >= 0.0 {
                return None;
            }
            total += p.n_positive * (log_lambda + lambda * eta) - lambda * p.sum_positive;
            if p.n_zero > 0.0 {
                total += p.n_zero * log1m_exp(lambda * eta);
            }
        }
        Some(total)
    }

    /// Gradient and Hessian in `(theta, J..., lambda)`; the last coordinate is
    /// the rate. Requires every `eta < 0`.
    pub fn derivatives(&self, x: &[f64], lambda: f64) -> (Vec<f64>, Vec<Vec<f64>>) {
        let d = self.dim();
        let mut grad = vec![0.0; d + 1];
        let mut hess = vec![vec![0.0; d + 1]; d + 1];
        for p in &self.patterns {
            let eta = self.eta(p, x);
            let u = lambda * eta;
            // g(u) = log(1 - e^u): g' = -r, g'' = -r (1 + r), r = 1 / expm1(-u)
            let r = 1.0 / (-u).exp_m1();
            let g1 = -r;
            let g2 = -r * (1.0 + r);
            let d_eta = lambda * p.n_positive + p.n_zero * lambda * g1;
            let d_lambda = p.n_positive / lambda + p.n_positive * eta - p.sum_positive
                + p.n_zero * eta * g1;
            let d_eta_eta = p.n_zero * lambda * lambda * g2;
            let d_eta_lambda = p.n_positive + p.n_zero * (g1 + u * g2);
            let d_lambda_lambda = -p.n_positive / (lambda * lambda) + p.n_zero * eta * eta * g2;

            let basis = std::iter::once(1.0).chain(p.features.iter().copied());
            for (a, ca) in basis.clone().enumerate() {
                grad[a] += d_eta * ca;
                hess[a][d] += d_eta_lambda * ca;
                for (b, cb) in basis.clone().enumerate() {
                    hess[a][b] += d_eta_eta * ca * cb;
                }
            }
            grad[d] += d_lambda;
            hess[d][d] += d_lambda_lambda;
        }
        for a in 0..d {
            hess[d][a] = hess[a][d];
        }
        (grad, hess)
    }
}

/// `log(1 - e^x)` for `x < 0`, accurate near zero and for large `|x|`.
#[inline]
pub fn log1m_exp(x: f64) -> f64 {
    if x > -std::f64::consts::LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}
