//! Exact stationary statistics by enumerating activation windows.
//!
//! Given the activation pattern of the last `W` steps, the next activations
//! are independent across processes with known probabilities, so the window
//! is a finite Markov chain on `2^(N W)` states. Its stationary law yields
//! every moment of `l_i(t)` and the autocovariances needed for `Var z_i(t)`.
//!
//! State bit `i * W + (s - 1)` holds the activation of process `i` at lag `s`.
//! The transition operator is never materialized: it is applied by gathering,
//! for each target window, the `2^N` source windows that shift into it.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::simulate::{interaction_field, HistoryWindow};

pub const DEFAULT_MAX_BITS: usize = 20;
pub const STATIONARY_TOLERANCE: f64 = 1e-12;
pub const MAX_POWER_ITERATIONS: usize = 1_000_000;
/// Relative cutoff for the autocovariance tail.
pub const AUTOCOV_CUTOFF: f64 = 1e-12;
const MAX_AUTOCOV_LAGS: usize = 1_000_000;

/// `P(l_i > 0 | window)`: 1 when `c = h_i + theta_i >= 0`, else `e^{lambda c}`.
pub fn activation_prob(params: &ModelParams, window: &HistoryWindow, i: usize) -> Result<f64> {
    let c = interaction_field(params, window, i)? + params.theta()[i];
    Ok(activation_prob_at(c, params.noise_rates()[i]))
}

#[inline]
pub fn activation_prob_at(c: f64, lambda: f64) -> f64 {
    if c >= 0.0 {
        1.0
    } else {
        (lambda * c).exp()
    }
}

/// `(E[l_i | window], E[l_i^2 | window])`.
pub fn conditional_loss_moments(
    params: &ModelParams,
    window: &HistoryWindow,
    i: usize,
) -> Result<(f64, f64)> {
    let c = interaction_field(params, window, i)? + params.theta()[i];
    Ok(loss_moments_at(c, params.noise_rates()[i]))
}

/// Moments of `Ramp(c + xi)` with `xi ~ Exp(lambda)`.
#[inline]
pub fn loss_moments_at(c: f64, lambda: f64) -> (f64, f64) {
    if c >= 0.0 {
        (
            c + 1.0 / lambda,
            c * c + 2.0 * c / lambda + 2.0 / (lambda * lambda),
        )
    } else {
        let p = (lambda * c).exp();
        (p / lambda, 2.0 * p / (lambda * lambda))
    }
}

/// `E[l_i | window, l_i > 0]`; memorylessness makes the excess over the
/// threshold `Exp(lambda)` when `c < 0`.
#[inline]
fn active_loss_mean(c: f64, lambda: f64) -> f64 {
    if c >= 0.0 {
        c + 1.0 / lambda
    } else {
        1.0 / lambda
    }
}

#[derive(Debug, Clone)]
pub struct ActivationChain {
    n: usize,
    width: usize,
    /// `threshold[w * n + i]` is `h_i(w) + theta_i`.
    threshold: Vec<f64>,
    /// `prob[w * n + i]` is `P(process i activates | window w)`.
    prob: Vec<f64>,
    lambda: Vec<f64>,
}

/// Chain on windows of width `max(max_lag, 1)`.
pub fn build_chain(params: &ModelParams) -> Result<ActivationChain> {
    ActivationChain::new(params, params.max_lag().max(1), DEFAULT_MAX_BITS)
}

impl ActivationChain {
    /// `width` must cover every lag. Width 0 (only valid without couplings)
    /// gives the single-state chain.
    pub fn new(params: &ModelParams, width: usize, max_bits: usize) -> Result<Self> {
        let n = params.n_processes();
        if width < params.max_lag() {
            return Err(Error::WindowTooNarrow {
                needed: params.max_lag(),
                width,
            });
        }
        let bits = n * width;
        if bits > max_bits || bits > 40 {
            return Err(Error::Capacity { bits, max_bits });
        }
        let states = 1usize << bits;
        let masks: Vec<Vec<(f64, u64)>> = (0..n)
            .map(|i| {
                params
                    .incoming(i)
                    .map(|(j, coupling, lag)| (coupling, ((1u64 << lag) - 1) << (j * width)))
                    .collect()
            })
            .collect();
        let threshold: Vec<f64> = (0..states)
            .into_par_iter()
            .flat_map_iter(|w| {
                let masks = &masks;
                (0..n).map(move |i| {
                    let mut h = 0.0;
                    for &(coupling, mask) in &masks[i] {
                        h += coupling * (w as u64 & mask).count_ones() as f64;
                    }
                    h + params.theta()[i]
                })
            })
            .collect();
        let lambda = params.noise_rates().to_vec();
        let prob = threshold
            .iter()
            .enumerate()
            .map(|(k, &c)| activation_prob_at(c, lambda[k % n]))
            .collect();
        Ok(Self {
            n,
            width,
            threshold,
            prob,
            lambda,
        })
    }

    pub fn n_processes(&self) -> usize {
        self.n
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn n_states(&self) -> usize {
        1 << (self.n * self.width)
    }

    pub fn activation_prob(&self, state: usize, i: usize) -> f64 {
        self.prob[state * self.n + i]
    }

    fn lag_mask(&self, lag: usize) -> usize {
        (0..self.n).fold(0, |m, i| m | 1 << (i * self.width + lag - 1))
    }

    /// Window reached from `state` when the activation vector `active` occurs.
    pub fn successor(&self, state: usize, active: &[bool]) -> usize {
        if self.width == 0 {
            return 0;
        }
        let shifted = (state & !self.lag_mask(self.width)) << 1;
        active
            .iter()
            .enumerate()
            .filter(|(_, &a)| a)
            .fold(shifted, |w, (i, _)| w | 1 << (i * self.width))
    }

    /// `T(from -> to)`; zero unless `to` is a shift of `from`.
    pub fn transition_prob(&self, from: usize, to: usize) -> f64 {
        if self.width == 0 {
            return 1.0;
        }
        let shifted = (from & !self.lag_mask(self.width)) << 1;
        let lag1 = self.lag_mask(1);
        if to & !lag1 != shifted {
            return 0.0;
        }
        (0..self.n)
            .map(|i| {
                let p = self.activation_prob(from, i);
                if to >> (i * self.width) & 1 == 1 {
                    p
                } else {
                    1.0 - p
                }
            })
            .product()
    }

    /// `out(w') = sum_w x(w) T(w -> w') weight(w, w')`, gathered per target in a
    /// fixed order so results are independent of the thread count.
    fn apply_weighted<F>(&self, x: &[f64], weight: F) -> Vec<f64>
    where
        F: Fn(usize, usize) -> f64 + Sync,
    {
        let n = self.n;
        if self.width == 0 {
            return vec![x[0] * weight(0, 0)];
        }
        let lag1 = self.lag_mask(1);
        let spread: Vec<usize> = (0..1usize << n)
            .map(|b| {
                (0..n)
                    .filter(|i| b >> i & 1 == 1)
                    .fold(0, |m, i| m | 1 << (i * self.width + self.width - 1))
            })
            .collect();
        (0..self.n_states())
            .into_par_iter()
            .map(|to| {
                let base = (to & !lag1) >> 1;
                let mut acc = 0.0;
                for &extra in &spread {
                    let from = base | extra;
                    let mass = x[from];
                    if mass == 0.0 {
                        continue;
                    }
                    let probs = &self.prob[from * n..(from + 1) * n];
                    let mut t = mass;
                    for (i, &p) in probs.iter().enumerate() {
                        t *= if to >> (i * self.width) & 1 == 1 { p } else { 1.0 - p };
                    }
                    if t != 0.0 {
                        acc += t * weight(from, to);
                    }
                }
                acc
            })
            .collect()
    }

    /// One step of the chain on a (possibly signed) measure.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.apply_weighted(x, |_, _| 1.0)
    }
}

#[derive(Debug, Clone)]
pub struct Stationary {
    pub distribution: Vec<f64>,
    /// `||pi T - pi||_1` at exit.
    pub residual: f64,
    pub iterations: usize,
}

/// Power iteration from the uniform distribution.
pub fn stationary(chain: &ActivationChain) -> Result<Stationary> {
    stationary_with(chain, STATIONARY_TOLERANCE, MAX_POWER_ITERATIONS)
}

pub fn stationary_with(
    chain: &ActivationChain,
    tolerance: f64,
    max_iterations: usize,
) -> Result<Stationary> {
    let states = chain.n_states();
    let mut pi = vec![1.0 / states as f64; states];
    let mut residual = f64::INFINITY;
    for iteration in 1..=max_iterations {
        let mut next = chain.apply(&pi);
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= total);
        residual = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        pi = next;
        if residual <= tolerance {
            return Ok(Stationary {
                distribution: pi,
                residual,
                iterations: iteration,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iterations,
        residual,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessStats {
    pub p_active: f64,
    pub mean_loss: f64,
    pub var_loss: f64,
    /// `gamma(0..=K_cut)`, with `gamma(0) = var_loss`.
    pub autocovariance: Vec<f64>,
    /// Asymptotic `<z_i(t)> / t`.
    pub mean_z_rate: f64,
    /// Asymptotic `Var z_i(t) / t` including autocovariances.
    pub var_z_rate_exact: f64,
    /// `Var l_i`, the i.i.d.-summand approximation of `Var z_i(t) / t`.
    pub var_z_rate_iid: f64,
}

impl ProcessStats {
    /// `(<z(t)>, Var z(t))` with the autocovariance-corrected variance.
    pub fn z_moments(&self, t: usize) -> (f64, f64) {
        let tf = t as f64;
        let mut var = tf * self.autocovariance[0];
        for (k, g) in self.autocovariance.iter().enumerate().skip(1).take(t.saturating_sub(1)) {
            var += 2.0 * (tf - k as f64) * g;
        }
        (tf * self.mean_loss, var.max(0.0))
    }

    /// `t Var l`, the i.i.d.-summand form.
    pub fn z_variance_iid(&self, t: usize) -> f64 {
        t as f64 * self.var_loss
    }

    /// Relative gap between the two asymptotic variance rates.
    pub fn variance_formula_gap(&self) -> f64 {
        if self.var_z_rate_iid == 0.0 {
            return 0.0;
        }
        (self.var_z_rate_exact - self.var_z_rate_iid).abs() / self.var_z_rate_iid
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HorizonMoments {
    pub t: usize,
    pub process: usize,
    pub mean_z: f64,
    pub var_z_exact: f64,
    pub var_z_iid: f64,
}

#[derive(Debug, Clone)]
pub struct StationaryStats {
    pub processes: Vec<ProcessStats>,
    pub horizons: Vec<HorizonMoments>,
    pub stationary_residual: f64,
    pub iterations: usize,
}

pub fn stationary_stats(params: &ModelParams, t_eval: &[usize]) -> Result<StationaryStats> {
    let chain = build_chain(params)?;
    stats_from_chain(&chain, t_eval)
}

pub fn stats_from_chain(chain: &ActivationChain, t_eval: &[usize]) -> Result<StationaryStats> {
    let stat = stationary(chain)?;
    let pi = &stat.distribution;
    let n = chain.n;
    let processes: Vec<ProcessStats> = (0..n)
        .map(|i| process_stats(chain, pi, i))
        .collect();
    let horizons = t_eval
        .iter()
        .flat_map(|&t| {
            processes.iter().enumerate().map(move |(i, s)| {
                let (mean_z, var_z_exact) = s.z_moments(t);
                HorizonMoments {
                    t,
                    process: i,
                    mean_z,
                    var_z_exact,
                    var_z_iid: s.z_variance_iid(t),
                }
            })
        })
        .collect();
    Ok(StationaryStats {
        processes,
        horizons,
        stationary_residual: stat.residual,
        iterations: stat.iterations,
    })
}

fn process_stats(chain: &ActivationChain, pi: &[f64], i: usize) -> ProcessStats {
    let n = chain.n;
    let lambda = chain.lambda[i];
    let cond_mean: Vec<f64> = (0..chain.n_states())
        .map(|w| loss_moments_at(chain.threshold[w * n + i], lambda).0)
        .collect();
    let mut p_active = 0.0;
    let mut mean = 0.0;
    let mut second = 0.0;
    for (w, &mass) in pi.iter().enumerate() {
        let c = chain.threshold[w * n + i];
        let (m1, m2) = loss_moments_at(c, lambda);
        p_active += mass * chain.prob[w * n + i];
        mean += mass * m1;
        second += mass * m2;
    }
    let var = (second - mean * mean).max(0.0);
    let autocovariance = autocovariances(chain, pi, i, mean, var, &cond_mean);
    let var_rate = autocovariance[0] + 2.0 * autocovariance[1..].iter().sum::<f64>();
    ProcessStats {
        p_active,
        mean_loss: mean,
        var_loss: var,
        autocovariance,
        mean_z_rate: mean,
        var_z_rate_exact: var_rate.max(0.0),
        var_z_rate_iid: var,
    }
}

/// `gamma(k) = d_k . m` where `d_1 = nu - <l> pi`, `d_{k+1} = d_k T`,
/// `m(w) = E[l_i | w]` and `nu(w') = sum_w pi(w) T(w -> w') E[l_i | w, w']`.
/// The lag-0 loss is coupled to its own activation bit in `w'`. Since
/// `|gamma(k')| <= ||d_k||_1 ||m||_inf` for every `k' >= k`, propagation stops
/// once that bound drops below the relative cutoff.
fn autocovariances(
    chain: &ActivationChain,
    pi: &[f64],
    i: usize,
    mean: f64,
    var: f64,
    cond_mean: &[f64],
) -> Vec<f64> {
    let mut gammas = vec![var];
    if chain.width == 0 || var == 0.0 {
        return gammas;
    }
    let n = chain.n;
    let lambda = chain.lambda[i];
    let bit = 1usize << (i * chain.width);
    let nu = chain.apply_weighted(pi, |from, to| {
        if to & bit != 0 {
            active_loss_mean(chain.threshold[from * n + i], lambda)
        } else {
            0.0
        }
    });
    let mut d: Vec<f64> = nu.iter().zip(pi).map(|(v, p)| v - mean * p).collect();
    let m_inf = cond_mean.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let cutoff = AUTOCOV_CUTOFF * var;
    for _ in 0..MAX_AUTOCOV_LAGS {
        // Keep the deviation mass-free so rounding cannot leave a pi component.
        let drift: f64 = d.iter().sum();
        d.iter_mut().zip(pi).for_each(|(x, p)| *x -= drift * p);
        let gamma: f64 = d.iter().zip(cond_mean).map(|(a, b)| a * b).sum();
        gammas.push(gamma);
        let bound = d.iter().map(|x| x.abs()).sum::<f64>() * m_inf;
        if bound < cutoff {
            break;
        }
        d = chain.apply(&d);
    }
    gammas
}
